mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{config_blob, ImageSpec, SectionSpec};
use serde_json::Value;

// Assembled from tests/fixtures/filter.s.
const FILTER: [u8; 18] = [
    0x00, 0xbf, 0x2e, 0x2a, 0x00, 0xf0, 0x05, 0x80, 0x4c, 0x2a, 0x00, 0xd0, 0x70, 0x47, 0x0c, 0x20,
    0x70, 0x47,
];

fn lpmforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpmforge"))
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write_image(dir: &Path) -> PathBuf {
    let spec = ImageSpec {
        global: 0,
        sections: vec![
            SectionSpec {
                type_code: 1,
                mapped_to: 0x0020_0000,
                crc: 0,
                data: vec![0x11; 32],
            },
            SectionSpec {
                type_code: 2,
                mapped_to: 0x002c_57d0,
                crc: 0,
                data: FILTER.to_vec(),
            },
            SectionSpec {
                type_code: 3,
                mapped_to: 0,
                crc: 0,
                data: config_blob(&[(0x0001_0000, [1, 2, 3, 4], [0; 5])], &[]),
            },
        ],
        lead_padding: vec![0; 24],
        gaps: vec![vec![], vec![0, 0], vec![]],
        placement: vec![0, 1, 2],
    };
    let raw = dir.join("raw.bin");
    std::fs::write(&raw, spec.to_bytes()).unwrap();
    let path = dir.join("orig.bin");
    assert!(lpmforge(&[
        "patch",
        "repack",
        raw.to_str().unwrap(),
        "-o",
        path.to_str().unwrap()
    ])
    .status
    .success());
    path
}

#[test]
fn verify_detects_a_flipped_bit() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_image(dir.path());
    let out = lpmforge(&["--json", "patch", "verify", img.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let rows = json(&out);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        for key in [
            "index",
            "type_code",
            "size",
            "mapped_to",
            "file_offset",
            "crc_stored",
            "crc_computed",
        ] {
            assert!(row.get(key).is_some(), "{key}");
        }
        assert_eq!(row["crc_stored"], row["crc_computed"]);
    }
    let mut bytes = std::fs::read(&img).unwrap();
    let off = rows[1]["file_offset"].as_u64().unwrap() as usize;
    bytes[off + 3] ^= 0x08;
    std::fs::write(&img, bytes).unwrap();
    assert_eq!(
        lpmforge(&["patch", "verify", img.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn nop_out_the_write_ram_filter() {
    let dir = tempfile::tempdir().unwrap();
    let orig = write_image(dir.path());
    let edited = dir.path().join("edited.bin");
    let fixed = dir.path().join("fixed.bin");
    let p = |x: &PathBuf| x.to_str().unwrap().to_string();

    let out = lpmforge(&[
        "patch",
        "edit",
        &p(&orig),
        "--address",
        "0x002c57d8",
        "--bytes",
        "00bf00bf",
        "-o",
        &p(&edited),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        lpmforge(&["patch", "verify", &p(&edited)]).status.code(),
        Some(1)
    );
    assert!(
        lpmforge(&["patch", "repack", &p(&edited), "-o", &p(&fixed)])
            .status
            .success()
    );
    assert_eq!(
        lpmforge(&["patch", "verify", &p(&fixed)]).status.code(),
        Some(0)
    );

    let diff = json(&lpmforge(&[
        "--json",
        "patch",
        "diff",
        &p(&orig),
        &p(&fixed),
    ]));
    assert_eq!(
        diff["words"],
        serde_json::json!([{"section": 1, "address": 0x002c57d8u32, "old": "4c2a00d0", "new": "00bf00bf"}])
    );
    assert_eq!(diff["entries"], serde_json::json!([]));

    let with_entry = dir.path().join("entry.bin");
    let out = lpmforge(&[
        "patch",
        "edit",
        &p(&fixed),
        "--entry",
        "0x00020000=deadbeef",
        "-o",
        &p(&with_entry),
    ]);
    assert!(out.status.success());
    let entries = json(&lpmforge(&["--json", "patch", "entries", &p(&with_entry)]));
    assert_eq!(entries.as_array().unwrap().len(), 2);
    assert_eq!(entries[1]["rom_address"], 0x0002_0000);
    assert_eq!(entries[1]["new_word"], "deadbeef");
}

#[test]
fn schedule_summary() {
    let v = json(&lpmforge(&[
        "--json",
        "findmy",
        "schedule",
        "--keys",
        "96",
        "--interval-min",
        "15",
    ]));
    assert_eq!(v["total_minutes"], 1440);
    assert_eq!(v["windows"], 96);
    assert_eq!(v["span_s"], 86_400);
    let v = json(&lpmforge(&[
        "--json",
        "findmy",
        "schedule",
        "--mode",
        "power-reserve",
    ]));
    assert_eq!(
        (v["windows"].as_u64(), v["span_s"].as_u64()),
        (Some(20), Some(18_000))
    );
}

#[test]
fn emit_config_round_trips_through_lpm_decode() {
    let dir = tempfile::tempdir().unwrap();
    let hcd = dir.path().join("cfg.hcd");
    let emitted = json(&lpmforge(&[
        "--json",
        "findmy",
        "emit-config",
        "--hcd",
        hcd.to_str().unwrap(),
    ]));
    let decoded = json(&lpmforge(&[
        "--json",
        "lpm",
        "decode",
        hcd.to_str().unwrap(),
    ]));
    assert_eq!(emitted, decoded);
    assert_eq!(decoded.as_array().unwrap().len(), 20);
    assert_eq!(decoded[0]["command"], "reset");
    assert_eq!(decoded[1]["command"], "find_my_config");
    assert_eq!(decoded[19]["command"], "enter_lpm");

    let cmds = dir.path().join("cmds.json");
    std::fs::write(&cmds, serde_json::to_vec(&decoded).unwrap()).unwrap();
    let wire = json(&lpmforge(&[
        "--json",
        "lpm",
        "encode",
        cmds.to_str().unwrap(),
    ]));
    assert_eq!(wire[1], "62fe140500800c0060000f6000a0050000000003010007");
}

#[test]
fn hcd_from_image_decodes_as_write_ram() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_image(dir.path());
    let hcd = dir.path().join("img.hcd");
    assert!(lpmforge(&[
        "hcd",
        "from-image",
        img.to_str().unwrap(),
        "-o",
        hcd.to_str().unwrap()
    ])
    .status
    .success());
    let text =
        String::from_utf8(lpmforge(&["hcd", "decode", hcd.to_str().unwrap()]).stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("fc4c")), "{text}");
    assert!(text.contains("d0572c00"), "{text}");
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("cap.csv");
    let out = lpmforge(&[
        "findmy",
        "simulate",
        "--format",
        "csv",
        "-o",
        cap.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = lpmforge(&[
        "--json",
        "capture",
        "analyze",
        cap.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["verdicts"], serde_json::json!(["nominal"]));

    let short = dir.path().join("short.jsonl");
    let out = lpmforge(&[
        "findmy",
        "simulate",
        "--mode",
        "power-reserve",
        "-o",
        short.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = lpmforge(&["--json", "capture", "analyze", short.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["verdicts"], serde_json::json!(["early_cutoff"]));
}

#[test]
fn malformed_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, [0u8; 10]).unwrap();
    let out = lpmforge(&["patch", "parse", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(
        lpmforge(&["lpm", "decode", "--hex", "62fe0109"])
            .status
            .code(),
        Some(2)
    );
}
