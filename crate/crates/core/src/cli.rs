//! The `lpmforge` command line.
//!
//! Exit status: 0 on success, 1 when an analysis finds a problem (checksum
//! mismatch, capture anomaly), 2 on usage or input errors. With `--json`,
//! machine output goes to stdout with object keys sorted.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::capture::{self, AnalysisConfig, CaptureFormat, Finding};
use crate::findmy::{self, AdvertisementKey, JitterModel, LpmMode, ScheduleConfig};
use crate::hcd::{self, HciCommand};
use crate::hexser::parse_hex;
use crate::lpm::LpmHciCommand;
use crate::patch_image::{self as pi, ChecksumTarget, FirmwarePatchImage, PatchEntry};
use crate::patchram::{self, RomImage};
use crate::profile::ChipProfile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "lpmforge",
    version,
    about = "Broadcom/Apple LPM Bluetooth patch and Find My tooling"
)]
struct Cli {
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Chip profile TOML file.
    #[arg(long, global = true, value_name = "FILE")]
    profile: Option<PathBuf>,
    /// Built-in chip profile name.
    #[arg(long, global = true, value_name = "NAME", conflicts_with = "profile")]
    chip: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// PCIe `.bin` firmware patch images.
    #[command(subcommand)]
    Patch(PatchCmd),
    /// Patchram overlay against a ROM dump.
    #[command(subcommand)]
    Patchram(PatchramCmd),
    /// Legacy `.hcd` command streams.
    #[command(subcommand)]
    Hcd(HcdCmd),
    /// Find My LPM vendor HCI commands.
    #[command(subcommand)]
    Lpm(LpmCmd),
    /// Find My LPM schedules.
    #[command(subcommand)]
    Findmy(FindmyCmd),
    /// Advertisement capture analysis.
    #[command(subcommand)]
    Capture(CaptureCmd),
}

#[derive(Subcommand, Debug)]
enum PatchCmd {
    /// Print the header and section table.
    Parse { file: PathBuf },
    /// Check section and file checksums.
    Verify { file: PathBuf },
    /// Recompute all checksums.
    Repack {
        file: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// List Patchram entries from the configuration section.
    Entries { file: PathBuf },
    /// Overwrite bytes or upsert a patch entry; checksums are left stale.
    Edit(EditArgs),
    /// Word-level differences between two images.
    Diff { original: PathBuf, edited: PathBuf },
}

#[derive(Args, Debug)]
struct EditArgs {
    file: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Chip address to overwrite (located through the sections' mapped addresses).
    #[arg(long, value_parser = parse_u32, conflicts_with_all = ["section", "entry"])]
    address: Option<u32>,
    #[arg(long, requires = "offset", conflicts_with = "entry")]
    section: Option<usize>,
    #[arg(long, value_parser = parse_usize, requires = "section")]
    offset: Option<usize>,
    /// Replacement bytes as hex.
    #[arg(long, conflicts_with = "entry")]
    bytes: Option<String>,
    /// Patch entry to upsert, `ADDRESS=WORDHEX`.
    #[arg(long)]
    entry: Option<String>,
}

#[derive(Subcommand, Debug)]
enum PatchramCmd {
    /// ROM words changed by an image's patch entries.
    Diff {
        image: PathBuf,
        #[command(flatten)]
        rom: RomArgs,
    },
    /// Read memory as seen through the overlay.
    Read {
        image: PathBuf,
        #[command(flatten)]
        rom: RomArgs,
        #[arg(long, value_parser = parse_u32)]
        address: u32,
        #[arg(long, value_parser = parse_usize)]
        length: usize,
    },
}

#[derive(Args, Debug)]
struct RomArgs {
    /// Raw ROM dump.
    #[arg(long)]
    rom: PathBuf,
    /// Chip address of the first ROM byte.
    #[arg(long, value_parser = parse_u32, default_value = "0")]
    base: u32,
}

#[derive(Subcommand, Debug)]
enum HcdCmd {
    /// One command per line: `opcode len params`.
    Decode { file: PathBuf },
    /// Convert a `.bin` image into Write RAM commands.
    FromImage {
        file: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum LpmCmd {
    /// Encode a JSON command list.
    Encode {
        file: PathBuf,
        /// Also write the binary command stream here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Decode wire-format commands (opcode LE, length, params).
    Decode {
        #[arg(long, conflicts_with = "file")]
        hex: Option<String>,
        file: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    /// Number of seeded simulation keys.
    #[arg(long, default_value_t = findmy::DEFAULT_SHORT_KEY_COUNT, conflicts_with = "key_file")]
    keys: usize,
    /// File with one 28-byte key in hex per line.
    #[arg(long)]
    key_file: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    interval_min: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::UserShutdown)]
    mode: ModeArg,
    #[arg(long, default_value_t = 300)]
    cap_min: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    UserShutdown,
    PowerReserve,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

impl From<FormatArg> for CaptureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => CaptureFormat::Jsonl,
            FormatArg::Csv => CaptureFormat::Csv,
        }
    }
}

#[derive(Subcommand, Debug)]
enum FindmyCmd {
    /// Summarize (or export as JSONL) the rotation schedule.
    Schedule {
        #[command(flatten)]
        sched: ScheduleArgs,
        /// Print one JSON line per window instead of a summary.
        #[arg(long)]
        jsonl: bool,
    },
    /// The HCI command sequence the host sends before entering LPM.
    EmitConfig {
        #[command(flatten)]
        sched: ScheduleArgs,
        /// Write the binary command stream here.
        #[arg(long)]
        hcd: Option<PathBuf>,
    },
    /// Simulate a capture of the schedule with timing jitter.
    Simulate {
        #[command(flatten)]
        sched: ScheduleArgs,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 2.0)]
        period: f64,
        #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
        format: FormatArg,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum CaptureCmd {
    /// Rotation statistics and anomaly verdicts.
    Analyze {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
        format: FormatArg,
        #[arg(long, default_value_t = capture::DEFAULT_NOMINAL_S)]
        nominal: f64,
        #[arg(long, default_value_t = 86_400.0)]
        expected_total: f64,
        #[arg(long, default_value_t = capture::DEFAULT_GRACE_S)]
        grace: f64,
        /// Keep non-Find-My frames.
        #[arg(long)]
        all_frames: bool,
    },
}

fn parse_u32(s: &str) -> Result<u32, String> {
    let t = s.trim();
    let r = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(h) => u32::from_str_radix(&h.replace('_', ""), 16),
        None => t.replace('_', "").parse(),
    };
    r.map_err(|e| format!("`{s}`: {e}"))
}

fn parse_usize(s: &str) -> Result<usize, String> {
    parse_u32(s).map(|v| v as usize)
}

/// Error that maps to exit status 2.
#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CmdResult = Result<i32, Failure>;

struct Io<'a> {
    stdin: &'a mut dyn Read,
    out: &'a mut dyn Write,
    json: bool,
}

impl Io<'_> {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        if path == Path::new("-") {
            let mut buf = Vec::new();
            self.stdin.read_to_end(&mut buf)?;
            return Ok(buf);
        }
        std::fs::read(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
    }

    fn write_file(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
        if path == Path::new("-") {
            self.out.write_all(bytes)?;
            return Ok(());
        }
        std::fs::write(path, bytes).map_err(|e| Failure(format!("{}: {e}", path.display())))
    }

    fn emit_json<T: Serialize>(&mut self, value: &T) -> Result<(), Failure> {
        // Through Value so maps come out with sorted keys.
        let value = serde_json::to_value(value)?;
        writeln!(self.out, "{}", serde_json::to_string_pretty(&value)?)?;
        Ok(())
    }

    fn text(&mut self, s: &str) -> Result<(), Failure> {
        self.out.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Runs the CLI with explicit streams and returns the exit status.
pub fn run<I, T>(
    args: I,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = write!(sink, "{}", e.render());
            return if code == 0 { EXIT_OK } else { EXIT_ERROR };
        }
    };
    let mut io = Io {
        stdin,
        out: stdout,
        json: cli.json,
    };
    let result = load_profile(&cli).and_then(|profile| dispatch(cli.command, &profile, &mut io));
    match result {
        Ok(code) => code,
        Err(Failure(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_ERROR
        }
    }
}

fn load_profile(cli: &Cli) -> Result<ChipProfile, Failure> {
    if let Some(path) = &cli.profile {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure(format!("{}: {e}", path.display())))?;
        return Ok(ChipProfile::from_toml(&text)?);
    }
    match &cli.chip {
        Some(name) => ChipProfile::builtin(name)
            .ok_or_else(|| Failure(format!("unknown chip profile `{name}`"))),
        None => Ok(ChipProfile::default()),
    }
}

fn dispatch(cmd: Command, profile: &ChipProfile, io: &mut Io) -> CmdResult {
    match cmd {
        Command::Patch(c) => patch_cmd(c, profile, io),
        Command::Patchram(c) => patchram_cmd(c, profile, io),
        Command::Hcd(c) => hcd_cmd(c, profile, io),
        Command::Lpm(c) => lpm_cmd(c, profile, io),
        Command::Findmy(c) => findmy_cmd(c, profile, io),
        Command::Capture(c) => capture_cmd(c, io),
    }
}

fn load_image(
    io: &mut Io,
    profile: &ChipProfile,
    path: &Path,
) -> Result<FirmwarePatchImage, Failure> {
    let bytes = io.read(path)?;
    pi::parse_image_with(&bytes, &profile.section_kinds)
        .map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn kind_name(kind: pi::SectionKind) -> String {
    match kind {
        pi::SectionKind::Patchram0 => "patchram0".into(),
        pi::SectionKind::Patchram1 => "patchram1".into(),
        pi::SectionKind::ConfigData => "config_data".into(),
        pi::SectionKind::Unknown(code) => format!("unknown({code:#x})"),
    }
}

fn entry_json(index: usize, e: &PatchEntry) -> Value {
    json!({
        "index": index,
        "rom_address": e.rom_address,
        "new_word": hex::encode(e.new_word),
        "trailer": hex::encode(e.trailer),
    })
}

fn patch_cmd(cmd: PatchCmd, profile: &ChipProfile, io: &mut Io) -> CmdResult {
    let policy = profile.checksum;
    match cmd {
        PatchCmd::Parse { file } => {
            let img = load_image(io, profile, &file)?;
            if io.json {
                let sections: Vec<Value> = img
                    .sections
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        json!({
                            "index": i,
                            "kind": kind_name(s.kind),
                            "type_code": s.type_code,
                            "size": s.size,
                            "mapped_to": s.mapped_to,
                            "file_offset": s.file_offset,
                            "crc": s.checksum,
                        })
                    })
                    .collect();
                let padding: usize = img.raw_padding.iter().map(|p| p.bytes.len()).sum();
                io.emit_json(&json!({
                    "global_checksum": img.global_checksum,
                    "sections": sections,
                    "padding_bytes": padding,
                }))?;
            } else {
                let mut s = format!(
                    "global crc {:#010x}, {} sections\n",
                    img.global_checksum,
                    img.sections.len()
                );
                for (i, sec) in img.sections.iter().enumerate() {
                    s.push_str(&format!(
                        "[{i}] {:<14} type {:#010x} size {:>8} mapped {:#010x} offset {:#010x} crc {:#010x}\n",
                        kind_name(sec.kind),
                        sec.type_code,
                        sec.size,
                        sec.mapped_to,
                        sec.file_offset,
                        sec.checksum
                    ));
                }
                io.text(&s)?;
            }
            Ok(EXIT_OK)
        }
        PatchCmd::Verify { file } => {
            let img = load_image(io, profile, &file)?;
            let mismatches = pi::verify_checksums(&img, &policy);
            if io.json {
                let rows: Vec<Value> = img
                    .sections
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        json!({
                            "index": i,
                            "type_code": s.type_code,
                            "size": s.size,
                            "mapped_to": s.mapped_to,
                            "file_offset": s.file_offset,
                            "crc_stored": s.checksum,
                            "crc_computed": policy.section(&s.data),
                        })
                    })
                    .collect();
                io.emit_json(&rows)?;
            } else {
                let mut s = String::new();
                for (i, sec) in img.sections.iter().enumerate() {
                    let computed = policy.section(&sec.data);
                    let status = if computed == sec.checksum {
                        "ok"
                    } else {
                        "MISMATCH"
                    };
                    s.push_str(&format!(
                        "section {i}: stored {:#010x} computed {computed:#010x} {status}\n",
                        sec.checksum
                    ));
                }
                let global = mismatches
                    .iter()
                    .find(|m| m.target == ChecksumTarget::Global);
                match global {
                    Some(m) => s.push_str(&format!(
                        "global: stored {:#010x} computed {:#010x} MISMATCH\n",
                        m.expected, m.actual
                    )),
                    None => s.push_str(&format!("global: {:#010x} ok\n", img.global_checksum)),
                }
                io.text(&s)?;
            }
            Ok(if mismatches.is_empty() {
                EXIT_OK
            } else {
                EXIT_FINDINGS
            })
        }
        PatchCmd::Repack { file, output } => {
            let img = load_image(io, profile, &file)?;
            let repacked = pi::recompute_checksums(&img, &policy);
            io.write_file(&output, &repacked.serialize()?)?;
            if io.json && output != Path::new("-") {
                io.emit_json(&json!({ "global_checksum": repacked.global_checksum }))?;
            }
            Ok(EXIT_OK)
        }
        PatchCmd::Entries { file } => {
            let img = load_image(io, profile, &file)?;
            let entries = pi::list_patch_entries(&img)?;
            if io.json {
                let rows: Vec<Value> = entries
                    .iter()
                    .enumerate()
                    .map(|(i, e)| entry_json(i, e))
                    .collect();
                io.emit_json(&rows)?;
            } else {
                let mut s = String::new();
                for (i, e) in entries.iter().enumerate() {
                    s.push_str(&format!(
                        "{i:>3} {:#010x} -> {} (trailer {})\n",
                        e.rom_address,
                        hex::encode(e.new_word),
                        hex::encode(e.trailer)
                    ));
                }
                io.text(&s)?;
            }
            Ok(EXIT_OK)
        }
        PatchCmd::Edit(args) => patch_edit(args, profile, io),
        PatchCmd::Diff { original, edited } => {
            let a = load_image(io, profile, &original)?;
            let b = load_image(io, profile, &edited)?;
            let report = image_diff(&a, &b)?;
            if io.json {
                io.emit_json(&report)?;
            } else {
                let mut s = String::new();
                for w in report["words"].as_array().into_iter().flatten() {
                    s.push_str(&format!(
                        "word  {:#010x}: {} -> {}\n",
                        w["address"].as_u64().unwrap_or_default(),
                        w["old"].as_str().unwrap_or_default(),
                        w["new"].as_str().unwrap_or_default()
                    ));
                }
                for e in report["entries"].as_array().into_iter().flatten() {
                    s.push_str(&format!(
                        "entry {:#010x}: {} -> {}\n",
                        e["rom_address"].as_u64().unwrap_or_default(),
                        e["old"].as_str().unwrap_or("-"),
                        e["new"].as_str().unwrap_or("-")
                    ));
                }
                io.text(&s)?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn patch_edit(args: EditArgs, profile: &ChipProfile, io: &mut Io) -> CmdResult {
    let img = load_image(io, profile, &args.file)?;
    let edited = if let Some(spec) = &args.entry {
        let (addr, word) = spec
            .split_once('=')
            .ok_or_else(|| Failure("--entry expects ADDRESS=WORDHEX".into()))?;
        let word: [u8; 4] = parse_hex(word)?
            .try_into()
            .map_err(|_| Failure("entry word must be 4 bytes".into()))?;
        pi::upsert_patch_entry(
            &img,
            PatchEntry::new(parse_u32(addr).map_err(Failure)?, word),
        )?
    } else {
        let bytes = parse_hex(
            args.bytes
                .as_deref()
                .ok_or_else(|| Failure("--bytes is required unless --entry is given".into()))?,
        )?;
        let (index, offset) = match (args.address, args.section, args.offset) {
            (Some(addr), _, _) => img
                .locate(addr)
                .ok_or_else(|| Failure(format!("no section maps address {addr:#010x}")))?,
            (None, Some(s), Some(o)) => (s, o),
            _ => return Err(Failure("give --address or --section with --offset".into())),
        };
        pi::replace_bytes(&img, index, offset, &bytes)?
    };
    io.write_file(&args.output, &edited.serialize()?)?;
    Ok(EXIT_OK)
}

fn image_diff(a: &FirmwarePatchImage, b: &FirmwarePatchImage) -> Result<Value, Failure> {
    if a.sections.len() != b.sections.len() {
        return Err(Failure("images have different section counts".into()));
    }
    let mut words = Vec::new();
    for (i, (sa, sb)) in a.sections.iter().zip(&b.sections).enumerate() {
        if sa.kind == pi::SectionKind::ConfigData {
            continue;
        }
        let common = sa.data.len().min(sb.data.len());
        // Word boundaries follow chip addresses, not section offsets.
        let lead = ((4 - sa.mapped_to % 4) % 4) as usize;
        let mut off = 0;
        while off < common {
            let end = if off == 0 && lead > 0 {
                lead.min(common)
            } else {
                (off + 4).min(common)
            };
            if sa.data[off..end] != sb.data[off..end] {
                words.push(json!({
                    "section": i,
                    "address": sa.mapped_to as u64 + off as u64,
                    "old": hex::encode(&sa.data[off..end]),
                    "new": hex::encode(&sb.data[off..end]),
                }));
            }
            off = end;
        }
    }
    let list = |img: &FirmwarePatchImage| pi::list_patch_entries(img).unwrap_or_default();
    let (ea, eb) = (list(a), list(b));
    let mut addrs: Vec<u32> = ea.iter().chain(&eb).map(|e| e.rom_address).collect();
    addrs.sort_unstable();
    addrs.dedup();
    let find = |v: &[PatchEntry], addr| {
        v.iter()
            .find(|e| e.rom_address == addr)
            .map(|e| hex::encode(e.new_word))
    };
    let entries: Vec<Value> = addrs
        .into_iter()
        .filter_map(|addr| {
            let (old, new) = (find(&ea, addr), find(&eb, addr));
            (old != new).then(|| json!({ "rom_address": addr, "old": old, "new": new }))
        })
        .collect();
    Ok(json!({ "words": words, "entries": entries }))
}

fn patchram_cmd(cmd: PatchramCmd, profile: &ChipProfile, io: &mut Io) -> CmdResult {
    let (image, rom_args) = match &cmd {
        PatchramCmd::Diff { image, rom } | PatchramCmd::Read { image, rom, .. } => {
            (image.clone(), rom)
        }
    };
    let img = load_image(io, profile, &image)?;
    let rom = RomImage::new(rom_args.base, io.read(&rom_args.rom)?)?;
    let entries = pi::list_patch_entries(&img)?;
    let state = patchram::apply_entries(&rom, &entries)?;
    match cmd {
        PatchramCmd::Diff { .. } => {
            let rows = patchram::diff_report(&rom, &state);
            if io.json {
                io.emit_json(&rows)?;
            } else {
                io.text(&patchram::render_diff_table(&rows))?;
            }
        }
        PatchramCmd::Read {
            address, length, ..
        } => {
            let bytes = patchram::effective_read(&rom, &state, address, length)?;
            if io.json {
                io.emit_json(&json!({ "address": address, "data": hex::encode(&bytes) }))?;
            } else {
                io.text(&format!("{}\n", hex::encode(&bytes)))?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn hcd_cmd(cmd: HcdCmd, profile: &ChipProfile, io: &mut Io) -> CmdResult {
    match cmd {
        HcdCmd::Decode { file } => {
            let cmds = hcd::parse_hcd(&io.read(&file)?)?;
            if io.json {
                io.emit_json(&cmds)?;
            } else {
                io.text(&hcd::render_hexdump(&cmds))?;
            }
        }
        HcdCmd::FromImage { file, output } => {
            let img = load_image(io, profile, &file)?;
            let cmds = hcd::image_to_write_stream(&img);
            io.write_file(&output, &hcd::emit_hcd(&cmds)?)?;
            if io.json && output != Path::new("-") {
                io.emit_json(&json!({ "commands": cmds.len() }))?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn lpm_cmd(cmd: LpmCmd, profile: &ChipProfile, io: &mut Io) -> CmdResult {
    let codec = profile.lpm_codec();
    match cmd {
        LpmCmd::Encode { file, output } => {
            let cmds: Vec<LpmHciCommand> = serde_json::from_slice(&io.read(&file)?)?;
            let raw = cmds
                .iter()
                .map(|c| codec.encode(c))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(out) = output {
                io.write_file(&out, &hcd::emit_hcd(&raw)?)?;
            }
            if io.json {
                let wire = raw
                    .iter()
                    .map(|r| r.to_wire().map(hex::encode))
                    .collect::<Result<Vec<_>, _>>()?;
                io.emit_json(&wire)?;
            } else {
                let lines: Vec<String> = cmds.iter().map(|c| codec.render(c)).collect();
                io.text(&(lines.join("\n") + "\n"))?;
            }
        }
        LpmCmd::Decode { hex, file } => {
            let bytes = match (hex, file) {
                (Some(h), _) => parse_hex(&h)?,
                (None, Some(f)) => io.read(&f)?,
                (None, None) => return Err(Failure("give --hex or a file".into())),
            };
            let cmds = hcd::parse_hcd(&bytes)?
                .iter()
                .map(|r| codec.decode(r))
                .collect::<Result<Vec<_>, _>>()?;
            if io.json {
                io.emit_json(&cmds)?;
            } else {
                let lines: Vec<String> = cmds.iter().map(|c| c.to_string()).collect();
                io.text(&(lines.join("\n") + "\n"))?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn schedule_config(args: &ScheduleArgs, io: &mut Io) -> Result<ScheduleConfig, Failure> {
    let keys = match &args.key_file {
        Some(path) => String::from_utf8(io.read(path)?)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(AdvertisementKey::from_slice(&parse_hex(l)?)?))
            .collect::<Result<Vec<_>, Failure>>()?,
        None => AdvertisementKey::from_seed(args.seed, args.keys),
    };
    let mut cfg = ScheduleConfig::new(keys);
    cfg.short_interval = Duration::from_secs(args.interval_min * 60);
    cfg.power_reserve_cap = Duration::from_secs(args.cap_min * 60);
    cfg.mode = match args.mode {
        ModeArg::UserShutdown => LpmMode::UserShutdown,
        ModeArg::PowerReserve => LpmMode::PowerReserve,
    };
    Ok(cfg)
}

fn findmy_cmd(cmd: FindmyCmd, profile: &ChipProfile, io: &mut Io) -> CmdResult {
    match cmd {
        FindmyCmd::Schedule { sched, jsonl } => {
            let cfg = schedule_config(&sched, io)?;
            let schedule = findmy::build_schedule(&cfg)?;
            if jsonl {
                io.text(&schedule.to_jsonl())?;
                return Ok(EXIT_OK);
            }
            let span = schedule.total_span().as_secs();
            let summary = json!({
                "mode": cfg.mode,
                "windows": schedule.windows.len(),
                "interval_minutes": sched.interval_min,
                "short_key_count": schedule.windows.len(),
                "span_s": span,
                "total_minutes": span / 60,
            });
            if io.json {
                io.emit_json(&summary)?;
            } else {
                io.text(&format!(
                    "{} windows of {} min, {} min total ({} s)\n",
                    schedule.windows.len(),
                    sched.interval_min,
                    span / 60,
                    span
                ))?;
            }
        }
        FindmyCmd::EmitConfig {
            sched,
            hcd: hcd_out,
        } => {
            let cfg = schedule_config(&sched, io)?;
            let cmds = findmy::emit_configuration(&cfg)?;
            let codec = profile.lpm_codec();
            if let Some(path) = hcd_out {
                let raw = cmds
                    .iter()
                    .map(|c| codec.encode(c))
                    .collect::<Result<Vec<HciCommand>, _>>()?;
                io.write_file(&path, &hcd::emit_hcd(&raw)?)?;
            }
            if io.json {
                io.emit_json(&cmds)?;
            } else {
                let lines: Vec<String> = cmds.iter().map(|c| codec.render(c)).collect();
                io.text(&(lines.join("\n") + "\n"))?;
            }
        }
        FindmyCmd::Simulate {
            sched,
            sigma,
            period,
            format,
            output,
        } => {
            let cfg = schedule_config(&sched, io)?;
            let schedule = findmy::build_schedule(&cfg)?;
            let jitter = JitterModel {
                sigma_s: sigma,
                adv_period_s: period,
            };
            let sim = findmy::simulate_emission(&schedule, jitter, sched.seed)?;
            let mut buf = Vec::new();
            capture::export(&sim.records, format.into(), &mut buf)?;
            match output {
                Some(path) => io.write_file(&path, &buf)?,
                None => io.out.write_all(&buf)?,
            }
        }
    }
    Ok(EXIT_OK)
}

fn capture_cmd(cmd: CaptureCmd, io: &mut Io) -> CmdResult {
    let CaptureCmd::Analyze {
        file,
        format,
        nominal,
        expected_total,
        grace,
        all_frames,
    } = cmd;
    let records = capture::ingest(&io.read(&file)?[..], format.into())?;
    let cfg = AnalysisConfig {
        nominal,
        expected_total,
        grace,
        find_my_only: !all_frames,
    };
    let report = capture::analyze(&records, &cfg);
    if io.json {
        io.emit_json(&report)?;
    } else {
        io.text(&capture::render_summary(&report))?;
    }
    Ok(if report.verdicts == [Finding::Nominal] {
        EXIT_OK
    } else {
        EXIT_FINDINGS
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("lpmforge").chain(args.iter().copied()),
            &mut std::io::empty(),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn decodes_flags_from_hex() {
        let (code, out, _) = run_capture(&["lpm", "decode", "--hex", "62fe03070001"]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), "LpmFlags{0001}");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_capture(&["patch"]).0, 2);
        assert_eq!(run_capture(&["nope"]).0, 2);
        let (code, _, err) = run_capture(&["patch", "verify", "/nonexistent/x.bin"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error:"));
        assert_eq!(
            run_capture(&["--chip", "BCM0000", "findmy", "schedule"]).0,
            2
        );
        assert_eq!(run_capture(&["lpm", "decode", "--hex", "62fe0207"]).0, 2);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("findmy"));
    }

    #[test]
    fn address_parsing() {
        assert_eq!(parse_u32("0x002c57d8"), Ok(0x002c_57d8));
        assert_eq!(parse_u32("1_000"), Ok(1000));
        assert!(parse_u32("0xzz").is_err());
    }
}
