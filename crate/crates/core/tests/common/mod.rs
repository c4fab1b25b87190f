#![allow(dead_code)]

use proptest::prelude::*;

/// A patch image described field by field; `to_bytes` lays it out by hand,
/// independently of the library's serializer.
#[derive(Debug, Clone)]
pub struct ImageSpec {
    pub global: u32,
    pub sections: Vec<SectionSpec>,
    /// Bytes after the section table, before the first blob.
    pub lead_padding: Vec<u8>,
    /// Bytes after each blob (in placement order).
    pub gaps: Vec<Vec<u8>>,
    /// Order in which blobs are placed in the file.
    pub placement: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SectionSpec {
    pub type_code: u32,
    pub mapped_to: u32,
    pub crc: u32,
    pub data: Vec<u8>,
}

pub fn le(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

impl ImageSpec {
    pub fn offsets(&self) -> Vec<u32> {
        let mut offsets = vec![0u32; self.sections.len()];
        let mut cursor = 16 + 24 * self.sections.len() + self.lead_padding.len();
        for (slot, &idx) in self.placement.iter().enumerate() {
            offsets[idx] = cursor as u32;
            cursor += self.sections[idx].data.len() + self.gaps[slot].len();
        }
        offsets
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let offsets = self.offsets();
        let mut out = le(&[self.global, self.sections.len() as u32, 0xffff_ffff, 0]);
        for (s, off) in self.sections.iter().zip(&offsets) {
            out.extend(le(&[
                s.type_code,
                s.data.len() as u32,
                s.mapped_to,
                *off,
                s.crc,
                0,
            ]));
        }
        out.extend(&self.lead_padding);
        for (slot, &idx) in self.placement.iter().enumerate() {
            assert_eq!(out.len(), offsets[idx] as usize);
            out.extend(&self.sections[idx].data);
            out.extend(&self.gaps[slot]);
        }
        out
    }
}

pub fn config_blob(entries: &[(u32, [u8; 4], [u8; 5])], opaque: &[([u8; 2], Vec<u8>)]) -> Vec<u8> {
    let mut out = b"BRCMcfgS".to_vec();
    for (tag, value) in opaque {
        out.extend_from_slice(tag);
        out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        out.extend_from_slice(value);
    }
    for (addr, word, trailer) in entries {
        out.extend_from_slice(&[0x01, 0x10]);
        out.extend_from_slice(&addr.to_le_bytes());
        out.extend_from_slice(word);
        out.extend_from_slice(trailer);
    }
    out
}

fn section_strategy() -> impl Strategy<Value = SectionSpec> {
    (
        any::<u32>(),
        any::<u32>(),
        any::<u32>(),
        prop::collection::vec(any::<u8>(), 0..200),
    )
        .prop_map(|(type_code, mapped_to, crc, mut data)| {
            // Plain code blobs never start with the config magic.
            if data.starts_with(b"BRCM") {
                data[0] = 0;
            }
            SectionSpec {
                type_code,
                mapped_to,
                crc,
                data,
            }
        })
}

fn config_strategy() -> impl Strategy<Value = SectionSpec> {
    let entry =
        (0u32..0x0010_0000, any::<[u8; 4]>(), any::<[u8; 5]>()).prop_map(|(a, w, t)| (a * 4, w, t));
    let opaque = (any::<[u8; 2]>(), prop::collection::vec(any::<u8>(), 0..40))
        .prop_filter("tag must not be the entry marker", |(tag, _)| {
            tag[0] != 0x01 || tag[1] != 0x10
        });
    (
        prop::collection::vec(entry, 0..12),
        prop::collection::vec(opaque, 0..3),
        any::<u32>(),
        any::<u32>(),
    )
        .prop_map(|(entries, opaque, type_code, crc)| SectionSpec {
            type_code,
            mapped_to: 0,
            crc,
            data: config_blob(&entries, &opaque),
        })
}

pub fn image_strategy() -> impl Strategy<Value = ImageSpec> {
    (
        prop::collection::vec(section_strategy(), 0..3),
        prop::option::of(config_strategy()),
        any::<u32>(),
        prop::collection::vec(any::<u8>(), 0..48),
    )
        .prop_flat_map(|(mut sections, config, global, lead_padding)| {
            if let Some(c) = config {
                sections.push(c);
            }
            let n = sections.len();
            (
                Just(sections),
                Just(global),
                Just(lead_padding),
                prop::collection::vec(prop::collection::vec(any::<u8>(), 0..8), n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
        .prop_map(
            |(sections, global, lead_padding, gaps, placement)| ImageSpec {
                global,
                sections,
                lead_padding,
                gaps,
                placement,
            },
        )
}

/// Copy the ROM, overwrite every slot word, then slice.
pub fn naive_effective_read(
    rom_base: u32,
    rom: &[u8],
    slots: &[(u32, [u8; 4])],
    address: u32,
    len: usize,
) -> Vec<u8> {
    let mut copy = rom.to_vec();
    for (addr, word) in slots {
        let off = (addr - rom_base) as usize;
        copy[off..off + 4].copy_from_slice(word);
    }
    let off = (address - rom_base) as usize;
    copy[off..off + len].to_vec()
}

/// Sample standard deviation by the textbook two-pass formula.
pub fn sample_stddev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}
