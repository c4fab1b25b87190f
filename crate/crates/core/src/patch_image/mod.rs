//! PCIe-era Broadcom firmware patch images (`.bin`).
//!
//! Layout, all words little-endian:
//!
//! ```text
//! 0x00  global CRC | section count | ffffffff | 00000000
//! 0x10  type | size | mapped to | file offset | CRC | 00000000   (one row per section)
//!       ... padding (usually a zero row) ...
//!       section data at the recorded file offsets
//! ```
//!
//! Every byte that is not part of the header, the section table or a section
//! blob is kept as padding, so an unmodified image re-serializes bit-exactly.

mod config;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checksum::ChecksumPolicy;

pub use config::{
    ConfigError, ConfigTlv, OpaqueTlv, PatchConfigData, PatchEntry, CONFIG_MAGIC, PATCHRAM_SLOTS,
    PATCH_ENTRY_LEN, PATCH_ENTRY_MARKER,
};

pub const HEADER_LEN: usize = 16;
pub const SECTION_HEADER_LEN: usize = 24;
pub const HEADER_MARKER: u32 = 0xffff_ffff;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchImageError {
    #[error("file truncated: need {needed} bytes, have {actual}")]
    TruncatedFile { needed: usize, actual: usize },
    #[error(
        "bad header constant at offset {offset:#x}: expected {expected:#010x}, found {found:#010x}"
    )]
    BadHeaderConstants {
        offset: usize,
        expected: u32,
        found: u32,
    },
    #[error("section {index} spans {start:#x}..{end:#x}, beyond file length {len:#x}")]
    OffsetOutOfBounds {
        index: usize,
        start: u64,
        end: u64,
        len: usize,
    },
    #[error("section {index} overlaps {other}")]
    SectionOverlap { index: usize, other: String },
    #[error("section {index} declares size {declared} but holds {actual} bytes")]
    InconsistentSize {
        index: usize,
        declared: u32,
        actual: usize,
    },
    #[error("edit out of range: section {index} offset {offset} length {len}")]
    OutOfRange {
        index: usize,
        offset: usize,
        len: usize,
    },
    #[error("no configuration data section")]
    MissingConfigSection,
    #[error(transparent)]
    MalformedTlv(#[from] ConfigError),
    #[error("{count} patch entries exceed the {PATCHRAM_SLOTS} Patchram slots")]
    PatchSlotOverflow { count: usize },
    #[error("patch address {0:#010x} is not word aligned")]
    MisalignedAddress(u32),
}

pub type Result<T, E = PatchImageError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Patchram0,
    Patchram1,
    ConfigData,
    Unknown(u32),
}

/// Maps raw section type codes to kinds for one chip generation.
///
/// Codes not in the table are classified by content (`BRCMcfgS` marks
/// configuration data) and then by position: the first two remaining
/// sections are the Patchram regions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionKindMap {
    pub codes: BTreeMap<u32, SectionKind>,
}

impl SectionKindMap {
    fn classify(&self, type_code: u32, data: &[u8], patchram_seen: &mut usize) -> SectionKind {
        if let Some(kind) = self.codes.get(&type_code) {
            return *kind;
        }
        if data.starts_with(CONFIG_MAGIC) {
            return SectionKind::ConfigData;
        }
        let kind = match *patchram_seen {
            0 => SectionKind::Patchram0,
            1 => SectionKind::Patchram1,
            _ => return SectionKind::Unknown(type_code),
        };
        *patchram_seen += 1;
        kind
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSection {
    pub kind: SectionKind,
    pub type_code: u32,
    pub size: u32,
    pub mapped_to: u32,
    pub file_offset: u32,
    pub checksum: u32,
    pub data: Vec<u8>,
}

impl PatchSection {
    fn range(&self) -> std::ops::Range<u64> {
        let start = self.file_offset as u64;
        start..start + self.data.len() as u64
    }

    /// Section-relative offset of a chip address, if the section maps it.
    pub fn offset_of(&self, address: u32) -> Option<usize> {
        let rel = address.checked_sub(self.mapped_to)? as usize;
        (rel < self.data.len()).then_some(rel)
    }
}

/// A run of bytes outside the header, section table and section blobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padding {
    pub offset: u32,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmwarePatchImage {
    pub global_checksum: u32,
    pub sections: Vec<PatchSection>,
    pub raw_padding: Vec<Padding>,
}

fn word(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn table_end(sections: usize) -> usize {
    HEADER_LEN + SECTION_HEADER_LEN * sections
}

/// Rejects blobs that overlap each other or the header table.
fn check_layout(sections: &[PatchSection]) -> Result<()> {
    let header_end = table_end(sections.len()) as u64;
    let mut spans: Vec<(usize, std::ops::Range<u64>)> = sections
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.data.is_empty())
        .map(|(i, s)| (i, s.range()))
        .collect();
    for (index, range) in &spans {
        if range.start < header_end {
            return Err(PatchImageError::SectionOverlap {
                index: *index,
                other: "the section header table".into(),
            });
        }
    }
    spans.sort_by_key(|(_, r)| r.start);
    for pair in spans.windows(2) {
        if pair[1].1.start < pair[0].1.end {
            return Err(PatchImageError::SectionOverlap {
                index: pair[1].0,
                other: format!("section {}", pair[0].0),
            });
        }
    }
    Ok(())
}

pub fn parse_image(bytes: &[u8]) -> Result<FirmwarePatchImage> {
    parse_image_with(bytes, &SectionKindMap::default())
}

pub fn parse_image_with(bytes: &[u8], kinds: &SectionKindMap) -> Result<FirmwarePatchImage> {
    if bytes.len() < HEADER_LEN {
        return Err(PatchImageError::TruncatedFile {
            needed: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    for (offset, expected) in [(8, HEADER_MARKER), (12, 0)] {
        let found = word(bytes, offset);
        if found != expected {
            return Err(PatchImageError::BadHeaderConstants {
                offset,
                expected,
                found,
            });
        }
    }
    let global_checksum = word(bytes, 0);
    let count = word(bytes, 4) as usize;
    let table_len = count
        .checked_mul(SECTION_HEADER_LEN)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .filter(|&n| n <= bytes.len())
        .ok_or(PatchImageError::TruncatedFile {
            needed: HEADER_LEN.saturating_add(count.saturating_mul(SECTION_HEADER_LEN)),
            actual: bytes.len(),
        })?;

    let mut sections = Vec::with_capacity(count);
    let mut patchram_seen = 0;
    for index in 0..count {
        let row = HEADER_LEN + index * SECTION_HEADER_LEN;
        let reserved = word(bytes, row + 20);
        if reserved != 0 {
            return Err(PatchImageError::BadHeaderConstants {
                offset: row + 20,
                expected: 0,
                found: reserved,
            });
        }
        let type_code = word(bytes, row);
        let size = word(bytes, row + 4);
        let file_offset = word(bytes, row + 12);
        let start = file_offset as u64;
        let end = start + size as u64;
        if end > bytes.len() as u64 {
            return Err(PatchImageError::OffsetOutOfBounds {
                index,
                start,
                end,
                len: bytes.len(),
            });
        }
        let data = bytes[start as usize..end as usize].to_vec();
        sections.push(PatchSection {
            kind: kinds.classify(type_code, &data, &mut patchram_seen),
            type_code,
            size,
            mapped_to: word(bytes, row + 8),
            file_offset,
            checksum: word(bytes, row + 16),
            data,
        });
    }
    check_layout(&sections)?;

    // Everything after the table not covered by a section is padding.
    let mut covered: Vec<_> = sections.iter().map(PatchSection::range).collect();
    covered.sort_by_key(|r| r.start);
    let mut raw_padding = Vec::new();
    let mut cursor = table_len as u64;
    for range in covered
        .into_iter()
        .chain(std::iter::once(bytes.len() as u64..bytes.len() as u64))
    {
        if range.start > cursor {
            raw_padding.push(Padding {
                offset: cursor as u32,
                bytes: bytes[cursor as usize..range.start as usize].to_vec(),
            });
        }
        cursor = cursor.max(range.end);
    }

    Ok(FirmwarePatchImage {
        global_checksum,
        sections,
        raw_padding,
    })
}

impl FirmwarePatchImage {
    pub fn empty() -> Self {
        Self {
            global_checksum: 0,
            sections: Vec::new(),
            raw_padding: Vec::new(),
        }
    }

    pub fn serialize(&self) -> Result<Vec<u8>> {
        serialize_image(self)
    }

    pub fn config_section_index(&self) -> Option<usize> {
        self.sections
            .iter()
            .position(|s| s.kind == SectionKind::ConfigData)
    }

    /// Finds the section mapping `address` and the offset into its data.
    pub fn locate(&self, address: u32) -> Option<(usize, usize)> {
        self.sections
            .iter()
            .enumerate()
            .find_map(|(i, s)| s.offset_of(address).map(|off| (i, off)))
    }

    /// Replaces one section's data, moving every region that lies after it
    /// by the change in length.
    pub fn set_section_data(&mut self, index: usize, data: Vec<u8>) {
        let old_end = self.sections[index].range().end;
        let delta = data.len() as i64 - self.sections[index].data.len() as i64;
        let shift = |offset: &mut u32| {
            if *offset as u64 >= old_end {
                *offset = (*offset as i64 + delta) as u32;
            }
        };
        for (i, section) in self.sections.iter_mut().enumerate() {
            if i != index && !section.data.is_empty() {
                shift(&mut section.file_offset);
            }
        }
        for pad in &mut self.raw_padding {
            shift(&mut pad.offset);
        }
        let section = &mut self.sections[index];
        section.size = data.len() as u32;
        section.data = data;
    }
}

pub fn serialize_image(img: &FirmwarePatchImage) -> Result<Vec<u8>> {
    for (index, s) in img.sections.iter().enumerate() {
        if s.size as usize != s.data.len() {
            return Err(PatchImageError::InconsistentSize {
                index,
                declared: s.size,
                actual: s.data.len(),
            });
        }
    }
    check_layout(&img.sections)?;

    let header_len = table_end(img.sections.len());
    let total = img
        .sections
        .iter()
        .map(|s| s.range().end as usize)
        .chain(
            img.raw_padding
                .iter()
                .map(|p| p.offset as usize + p.bytes.len()),
        )
        .fold(header_len, usize::max);
    let mut out = vec![0u8; total];

    out[0..4].copy_from_slice(&img.global_checksum.to_le_bytes());
    out[4..8].copy_from_slice(&(img.sections.len() as u32).to_le_bytes());
    out[8..12].copy_from_slice(&HEADER_MARKER.to_le_bytes());
    out[12..16].copy_from_slice(&0u32.to_le_bytes());
    for (i, s) in img.sections.iter().enumerate() {
        let row = HEADER_LEN + i * SECTION_HEADER_LEN;
        for (k, w) in [
            s.type_code,
            s.size,
            s.mapped_to,
            s.file_offset,
            s.checksum,
            0,
        ]
        .into_iter()
        .enumerate()
        {
            out[row + 4 * k..row + 4 * k + 4].copy_from_slice(&w.to_le_bytes());
        }
    }
    for pad in &img.raw_padding {
        let at = pad.offset as usize;
        out[at..at + pad.bytes.len()].copy_from_slice(&pad.bytes);
    }
    for s in &img.sections {
        let at = s.file_offset as usize;
        out[at..at + s.data.len()].copy_from_slice(&s.data);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChecksumTarget {
    Global,
    Section(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChecksumMismatch {
    pub target: ChecksumTarget,
    /// Value stored in the file.
    pub expected: u32,
    /// Value recomputed from the data.
    pub actual: u32,
}

/// Lists every checksum that does not match its recomputed value.
///
/// The global checksum is only checked when the image serializes; an image
/// with inconsistent section sizes reports section mismatches only.
pub fn verify_checksums(
    img: &FirmwarePatchImage,
    policy: &ChecksumPolicy,
) -> Vec<ChecksumMismatch> {
    let mut out: Vec<_> = img
        .sections
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let actual = policy.section(&s.data);
            (actual != s.checksum).then_some(ChecksumMismatch {
                target: ChecksumTarget::Section(i),
                expected: s.checksum,
                actual,
            })
        })
        .collect();
    if let Ok(bytes) = serialize_image(img) {
        let actual = policy.global(&bytes);
        if actual != img.global_checksum {
            out.push(ChecksumMismatch {
                target: ChecksumTarget::Global,
                expected: img.global_checksum,
                actual,
            });
        }
    }
    out
}

pub fn recompute_checksums(
    img: &FirmwarePatchImage,
    policy: &ChecksumPolicy,
) -> FirmwarePatchImage {
    let mut out = img.clone();
    for s in &mut out.sections {
        s.checksum = policy.section(&s.data);
    }
    // Section CRC words sit inside the global coverage, so they go first.
    if let Ok(bytes) = serialize_image(&out) {
        out.global_checksum = policy.global(&bytes);
    }
    out
}

/// Overwrites bytes inside one section. Checksums are left stale; follow up
/// with [`recompute_checksums`] to repack.
pub fn replace_bytes(
    img: &FirmwarePatchImage,
    index: usize,
    offset: usize,
    replacement: &[u8],
) -> Result<FirmwarePatchImage> {
    let out_of_range = PatchImageError::OutOfRange {
        index,
        offset,
        len: replacement.len(),
    };
    let section = img.sections.get(index).ok_or(out_of_range.clone())?;
    let end = offset
        .checked_add(replacement.len())
        .ok_or(out_of_range.clone())?;
    if end > section.data.len() {
        return Err(out_of_range);
    }
    let mut out = img.clone();
    out.sections[index].data[offset..end].copy_from_slice(replacement);
    Ok(out)
}

fn config_of(img: &FirmwarePatchImage) -> Result<(usize, PatchConfigData)> {
    let index = img
        .config_section_index()
        .ok_or(PatchImageError::MissingConfigSection)?;
    Ok((index, PatchConfigData::parse(&img.sections[index].data)?))
}

pub fn list_patch_entries(img: &FirmwarePatchImage) -> Result<Vec<PatchEntry>> {
    let (_, cfg) = config_of(img)?;
    let entries: Vec<PatchEntry> = cfg.patch_entries().copied().collect();
    if entries.len() > PATCHRAM_SLOTS {
        return Err(PatchImageError::PatchSlotOverflow {
            count: entries.len(),
        });
    }
    Ok(entries)
}

/// Replaces the entry for `entry.rom_address` or appends a new one. The
/// configuration section may grow; later regions move with it. Checksums are
/// left stale.
pub fn upsert_patch_entry(
    img: &FirmwarePatchImage,
    entry: PatchEntry,
) -> Result<FirmwarePatchImage> {
    if !entry.is_aligned() {
        return Err(PatchImageError::MisalignedAddress(entry.rom_address));
    }
    let (index, mut cfg) = config_of(img)?;
    cfg.upsert(entry);
    let count = cfg.patch_entries().count();
    if count > PATCHRAM_SLOTS {
        return Err(PatchImageError::PatchSlotOverflow { count });
    }
    let mut out = img.clone();
    out.set_section_data(index, cfg.to_bytes());
    Ok(out)
}
