//! Per-chip settings: section type codes, checksum policy and batch header
//! byte order.
//!
//! Profiles are loaded from a small TOML file:
//!
//! ```toml
//! name = "lab-board"
//! base = "BCM4378B1"          # optional, defaults to BCM4387C2
//! checksum = "crc32-iso-hdlc"
//! global_checksum_skip = 8
//! batch_endian = "big"
//!
//! [section_types]
//! "0x01" = "patchram0"
//! "0x02" = "patchram1"
//! "0x03" = "config_data"
//! ```

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::checksum::{ChecksumAlgorithm, ChecksumPolicy};
use crate::lpm::{Endianness, LpmCodec};
use crate::patch_image::{SectionKind, SectionKindMap};

pub const BUILTIN_PROFILES: [&str; 3] = ["BCM4377B2", "BCM4378B1", "BCM4387C2"];
pub const DEFAULT_PROFILE: &str = "BCM4387C2";

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("unknown chip profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChipProfile {
    pub name: String,
    pub section_kinds: SectionKindMap,
    pub checksum: ChecksumPolicy,
    pub batch_endian: Endianness,
}

impl Default for ChipProfile {
    fn default() -> Self {
        Self::builtin(DEFAULT_PROFILE).expect("default profile exists")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    name: Option<String>,
    base: Option<String>,
    checksum: Option<String>,
    global_checksum_skip: Option<usize>,
    batch_endian: Option<Endianness>,
    #[serde(default)]
    section_types: BTreeMap<String, String>,
}

fn parse_code(text: &str) -> Result<u32, ProfileError> {
    let t = text.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.map_err(|_| ProfileError::Invalid(format!("section type code `{text}`")))
}

fn parse_kind(text: &str, code: u32) -> Result<SectionKind, ProfileError> {
    match text {
        "patchram0" => Ok(SectionKind::Patchram0),
        "patchram1" => Ok(SectionKind::Patchram1),
        "config_data" => Ok(SectionKind::ConfigData),
        "unknown" => Ok(SectionKind::Unknown(code)),
        other => Err(ProfileError::Invalid(format!("section kind `{other}`"))),
    }
}

impl ChipProfile {
    /// Built-in profiles for chips with active LPM support. Their type codes
    /// are not known, so all rely on content and position inference.
    pub fn builtin(name: &str) -> Option<Self> {
        let canonical = BUILTIN_PROFILES
            .iter()
            .find(|p| p.eq_ignore_ascii_case(name))?;
        Some(Self {
            name: canonical.to_string(),
            section_kinds: SectionKindMap::default(),
            checksum: ChecksumPolicy::default(),
            batch_endian: Endianness::Big,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        let file: ProfileFile = toml::from_str(text)?;
        let base = file.base.as_deref().unwrap_or(DEFAULT_PROFILE);
        let mut profile =
            Self::builtin(base).ok_or_else(|| ProfileError::UnknownProfile(base.to_string()))?;
        if let Some(name) = file.name {
            profile.name = name;
        }
        if let Some(id) = file.checksum {
            profile.checksum.algorithm = id
                .parse::<ChecksumAlgorithm>()
                .map_err(|e| ProfileError::Invalid(e.to_string()))?;
        }
        if let Some(skip) = file.global_checksum_skip {
            profile.checksum.global_skip = skip;
        }
        if let Some(e) = file.batch_endian {
            profile.batch_endian = e;
        }
        for (code, kind) in &file.section_types {
            let code = parse_code(code)?;
            profile
                .section_kinds
                .codes
                .insert(code, parse_kind(kind, code)?);
        }
        Ok(profile)
    }

    pub fn lpm_codec(&self) -> LpmCodec {
        LpmCodec {
            batch_endian: self.batch_endian,
        }
    }
}
