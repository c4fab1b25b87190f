//! Checksum policies for firmware patch images.
//!
//! Images are protected only by CRCs. Which CRC variant the chip uses, and
//! what range the file-level checksum covers, are not pinned down, so both
//! are selectable here. The default is CRC-32/ISO-HDLC for sections and a
//! global CRC over everything after the first 8 header bytes.

use std::fmt;
use std::str::FromStr;

use crc::{Crc, CRC_32_BZIP2, CRC_32_CKSUM, CRC_32_ISCSI, CRC_32_ISO_HDLC, CRC_32_MPEG_2};
use serde::{Deserialize, Serialize};

/// Number of leading file bytes excluded from the global checksum by default
/// (the global CRC word itself and the section count).
pub const DEFAULT_GLOBAL_SKIP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChecksumAlgorithm {
    /// Reflected, poly 0x04C11DB7, init and xorout 0xFFFFFFFF.
    #[default]
    Crc32IsoHdlc,
    Crc32Bzip2,
    Crc32Mpeg2,
    Crc32Cksum,
    Crc32c,
}

impl ChecksumAlgorithm {
    pub const ALL: [ChecksumAlgorithm; 5] = [
        Self::Crc32IsoHdlc,
        Self::Crc32Bzip2,
        Self::Crc32Mpeg2,
        Self::Crc32Cksum,
        Self::Crc32c,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Crc32IsoHdlc => "crc32-iso-hdlc",
            Self::Crc32Bzip2 => "crc32-bzip2",
            Self::Crc32Mpeg2 => "crc32-mpeg2",
            Self::Crc32Cksum => "crc32-cksum",
            Self::Crc32c => "crc32c",
        }
    }

    fn engine(self) -> Crc<u32> {
        match self {
            Self::Crc32IsoHdlc => Crc::<u32>::new(&CRC_32_ISO_HDLC),
            Self::Crc32Bzip2 => Crc::<u32>::new(&CRC_32_BZIP2),
            Self::Crc32Mpeg2 => Crc::<u32>::new(&CRC_32_MPEG_2),
            Self::Crc32Cksum => Crc::<u32>::new(&CRC_32_CKSUM),
            Self::Crc32c => Crc::<u32>::new(&CRC_32_ISCSI),
        }
    }

    pub fn checksum(self, data: &[u8]) -> u32 {
        self.engine().checksum(data)
    }
}

impl fmt::Display for ChecksumAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown checksum policy `{0}`")]
pub struct UnknownChecksumPolicy(pub String);

impl FromStr for ChecksumAlgorithm {
    type Err = UnknownChecksumPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| a.id() == wanted)
            .ok_or_else(|| UnknownChecksumPolicy(s.to_string()))
    }
}

/// How section and file checksums are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecksumPolicy {
    pub algorithm: ChecksumAlgorithm,
    /// The global checksum covers `file[global_skip..]`.
    pub global_skip: usize,
}

impl Default for ChecksumPolicy {
    fn default() -> Self {
        Self {
            algorithm: ChecksumAlgorithm::default(),
            global_skip: DEFAULT_GLOBAL_SKIP,
        }
    }
}

impl ChecksumPolicy {
    pub fn section(&self, data: &[u8]) -> u32 {
        self.algorithm.checksum(data)
    }

    pub fn global(&self, file: &[u8]) -> u32 {
        self.algorithm
            .checksum(file.get(self.global_skip..).unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bit-at-a-time reflected CRC-32, independent of the `crc` crate.
    fn reference_crc32(data: &[u8]) -> u32 {
        let mut crc = 0xffff_ffffu32;
        for &byte in data {
            crc ^= byte as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 {
                    (crc >> 1) ^ 0xedb8_8320
                } else {
                    crc >> 1
                };
            }
        }
        !crc
    }

    #[test]
    fn reference_check_values() {
        assert_eq!(reference_crc32(b""), 0);
        assert_eq!(reference_crc32(b"123456789"), 0xcbf4_3926);
    }

    #[test]
    fn default_policy_matches_reference() {
        let p = ChecksumPolicy::default();
        assert_eq!(p.section(b""), 0x0000_0000);
        assert_eq!(p.section(b"123456789"), 0xcbf4_3926);
        let blob: Vec<u8> = (0..=255u8).cycle().take(4099).collect();
        assert_eq!(p.section(&blob), reference_crc32(&blob));
    }

    #[test]
    fn global_skips_prefix() {
        let p = ChecksumPolicy::default();
        let file = b"XXXXXXXX123456789";
        assert_eq!(p.global(file), 0xcbf4_3926);
        assert_eq!(p.global(b"short"), 0);
    }

    #[test]
    fn policy_ids_round_trip() {
        for a in ChecksumAlgorithm::ALL {
            assert_eq!(a.id().parse::<ChecksumAlgorithm>().unwrap(), a);
        }
        assert!("crc16".parse::<ChecksumAlgorithm>().is_err());
    }
}
