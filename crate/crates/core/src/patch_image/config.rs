//! The `BRCMcfgS` patch configuration area.
//!
//! The area is a magic string followed by a flat sequence of records. Patch
//! entries are fixed 15-byte records beginning with `01 10`. Every other record
//! is framed as a 2-byte tag, a little-endian 16-bit length and the value, and
//! is carried through untouched.

use serde::Serialize;

pub const CONFIG_MAGIC: &[u8; 8] = b"BRCMcfgS";
pub const PATCH_ENTRY_MARKER: [u8; 2] = [0x01, 0x10];
pub const PATCH_ENTRY_LEN: usize = 15;
/// Number of Patchram slots on current Broadcom chips.
pub const PATCHRAM_SLOTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("configuration data does not start with BRCMcfgS")]
    BadMagic,
    #[error("malformed record at config offset {offset}: {reason}")]
    MalformedTlv { offset: usize, reason: &'static str },
}

/// One Patchram override: the ROM word at `rom_address` reads as `new_word`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PatchEntry {
    pub rom_address: u32,
    #[serde(with = "crate::hexser")]
    pub new_word: [u8; 4],
    /// Opaque tail of the record; preserved verbatim.
    #[serde(with = "crate::hexser")]
    pub trailer: [u8; 5],
}

impl PatchEntry {
    pub fn new(rom_address: u32, new_word: [u8; 4]) -> Self {
        Self {
            rom_address,
            new_word,
            trailer: [0; 5],
        }
    }

    pub fn is_aligned(&self) -> bool {
        self.rom_address.is_multiple_of(4)
    }

    pub fn to_bytes(&self) -> [u8; PATCH_ENTRY_LEN] {
        let mut out = [0u8; PATCH_ENTRY_LEN];
        out[0..2].copy_from_slice(&PATCH_ENTRY_MARKER);
        out[2..6].copy_from_slice(&self.rom_address.to_le_bytes());
        out[6..10].copy_from_slice(&self.new_word);
        out[10..15].copy_from_slice(&self.trailer);
        out
    }

    /// Decodes a record; `None` unless `bytes` is exactly one marked entry.
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != PATCH_ENTRY_LEN || bytes[0..2] != PATCH_ENTRY_MARKER {
            return None;
        }
        Some(Self {
            rom_address: u32::from_le_bytes(bytes[2..6].try_into().ok()?),
            new_word: bytes[6..10].try_into().ok()?,
            trailer: bytes[10..15].try_into().ok()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpaqueTlv {
    pub tag: [u8; 2],
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigTlv {
    Patch(PatchEntry),
    Opaque(OpaqueTlv),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchConfigData {
    pub entries: Vec<ConfigTlv>,
}

impl PatchConfigData {
    pub fn parse(data: &[u8]) -> Result<Self, ConfigError> {
        let body = data
            .strip_prefix(CONFIG_MAGIC.as_slice())
            .ok_or(ConfigError::BadMagic)?;
        let mut entries = Vec::new();
        let mut pos = 0;
        while pos < body.len() {
            let offset = pos + CONFIG_MAGIC.len();
            let rest = &body[pos..];
            if rest.starts_with(&PATCH_ENTRY_MARKER) {
                let record = rest
                    .get(..PATCH_ENTRY_LEN)
                    .ok_or(ConfigError::MalformedTlv {
                        offset,
                        reason: "truncated patch entry",
                    })?;
                let entry = PatchEntry::from_bytes(record).expect("marker and length checked");
                if !entry.is_aligned() {
                    return Err(ConfigError::MalformedTlv {
                        offset,
                        reason: "patch entry address is not word aligned",
                    });
                }
                entries.push(ConfigTlv::Patch(entry));
                pos += PATCH_ENTRY_LEN;
                continue;
            }
            if rest.len() < 4 {
                return Err(ConfigError::MalformedTlv {
                    offset,
                    reason: "truncated record header",
                });
            }
            let len = u16::from_le_bytes([rest[2], rest[3]]) as usize;
            let value = rest.get(4..4 + len).ok_or(ConfigError::MalformedTlv {
                offset,
                reason: "record length exceeds configuration data",
            })?;
            entries.push(ConfigTlv::Opaque(OpaqueTlv {
                tag: [rest[0], rest[1]],
                value: value.to_vec(),
            }));
            pos += 4 + len;
        }
        Ok(Self { entries })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CONFIG_MAGIC.to_vec();
        for entry in &self.entries {
            match entry {
                ConfigTlv::Patch(p) => out.extend_from_slice(&p.to_bytes()),
                ConfigTlv::Opaque(t) => {
                    out.extend_from_slice(&t.tag);
                    out.extend_from_slice(&(t.value.len() as u16).to_le_bytes());
                    out.extend_from_slice(&t.value);
                }
            }
        }
        out
    }

    pub fn patch_entries(&self) -> impl Iterator<Item = &PatchEntry> {
        self.entries.iter().filter_map(|e| match e {
            ConfigTlv::Patch(p) => Some(p),
            ConfigTlv::Opaque(_) => None,
        })
    }

    /// Replaces the entry for the same ROM address in place, or appends.
    /// Returns `true` if an existing entry was replaced.
    pub fn upsert(&mut self, entry: PatchEntry) -> bool {
        for tlv in &mut self.entries {
            if let ConfigTlv::Patch(existing) = tlv {
                if existing.rom_address == entry.rom_address {
                    *existing = entry;
                    return true;
                }
            }
        }
        self.entries.push(ConfigTlv::Patch(entry));
        false
    }
}
