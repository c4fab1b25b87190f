//! Vendor HCI commands that configure the standalone Find My application
//! before the chip enters low-power mode.
//!
//! The host sends, in order:
//!
//! ```text
//! 0c03                                   chip reset
//! fe62 05 <19-byte config>               rotation interval, key count, total minutes
//! fe62 06 <start u16> <count u16> <38-byte entry> x count   (repeated)
//! fe62 07 <2-byte flags>
//! fe62 04                                enter LPM, host link goes away
//! ```

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::hcd::{HciCommand, MAX_PARAMS};

pub const OPCODE_RESET: u16 = 0x0c03;
pub const OPCODE_LPM: u16 = 0xfe62;

pub const SUB_ENTER_LPM: u8 = 0x04;
pub const SUB_FIND_MY_CONFIG: u8 = 0x05;
pub const SUB_ADVERTISEMENT_SET: u8 = 0x06;
pub const SUB_LPM_FLAGS: u8 = 0x07;

pub const FIND_MY_CONFIG_LEN: usize = 19;
pub const FRAME_LEN: usize = 38;
pub const DEFAULT_BATCH_SIZE: usize = 6;

/// Config bytes observed on an iPhone entering LPM: 15-min rotation,
/// 96 keys, 1440 minutes.
pub const OBSERVED_FIND_MY_CONFIG: [u8; FIND_MY_CONFIG_LEN] = [
    0x00, 0x80, 0x0c, 0x00, 0x60, 0x00, 0x0f, 0x60, 0x00, 0xa0, 0x05, 0x00, 0x00, 0x00, 0x00, 0x03,
    0x01, 0x00, 0x07,
];

/// Advertising data prefix of an offline-finding frame: AD length 0x1f,
/// then `1e ff 4c 00 12 19 00` (manufacturer data, Apple, type 0x12, len 0x19, status).
pub const FIND_MY_PREFIX: [u8; 8] = [0x1f, 0x1e, 0xff, 0x4c, 0x00, 0x12, 0x19, 0x00];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LpmError {
    #[error("unknown opcode {0:#06x}")]
    UnknownOpcode(u16),
    #[error("unknown LPM sub-opcode {0:#04x}")]
    UnknownSubOpcode(u8),
    #[error("{what}: expected {expected} bytes, got {actual}")]
    BadLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endianness {
    #[default]
    Big,
    Little,
}

impl Endianness {
    fn put_u16(self, v: u16) -> [u8; 2] {
        match self {
            Self::Big => v.to_be_bytes(),
            Self::Little => v.to_le_bytes(),
        }
    }

    fn get_u16(self, b: [u8; 2]) -> u16 {
        match self {
            Self::Big => u16::from_be_bytes(b),
            Self::Little => u16::from_le_bytes(b),
        }
    }
}

/// The 19-byte Find My configuration blob with views onto its known fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FindMyConfig {
    #[serde(with = "crate::hexser")]
    blob: [u8; FIND_MY_CONFIG_LEN],
}

impl Default for FindMyConfig {
    fn default() -> Self {
        Self {
            blob: OBSERVED_FIND_MY_CONFIG,
        }
    }
}

impl FindMyConfig {
    /// Observed opaque bytes with the three named fields overwritten.
    pub fn new(rotation_interval_minutes: u8, short_key_count: u16, total_minutes: u16) -> Self {
        let mut cfg = Self::default();
        cfg.blob[6] = rotation_interval_minutes;
        cfg.blob[7..9].copy_from_slice(&short_key_count.to_le_bytes());
        cfg.blob[9..11].copy_from_slice(&total_minutes.to_le_bytes());
        cfg
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LpmError> {
        let blob = bytes.try_into().map_err(|_| LpmError::BadLength {
            what: "find my config",
            expected: FIND_MY_CONFIG_LEN,
            actual: bytes.len(),
        })?;
        Ok(Self { blob })
    }

    pub fn as_bytes(&self) -> &[u8; FIND_MY_CONFIG_LEN] {
        &self.blob
    }

    pub fn rotation_interval_minutes(&self) -> u8 {
        self.blob[6]
    }

    pub fn short_key_count(&self) -> u16 {
        u16::from_le_bytes([self.blob[7], self.blob[8]])
    }

    pub fn total_minutes(&self) -> u16 {
        u16::from_le_bytes([self.blob[9], self.blob[10]])
    }
}

/// One advertisement slot: the address to use and 32 bytes of advertising
/// data (a length byte followed by up to 31 bytes of AD structures).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdvertisementFrame {
    #[serde(with = "crate::hexser")]
    pub mac: [u8; 6],
    #[serde(with = "crate::hexser")]
    pub adv_data: [u8; 32],
}

impl AdvertisementFrame {
    /// Any advertising payload; only lengths are enforced by the types.
    pub fn raw(mac: [u8; 6], adv_data: [u8; 32]) -> Self {
        Self { mac, adv_data }
    }

    /// An offline-finding frame; the payload must carry the Find My prefix.
    pub fn find_my(mac: [u8; 6], adv_data: [u8; 32]) -> Result<Self, LpmError> {
        let frame = Self { mac, adv_data };
        if !frame.is_find_my() {
            return Err(LpmError::InvariantViolation(
                "advertising data lacks the Find My prefix".into(),
            ));
        }
        Ok(frame)
    }

    pub fn is_find_my(&self) -> bool {
        self.adv_data[..8] == FIND_MY_PREFIX
    }

    pub fn to_bytes(&self) -> [u8; FRAME_LEN] {
        let mut out = [0u8; FRAME_LEN];
        out[..6].copy_from_slice(&self.mac);
        out[6..].copy_from_slice(&self.adv_data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LpmError> {
        if bytes.len() != FRAME_LEN {
            return Err(LpmError::BadLength {
                what: "advertisement entry",
                expected: FRAME_LEN,
                actual: bytes.len(),
            });
        }
        Ok(Self {
            mac: bytes[..6].try_into().expect("6 bytes"),
            adv_data: bytes[6..].try_into().expect("32 bytes"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdvertisementSet {
    pub start_index: u16,
    pub entries: Vec<AdvertisementFrame>,
}

impl AdvertisementSet {
    pub fn count(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LpmFlags {
    #[serde(with = "crate::hexser")]
    pub flags: [u8; 2],
}

impl Default for LpmFlags {
    /// The value sent by iOS.
    fn default() -> Self {
        Self {
            flags: [0x00, 0x01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum LpmHciCommand {
    Reset,
    FindMyConfig(FindMyConfig),
    AdvertisementSet(AdvertisementSet),
    LpmFlags(LpmFlags),
    EnterLpm,
}

/// Encoder/decoder with the batch-header byte order as a knob.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LpmCodec {
    pub batch_endian: Endianness,
}

impl LpmCodec {
    pub fn encode(&self, cmd: &LpmHciCommand) -> Result<HciCommand, LpmError> {
        let params = match cmd {
            LpmHciCommand::Reset => return Ok(HciCommand::new(OPCODE_RESET, Vec::new())),
            LpmHciCommand::FindMyConfig(cfg) => {
                let mut p = vec![SUB_FIND_MY_CONFIG];
                p.extend_from_slice(cfg.as_bytes());
                p
            }
            LpmHciCommand::AdvertisementSet(set) => {
                let count = u16::try_from(set.count())
                    .map_err(|_| LpmError::InvariantViolation("too many entries".into()))?;
                let mut p = vec![SUB_ADVERTISEMENT_SET];
                p.extend_from_slice(&self.batch_endian.put_u16(set.start_index));
                p.extend_from_slice(&self.batch_endian.put_u16(count));
                for frame in &set.entries {
                    p.extend_from_slice(&frame.to_bytes());
                }
                p
            }
            LpmHciCommand::LpmFlags(f) => vec![SUB_LPM_FLAGS, f.flags[0], f.flags[1]],
            LpmHciCommand::EnterLpm => vec![SUB_ENTER_LPM],
        };
        if params.len() > MAX_PARAMS {
            return Err(LpmError::InvariantViolation(format!(
                "{} parameter bytes exceed the HCI limit of {MAX_PARAMS}",
                params.len()
            )));
        }
        Ok(HciCommand::new(OPCODE_LPM, params))
    }

    pub fn decode(&self, raw: &HciCommand) -> Result<LpmHciCommand, LpmError> {
        let expect = |what, expected: usize| {
            if raw.params.len() == expected {
                Ok(())
            } else {
                Err(LpmError::BadLength {
                    what,
                    expected,
                    actual: raw.params.len(),
                })
            }
        };
        match raw.opcode {
            OPCODE_RESET => {
                expect("chip reset", 0)?;
                return Ok(LpmHciCommand::Reset);
            }
            OPCODE_LPM => {}
            other => return Err(LpmError::UnknownOpcode(other)),
        }
        let Some((&sub, body)) = raw.params.split_first() else {
            return Err(LpmError::BadLength {
                what: "LPM command",
                expected: 1,
                actual: 0,
            });
        };
        match sub {
            SUB_ENTER_LPM => {
                expect("enter LPM", 1)?;
                Ok(LpmHciCommand::EnterLpm)
            }
            SUB_FIND_MY_CONFIG => {
                expect("find my config", 1 + FIND_MY_CONFIG_LEN)?;
                Ok(LpmHciCommand::FindMyConfig(FindMyConfig::from_bytes(body)?))
            }
            SUB_LPM_FLAGS => {
                expect("LPM flags", 3)?;
                Ok(LpmHciCommand::LpmFlags(LpmFlags {
                    flags: [body[0], body[1]],
                }))
            }
            SUB_ADVERTISEMENT_SET => {
                if body.len() < 4 {
                    return Err(LpmError::BadLength {
                        what: "advertisement set header",
                        expected: 5,
                        actual: raw.params.len(),
                    });
                }
                let start_index = self.batch_endian.get_u16([body[0], body[1]]);
                let count = self.batch_endian.get_u16([body[2], body[3]]) as usize;
                expect("advertisement set", 5 + FRAME_LEN * count)?;
                let entries = body[4..]
                    .chunks_exact(FRAME_LEN)
                    .map(AdvertisementFrame::from_bytes)
                    .collect::<Result<_, _>>()?;
                Ok(LpmHciCommand::AdvertisementSet(AdvertisementSet {
                    start_index,
                    entries,
                }))
            }
            other => Err(LpmError::UnknownSubOpcode(other)),
        }
    }

    /// Text view, one command per line, fields grouped as the host sends them.
    pub fn render(&self, cmd: &LpmHciCommand) -> String {
        match cmd {
            LpmHciCommand::Reset => format!("{OPCODE_RESET:04x}"),
            LpmHciCommand::FindMyConfig(cfg) => format!(
                "{OPCODE_LPM:04x} {SUB_FIND_MY_CONFIG:02x} {}",
                hex::encode(cfg.as_bytes())
            ),
            LpmHciCommand::AdvertisementSet(set) => {
                let mut line = format!(
                    "{OPCODE_LPM:04x} {SUB_ADVERTISEMENT_SET:02x} {}{}",
                    hex::encode(self.batch_endian.put_u16(set.start_index)),
                    hex::encode(self.batch_endian.put_u16(set.count() as u16)),
                );
                for f in &set.entries {
                    let _ = write!(line, " [{}]", hex::encode(f.to_bytes()));
                }
                line
            }
            LpmHciCommand::LpmFlags(f) => {
                format!(
                    "{OPCODE_LPM:04x} {SUB_LPM_FLAGS:02x} {}",
                    hex::encode(f.flags)
                )
            }
            LpmHciCommand::EnterLpm => format!("{OPCODE_LPM:04x} {SUB_ENTER_LPM:02x}"),
        }
    }
}

pub fn encode(cmd: &LpmHciCommand) -> Result<HciCommand, LpmError> {
    LpmCodec::default().encode(cmd)
}

pub fn decode(raw: &HciCommand) -> Result<LpmHciCommand, LpmError> {
    LpmCodec::default().decode(raw)
}

/// Splits frames into sets of `batch_size` with consecutive start indices.
pub fn batch_advertisements(
    frames: &[AdvertisementFrame],
    batch_size: usize,
) -> Vec<AdvertisementSet> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    frames
        .chunks(batch_size)
        .enumerate()
        .map(|(i, chunk)| AdvertisementSet {
            start_index: (i * batch_size) as u16,
            entries: chunk.to_vec(),
        })
        .collect()
}

impl fmt::Display for LpmHciCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Reset => f.write_str("Reset"),
            Self::FindMyConfig(c) => write!(
                f,
                "FindMyConfig{{interval_min: {}, short_keys: {}, total_min: {}}}",
                c.rotation_interval_minutes(),
                c.short_key_count(),
                c.total_minutes()
            ),
            Self::AdvertisementSet(s) => {
                write!(
                    f,
                    "AdvertisementSet{{start: {}, count: {}}}",
                    s.start_index,
                    s.count()
                )
            }
            Self::LpmFlags(l) => write!(f, "LpmFlags{{{}}}", hex::encode(l.flags)),
            Self::EnterLpm => f.write_str("EnterLpm"),
        }
    }
}
