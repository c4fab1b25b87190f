//! Legacy `.hcd` patch files: a bare concatenation of HCI commands.
//!
//! Each command is `opcode (u16 LE) | param length (u8) | params`. Firmware
//! is uploaded with vendor Write RAM commands carrying a little-endian target
//! address followed by at most 251 data bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::patch_image::FirmwarePatchImage;

pub const OPCODE_WRITE_RAM: u16 = 0xfc4c;
pub const OPCODE_DOWNLOAD_MINIDRIVER: u16 = 0xfc2e;
pub const MAX_PARAMS: usize = 255;
pub const MAX_WRITE_RAM_DATA: usize = MAX_PARAMS - 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HcdError {
    #[error("command at offset {offset} declares {declared} parameter bytes, {available} remain")]
    TruncatedCommand {
        offset: usize,
        declared: usize,
        available: usize,
    },
    #[error("{len} trailing bytes at offset {offset} do not form a command header")]
    TrailingGarbage { offset: usize, len: usize },
    #[error("command {index} has {len} parameter bytes (max {MAX_PARAMS})")]
    ParamsTooLong { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HciCommand {
    pub opcode: u16,
    #[serde(with = "crate::hexser")]
    pub params: Vec<u8>,
}

/// Interpretation of a command found in an `.hcd` stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcdCommandKind<'a> {
    WriteRam { address: u32, data: &'a [u8] },
    DownloadMinidriver,
    Other,
}

impl HciCommand {
    pub fn new(opcode: u16, params: Vec<u8>) -> Self {
        Self { opcode, params }
    }

    /// Builds a Write RAM command; `data` must fit in one command.
    pub fn write_ram(address: u32, data: &[u8]) -> Self {
        assert!(data.len() <= MAX_WRITE_RAM_DATA, "write ram chunk too long");
        let mut params = address.to_le_bytes().to_vec();
        params.extend_from_slice(data);
        Self::new(OPCODE_WRITE_RAM, params)
    }

    pub fn kind(&self) -> HcdCommandKind<'_> {
        match self.opcode {
            OPCODE_WRITE_RAM if self.params.len() >= 4 => HcdCommandKind::WriteRam {
                address: u32::from_le_bytes(self.params[..4].try_into().expect("4 bytes")),
                data: &self.params[4..],
            },
            OPCODE_DOWNLOAD_MINIDRIVER => HcdCommandKind::DownloadMinidriver,
            _ => HcdCommandKind::Other,
        }
    }

    /// Wire form; fails if the params exceed the one-byte length field.
    pub fn to_wire(&self) -> Result<Vec<u8>, HcdError> {
        if self.params.len() > MAX_PARAMS {
            return Err(HcdError::ParamsTooLong {
                index: 0,
                len: self.params.len(),
            });
        }
        let mut out = Vec::with_capacity(3 + self.params.len());
        out.extend_from_slice(&self.opcode.to_le_bytes());
        out.push(self.params.len() as u8);
        out.extend_from_slice(&self.params);
        Ok(out)
    }
}

pub fn parse_hcd(bytes: &[u8]) -> Result<Vec<HciCommand>, HcdError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < 3 {
            return Err(HcdError::TrailingGarbage {
                offset: pos,
                len: rest.len(),
            });
        }
        let declared = rest[2] as usize;
        let params = rest
            .get(3..3 + declared)
            .ok_or(HcdError::TruncatedCommand {
                offset: pos,
                declared,
                available: rest.len() - 3,
            })?;
        out.push(HciCommand::new(
            u16::from_le_bytes([rest[0], rest[1]]),
            params.to_vec(),
        ));
        pos += 3 + declared;
    }
    Ok(out)
}

pub fn emit_hcd(commands: &[HciCommand]) -> Result<Vec<u8>, HcdError> {
    let mut out = Vec::new();
    for (index, cmd) in commands.iter().enumerate() {
        let wire = cmd.to_wire().map_err(|_| HcdError::ParamsTooLong {
            index,
            len: cmd.params.len(),
        })?;
        out.extend_from_slice(&wire);
    }
    Ok(out)
}

/// Converts every section of a patch image into Write RAM commands at the
/// section's mapped address. Patchram slot programming is not synthesized.
pub fn image_to_write_stream(img: &FirmwarePatchImage) -> Vec<HciCommand> {
    img.sections
        .iter()
        .flat_map(|s| {
            s.data
                .chunks(MAX_WRITE_RAM_DATA)
                .enumerate()
                .map(move |(i, chunk)| {
                    let address = s.mapped_to.wrapping_add((i * MAX_WRITE_RAM_DATA) as u32);
                    HciCommand::write_ram(address, chunk)
                })
        })
        .collect()
}

/// One line per command: `opcode len params-hex`.
pub fn render_hexdump(commands: &[HciCommand]) -> String {
    let mut out = String::new();
    for cmd in commands {
        let _ = writeln!(
            out,
            "{:04x} {:02x} {}",
            cmd.opcode,
            cmd.params.len(),
            hex::encode(&cmd.params)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch_image::{parse_image, SectionKind};

    #[test]
    fn decodes_single_write_ram() {
        let cmds = parse_hcd(&[0x4c, 0xfc, 0x05, 0x00, 0x00, 0x20, 0x00, 0xaa]).unwrap();
        assert_eq!(cmds.len(), 1);
        assert_eq!(
            cmds[0].kind(),
            HcdCommandKind::WriteRam {
                address: 0x0020_0000,
                data: &[0xaa]
            }
        );
    }

    #[test]
    fn empty_input_and_output() {
        assert!(parse_hcd(&[]).unwrap().is_empty());
        assert!(emit_hcd(&[]).unwrap().is_empty());
    }

    #[test]
    fn framing_errors() {
        assert_eq!(
            parse_hcd(&[0x4c, 0xfc, 0x05, 0x00, 0x00]),
            Err(HcdError::TruncatedCommand {
                offset: 0,
                declared: 5,
                available: 2
            })
        );
        assert_eq!(
            parse_hcd(&[0x03, 0x0c, 0x00, 0x01, 0x02]),
            Err(HcdError::TrailingGarbage { offset: 3, len: 2 })
        );
    }

    #[test]
    fn params_cap() {
        let ok = HciCommand::new(0xfc4c, vec![0; 255]);
        assert_eq!(emit_hcd(std::slice::from_ref(&ok)).unwrap().len(), 258);
        let long = HciCommand::new(0xfc4c, vec![0; 256]);
        assert_eq!(
            emit_hcd(&[ok, long]),
            Err(HcdError::ParamsTooLong { index: 1, len: 256 })
        );
    }

    #[test]
    fn recognizes_download_minidriver() {
        let cmd = HciCommand::new(OPCODE_DOWNLOAD_MINIDRIVER, vec![]);
        assert_eq!(cmd.kind(), HcdCommandKind::DownloadMinidriver);
        assert_eq!(
            HciCommand::new(0x0c03, vec![]).kind(),
            HcdCommandKind::Other
        );
    }

    fn image_with_section(len: usize) -> FirmwarePatchImage {
        let mut file: Vec<u8> = [
            0u32,
            1,
            0xffff_ffff,
            0,
            1,
            len as u32,
            0x0021_0000,
            40,
            0,
            0,
        ]
        .iter()
        .flat_map(|w| w.to_le_bytes())
        .collect();
        file.extend((0..len).map(|i| i as u8));
        parse_image(&file).unwrap()
    }

    #[test]
    fn chunking_boundaries() {
        assert!(image_to_write_stream(&image_with_section(0)).is_empty());
        assert_eq!(image_to_write_stream(&image_with_section(251)).len(), 1);
        let img = image_with_section(252);
        assert_eq!(img.sections[0].kind, SectionKind::Patchram0);
        let cmds = image_to_write_stream(&img);
        let parts: Vec<_> = cmds
            .iter()
            .map(|c| match c.kind() {
                HcdCommandKind::WriteRam { address, data } => (address, data.len()),
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        assert_eq!(parts, vec![(0x0021_0000, 251), (0x0021_0000 + 251, 1)]);
    }

    #[test]
    fn hexdump_lines() {
        let text = render_hexdump(&[HciCommand::write_ram(0x0020_0000, &[0xaa])]);
        assert_eq!(text, "fc4c 05 00002000aa\n");
    }
}
