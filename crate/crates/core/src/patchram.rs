//! Patchram: temporary 4-byte ROM word overrides.
//!
//! A loaded patch maps up to [`PATCHRAM_SLOTS`] aligned ROM words to new
//! values. Reads through the overlay see the new word; everything else reads
//! straight from ROM.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::patch_image::{PatchEntry, PATCHRAM_SLOTS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchramError {
    #[error("{count} distinct patch addresses exceed the {PATCHRAM_SLOTS} Patchram slots")]
    PatchSlotOverflow { count: usize },
    #[error("address range {address:#010x}+{len} lies outside ROM")]
    AddressOutOfRom { address: u32, len: usize },
    #[error("address {0:#010x} is not word aligned")]
    MisalignedAddress(u32),
    #[error("ROM image must be non-empty with a word-aligned base")]
    InvalidRom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RomImage {
    base_address: u32,
    data: Vec<u8>,
}

impl RomImage {
    pub fn new(base_address: u32, data: Vec<u8>) -> Result<Self, PatchramError> {
        let fits = (base_address as u64) + data.len() as u64 <= 1 << 32;
        if !base_address.is_multiple_of(4) || data.is_empty() || !fits {
            return Err(PatchramError::InvalidRom);
        }
        Ok(Self { base_address, data })
    }

    pub fn base_address(&self) -> u32 {
        self.base_address
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    fn offset_of(&self, address: u32, len: usize) -> Result<usize, PatchramError> {
        let err = PatchramError::AddressOutOfRom { address, len };
        let off = address.checked_sub(self.base_address).ok_or(err.clone())? as usize;
        match off.checked_add(len) {
            Some(end) if end <= self.data.len() => Ok(off),
            _ => Err(err),
        }
    }

    fn word_at(&self, address: u32) -> [u8; 4] {
        let off = (address - self.base_address) as usize;
        self.data[off..off + 4].try_into().expect("word in range")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatchramState {
    slots: BTreeMap<u32, [u8; 4]>,
}

impl PatchramState {
    pub const CAPACITY: usize = PATCHRAM_SLOTS;

    pub fn slots(&self) -> &BTreeMap<u32, [u8; 4]> {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Loads entries into slots in file order; a repeated address keeps the
/// last word written to it.
pub fn apply_entries(
    rom: &RomImage,
    entries: &[PatchEntry],
) -> Result<PatchramState, PatchramError> {
    let mut slots = BTreeMap::new();
    for entry in entries {
        if !entry.is_aligned() {
            return Err(PatchramError::MisalignedAddress(entry.rom_address));
        }
        rom.offset_of(entry.rom_address, 4)?;
        slots.insert(entry.rom_address, entry.new_word);
        if slots.len() > PATCHRAM_SLOTS {
            return Err(PatchramError::PatchSlotOverflow { count: slots.len() });
        }
    }
    Ok(PatchramState { slots })
}

/// Reads `length` bytes at `address` as the CPU would see them with the
/// overlay active.
pub fn effective_read(
    rom: &RomImage,
    state: &PatchramState,
    address: u32,
    length: usize,
) -> Result<Vec<u8>, PatchramError> {
    let start = rom.offset_of(address, length)?;
    let mut out = rom.data[start..start + length].to_vec();
    if length == 0 {
        return Ok(out);
    }
    let first_word = address & !3;
    let last = address as u64 + length as u64;
    for (&slot, word) in state.slots.range(first_word..) {
        if slot as u64 >= last {
            break;
        }
        for (i, &b) in word.iter().enumerate() {
            let at = slot as u64 + i as u64;
            if at >= address as u64 && at < last {
                out[(at - address as u64) as usize] = b;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DiffRow {
    pub address: u32,
    #[serde(with = "crate::hexser")]
    pub old_word: [u8; 4],
    #[serde(with = "crate::hexser")]
    pub new_word: [u8; 4],
}

/// Slots whose word differs from ROM, ascending by address.
pub fn diff_report(rom: &RomImage, state: &PatchramState) -> Vec<DiffRow> {
    state
        .slots
        .iter()
        .filter(|(&addr, _)| rom.offset_of(addr, 4).is_ok())
        .map(|(&address, &new_word)| DiffRow {
            address,
            old_word: rom.word_at(address),
            new_word,
        })
        .filter(|row| row.old_word != row.new_word)
        .collect()
}

pub fn render_diff_table(rows: &[DiffRow]) -> String {
    let mut out = String::from("address     old       new\n");
    for r in rows {
        out.push_str(&format!(
            "{:#010x}  {}  {}\n",
            r.address,
            hex::encode(r.old_word),
            hex::encode(r.new_word)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rom() -> RomImage {
        RomImage::new(0x1000, (0..64u8).collect()).unwrap()
    }

    #[test]
    fn rom_validation() {
        assert_eq!(
            RomImage::new(0x1002, vec![0; 4]),
            Err(PatchramError::InvalidRom)
        );
        assert_eq!(
            RomImage::new(0x1000, vec![]),
            Err(PatchramError::InvalidRom)
        );
    }

    #[test]
    fn no_entries_reads_rom() {
        let rom = rom();
        let state = apply_entries(&rom, &[]).unwrap();
        assert!(state.is_empty());
        assert_eq!(
            effective_read(&rom, &state, 0x1000, 64).unwrap(),
            rom.data()
        );
        assert!(diff_report(&rom, &state).is_empty());
    }

    #[test]
    fn splices_partial_and_spanning_reads() {
        let rom = rom();
        let state =
            apply_entries(&rom, &[PatchEntry::new(0x1008, [0xa0, 0xa1, 0xa2, 0xa3])]).unwrap();
        assert_eq!(
            effective_read(&rom, &state, 0x1008, 8).unwrap(),
            vec![0xa0, 0xa1, 0xa2, 0xa3, 12, 13, 14, 15]
        );
        assert_eq!(
            effective_read(&rom, &state, 0x100a, 2).unwrap(),
            vec![0xa2, 0xa3]
        );
        assert_eq!(
            effective_read(&rom, &state, 0x1006, 4).unwrap(),
            vec![6, 7, 0xa0, 0xa1]
        );
        assert_eq!(
            effective_read(&rom, &state, 0x1004, 4).unwrap(),
            vec![4, 5, 6, 7]
        );
        assert!(effective_read(&rom, &state, 0x1008, 0).unwrap().is_empty());
    }

    #[test]
    fn last_writer_wins() {
        let rom = rom();
        let state = apply_entries(
            &rom,
            &[
                PatchEntry::new(0x1000, [1; 4]),
                PatchEntry::new(0x1000, [2; 4]),
            ],
        )
        .unwrap();
        assert_eq!(state.len(), 1);
        assert_eq!(effective_read(&rom, &state, 0x1000, 4).unwrap(), vec![2; 4]);
    }

    #[test]
    fn rejects_bad_entries() {
        let rom = rom();
        assert_eq!(
            apply_entries(&rom, &[PatchEntry::new(0x1001, [0; 4])]),
            Err(PatchramError::MisalignedAddress(0x1001))
        );
        assert!(matches!(
            apply_entries(&rom, &[PatchEntry::new(0x1040, [0; 4])]),
            Err(PatchramError::AddressOutOfRom { .. })
        ));
        assert!(matches!(
            apply_entries(&rom, &[PatchEntry::new(0x0ffc, [0; 4])]),
            Err(PatchramError::AddressOutOfRom { .. })
        ));
        assert!(effective_read(&rom, &PatchramState::default(), 0x103e, 4).is_err());
    }

    #[test]
    fn slot_capacity() {
        let rom = RomImage::new(0, vec![0; 4 * 300]).unwrap();
        let entries: Vec<_> = (0..257u32)
            .map(|i| PatchEntry::new(i * 4, [1; 4]))
            .collect();
        assert_eq!(apply_entries(&rom, &entries[..256]).unwrap().len(), 256);
        assert_eq!(
            apply_entries(&rom, &entries),
            Err(PatchramError::PatchSlotOverflow { count: 257 })
        );
        // Re-patching an occupied slot does not consume another.
        let mut dup = entries[..256].to_vec();
        dup.push(PatchEntry::new(0, [7; 4]));
        assert!(apply_entries(&rom, &dup).is_ok());
    }

    #[test]
    fn diff_sorted_and_noop_suppressed() {
        let rom = rom();
        let state = apply_entries(
            &rom,
            &[
                PatchEntry::new(0x1020, [9; 4]),
                PatchEntry::new(0x1004, [4, 5, 6, 7]),
                PatchEntry::new(0x1000, [8; 4]),
                PatchEntry::new(0x1010, [7; 4]),
            ],
        )
        .unwrap();
        let rows = diff_report(&rom, &state);
        let addrs: Vec<_> = rows.iter().map(|r| r.address).collect();
        assert_eq!(addrs, vec![0x1000, 0x1010, 0x1020]);
        assert_eq!(rows[1].old_word, [16, 17, 18, 19]);
        assert!(render_diff_table(&rows).contains("0x00001010  10111213  07070707"));
    }
}
