//! Byte-level tooling for Broadcom/Apple low-power-mode Bluetooth.
//!
//! - [`patch_image`]: PCIe-era `.bin` firmware patch images (sections, CRCs, `BRCMcfgS` config).
//! - [`patchram`]: the ROM word overlay model behind patch entries.
//! - [`hcd`]: legacy `.hcd` HCI command streams.
//! - [`lpm`]: vendor HCI commands that configure Find My in low-power mode.
//! - [`findmy`]: key rotation schedules and configuration emission.
//! - [`capture`]: analysis of recorded advertisement captures.
//! - [`cli`]: the `lpmforge` command-line front end.

pub mod capture;
pub mod checksum;
pub mod cli;
pub mod findmy;
pub mod hcd;
mod hexser;
pub mod lpm;
pub mod patch_image;
pub mod patchram;
pub mod profile;

pub use capture::{CaptureRecord, Finding, RotationReport, Segment};
pub use checksum::{ChecksumAlgorithm, ChecksumPolicy};
pub use findmy::{AdvertisementKey, Schedule, ScheduleConfig};
pub use hcd::HciCommand;
pub use lpm::{AdvertisementFrame, AdvertisementSet, FindMyConfig, LpmFlags, LpmHciCommand};
pub use patch_image::{FirmwarePatchImage, PatchEntry, PatchSection, SectionKind};
pub use patchram::{PatchramState, RomImage};
pub use profile::ChipProfile;
