//! C ABI over `lpmforge`.
//!
//! Every fallible call returns an [`LpmfStatus`]. On failure a message is
//! available from [`lpmf_last_error`] until the next call on the same thread.
//! Objects are opaque handles released with their `_free` function; byte
//! outputs are [`LpmfBuffer`]s released with [`lpmf_buffer_free`] and strings
//! are released with [`lpmf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use lpmforge::capture::{self, AnalysisConfig, CaptureFormat, Finding};
use lpmforge::checksum::ChecksumPolicy;
use lpmforge::findmy::{self, AdvertisementKey, LpmMode, ScheduleConfig};
use lpmforge::hcd;
use lpmforge::lpm::{self, LpmHciCommand};
use lpmforge::patch_image::{self as pi, FirmwarePatchImage, PatchImageError, SectionKind};
use lpmforge::Schedule;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Malformed = 3,
    OutOfRange = 4,
    MissingConfig = 5,
    SlotOverflow = 6,
    Encoding = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpmfSectionKind {
    Patchram0 = 0,
    Patchram1 = 1,
    ConfigData = 2,
    Unknown = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpmfMode {
    UserShutdown = 0,
    PowerReserve = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpmfCaptureFormat {
    Jsonl = 0,
    Csv = 1,
}

/// Heap bytes owned by the caller.
#[repr(C)]
#[derive(Debug)]
pub struct LpmfBuffer {
    pub data: *mut u8,
    pub len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LpmfSectionInfo {
    pub kind: LpmfSectionKind,
    pub type_code: u32,
    pub size: u32,
    pub mapped_to: u32,
    pub file_offset: u32,
    pub checksum: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LpmfPatchEntry {
    pub rom_address: u32,
    pub new_word: [u8; 4],
    pub trailer: [u8; 5],
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LpmfScheduleParams {
    pub short_key_count: u32,
    /// Seed for generated keys.
    pub seed: u64,
    pub interval_minutes: u32,
    pub mode: LpmfMode,
    pub power_reserve_cap_minutes: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LpmfWindow {
    pub start_s: u64,
    pub end_s: u64,
    pub mac: [u8; 6],
    pub adv_data: [u8; 32],
}

/// Opaque patch image.
pub struct LpmfPatchImage(FirmwarePatchImage);

/// Opaque rotation schedule.
pub struct LpmfSchedule(Schedule);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LpmfStatus, String);

impl From<PatchImageError> for Failure {
    fn from(e: PatchImageError) -> Self {
        let status = match e {
            PatchImageError::OutOfRange { .. } => LpmfStatus::OutOfRange,
            PatchImageError::MissingConfigSection => LpmfStatus::MissingConfig,
            PatchImageError::PatchSlotOverflow { .. } => LpmfStatus::SlotOverflow,
            PatchImageError::MisalignedAddress(_) => LpmfStatus::InvalidArgument,
            _ => LpmfStatus::Malformed,
        };
        Failure(status, e.to_string())
    }
}

macro_rules! failure_from {
    ($status:ident: $($t:ty),+) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure(LpmfStatus::$status, e.to_string())
            }
        }
    )+};
}

failure_from!(Malformed: hcd::HcdError, lpm::LpmError, capture::CaptureError, serde_json::Error);
failure_from!(InvalidArgument: findmy::ScheduleError, std::str::Utf8Error);

fn invalid(msg: &str) -> Failure {
    Failure(LpmfStatus::InvalidArgument, msg.to_string())
}

fn set_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LpmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            LpmfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(_) => {
            set_error(Some("internal panic".into()));
            LpmfStatus::Panic
        }
    }
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure(LpmfStatus::NullPointer, "null data pointer".into()));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn target<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(LpmfStatus::NullPointer, "null pointer".into()))
}

unsafe fn source<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(LpmfStatus::NullPointer, "null pointer".into()))
}

fn into_buffer(v: Vec<u8>) -> LpmfBuffer {
    let boxed = v.into_boxed_slice();
    let len = boxed.len();
    LpmfBuffer {
        data: Box::into_raw(boxed) as *mut u8,
        len,
    }
}

fn into_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(LpmfStatus::Encoding, "string contains NUL".into()))
}

/// Message for the last failed call on this thread, or NULL.
#[no_mangle]
pub extern "C" fn lpmf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `buf` must be NULL or a buffer produced by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn lpmf_buffer_free(buf: *mut LpmfBuffer) {
    if let Some(b) = buf.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
        }
        b.data = ptr::null_mut();
        b.len = 0;
    }
}

/// # Safety
/// `s` must be NULL or a string produced by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn lpmf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_parse(
    data: *const u8,
    len: usize,
    out: *mut *mut LpmfPatchImage,
) -> LpmfStatus {
    guard(|| {
        let out = target(out)?;
        *out = ptr::null_mut();
        let img = pi::parse_image(bytes(data, len)?)?;
        *out = Box::into_raw(Box::new(LpmfPatchImage(img)));
        Ok(())
    })
}

/// # Safety
/// `img` must be NULL or a handle from [`lpmf_image_parse`], freed once.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_free(img: *mut LpmfPatchImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// # Safety
/// `img` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_serialize(
    img: *const LpmfPatchImage,
    out: *mut LpmfBuffer,
) -> LpmfStatus {
    guard(|| {
        let bytes = source(img)?.0.serialize()?;
        *target(out)? = into_buffer(bytes);
        Ok(())
    })
}

/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_section_count(img: *const LpmfPatchImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.sections.len())
}

/// # Safety
/// `img` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_section_info(
    img: *const LpmfPatchImage,
    index: usize,
    out: *mut LpmfSectionInfo,
) -> LpmfStatus {
    guard(|| {
        let s = source(img)?
            .0
            .sections
            .get(index)
            .ok_or_else(|| Failure(LpmfStatus::OutOfRange, format!("no section {index}")))?;
        let kind = match s.kind {
            SectionKind::Patchram0 => LpmfSectionKind::Patchram0,
            SectionKind::Patchram1 => LpmfSectionKind::Patchram1,
            SectionKind::ConfigData => LpmfSectionKind::ConfigData,
            SectionKind::Unknown(_) => LpmfSectionKind::Unknown,
        };
        *target(out)? = LpmfSectionInfo {
            kind,
            type_code: s.type_code,
            size: s.size,
            mapped_to: s.mapped_to,
            file_offset: s.file_offset,
            checksum: s.checksum,
        };
        Ok(())
    })
}

/// Counts stored checksums (sections and global) that do not match.
///
/// # Safety
/// `img` must be a live handle; `mismatches` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_verify(
    img: *const LpmfPatchImage,
    mismatches: *mut usize,
) -> LpmfStatus {
    guard(|| {
        let n = pi::verify_checksums(&source(img)?.0, &ChecksumPolicy::default()).len();
        *target(mismatches)? = n;
        Ok(())
    })
}

/// Rewrites every checksum in place.
///
/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_recompute(img: *mut LpmfPatchImage) -> LpmfStatus {
    guard(|| {
        let h = target(img)?;
        h.0 = pi::recompute_checksums(&h.0, &ChecksumPolicy::default());
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle; `data` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_replace_bytes(
    img: *mut LpmfPatchImage,
    section: usize,
    offset: usize,
    data: *const u8,
    len: usize,
) -> LpmfStatus {
    guard(|| {
        let h = target(img)?;
        h.0 = pi::replace_bytes(&h.0, section, offset, bytes(data, len)?)?;
        Ok(())
    })
}

/// Replaces bytes at a chip address inside whichever section maps it.
///
/// # Safety
/// `img` must be a live handle; `data` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_replace_at(
    img: *mut LpmfPatchImage,
    address: u32,
    data: *const u8,
    len: usize,
) -> LpmfStatus {
    guard(|| {
        let h = target(img)?;
        let (section, offset) = h.0.locate(address).ok_or_else(|| {
            Failure(
                LpmfStatus::OutOfRange,
                format!("no section maps {address:#010x}"),
            )
        })?;
        h.0 = pi::replace_bytes(&h.0, section, offset, bytes(data, len)?)?;
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_entry_count(
    img: *const LpmfPatchImage,
    count: *mut usize,
) -> LpmfStatus {
    guard(|| {
        let n = pi::list_patch_entries(&source(img)?.0)?.len();
        *target(count)? = n;
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_entry(
    img: *const LpmfPatchImage,
    index: usize,
    out: *mut LpmfPatchEntry,
) -> LpmfStatus {
    guard(|| {
        let entries = pi::list_patch_entries(&source(img)?.0)?;
        let e = entries
            .get(index)
            .ok_or_else(|| Failure(LpmfStatus::OutOfRange, format!("no entry {index}")))?;
        *target(out)? = LpmfPatchEntry {
            rom_address: e.rom_address,
            new_word: e.new_word,
            trailer: e.trailer,
        };
        Ok(())
    })
}

/// Adds a patch entry, or replaces the word of the entry at the same address.
///
/// # Safety
/// `img` must be a live handle; `word` must point to 4 readable bytes.
#[no_mangle]
pub unsafe extern "C" fn lpmf_image_upsert_entry(
    img: *mut LpmfPatchImage,
    rom_address: u32,
    word: *const u8,
) -> LpmfStatus {
    guard(|| {
        let h = target(img)?;
        let word: [u8; 4] = bytes(word, 4)?.try_into().expect("four bytes");
        h.0 = pi::upsert_patch_entry(&h.0, pi::PatchEntry::new(rom_address, word))?;
        Ok(())
    })
}

/// The default: 96 keys, 15-minute rotation, user shutdown, 300-minute cap.
#[no_mangle]
pub extern "C" fn lpmf_schedule_params_default() -> LpmfScheduleParams {
    LpmfScheduleParams {
        short_key_count: findmy::DEFAULT_SHORT_KEY_COUNT as u32,
        seed: 0,
        interval_minutes: (findmy::DEFAULT_SHORT_INTERVAL.as_secs() / 60) as u32,
        mode: LpmfMode::UserShutdown,
        power_reserve_cap_minutes: (findmy::DEFAULT_POWER_RESERVE_CAP.as_secs() / 60) as u32,
    }
}

fn schedule_config(p: &LpmfScheduleParams) -> ScheduleConfig {
    let mut cfg = ScheduleConfig::new(AdvertisementKey::from_seed(
        p.seed,
        p.short_key_count as usize,
    ));
    cfg.short_interval = Duration::from_secs(u64::from(p.interval_minutes) * 60);
    cfg.power_reserve_cap = Duration::from_secs(u64::from(p.power_reserve_cap_minutes) * 60);
    cfg.mode = match p.mode {
        LpmfMode::UserShutdown => LpmMode::UserShutdown,
        LpmfMode::PowerReserve => LpmMode::PowerReserve,
    };
    cfg
}

/// # Safety
/// `params` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_schedule_new(
    params: *const LpmfScheduleParams,
    out: *mut *mut LpmfSchedule,
) -> LpmfStatus {
    guard(|| {
        let out = target(out)?;
        *out = ptr::null_mut();
        let schedule = findmy::build_schedule(&schedule_config(source(params)?))?;
        *out = Box::into_raw(Box::new(LpmfSchedule(schedule)));
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from [`lpmf_schedule_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn lpmf_schedule_free(s: *mut LpmfSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpmf_schedule_window_count(s: *const LpmfSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.0.windows.len())
}

/// # Safety
/// `s` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpmf_schedule_span_seconds(s: *const LpmfSchedule) -> u64 {
    s.as_ref().map_or(0, |s| s.0.total_span().as_secs())
}

/// # Safety
/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_schedule_window(
    s: *const LpmfSchedule,
    index: usize,
    out: *mut LpmfWindow,
) -> LpmfStatus {
    guard(|| {
        let w = source(s)?
            .0
            .windows
            .get(index)
            .ok_or_else(|| Failure(LpmfStatus::OutOfRange, format!("no window {index}")))?;
        *target(out)? = LpmfWindow {
            start_s: w.start.as_secs(),
            end_s: w.end.as_secs(),
            mac: w.frame.mac,
            adv_data: w.frame.adv_data,
        };
        Ok(())
    })
}

/// Full LPM configuration sequence as a `.hcd` byte stream.
///
/// # Safety
/// `params` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_findmy_emit_config(
    params: *const LpmfScheduleParams,
    out: *mut LpmfBuffer,
) -> LpmfStatus {
    guard(|| {
        let cmds = findmy::emit_configuration(&schedule_config(source(params)?))?;
        let raw = cmds
            .iter()
            .map(lpm::encode)
            .collect::<Result<Vec<_>, _>>()?;
        *target(out)? = into_buffer(hcd::emit_hcd(&raw)?);
        Ok(())
    })
}

/// Encodes a JSON array of LPM commands into a `.hcd` byte stream.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_lpm_encode_json(
    json: *const c_char,
    out: *mut LpmfBuffer,
) -> LpmfStatus {
    guard(|| {
        if json.is_null() {
            return Err(Failure(LpmfStatus::NullPointer, "null json".into()));
        }
        let cmds: Vec<LpmHciCommand> = serde_json::from_str(CStr::from_ptr(json).to_str()?)?;
        let raw = cmds
            .iter()
            .map(lpm::encode)
            .collect::<Result<Vec<_>, _>>()?;
        *target(out)? = into_buffer(hcd::emit_hcd(&raw)?);
        Ok(())
    })
}

/// Decodes a `.hcd` byte stream of LPM commands into a JSON array.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_lpm_decode_json(
    data: *const u8,
    len: usize,
    out: *mut *mut c_char,
) -> LpmfStatus {
    guard(|| {
        let out = target(out)?;
        *out = ptr::null_mut();
        let cmds = hcd::parse_hcd(bytes(data, len)?)?
            .iter()
            .map(lpm::decode)
            .collect::<Result<Vec<_>, _>>()?;
        *out = into_string(serde_json::to_string(&cmds)?)?;
        Ok(())
    })
}

/// Analyzes a capture and returns the rotation report as JSON. `nominal`
/// may be NULL; otherwise it receives whether the only verdict is nominal.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable;
/// `nominal` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn lpmf_capture_analyze(
    data: *const u8,
    len: usize,
    format: LpmfCaptureFormat,
    expected_total_s: f64,
    out: *mut *mut c_char,
    nominal: *mut bool,
) -> LpmfStatus {
    guard(|| {
        let out = target(out)?;
        *out = ptr::null_mut();
        if !(expected_total_s.is_finite() && expected_total_s >= 0.0) {
            return Err(invalid("expected total must be a non-negative number"));
        }
        let format = match format {
            LpmfCaptureFormat::Jsonl => CaptureFormat::Jsonl,
            LpmfCaptureFormat::Csv => CaptureFormat::Csv,
        };
        let records = capture::ingest(bytes(data, len)?, format)?;
        let cfg = AnalysisConfig {
            expected_total: expected_total_s,
            ..AnalysisConfig::default()
        };
        let report = capture::analyze(&records, &cfg);
        if let Some(flag) = nominal.as_mut() {
            *flag = report.verdicts == [Finding::Nominal];
        }
        *out = into_string(serde_json::to_string(&report)?)?;
        Ok(())
    })
}
