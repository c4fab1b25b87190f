//! Standalone Find My advertising in low-power mode.
//!
//! The chip is handed one key per rotation window and broadcasts each in turn.
//! Once the last window ends it goes silent; nothing refreshes keys while the
//! host is off. In power-reserve mode the run is cut short after a cap of
//! roughly five hours.

use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::capture::CaptureRecord;
use crate::lpm::{
    batch_advertisements, AdvertisementFrame, FindMyConfig, LpmFlags, LpmHciCommand,
    DEFAULT_BATCH_SIZE, FIND_MY_PREFIX,
};

pub const KEY_LEN: usize = 28;
pub const DEFAULT_SHORT_INTERVAL: Duration = Duration::from_secs(15 * 60);
pub const DEFAULT_LONG_INTERVAL: Duration = Duration::from_secs(24 * 60 * 60);
pub const DEFAULT_POWER_RESERVE_CAP: Duration = Duration::from_secs(300 * 60);
/// Keys configured by iOS for a user shutdown: one day of 15-minute windows.
pub const DEFAULT_SHORT_KEY_COUNT: usize = 96;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("advertisement key must be {KEY_LEN} bytes, got {0}")]
    BadKeyLength(usize),
    #[error("rotation interval must be positive")]
    ZeroInterval,
    #[error("power-reserve cap must be positive")]
    ZeroCap,
    #[error("{0} does not fit the LPM configuration fields")]
    ConfigOverflow(String),
    #[error("invalid jitter model: {0}")]
    InvalidJitter(String),
}

/// A rolling public key as broadcast; derivation happens elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AdvertisementKey([u8; KEY_LEN]);

impl AdvertisementKey {
    pub fn new(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, ScheduleError> {
        bytes
            .try_into()
            .map(Self)
            .map_err(|_| ScheduleError::BadKeyLength(bytes.len()))
    }

    /// Deterministic stand-in keys for simulation.
    pub fn from_seed(seed: u64, count: usize) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let mut k = [0u8; KEY_LEN];
                rng.fill_bytes(&mut k);
                Self(k)
            })
            .collect()
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

/// Splits a key into address and payload: bytes 0..6 become the MAC (top two
/// bits forced on), bytes 6..28 follow the Find My prefix, and the two bits
/// lost to the MAC mask ride in the next byte.
pub fn frame_from_key(key: &AdvertisementKey) -> AdvertisementFrame {
    let k = key.as_bytes();
    let mut mac: [u8; 6] = k[..6].try_into().expect("6 bytes");
    mac[0] |= 0xc0;
    let mut adv = [0u8; 32];
    adv[..8].copy_from_slice(&FIND_MY_PREFIX);
    adv[8..30].copy_from_slice(&k[6..]);
    adv[30] = k[0] >> 6;
    adv[31] = 0x00;
    AdvertisementFrame::raw(mac, adv)
}

pub fn frame_from_key_bytes(bytes: &[u8]) -> Result<AdvertisementFrame, ScheduleError> {
    AdvertisementKey::from_slice(bytes).map(|k| frame_from_key(&k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpmMode {
    #[default]
    UserShutdown,
    PowerReserve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub short_keys: Vec<AdvertisementKey>,
    pub short_interval: Duration,
    /// Carried for completeness; the phone configures none and they are
    /// never scheduled.
    pub long_keys: Vec<AdvertisementKey>,
    pub long_interval: Duration,
    pub mode: LpmMode,
    pub power_reserve_cap: Duration,
}

impl ScheduleConfig {
    pub fn new(short_keys: Vec<AdvertisementKey>) -> Self {
        Self {
            short_keys,
            short_interval: DEFAULT_SHORT_INTERVAL,
            long_keys: Vec::new(),
            long_interval: DEFAULT_LONG_INTERVAL,
            mode: LpmMode::UserShutdown,
            power_reserve_cap: DEFAULT_POWER_RESERVE_CAP,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.short_interval.is_zero() {
            return Err(ScheduleError::ZeroInterval);
        }
        if self.mode == LpmMode::PowerReserve && self.power_reserve_cap.is_zero() {
            return Err(ScheduleError::ZeroCap);
        }
        Ok(())
    }

    /// Windows that will actually be broadcast.
    pub fn window_count(&self) -> usize {
        let n = self.short_keys.len();
        match self.mode {
            LpmMode::UserShutdown => n,
            LpmMode::PowerReserve => {
                let cap = self.power_reserve_cap.as_nanos();
                let step = self.short_interval.as_nanos().max(1);
                n.min(cap.div_ceil(step) as usize)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub start: Duration,
    pub end: Duration,
    pub frame: AdvertisementFrame,
    pub key_index: usize,
}

impl Window {
    pub fn duration(&self) -> Duration {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub windows: Vec<Window>,
}

#[derive(Serialize)]
struct WindowLine {
    start_s: f64,
    end_s: f64,
    #[serde(with = "crate::hexser")]
    mac: [u8; 6],
    #[serde(with = "crate::hexser")]
    adv: [u8; 32],
}

impl Schedule {
    pub fn total_span(&self) -> Duration {
        self.windows.last().map_or(Duration::ZERO, |w| w.end)
    }

    /// One JSON object per window.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for w in &self.windows {
            let line = WindowLine {
                start_s: w.start.as_secs_f64(),
                end_s: w.end.as_secs_f64(),
                mac: w.frame.mac,
                adv: w.frame.adv_data,
            };
            out.push_str(&serde_json::to_string(&line).expect("plain struct"));
            out.push('\n');
        }
        out
    }
}

pub fn build_schedule(cfg: &ScheduleConfig) -> Result<Schedule, ScheduleError> {
    cfg.validate()?;
    let windows = cfg
        .short_keys
        .iter()
        .take(cfg.window_count())
        .enumerate()
        .map(|(i, key)| Window {
            start: cfg.short_interval * i as u32,
            end: cfg.short_interval * (i as u32 + 1),
            frame: frame_from_key(key),
            key_index: i,
        })
        .collect();
    Ok(Schedule { windows })
}

/// The window broadcasting at `t` seconds, if any. Windows are half-open.
pub fn frame_at(schedule: &Schedule, t: f64) -> Option<(usize, &Window)> {
    if t.is_nan() || t < 0.0 {
        return None;
    }
    let idx = schedule
        .windows
        .partition_point(|w| w.end.as_secs_f64() <= t);
    schedule
        .windows
        .get(idx)
        .filter(|w| w.start.as_secs_f64() <= t)
        .map(|w| (idx, w))
}

/// The host command sequence for `cfg`; entering LPM is always last.
pub fn emit_configuration(cfg: &ScheduleConfig) -> Result<Vec<LpmHciCommand>, ScheduleError> {
    let schedule = build_schedule(cfg)?;
    let interval = cfg.short_interval;
    if interval.subsec_nanos() != 0 || !interval.as_secs().is_multiple_of(60) {
        return Err(ScheduleError::ConfigOverflow(format!(
            "rotation interval {interval:?} (whole minutes required)"
        )));
    }
    let interval_min = u8::try_from(interval.as_secs() / 60)
        .map_err(|_| ScheduleError::ConfigOverflow(format!("rotation interval {interval:?}")))?;
    let count = u16::try_from(schedule.windows.len())
        .map_err(|_| ScheduleError::ConfigOverflow(format!("{} keys", schedule.windows.len())))?;
    let total = u16::try_from(interval_min as u64 * count as u64)
        .map_err(|_| ScheduleError::ConfigOverflow("total minutes".into()))?;

    let frames: Vec<_> = schedule.windows.iter().map(|w| w.frame).collect();
    let mut out = vec![
        LpmHciCommand::Reset,
        LpmHciCommand::FindMyConfig(FindMyConfig::new(interval_min, count, total)),
    ];
    out.extend(
        batch_advertisements(&frames, DEFAULT_BATCH_SIZE)
            .into_iter()
            .map(LpmHciCommand::AdvertisementSet),
    );
    out.push(LpmHciCommand::LpmFlags(LpmFlags::default()));
    out.push(LpmHciCommand::EnterLpm);
    Ok(out)
}

/// Timing model for simulated captures: each window lasts its nominal length
/// plus a zero-mean normal deviation, so rotation boundaries drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterModel {
    pub sigma_s: f64,
    /// Spacing of advertisements inside a window.
    pub adv_period_s: f64,
}

impl Default for JitterModel {
    fn default() -> Self {
        Self {
            sigma_s: 0.0,
            adv_period_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulatedCapture {
    /// Actual rotation times: start of each window, then the end of the last.
    pub boundaries: Vec<f64>,
    pub records: Vec<CaptureRecord>,
}

pub fn simulate_emission(
    schedule: &Schedule,
    jitter: JitterModel,
    seed: u64,
) -> Result<SimulatedCapture, ScheduleError> {
    if !jitter.sigma_s.is_finite() || jitter.sigma_s < 0.0 {
        return Err(ScheduleError::InvalidJitter(format!(
            "sigma {}",
            jitter.sigma_s
        )));
    }
    if !jitter.adv_period_s.is_finite() || jitter.adv_period_s <= 0.0 {
        return Err(ScheduleError::InvalidJitter(format!(
            "advertising period {}",
            jitter.adv_period_s
        )));
    }
    if schedule.windows.is_empty() {
        return Ok(SimulatedCapture::default());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, jitter.sigma_s).expect("sigma validated");

    let mut boundaries = Vec::with_capacity(schedule.windows.len() + 1);
    let mut t = schedule.windows[0].start.as_secs_f64();
    boundaries.push(t);
    for w in &schedule.windows {
        let deviation = if jitter.sigma_s > 0.0 {
            normal.sample(&mut rng)
        } else {
            0.0
        };
        t += (w.duration().as_secs_f64() + deviation).max(jitter.adv_period_s);
        boundaries.push(t);
    }

    let mut records = Vec::new();
    for (w, edge) in schedule.windows.iter().zip(boundaries.windows(2)) {
        let mut k = 0u64;
        loop {
            let ts = edge[0] + k as f64 * jitter.adv_period_s;
            if ts >= edge[1] {
                break;
            }
            records.push(CaptureRecord {
                timestamp: ts,
                mac: w.frame.mac,
                adv_data: w.frame.adv_data.to_vec(),
                rssi: None,
            });
            k += 1;
        }
    }
    Ok(SimulatedCapture {
        boundaries,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpm;

    fn cfg(keys: usize) -> ScheduleConfig {
        ScheduleConfig::new(AdvertisementKey::from_seed(7, keys))
    }

    #[test]
    fn default_day_schedule() {
        let s = build_schedule(&cfg(96)).unwrap();
        assert_eq!(s.windows.len(), 96);
        assert_eq!(s.total_span(), Duration::from_secs(1440 * 60));
        for (i, w) in s.windows.iter().enumerate() {
            assert_eq!(w.start, Duration::from_secs(900 * i as u64));
            assert_eq!(w.duration(), Duration::from_secs(900));
            assert_eq!(w.key_index, i);
        }
    }

    #[test]
    fn power_reserve_truncates() {
        let mut c = cfg(96);
        c.mode = LpmMode::PowerReserve;
        let s = build_schedule(&c).unwrap();
        assert_eq!(s.windows.len(), 20);
        assert_eq!(s.total_span(), Duration::from_secs(300 * 60));
        // A cap that is not a whole number of windows rounds up.
        c.power_reserve_cap = Duration::from_secs(301 * 60);
        assert_eq!(build_schedule(&c).unwrap().windows.len(), 21);
        c.power_reserve_cap = Duration::ZERO;
        assert_eq!(build_schedule(&c), Err(ScheduleError::ZeroCap));
    }

    #[test]
    fn empty_and_invalid() {
        assert!(build_schedule(&cfg(0)).unwrap().windows.is_empty());
        let mut c = cfg(1);
        c.short_interval = Duration::ZERO;
        assert_eq!(build_schedule(&c), Err(ScheduleError::ZeroInterval));
    }

    #[test]
    fn mac_masking() {
        let f = frame_from_key(&AdvertisementKey::new([0; 28]));
        assert_eq!(f.mac, [0xc0, 0, 0, 0, 0, 0]);
        let mut k = [0x11; 28];
        k[0] = 0xff;
        let f = frame_from_key(&AdvertisementKey::new(k));
        assert_eq!(f.mac[0], 0xff);
        assert_eq!(
            &f.adv_data[1..8],
            &[0x1e, 0xff, 0x4c, 0x00, 0x12, 0x19, 0x00]
        );
        assert_eq!(&f.adv_data[8..30], &[0x11; 22]);
        assert_eq!(f.adv_data[30..], [0x03, 0x00]);
        assert!(f.is_find_my());
        assert_eq!(
            frame_from_key_bytes(&[0; 27]),
            Err(ScheduleError::BadKeyLength(27))
        );
    }

    #[test]
    fn frame_lookup_half_open() {
        let s = build_schedule(&cfg(96)).unwrap();
        assert!(frame_at(&s, -0.5).is_none());
        assert_eq!(frame_at(&s, 0.0).unwrap().0, 0);
        assert_eq!(frame_at(&s, 899.999).unwrap().0, 0);
        assert_eq!(frame_at(&s, 900.0).unwrap().0, 1);
        assert_eq!(frame_at(&s, 86_399.0).unwrap().0, 95);
        assert!(frame_at(&s, 86_400.0).is_none());
        assert!(frame_at(&s, f64::NAN).is_none());
        // Linear scan agrees everywhere on a grid.
        for step in 0..2000 {
            let t = step as f64 * 43.3 - 10.0;
            let linear = s
                .windows
                .iter()
                .position(|w| w.start.as_secs_f64() <= t && t < w.end.as_secs_f64());
            assert_eq!(frame_at(&s, t).map(|(i, _)| i), linear, "t={t}");
        }
    }

    #[test]
    fn configuration_sequence() {
        let cmds = emit_configuration(&cfg(96)).unwrap();
        assert_eq!(cmds.len(), 20);
        assert_eq!(cmds[0], LpmHciCommand::Reset);
        assert_eq!(
            cmds[1],
            LpmHciCommand::FindMyConfig(FindMyConfig::default())
        );
        assert_eq!(cmds.last(), Some(&LpmHciCommand::EnterLpm));
        assert_eq!(cmds[18], LpmHciCommand::LpmFlags(LpmFlags::default()));

        let cmds = emit_configuration(&cfg(0)).unwrap();
        assert_eq!(
            cmds,
            vec![
                LpmHciCommand::Reset,
                LpmHciCommand::FindMyConfig(FindMyConfig::new(15, 0, 0)),
                LpmHciCommand::LpmFlags(LpmFlags::default()),
                LpmHciCommand::EnterLpm,
            ]
        );
    }

    #[test]
    fn configuration_round_trips_through_codec() {
        let mut c = cfg(96);
        c.mode = LpmMode::PowerReserve;
        for cmd in emit_configuration(&c).unwrap() {
            let raw = lpm::encode(&cmd).unwrap();
            assert_eq!(lpm::decode(&raw).unwrap(), cmd);
        }
        match &emit_configuration(&c).unwrap()[1] {
            LpmHciCommand::FindMyConfig(f) => {
                assert_eq!(
                    (
                        f.rotation_interval_minutes(),
                        f.short_key_count(),
                        f.total_minutes()
                    ),
                    (15, 20, 300)
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn configuration_rejects_unencodable_intervals() {
        let mut c = cfg(2);
        c.short_interval = Duration::from_secs(90);
        assert!(matches!(
            emit_configuration(&c),
            Err(ScheduleError::ConfigOverflow(_))
        ));
        c.short_interval = Duration::from_secs(256 * 60);
        assert!(matches!(
            emit_configuration(&c),
            Err(ScheduleError::ConfigOverflow(_))
        ));
    }

    #[test]
    fn zero_jitter_rotates_on_the_grid() {
        let s = build_schedule(&cfg(4)).unwrap();
        let sim = simulate_emission(&s, JitterModel::default(), 1).unwrap();
        assert_eq!(sim.boundaries, vec![0.0, 900.0, 1800.0, 2700.0, 3600.0]);
        assert_eq!(sim.records.len(), 4 * 450);
        assert!(sim
            .records
            .windows(2)
            .all(|p| p[0].timestamp <= p[1].timestamp));
        assert_eq!(sim.records[450].timestamp, 900.0);
        assert_eq!(sim.records[450].mac, s.windows[1].frame.mac);
    }

    #[test]
    fn simulation_is_seeded() {
        let s = build_schedule(&cfg(8)).unwrap();
        let j = JitterModel {
            sigma_s: 19.0,
            adv_period_s: 2.0,
        };
        assert_eq!(
            simulate_emission(&s, j, 5).unwrap(),
            simulate_emission(&s, j, 5).unwrap()
        );
        assert_ne!(
            simulate_emission(&s, j, 5).unwrap().boundaries,
            simulate_emission(&s, j, 6).unwrap().boundaries
        );
        assert!(simulate_emission(&Schedule::default(), j, 5)
            .unwrap()
            .records
            .is_empty());
        let bad = JitterModel {
            sigma_s: -1.0,
            adv_period_s: 2.0,
        };
        assert!(simulate_emission(&s, bad, 5).is_err());
    }

    #[test]
    fn jsonl_export() {
        let s = build_schedule(&cfg(2)).unwrap();
        let text = s.to_jsonl();
        let lines: Vec<serde_json::Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["start_s"], 900.0);
        assert_eq!(lines[1]["end_s"], 1800.0);
        assert_eq!(lines[0]["mac"].as_str().unwrap().len(), 12);
        assert!(lines[0]["adv"]
            .as_str()
            .unwrap()
            .starts_with("1f1eff4c00121900"));
    }
}
