//! Analysis of recorded advertisement captures.
//!
//! Records are grouped into rotation segments by MAC address. The gaps between
//! segment starts give the actual rotation windows; the last record gives the
//! time advertising stopped.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::hexser;

/// `1e ff 4c 00 12 19`: AD length, manufacturer data, Apple, offline finding.
pub const FIND_MY_SIGNATURE: [u8; 6] = [0x1e, 0xff, 0x4c, 0x00, 0x12, 0x19];
pub const DEFAULT_GRACE_S: f64 = 60.0;
pub const DEFAULT_NOMINAL_S: f64 = 900.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureRecord {
    #[serde(rename = "t")]
    pub timestamp: f64,
    #[serde(with = "hexser")]
    pub mac: [u8; 6],
    #[serde(rename = "adv", with = "hexser")]
    pub adv_data: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rssi: Option<f64>,
}

impl CaptureRecord {
    pub fn is_find_my(&self) -> bool {
        self.adv_data.get(1..7) == Some(&FIND_MY_SIGNATURE[..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct RawRecord {
    t: f64,
    mac: String,
    adv: String,
    #[serde(default)]
    rssi: Option<f64>,
}

impl RawRecord {
    fn validate(self) -> Result<CaptureRecord, String> {
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(format!(
                "timestamp {} must be finite and non-negative",
                self.t
            ));
        }
        let mac = hex::decode(self.mac.trim()).map_err(|e| format!("mac: {e}"))?;
        let mac: [u8; 6] = mac
            .try_into()
            .map_err(|m: Vec<u8>| format!("mac must be 6 bytes, got {}", m.len()))?;
        let adv_data = hex::decode(self.adv.trim()).map_err(|e| format!("adv: {e}"))?;
        if adv_data.len() > 32 {
            return Err(format!(
                "adv must be at most 32 bytes, got {}",
                adv_data.len()
            ));
        }
        Ok(CaptureRecord {
            timestamp: self.t,
            mac,
            adv_data,
            rssi: self.rssi,
        })
    }
}

/// Reads a capture and sorts it by timestamp (stable, so equal timestamps
/// keep file order).
pub fn ingest<R: Read>(
    source: R,
    format: CaptureFormat,
) -> Result<Vec<CaptureRecord>, CaptureError> {
    let mut records = match format {
        CaptureFormat::Jsonl => ingest_jsonl(source)?,
        CaptureFormat::Csv => ingest_csv(source)?,
    };
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(records)
}

fn ingest_jsonl<R: Read>(source: R) -> Result<Vec<CaptureRecord>, CaptureError> {
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CaptureError::Parse {
            line: i + 1,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(raw.validate().map_err(parse_err)?);
    }
    Ok(out)
}

fn ingest_csv<R: Read>(source: R) -> Result<Vec<CaptureRecord>, CaptureError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let csv_err = |e: csv::Error| CaptureError::Parse {
        line: e.position().map_or(1, |p| p.line() as usize),
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| CaptureError::Parse { line, message };
        let raw: RawRecord = row
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(e.to_string()))?;
        out.push(raw.validate().map_err(parse_err)?);
    }
    Ok(out)
}

pub fn export<W: Write>(
    records: &[CaptureRecord],
    format: CaptureFormat,
    mut sink: W,
) -> std::io::Result<()> {
    match format {
        CaptureFormat::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut sink, r)?;
                sink.write_all(b"\n")?;
            }
        }
        CaptureFormat::Csv => {
            writeln!(sink, "t,mac,adv,rssi")?;
            for r in records {
                let rssi = r.rssi.map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    sink,
                    "{},{},{},{}",
                    r.timestamp,
                    hex::encode(r.mac),
                    hex::encode(&r.adv_data),
                    rssi
                )?;
            }
        }
    }
    Ok(())
}

/// A run of consecutive records sharing one MAC address.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    #[serde(with = "hexser")]
    pub mac: [u8; 6],
    pub first_seen: f64,
    pub last_seen: f64,
    pub count: usize,
    /// Longest silence between two records inside the segment.
    pub max_internal_gap: f64,
}

pub fn segment_rotations(records: &[CaptureRecord], find_my_only: bool) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for r in records.iter().filter(|r| !find_my_only || r.is_find_my()) {
        match out.last_mut() {
            Some(seg) if seg.mac == r.mac => {
                seg.max_internal_gap = seg.max_internal_gap.max(r.timestamp - seg.last_seen);
                seg.last_seen = r.timestamp;
                seg.count += 1;
            }
            _ => out.push(Segment {
                mac: r.mac,
                first_seen: r.timestamp,
                last_seen: r.timestamp,
                count: 1,
                max_internal_gap: 0.0,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Finding {
    EarlyCutoff,
    NeverStarted,
    GapDetected,
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationReport {
    pub segments: Vec<Segment>,
    /// Time between successive rotations (segment starts).
    pub window_durations: Vec<f64>,
    pub mean: Option<f64>,
    /// Sample (n-1) standard deviation of `window_durations`.
    pub stddev: Option<f64>,
    pub nominal: f64,
    /// Timestamp of the last record.
    pub cutoff_time: Option<f64>,
    /// Offset of each rotation from the nominal grid anchored at the first one.
    pub cumulative_drift: Vec<f64>,
    /// Longest silence anywhere between the first and last record.
    pub max_gap: f64,
    pub verdicts: Vec<Finding>,
}

/// Window statistics. Verdicts assume the capture should cover one nominal
/// window per observed segment; use [`detect_anomalies`] for a known target.
pub fn rotation_stats(segments: &[Segment], nominal: f64) -> RotationReport {
    let starts: Vec<f64> = segments.iter().map(|s| s.first_seen).collect();
    let window_durations: Vec<f64> = starts.windows(2).map(|p| p[1] - p[0]).collect();
    let n = window_durations.len();
    let mean = (n > 0).then(|| window_durations.iter().sum::<f64>() / n as f64);
    let stddev = mean.map(|m| {
        if n < 2 {
            0.0
        } else {
            let ss: f64 = window_durations.iter().map(|d| (d - m).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        }
    });
    let cumulative_drift = starts
        .iter()
        .enumerate()
        .map(|(k, s)| (s - starts[0]) - k as f64 * nominal)
        .collect();
    let between = segments
        .windows(2)
        .map(|p| p[1].first_seen - p[0].last_seen);
    let max_gap = segments
        .iter()
        .map(|s| s.max_internal_gap)
        .chain(between)
        .fold(0.0, f64::max);

    let mut report = RotationReport {
        segments: segments.to_vec(),
        window_durations,
        mean,
        stddev,
        nominal,
        cutoff_time: segments.last().map(|s| s.last_seen),
        cumulative_drift,
        max_gap,
        verdicts: Vec::new(),
    };
    report.verdicts = detect_anomalies(&report, nominal * segments.len() as f64, DEFAULT_GRACE_S);
    report
}

/// Compares a capture against the advertising time it should have covered,
/// measured from LPM entry at t = 0.
pub fn detect_anomalies(report: &RotationReport, expected_total: f64, grace: f64) -> Vec<Finding> {
    let Some(cutoff) = report.cutoff_time else {
        return vec![Finding::NeverStarted];
    };
    let mut out = Vec::new();
    if cutoff < expected_total - grace {
        out.push(Finding::EarlyCutoff);
    }
    if report.max_gap > grace {
        out.push(Finding::GapDetected);
    }
    if out.is_empty() {
        out.push(Finding::Nominal);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub nominal: f64,
    pub expected_total: f64,
    pub grace: f64,
    pub find_my_only: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            nominal: DEFAULT_NOMINAL_S,
            expected_total: 96.0 * DEFAULT_NOMINAL_S,
            grace: DEFAULT_GRACE_S,
            find_my_only: true,
        }
    }
}

/// Segments, statistics and verdicts against an explicit expectation.
pub fn analyze(records: &[CaptureRecord], cfg: &AnalysisConfig) -> RotationReport {
    let segments = segment_rotations(records, cfg.find_my_only);
    let mut report = rotation_stats(&segments, cfg.nominal);
    report.verdicts = detect_anomalies(&report, cfg.expected_total, cfg.grace);
    report
}

pub fn render_summary(report: &RotationReport) -> String {
    let fmt_opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3} s"));
    let drift = report
        .cumulative_drift
        .last()
        .map_or("n/a".to_string(), |d| format!("{d:+.3} s"));
    let verdicts: Vec<_> = report.verdicts.iter().map(|v| format!("{v:?}")).collect();
    format!(
        "segments:       {}\n\
         mean window:    {}\n\
         stddev:         {}\n\
         nominal:        {:.3} s\n\
         final drift:    {}\n\
         last advert:    {}\n\
         longest gap:    {:.3} s\n\
         verdicts:       {}\n",
        report.segments.len(),
        fmt_opt(report.mean),
        fmt_opt(report.stddev),
        report.nominal,
        drift,
        fmt_opt(report.cutoff_time),
        report.max_gap,
        verdicts.join(", ")
    )
}
