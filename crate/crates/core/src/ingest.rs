//! Trace loading and sub-hour resampling.
//!
//! Input traces are CSV with a `timestamp,value` header. Timestamps are epoch
//! seconds or ISO-8601 (`2009-10-01T12:00:00Z`, `2009-10-01 12:00:00`,
//! naive forms are read as UTC). Samples are integrated with a zero-order
//! hold: each reading holds until the next timestamp, but never longer than
//! `max_hold_s`.

use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::domain::{EnergyEntry, EnergySeries, Provenance, SystemConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    /// Panel output in watts.
    Power,
    /// Irradiation in W/m².
    Irradiation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub timestamp: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub kind: TraceKind,
    pub samples: Vec<TraceSample>,
    /// Set when the file held no data rows.
    pub empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapPolicy {
    #[default]
    Error,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResampleOptions {
    /// Epoch seconds of the first window. Defaults to the first sample's
    /// timestamp floored to a multiple of the slot length.
    pub origin: Option<i64>,
    /// Defaults to `max(slot length, median sample spacing)`.
    pub max_hold_s: Option<f64>,
    pub gaps: GapPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubHour {
    pub energy_j: f64,
    pub mean_irradiation: f64,
    /// True when the window had no data and was zero-filled.
    pub gap_filled: bool,
}

/// Per-sub-hour harvest aggregates starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubHourSeries {
    pub start: i64,
    pub slot_length_s: f64,
    pub values: Vec<SubHour>,
    /// `mean_irradiation` holds mean panel power rather than a measured
    /// irradiation channel.
    pub irradiation_proxy: bool,
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return v.is_finite().then(|| v.floor() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Public form of the timestamp parser used by the CLI's `--from` flag.
pub fn parse_instant(raw: &str) -> Result<i64> {
    parse_timestamp(raw).ok_or_else(|| Error::invalid(format!("unrecognised timestamp '{raw}'")))
}

pub fn load_trace(path: impl AsRef<Path>, kind: TraceKind) -> Result<Trace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text, kind, path)
}

pub fn parse_trace(text: &str, kind: TraceKind, path: &Path) -> Result<Trace> {
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut samples: Vec<TraceSample> = Vec::new();
    let mut header_seen = false;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if !header_seen {
            header_seen = true;
            let cols: Vec<String> = record.iter().map(|f| f.to_ascii_lowercase()).collect();
            if cols != ["timestamp", "value"] {
                return Err(parse_err(line, format!("expected header 'timestamp,value', got '{}'", cols.join(","))));
            }
            continue;
        }
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, got {}", record.len())));
        }
        let timestamp = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(line, format!("bad timestamp '{}'", &record[0])))?;
        let value: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad value '{}'", &record[1])))?;
        if !value.is_finite() || value < 0.0 {
            return Err(parse_err(line, format!("value {value} must be finite and >= 0")));
        }
        if let Some(prev) = samples.last() {
            if timestamp <= prev.timestamp {
                return Err(Error::Data(format!(
                    "{}:{line}: timestamp {timestamp} not after previous {}",
                    path.display(),
                    prev.timestamp
                )));
            }
        }
        samples.push(TraceSample { timestamp, value });
    }
    if !header_seen {
        log::warn!("{}: empty trace", path.display());
    }
    let empty = samples.is_empty();
    Ok(Trace { kind, samples, empty })
}

fn median_spacing(samples: &[TraceSample]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let mut gaps: Vec<i64> = samples.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
    gaps.sort_unstable();
    Some(gaps[gaps.len() / 2] as f64)
}

/// Time-weighted window means of a zero-order-hold signal.
///
/// Returns `(mean, covered)` per window; `covered == false` marks a window
/// that no hold interval touches.
fn window_means(samples: &[TraceSample], slot: f64, opts: &ResampleOptions) -> Result<(i64, Vec<(f64, bool)>)> {
    let Some(first) = samples.first() else {
        return Err(Error::invalid("cannot resample an empty trace"));
    };
    let origin = opts
        .origin
        .unwrap_or_else(|| ((first.timestamp as f64 / slot).floor() * slot) as i64);
    if first.timestamp < origin {
        return Err(Error::invalid(format!("origin {origin} is after the first sample {}", first.timestamp)));
    }
    let max_hold = opts
        .max_hold_s
        .unwrap_or_else(|| median_spacing(samples).map_or(slot, |m| m.max(slot)));

    let last = samples[samples.len() - 1].timestamp as f64 - origin as f64;
    let n_windows = (last / slot).floor() as usize + 1;
    let mut integral = vec![0.0; n_windows];
    let mut covered = vec![0.0; n_windows];

    for (i, s) in samples.iter().enumerate() {
        let start = (s.timestamp - origin) as f64;
        let end = match samples.get(i + 1) {
            Some(next) => ((next.timestamp - origin) as f64).min(start + max_hold),
            // last reading holds to the end of its own window
            None => ((start / slot).floor() + 1.0) * slot,
        };
        let mut a = start;
        while a < end {
            let w = (a / slot).floor() as usize;
            if w >= n_windows {
                break;
            }
            let b = end.min((w as f64 + 1.0) * slot);
            integral[w] += s.value * (b - a);
            covered[w] += b - a;
            a = b;
        }
    }
    let means = integral
        .iter()
        .zip(&covered)
        .map(|(&i, &c)| if c > 0.0 { (i / c, true) } else { (0.0, false) })
        .collect();
    Ok((origin, means))
}

/// Aggregates a power trace into per-slot energies (`mean power × T`).
///
/// The irradiation channel is filled with the mean power and flagged as a
/// proxy; use [`SubHourSeries::with_irradiation`] to attach a measured one.
pub fn resample_to_subhours(samples: &[TraceSample], cfg: &SystemConfig, opts: &ResampleOptions) -> Result<SubHourSeries> {
    let slot = cfg.slot_length_s;
    let (origin, means) = window_means(samples, slot, opts)?;
    let mut values = Vec::with_capacity(means.len());
    for (w, (mean, covered)) in means.into_iter().enumerate() {
        if !covered {
            match opts.gaps {
                GapPolicy::Error => {
                    return Err(Error::Gap { window: w, start: origin + (w as f64 * slot) as i64 })
                }
                GapPolicy::Zero => log::warn!("sub-hour window {w} has no samples; zero-filled"),
            }
        }
        values.push(SubHour { energy_j: mean * slot, mean_irradiation: mean, gap_filled: !covered });
    }
    Ok(SubHourSeries { start: origin, slot_length_s: slot, values, irradiation_proxy: true })
}

impl SubHourSeries {
    /// Builds a series directly from per-slot energies and irradiation.
    pub fn from_parts(start: i64, slot_length_s: f64, energy_j: &[f64], irradiation: Option<&[f64]>) -> Result<Self> {
        if let Some(irr) = irradiation {
            if irr.len() != energy_j.len() {
                return Err(Error::invalid("energy and irradiation lengths differ"));
            }
        }
        let mut values = Vec::with_capacity(energy_j.len());
        for (k, &e) in energy_j.iter().enumerate() {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::invalid(format!("sub-hour {k}: energy {e} must be finite and >= 0")));
            }
            let y = irradiation.map_or(e / slot_length_s, |irr| irr[k]);
            if !y.is_finite() {
                return Err(Error::invalid(format!("sub-hour {k}: irradiation is not finite")));
            }
            values.push(SubHour { energy_j: e, mean_irradiation: y, gap_filled: false });
        }
        Ok(Self { start, slot_length_s, values, irradiation_proxy: irradiation.is_none() })
    }

    /// Replaces the irradiation channel with the window means of a measured
    /// irradiation trace on the same window grid.
    pub fn with_irradiation(mut self, samples: &[TraceSample], opts: &ResampleOptions) -> Result<Self> {
        let opts = ResampleOptions { origin: Some(self.start), ..*opts };
        let (_, means) = window_means(samples, self.slot_length_s, &opts)?;
        for (w, v) in self.values.iter_mut().enumerate() {
            match means.get(w) {
                Some(&(mean, true)) => v.mean_irradiation = mean,
                _ if opts.gaps == GapPolicy::Zero => v.mean_irradiation = 0.0,
                _ => {
                    return Err(Error::Gap { window: w, start: self.start + (w as f64 * self.slot_length_s) as i64 })
                }
            }
        }
        self.irradiation_proxy = false;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn energies_j(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.energy_j).collect()
    }

    pub fn irradiation(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.mean_irradiation).collect()
    }

    /// Number of complete `slots_per_day`-long days.
    pub fn complete_days(&self, slots_per_day: usize) -> usize {
        self.values.len() / slots_per_day
    }

    /// Window index containing epoch second `t`, if inside the series.
    pub fn index_of(&self, t: i64) -> Option<usize> {
        if t < self.start {
            return None;
        }
        let i = ((t - self.start) as f64 / self.slot_length_s).floor() as usize;
        (i < self.values.len()).then_some(i)
    }

    /// `len` measured entries starting at window `from`.
    pub fn frame(&self, from: usize, len: usize) -> Result<EnergySeries> {
        if from + len > self.values.len() {
            return Err(Error::invalid(format!(
                "frame [{from}, {}) exceeds series of {} sub-hours",
                from + len,
                self.values.len()
            )));
        }
        EnergySeries::new(
            self.values[from..from + len]
                .iter()
                .map(|v| EnergyEntry { energy_j: v.energy_j, provenance: Provenance::Measured })
                .collect(),
            self.start + (from as f64 * self.slot_length_s) as i64,
        )
    }

    /// Back to one sample per window at the window start, holding mean power.
    pub fn to_samples(&self) -> Vec<TraceSample> {
        self.values
            .iter()
            .enumerate()
            .map(|(w, v)| TraceSample {
                timestamp: self.start + (w as f64 * self.slot_length_s) as i64,
                value: v.energy_j / self.slot_length_s,
            })
            .collect()
    }

    /// CSV `subhour_index,energy_kj,mean_irradiation`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subhour_index", "energy_kj", "mean_irradiation"])?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([k.to_string(), (v.energy_j / 1000.0).to_string(), v.mean_irradiation.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes samples in the `timestamp,value` input format.
pub fn write_trace<W: std::io::Write>(samples: &[TraceSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "value"])?;
    for s in samples {
        w.write_record([s.timestamp.to_string(), s.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
