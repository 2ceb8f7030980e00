//! Fairness, throughput and utility reporting.

use serde::{Deserialize, Serialize};

use crate::domain::{utility_of_bits, Schedule};
use crate::error::{Error, Result};
use crate::predictor::prediction_mse;

/// Bits in one (decimal) gigabyte.
pub const BITS_PER_GB: f64 = 8e9;

/// Marker written in place of undefined values in CSV and JSON output.
pub const UNDEFINED: &str = "undefined";

pub fn bits_to_gb(bits: f64) -> f64 {
    bits / BITS_PER_GB
}

/// `(Σx)² / (N Σx²)`.
pub fn jain_index(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::invalid("Jain index of an empty list"));
    }
    if let Some(v) = x.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::invalid(format!("Jain index input {v} must be finite and >= 0")));
    }
    // scale first so squares neither overflow nor underflow
    let max = x.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::UndefinedFairness);
    }
    let (s, sq) = x.iter().fold((0.0, 0.0), |(s, sq), &v| {
        let v = v / max;
        (s + v, sq + v * v)
    });
    Ok((s * s / (x.len() as f64 * sq)).min(1.0))
}

/// A value that may be undefined for some frames; serialises as either the
/// number or the `"undefined"` marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metric {
    Value(f64),
    Undefined(Marker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Undefined,
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined(_) => None,
        }
    }

    fn from_option(v: Option<f64>) -> Self {
        v.map_or(Metric::Undefined(Marker::Undefined), Metric::Value)
    }

    fn to_csv(self) -> String {
        self.value().map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub algorithm: String,
    pub gateway_bits: Vec<f64>,
    pub total_bits: f64,
    pub total_gb: f64,
    pub jain_index: Metric,
    pub log_utility: Metric,
    /// One-step harvest prediction MSE in kJ², when a predictor ran.
    pub mse_kj2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub frames: usize,
    pub mean_total_bits: f64,
    pub mean_total_gb: f64,
    pub mean_gateway_gb: Vec<f64>,
    /// Over frames with defined fairness only.
    pub mean_jain_index: Metric,
    pub min_jain_index: Metric,
    pub undefined_fairness_frames: usize,
    pub mean_log_utility: Metric,
    pub undefined_utility_frames: usize,
    pub mean_mse_kj2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<FrameRecord>,
    pub summaries: Vec<AlgorithmSummary>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize(algorithm: &str, records: &[&FrameRecord]) -> AlgorithmSummary {
    let gateways = records.first().map_or(0, |r| r.gateway_bits.len());
    let jain: Vec<f64> = records.iter().filter_map(|r| r.jain_index.value()).collect();
    let utility: Vec<f64> = records.iter().filter_map(|r| r.log_utility.value()).collect();
    let mean_total_bits = mean(records.iter().map(|r| r.total_bits)).unwrap_or(0.0);
    AlgorithmSummary {
        algorithm: algorithm.to_string(),
        frames: records.len(),
        mean_total_bits,
        mean_total_gb: bits_to_gb(mean_total_bits),
        mean_gateway_gb: (0..gateways)
            .map(|g| bits_to_gb(mean(records.iter().map(|r| r.gateway_bits[g])).unwrap_or(0.0)))
            .collect(),
        mean_jain_index: Metric::from_option(mean(jain.iter().copied())),
        min_jain_index: Metric::from_option(jain.iter().copied().reduce(f64::min)),
        undefined_fairness_frames: records.len() - jain.len(),
        mean_log_utility: Metric::from_option(mean(utility.iter().copied())),
        undefined_utility_frames: records.len() - utility.len(),
        mean_mse_kj2: mean(records.iter().filter_map(|r| r.mse_kj2)),
    }
}

/// Per-frame and averaged metrics for one algorithm's run. `predictions`,
/// when given, holds each frame's `(real, predicted)` harvest pairs in J.
pub fn summarize_run(
    algorithm: &str,
    schedules: &[Schedule],
    predictions: Option<&[Vec<(f64, f64)>]>,
) -> Result<RunReport> {
    if schedules.is_empty() {
        return Err(Error::invalid("a run report needs at least one frame"));
    }
    if let Some(p) = predictions {
        if p.len() != schedules.len() {
            return Err(Error::invalid(format!("{} prediction sets for {} frames", p.len(), schedules.len())));
        }
    }
    let mut records = Vec::with_capacity(schedules.len());
    for (frame, s) in schedules.iter().enumerate() {
        let gateway_bits = s.bits_per_gateway.clone();
        let total_bits: f64 = gateway_bits.iter().sum();
        let jain = match jain_index(&gateway_bits) {
            Ok(v) => Some(v),
            Err(Error::UndefinedFairness) => None,
            Err(e) => return Err(e),
        };
        let utility = match utility_of_bits(&gateway_bits) {
            Ok(v) => Some(v),
            Err(Error::UtilityUndefined { .. }) => None,
            Err(e) => return Err(e),
        };
        let mse_kj2 = match predictions.map(|p| &p[frame]) {
            Some(pairs) if !pairs.is_empty() => {
                let (real, pred): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                Some(prediction_mse(&real, &pred)? / 1e6)
            }
            _ => None,
        };
        records.push(FrameRecord {
            frame,
            algorithm: algorithm.to_string(),
            gateway_bits,
            total_bits,
            total_gb: bits_to_gb(total_bits),
            jain_index: Metric::from_option(jain),
            log_utility: Metric::from_option(utility),
            mse_kj2,
        });
    }
    let refs: Vec<&FrameRecord> = records.iter().collect();
    let summaries = vec![summarize(algorithm, &refs)];
    Ok(RunReport { records, summaries })
}

impl RunReport {
    /// Joins per-algorithm reports; records are ordered by frame, then by
    /// the order the reports are given in.
    pub fn join(reports: Vec<RunReport>) -> RunReport {
        let mut records = Vec::new();
        let mut summaries = Vec::new();
        for (order, r) in reports.into_iter().enumerate() {
            records.extend(r.records.into_iter().map(|rec| (order, rec)));
            summaries.extend(r.summaries);
        }
        records.sort_by_key(|(order, rec)| (rec.frame, *order));
        RunReport { records: records.into_iter().map(|(_, r)| r).collect(), summaries }
    }

    pub fn summary(&self, algorithm: &str) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn write_json<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// CSV `frame,algorithm,total_bits,total_gb,jain_index,log_utility,mse_kj2,gateway_bits`
    /// with `gateway_bits` joined by `;`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "frame",
            "algorithm",
            "total_bits",
            "total_gb",
            "jain_index",
            "log_utility",
            "mse_kj2",
            "gateway_bits",
        ])?;
        for r in &self.records {
            w.write_record([
                r.frame.to_string(),
                r.algorithm.clone(),
                r.total_bits.to_string(),
                r.total_gb.to_string(),
                r.jain_index.to_csv(),
                r.log_utility.to_csv(),
                r.mse_kj2.map(|v| v.to_string()).unwrap_or_default(),
                r.gateway_bits.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
