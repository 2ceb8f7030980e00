//! Seeded synthetic harvest traces.
//!
//! Panel output is a half-sine daylight envelope scaled by a day-level AR(1)
//! cloud factor and an intra-day AR(1) fluctuation, clamped at zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ingest::{SubHourSeries, TraceSample};
use crate::predictor::{WeightSet, SUBHOURS_PER_DAY};

/// 2009-10-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_254_355_200;
const DAY_S: f64 = 86_400.0;
const SUNRISE_H: f64 = 6.0;
const SUNSET_H: f64 = 18.0;
/// Clear-sky peak irradiation, W/m².
const PEAK_IRRADIATION: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiurnalOptions {
    pub days: usize,
    pub seed: u64,
    pub start: i64,
    /// Expected harvest of a day with cloud factor 1, J.
    pub daily_energy_j: f64,
    pub sample_spacing_s: i64,
    pub cloud_rho: f64,
    pub cloud_sigma: f64,
    /// Per-sample AR(1) coefficient and innovation std of the intra-day term.
    pub intra_phi: f64,
    pub intra_sigma: f64,
    /// Relative std of panel effects not seen by the irradiation sensor.
    pub panel_sigma: f64,
}

impl Default for DiurnalOptions {
    fn default() -> Self {
        Self {
            days: 4,
            seed: 0,
            start: DEFAULT_START,
            daily_energy_j: 480e3,
            sample_spacing_s: 300,
            cloud_rho: 0.6,
            cloud_sigma: 0.2,
            intra_phi: 0.95,
            intra_sigma: 0.04,
            panel_sigma: 0.02,
        }
    }
}

impl DiurnalOptions {
    /// Clear days with only mild variation.
    pub fn sunny(days: usize, seed: u64) -> Self {
        Self { days, seed, cloud_sigma: 0.05, intra_sigma: 0.02, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrace {
    /// Panel output, W.
    pub power: Vec<TraceSample>,
    /// Irradiation, W/m².
    pub irradiation: Vec<TraceSample>,
    /// Day-level cloud factors.
    pub cloud: Vec<f64>,
}

/// Half-sine between sunrise and sunset, zero at night; `t` in seconds
/// since midnight.
pub fn daylight_envelope(t: f64) -> f64 {
    let h = t.rem_euclid(DAY_S) / 3600.0;
    if (SUNRISE_H..SUNSET_H).contains(&h) {
        (PI * (h - SUNRISE_H) / (SUNSET_H - SUNRISE_H)).sin()
    } else {
        0.0
    }
}

/// Peak panel power giving `daily_energy_j` under the clear-sky envelope.
pub fn peak_power_w(daily_energy_j: f64) -> f64 {
    let daylight_s = (SUNSET_H - SUNRISE_H) * 3600.0;
    daily_energy_j / (daylight_s * 2.0 / PI)
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("bad noise level {sigma}: {e}")))
}

pub fn diurnal(opts: &DiurnalOptions) -> Result<SyntheticTrace> {
    if opts.days == 0 || opts.sample_spacing_s <= 0 || !(opts.daily_energy_j >= 0.0) {
        return Err(Error::invalid("synthetic trace needs >= 1 day, positive spacing and energy >= 0"));
    }
    if !(opts.cloud_rho.abs() < 1.0 && opts.intra_phi.abs() < 1.0) {
        return Err(Error::invalid("AR(1) coefficients must lie in (-1, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cloud_noise = normal(opts.cloud_sigma)?;
    let intra_noise = normal(opts.intra_sigma)?;
    let panel_noise = normal(opts.panel_sigma)?;
    let peak = peak_power_w(opts.daily_energy_j);

    let mut a = cloud_noise.sample(&mut rng) / (1.0 - opts.cloud_rho * opts.cloud_rho).sqrt();
    let mut cloud = Vec::with_capacity(opts.days);
    for _ in 0..opts.days {
        cloud.push((1.0 + a).clamp(0.05, 1.5));
        a = opts.cloud_rho * a + cloud_noise.sample(&mut rng);
    }

    let per_day = (DAY_S as i64) / opts.sample_spacing_s;
    let n = per_day as usize * opts.days;
    let mut z = 0.0;
    let mut power = Vec::with_capacity(n);
    let mut irradiation = Vec::with_capacity(n);
    for i in 0..n {
        let offset = i as i64 * opts.sample_spacing_s;
        let mid = offset as f64 + 0.5 * opts.sample_spacing_s as f64;
        let day = i / per_day as usize;
        z = opts.intra_phi * z + intra_noise.sample(&mut rng);
        let g = (PEAK_IRRADIATION * daylight_envelope(mid) * cloud[day] * (1.0 + z)).max(0.0);
        let p = (g / PEAK_IRRADIATION * peak * (1.0 + panel_noise.sample(&mut rng))).max(0.0);
        let timestamp = opts.start + offset;
        power.push(TraceSample { timestamp, value: p });
        irradiation.push(TraceSample { timestamp, value: g });
    }
    Ok(SyntheticTrace { power, irradiation, cloud })
}

impl SyntheticTrace {
    /// Rescales panel power so the realised mean daily harvest equals
    /// `daily_energy_j`.
    pub fn scale_to_daily_energy(&mut self, daily_energy_j: f64) -> Result<()> {
        let spacing = match self.power.as_slice() {
            [a, b, ..] => (b.timestamp - a.timestamp) as f64,
            _ => return Err(Error::invalid("need at least two samples to rescale")),
        };
        let days = self.power.len() as f64 * spacing / DAY_S;
        let total: f64 = self.power.iter().map(|s| s.value * spacing).sum();
        if total <= 0.0 {
            return Err(Error::invalid("cannot rescale a dark trace"));
        }
        let c = daily_energy_j * days / total;
        self.power.iter_mut().for_each(|s| s.value *= c);
        Ok(())
    }
}

/// Sub-hour harvests drawn from the K-SEP model itself:
/// `x(k+1) = α1 x(k) + α2 x(k-47) + β1 y(k) + w(k)`, with `y` the clear-sky
/// irradiation and the first day on the clear-sky envelope. Values are
/// clamped at zero when `sigma_w > 0`.
pub fn model_series(
    weights: WeightSet,
    sigma_w: f64,
    days: usize,
    seed: u64,
    slot_length_s: f64,
    first_day_peak_j: f64,
) -> Result<SubHourSeries> {
    let k = SUBHOURS_PER_DAY;
    if days < 1 {
        return Err(Error::invalid("model series needs at least one day"));
    }
    let n = days * k;
    let y: Vec<f64> =
        (0..n).map(|i| PEAK_IRRADIATION * daylight_envelope((i as f64 + 0.5) * slot_length_s)).collect();
    let mut x: Vec<f64> = (0..k).map(|i| first_day_peak_j * y[i] / PEAK_IRRADIATION).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(sigma_w.max(0.0))?;
    for j in k..n {
        let prev = j - 1;
        let mut v = weights.alpha1 * x[prev] + weights.alpha2 * x[prev + 1 - k] + weights.beta1 * y[prev];
        if sigma_w > 0.0 {
            v = (v + noise.sample(&mut rng)).max(0.0);
        }
        x.push(v);
    }
    SubHourSeries::from_parts(DEFAULT_START, slot_length_s, &x, Some(&y))
}

/// One irradiation sample per window, at the window start.
pub fn irradiation_samples(series: &SubHourSeries) -> Vec<TraceSample> {
    series
        .values
        .iter()
        .enumerate()
        .map(|(w, v)| TraceSample {
            timestamp: series.start + (w as f64 * series.slot_length_s) as i64,
            value: v.mean_irradiation,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SystemConfig;
    use crate::ingest::{resample_to_subhours, ResampleOptions};

    #[test]
    fn envelope_shape() {
        assert_eq!(daylight_envelope(0.0), 0.0);
        assert!((daylight_envelope(12.0 * 3600.0) - 1.0).abs() < 1e-15);
        assert_eq!(daylight_envelope(19.0 * 3600.0), 0.0);
        assert!((peak_power_w(480e3) - 17.453).abs() < 1e-3);
    }

    #[test]
    fn deterministic_and_nonnegative() {
        let o = DiurnalOptions::default();
        let a = diurnal(&o).unwrap();
        assert_eq!(a, diurnal(&o).unwrap());
        assert_ne!(a, diurnal(&DiurnalOptions { seed: 1, ..o }).unwrap());
        assert!(a.power.iter().chain(&a.irradiation).all(|s| s.value >= 0.0));
        assert_eq!(a.power.len(), 4 * 288);
    }

    #[test]
    fn daily_energy_near_target() {
        let o = DiurnalOptions { days: 30, cloud_sigma: 0.0, ..DiurnalOptions::default() };
        let t = diurnal(&o).unwrap();
        let s = resample_to_subhours(&t.power, &SystemConfig::reference(), &ResampleOptions::default()).unwrap();
        let per_day = s.energies_j().iter().sum::<f64>() / 30.0;
        assert!((per_day - 480e3).abs() < 0.05 * 480e3, "{per_day}");
    }

    #[test]
    fn rescaling_hits_target() {
        let mut t = diurnal(&DiurnalOptions { days: 5, seed: 9, ..DiurnalOptions::default() }).unwrap();
        t.scale_to_daily_energy(480e3).unwrap();
        let total: f64 = t.power.iter().map(|s| s.value * 300.0).sum();
        assert!((total / 5.0 - 480e3).abs() < 1e-6);
    }

    #[test]
    fn noise_free_model_series_follows_recursion() {
        let w = WeightSet { alpha1: 0.5, alpha2: 0.3, beta1: 2.0 };
        let s = model_series(w, 0.0, 3, 0, 1800.0, 20_000.0).unwrap();
        let x = s.energies_j();
        let y = s.irradiation();
        for k in 48..x.len() - 1 {
            let want = 0.5 * x[k] + 0.3 * x[k - 47] + 2.0 * y[k];
            assert!((x[k + 1] - want).abs() <= 1e-12 * want.max(1.0));
        }
        assert!(x.iter().all(|&v| v >= 0.0));
    }
}
