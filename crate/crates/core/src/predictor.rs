//! Sub-hourly solar harvest prediction.
//!
//! K-SEP is a linear Kalman filter on a 48-slot augmented state holding the
//! last day of harvests, `ξ_k = [x(k), x(k-1), …, x(k-47)]`, driven by
//!
//! ```text
//! x(k+1) = α1 x(k) + α2 x(k-47) + β1 y(k) + w(k)
//! z(k)   = x(k) + v(k)
//! ```
//!
//! where `y` is irradiation (or a power proxy). S-SEP averages the same
//! sub-hour of the two previous days.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SubHourSeries;

pub const SUBHOURS_PER_DAY: usize = 48;
const DAY: usize = SUBHOURS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
}

impl WeightSet {
    pub const fn new(alpha1: f64, alpha2: f64, beta1: f64) -> Self {
        Self { alpha1, alpha2, beta1 }
    }

    /// Starting point used for data fitting.
    pub const INITIAL: WeightSet = WeightSet::new(0.9, 0.1, 0.01);

    fn check(&self) -> Result<()> {
        if [self.alpha1, self.alpha2, self.beta1].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("weights must be finite"))
        }
    }

    fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.alpha1, self.alpha2, self.beta1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseVariances {
    /// Process noise `σ²_w` (J²).
    pub sigma_w_sq: f64,
    /// Measurement noise `σ²_v` (J²).
    pub sigma_v_sq: f64,
}

impl NoiseVariances {
    /// `σ²_v = 1e-4 σ²_w`.
    pub fn from_process(sigma_w_sq: f64) -> Self {
        Self { sigma_w_sq, sigma_v_sq: 1e-4 * sigma_w_sq }
    }

    fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.sigma_w_sq) && ok(self.sigma_v_sq) {
            Ok(())
        } else {
            Err(Error::invalid("noise variances must be finite and >= 0"))
        }
    }
}

/// Weights plus noise variances; the unit persisted in a weights file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub weights: WeightSet,
    pub noise: NoiseVariances,
}

impl FittedModel {
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha1={}", self.weights.alpha1);
        let _ = writeln!(s, "alpha2={}", self.weights.alpha2);
        let _ = writeln!(s, "beta1={}", self.weights.beta1);
        let _ = writeln!(s, "sigma_w_sq={}", self.noise.sigma_w_sq);
        let _ = writeln!(s, "sigma_v_sq={}", self.noise.sigma_v_sq);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut vals = [None; 5];
        let keys = ["alpha1", "alpha2", "beta1", "sigma_w_sq", "sigma_v_sq"];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("weights line {}: expected key=value", lineno + 1)))?;
            let idx = keys
                .iter()
                .position(|&key| key == k.trim())
                .ok_or_else(|| Error::invalid(format!("weights line {}: unknown key '{}'", lineno + 1, k.trim())))?;
            vals[idx] = Some(
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("weights line {}: bad number", lineno + 1)))?,
            );
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::invalid(format!("weights file missing '{}'", keys[i])));
        let weights = WeightSet::new(get(0)?, get(1)?, get(2)?);
        let noise = match (vals[3], vals[4]) {
            (Some(w), Some(v)) => NoiseVariances { sigma_w_sq: w, sigma_v_sq: v },
            (Some(w), None) => NoiseVariances::from_process(w),
            _ => return Err(Error::invalid("weights file missing 'sigma_w_sq'")),
        };
        weights.check()?;
        noise.check()?;
        Ok(Self { weights, noise })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    Newton,
    Ols,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub weights: WeightSet,
    /// Mean squared one-step residual at the fitted weights (J²).
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sample variance of the residuals; the default `σ²_w`.
    pub residual_variance: f64,
    /// `β1` was held at zero because the irradiation channel is a power proxy.
    pub beta1_fixed: bool,
}

impl FitReport {
    pub fn model(&self) -> FittedModel {
        FittedModel { weights: self.weights, noise: NoiseVariances::from_process(self.residual_variance) }
    }
}

struct Regression {
    rows: Vec<[f64; 3]>,
    targets: Vec<f64>,
    cols: usize,
}

impl Regression {
    /// Rows `[x(k), x(k-47), y(k)] -> x(k+1)` for every `k` with a full prior day.
    fn build(history: &SubHourSeries) -> Result<Self> {
        let n = history.len();
        if n < DAY + 1 {
            return Err(Error::invalid(format!(
                "fitting needs at least {} consecutive sub-hours, got {n}",
                DAY + 1
            )));
        }
        let x = history.energies_j();
        let y = history.irradiation();
        let cols = if history.irradiation_proxy { 2 } else { 3 };
        let mut rows = Vec::with_capacity(n - DAY);
        let mut targets = Vec::with_capacity(n - DAY);
        for k in (DAY - 1)..(n - 1) {
            rows.push([x[k], x[k + 1 - DAY], if cols == 3 { y[k] } else { 0.0 }]);
            targets.push(x[k + 1]);
        }
        Ok(Self { rows, targets, cols })
    }

    fn m(&self) -> f64 {
        self.targets.len() as f64
    }

    fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.cols, |i, j| self.rows[i][j])
    }

    fn objective(&self, w: &Vector3<f64>) -> f64 {
        self.residuals(w).iter().map(|r| r * r).sum::<f64>() / self.m()
    }

    fn residuals(&self, w: &Vector3<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(r, &z)| z - (w[0] * r[0] + w[1] * r[1] + w[2] * r[2]))
            .collect()
    }

    /// Column RMS; used to condition both solution routes.
    fn scales(&self) -> Vector3<f64> {
        let mut s = Vector3::zeros();
        for r in &self.rows {
            for j in 0..3 {
                s[j] += r[j] * r[j];
            }
        }
        let m = self.m();
        s.map(|v: f64| (v / m).sqrt())
    }
}

const RANK_TOL: f64 = 1e-10;

/// Least-squares fit of the harvest model's weights.
///
/// `Ols` solves the column-scaled design with Householder QR; `Newton` runs
/// damped Newton iterations on the mean squared residual. The objective is
/// quadratic, so both land on the same weights.
pub fn fit_weights(history: &SubHourSeries, init: WeightSet, method: FitMethod) -> Result<FitReport> {
    init.check()?;
    let reg = Regression::build(history)?;
    let scales = reg.scales();
    if (0..reg.cols).any(|j| scales[j] == 0.0 || !scales[j].is_finite()) {
        return Err(Error::SingularFit);
    }
    let (w, iterations, converged) = match method {
        FitMethod::Ols => (solve_qr(&reg, &scales)?, 1, true),
        FitMethod::Newton => solve_newton(&reg, &scales, init)?,
    };
    let residuals = reg.residuals(&w);
    let m = reg.m();
    let mean = residuals.iter().sum::<f64>() / m;
    let residual_variance = if residuals.len() > 1 {
        residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(FitReport {
        weights: WeightSet::new(w[0], w[1], w[2]),
        objective_value: reg.objective(&w),
        iterations,
        converged,
        residual_variance,
        beta1_fixed: reg.cols == 2,
    })
}

fn solve_qr(reg: &Regression, scales: &Vector3<f64>) -> Result<Vector3<f64>> {
    let mut a = reg.design();
    for j in 0..reg.cols {
        a.column_mut(j).scale_mut(1.0 / scales[j]);
    }
    if a.nrows() < reg.cols {
        return Err(Error::SingularFit);
    }
    let qr = a.qr();
    let r = qr.r();
    let rmax = (0..reg.cols).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..reg.cols).any(|j| r[(j, j)].abs() <= RANK_TOL * rmax) {
        return Err(Error::SingularFit);
    }
    let qtb = qr.q().transpose() * DVector::from_column_slice(&reg.targets);
    let sol = r.solve_upper_triangular(&qtb).ok_or(Error::SingularFit)?;
    let mut w = Vector3::zeros();
    for j in 0..reg.cols {
        w[j] = sol[j] / scales[j];
    }
    Ok(w)
}

fn solve_newton(reg: &Regression, scales: &Vector3<f64>, init: WeightSet) -> Result<(Vector3<f64>, usize, bool)> {
    let cols = reg.cols;
    let m = reg.m();
    // scaled coordinates u = w ⊙ scales
    let mut hess = Matrix3::<f64>::zeros();
    for r in &reg.rows {
        for i in 0..cols {
            for j in 0..cols {
                hess[(i, j)] += 2.0 / m * (r[i] / scales[i]) * (r[j] / scales[j]);
            }
        }
    }
    for i in cols..3 {
        hess[(i, i)] = 1.0;
    }
    let eig = SymmetricEigen::new(hess).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    if !(lo > RANK_TOL * RANK_TOL * hi) {
        return Err(Error::SingularFit);
    }
    let chol = hess.cholesky().ok_or(Error::SingularFit)?;

    let mut u = init.as_vector().component_mul(scales);
    for i in cols..3 {
        u[i] = 0.0;
    }
    let to_w = |u: &Vector3<f64>| {
        let mut w = Vector3::zeros();
        for j in 0..cols {
            w[j] = u[j] / scales[j];
        }
        w
    };
    let grad = |u: &Vector3<f64>| {
        let res = reg.residuals(&to_w(u));
        let mut g = Vector3::zeros();
        for (r, e) in reg.rows.iter().zip(res) {
            for j in 0..cols {
                g[j] -= 2.0 / m * e * r[j] / scales[j];
            }
        }
        g
    };

    let max_iter = 50;
    let mut f = reg.objective(&to_w(&u));
    for it in 1..=max_iter {
        let g = grad(&u);
        let step = -chol.solve(&g);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let (mut next, mut f_next);
        loop {
            next = u + step * t;
            f_next = reg.objective(&to_w(&next));
            if f_next <= f + 1e-4 * t * slope || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        let moved = (step * t).norm();
        u = next;
        let decreased = f - f_next;
        f = f_next;
        if moved <= 1e-13 * (1.0 + u.norm()) || decreased <= 1e-15 * f.abs().max(f64::MIN_POSITIVE) && it > 1 {
            return Ok((to_w(&u), it, true));
        }
    }
    Ok((to_w(&u), max_iter, false))
}

/// Per-step filter output besides the prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// `z_k − H ξ⁻_k`.
    pub innovation: f64,
    /// `H P⁻ Hᵀ + σ²_v`.
    pub innovation_variance: f64,
    /// Unclamped `H ξ⁻_{k+1}`.
    pub raw_prediction: f64,
}

impl StepDiagnostics {
    pub fn normalized_innovation_sq(&self) -> f64 {
        self.innovation * self.innovation / self.innovation_variance
    }
}

/// K-SEP filter state: the pre-measurement estimate `ξ⁻_k` and `P⁻_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    xi: Vec<f64>,
    p: DMatrix<f64>,
    pub weights: WeightSet,
    pub noise: NoiseVariances,
    /// Sub-hour index of the next measurement, mod 48.
    pub phase: usize,
}

impl KalmanState {
    /// Raw constructor. `xi` is `[x(k), …, x(k-47)]`; `p` must be symmetric PSD.
    pub fn new(xi: Vec<f64>, p: DMatrix<f64>, weights: WeightSet, noise: NoiseVariances, phase: usize) -> Result<Self> {
        weights.check()?;
        noise.check()?;
        if xi.len() != DAY || p.nrows() != DAY || p.ncols() != DAY {
            return Err(Error::invalid(format!("state must be {DAY}-dimensional")));
        }
        if xi.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("state contains non-finite values"));
        }
        let asym = (&p - p.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(Error::invalid(format!("covariance asymmetric by {asym}")));
        }
        Ok(Self { xi, p, weights, noise, phase: phase % DAY })
    }

    /// Starts the filter from the 48 measured harvests preceding the next
    /// measurement (oldest first), taken as the post-measurement state with
    /// `P = σ²_w I`, then propagated once with the last irradiation reading.
    pub fn from_previous_day(
        previous_day: &[f64],
        last_irradiation: f64,
        weights: WeightSet,
        noise: NoiseVariances,
        next_phase: usize,
    ) -> Result<Self> {
        if previous_day.len() != DAY {
            return Err(Error::invalid(format!("need {DAY} prior sub-hours, got {}", previous_day.len())));
        }
        if !last_irradiation.is_finite() {
            return Err(Error::invalid("irradiation must be finite"));
        }
        let xi: Vec<f64> = previous_day.iter().rev().copied().collect();
        let p = DMatrix::identity(DAY, DAY) * noise.sigma_w_sq;
        let mut state = Self::new(xi, p, weights, noise, next_phase + DAY - 1)?;
        state.propagate(last_irradiation);
        state.phase = next_phase % DAY;
        Ok(state)
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Current one-step prediction `H ξ⁻`, unclamped.
    pub fn predicted_measurement(&self) -> f64 {
        self.xi[0]
    }

    /// Smallest eigenvalue of `P`.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.p.clone()).eigenvalues.min()
    }

    /// Measurement update with `z_k`, then time update with `y_k`.
    /// Returns the clamped prediction of the next harvest.
    pub fn step_in_place(&mut self, y_k: f64, z_k: f64) -> Result<(f64, StepDiagnostics)> {
        if !y_k.is_finite() || !z_k.is_finite() {
            return Err(Error::invalid("measurement and irradiation must be finite"));
        }
        let (innovation, innovation_variance) = self.update(z_k);
        self.propagate(y_k);
        let raw = self.xi[0];
        Ok((raw.max(0.0), StepDiagnostics { innovation, innovation_variance, raw_prediction: raw }))
    }

    fn update(&mut self, z: f64) -> (f64, f64) {
        let n = DAY;
        let innovation = z - self.xi[0];
        let s = self.p[(0, 0)] + self.noise.sigma_v_sq;
        if s <= 0.0 {
            // both prior and sensor are exact in the measured component
            self.xi[0] = z;
            return (innovation, 0.0);
        }
        let gain: Vec<f64> = (0..n).map(|i| self.p[(i, 0)] / s).collect();
        for (x, k) in self.xi.iter_mut().zip(&gain) {
            *x += k * innovation;
        }
        // Joseph form: (I - K H) P (I - K H)ᵀ + K σ²_v Kᵀ
        let row0: Vec<f64> = (0..n).map(|j| self.p[(0, j)]).collect();
        let mut lp = self.p.clone();
        for i in 0..n {
            for j in 0..n {
                lp[(i, j)] -= gain[i] * row0[j];
            }
        }
        let col0: Vec<f64> = (0..n).map(|i| lp[(i, 0)]).collect();
        let rv = self.noise.sigma_v_sq;
        for i in 0..n {
            for j in 0..n {
                self.p[(i, j)] = lp[(i, j)] - col0[i] * gain[j] + rv * gain[i] * gain[j];
            }
        }
        self.symmetrize();
        (innovation, s)
    }

    /// `ξ ← A ξ + B y`, `P ← A P Aᵀ + Γ σ²_w Γᵀ`, exploiting A's shift structure.
    fn propagate(&mut self, y: f64) {
        let n = DAY;
        let WeightSet { alpha1, alpha2, beta1 } = self.weights;
        let head = alpha1 * self.xi[0] + alpha2 * self.xi[n - 1] + beta1 * y;
        self.xi.rotate_right(1);
        self.xi[0] = head;

        // M = A P
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            m[(0, j)] = alpha1 * self.p[(0, j)] + alpha2 * self.p[(n - 1, j)];
            for i in 1..n {
                m[(i, j)] = self.p[(i - 1, j)];
            }
        }
        // A P Aᵀ = M Aᵀ
        for i in 0..n {
            self.p[(i, 0)] = alpha1 * m[(i, 0)] + alpha2 * m[(i, n - 1)];
            for j in 1..n {
                self.p[(i, j)] = m[(i, j - 1)];
            }
        }
        self.p[(0, 0)] += self.noise.sigma_w_sq;
        self.symmetrize();
        self.phase = (self.phase + 1) % n;
    }

    fn symmetrize(&mut self) {
        let n = DAY;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.p[(i, j)] + self.p[(j, i)]);
                self.p[(i, j)] = v;
                self.p[(j, i)] = v;
            }
        }
    }
}

/// One K-SEP step: measurement update with `z_k`, propagation with `y_k`.
/// The returned prediction is clamped to `>= 0`; the state keeps the raw value.
pub fn ksep_step(state: &KalmanState, y_k: f64, z_k: f64) -> Result<(KalmanState, f64)> {
    let mut next = state.clone();
    let (pred, _) = next.step_in_place(y_k, z_k)?;
    Ok((next, pred))
}

/// Mean of the same sub-hour on the two previous days.
pub fn ssep_predict(day_minus_1_j: f64, day_minus_2_j: f64) -> Result<f64> {
    for v in [day_minus_1_j, day_minus_2_j] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("S-SEP input {v} must be finite and >= 0")));
        }
    }
    Ok(0.5 * (day_minus_1_j + day_minus_2_j))
}

pub fn prediction_mse(real: &[f64], predicted: &[f64]) -> Result<f64> {
    if real.len() != predicted.len() || real.is_empty() {
        return Err(Error::invalid(format!(
            "MSE needs equal non-empty lengths, got {} and {}",
            real.len(),
            predicted.len()
        )));
    }
    Ok(real.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / real.len() as f64)
}

/// One-step K-SEP and S-SEP predictions for `count` consecutive sub-hours
/// of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRun {
    pub from: usize,
    pub real_j: Vec<f64>,
    pub ksep_j: Vec<f64>,
    pub ssep_j: Vec<f64>,
}

impl PredictionRun {
    pub fn ksep_mse_kj2(&self) -> Result<f64> {
        Ok(prediction_mse(&self.real_j, &self.ksep_j)? / 1e6)
    }

    pub fn ssep_mse_kj2(&self) -> Result<f64> {
        Ok(prediction_mse(&self.real_j, &self.ssep_j)? / 1e6)
    }

    /// Per-day `(ksep, ssep)` MSEs in kJ² over complete 48-slot blocks.
    pub fn daily_mse_kj2(&self) -> Result<Vec<(f64, f64)>> {
        (0..self.real_j.len() / DAY)
            .map(|d| {
                let r = d * DAY..(d + 1) * DAY;
                Ok((
                    prediction_mse(&self.real_j[r.clone()], &self.ksep_j[r.clone()])? / 1e6,
                    prediction_mse(&self.real_j[r.clone()], &self.ssep_j[r])? / 1e6,
                ))
            })
            .collect()
    }

    /// CSV `subhour_index,real_kj,ksep_kj,ssep_kj`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subhour_index", "real_kj", "ksep_kj", "ssep_kj"])?;
        for i in 0..self.real_j.len() {
            w.write_record([
                (self.from + i).to_string(),
                (self.real_j[i] / 1000.0).to_string(),
                (self.ksep_j[i] / 1000.0).to_string(),
                (self.ssep_j[i] / 1000.0).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs both predictors over `series[from..from+count]`. Needs two full days
/// before `from`.
pub fn run_predictions(series: &SubHourSeries, model: &FittedModel, from: usize, count: usize) -> Result<PredictionRun> {
    if from < 2 * DAY {
        return Err(Error::InsufficientHistory { needed: 2 * DAY, available: from });
    }
    if from + count > series.len() {
        return Err(Error::invalid(format!(
            "prediction window [{from}, {}) exceeds series of {}",
            from + count,
            series.len()
        )));
    }
    let x = series.energies_j();
    let y = series.irradiation();
    let a = from - 1;
    let mut state = KalmanState::from_previous_day(
        &x[a - DAY..a],
        y[a - 1],
        model.weights,
        model.noise,
        a % DAY,
    )?;
    let mut run = PredictionRun { from, real_j: Vec::new(), ksep_j: Vec::new(), ssep_j: Vec::new() };
    for j in from..from + count {
        let (pred, _) = state.step_in_place(y[j - 1], x[j - 1])?;
        run.real_j.push(x[j]);
        run.ksep_j.push(pred);
        run.ssep_j.push(ssep_predict(x[j - DAY], x[j - 2 * DAY])?);
    }
    Ok(run)
}
