//! Block-coordinate reference solver for the joint power / airtime problem
//! on small frames.
//!
//! Both blocks are solved by projected gradient ascent with Armijo
//! backtracking in normalised coordinates: `u = τ / T` and
//! `v = p T / E_total`, which keeps gradients O(1) regardless of the radio
//! and harvest scales.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::domain::{check_feasibility_with_tol, rate_bits_per_sec, Allocation, EnergySeries, SystemConfig};
use crate::error::{Error, Result};
use crate::scheduler::flat_profile;

const ARMIJO_SLOPE: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 80;
/// Feasibility tolerance for solver inputs and iterates.
pub const ITERATE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_sweeps: usize,
    /// A sweep improving utility by less than this ends the run.
    pub sweep_tol: f64,
    /// Target for `‖x - P(x + ∇U)‖∞` in normalised coordinates.
    pub kkt_tol: f64,
    pub max_inner_iterations: usize,
    pub dykstra_cycles: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_sweeps: 500, sweep_tol: 1e-8, kkt_tol: 1e-6, max_inner_iterations: 20_000, dykstra_cycles: 10_000 }
    }
}

/// Result of one block maximisation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution<T> {
    pub value: T,
    pub utility: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcdIteration {
    pub utility: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcdTrace {
    /// Entry 0 is the starting point; one entry per sweep after that.
    pub iterations: Vec<BcdIteration>,
    pub allocation: Allocation,
    pub converged: bool,
}

impl BcdTrace {
    pub fn sweeps(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }

    pub fn final_utility(&self) -> f64 {
        self.iterations.last().map_or(f64::NEG_INFINITY, |i| i.utility)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "utility", "violation"])?;
        for (i, it) in self.iterations.iter().enumerate() {
            w.write_record([i.to_string(), format!("{:.12}", it.utility), format!("{:e}", it.violation)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The frame in normalised coordinates.
struct Problem<'a> {
    cfg: &'a SystemConfig,
    slots: usize,
    gateways: usize,
    /// Total harvest; `v = p T / energy_scale`.
    energy_scale: f64,
    /// Normalised cumulative harvest caps `c_t`.
    caps: Vec<f64>,
    eps_u: f64,
}

impl<'a> Problem<'a> {
    fn new(energies: &EnergySeries, cfg: &'a SystemConfig) -> Result<Self> {
        energies.check_frame(cfg)?;
        let energy_scale = energies.total_j();
        if energy_scale <= 0.0 {
            return Err(Error::UtilityUndefined { gateway: 0 });
        }
        let mut acc = 0.0;
        let caps = energies
            .entries
            .iter()
            .map(|e| {
                acc += e.energy_j;
                acc / energy_scale
            })
            .collect();
        Ok(Self {
            cfg,
            slots: energies.len(),
            gateways: cfg.num_gateways(),
            energy_scale,
            caps,
            eps_u: cfg.epsilon_time_s / cfg.slot_length_s,
        })
    }

    fn power_of(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| x * self.energy_scale / self.cfg.slot_length_s).collect()
    }

    fn v_of(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|&x| x * self.cfg.slot_length_s / self.energy_scale).collect()
    }

    fn u_of(&self, tau: &[Vec<f64>]) -> Vec<f64> {
        tau.iter().flatten().map(|&x| x / self.cfg.slot_length_s).collect()
    }

    fn tau_of(&self, u: &[f64]) -> Vec<Vec<f64>> {
        u.chunks(self.gateways).map(|row| row.iter().map(|&x| x * self.cfg.slot_length_s).collect()).collect()
    }

    /// `rates[t * N + n]` in bit/s; also the derivative in p when asked.
    fn rates(&self, v: &[f64], with_slope: bool) -> (Vec<f64>, Vec<f64>) {
        let snr_unit = self.cfg.noise_density_w_per_hz * self.cfg.bandwidth_hz;
        let mut r = Vec::with_capacity(self.slots * self.gateways);
        let mut dr = Vec::with_capacity(if with_slope { r.capacity() } else { 0 });
        for p in self.power_of(v) {
            let p = p.max(0.0);
            for gw in &self.cfg.gateways {
                r.push(rate_bits_per_sec(p, gw, self.cfg).unwrap_or(0.0));
                if with_slope {
                    let x = gw.gain / snr_unit;
                    dr.push(self.cfg.bandwidth_hz * x / ((1.0 + x * p) * LN_2));
                }
            }
        }
        (r, dr)
    }

    /// Per-gateway bits `R_n`.
    fn bits(&self, u: &[f64], rates: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.gateways];
        for (i, (&x, &r)) in u.iter().zip(rates).enumerate() {
            b[i % self.gateways] += x * self.cfg.slot_length_s * r;
        }
        b
    }

    /// `Σ log2 R_n`, or `None` where it is undefined.
    fn utility(&self, u: &[f64], rates: &[f64]) -> Option<f64> {
        let mut total = 0.0;
        for b in self.bits(u, rates) {
            if !(b > 0.0 && b.is_finite()) {
                return None;
            }
            total += b.log2();
        }
        Some(total)
    }

    fn grad_u(&self, u: &[f64], rates: &[f64]) -> Vec<f64> {
        let bits = self.bits(u, rates);
        let t_len = self.cfg.slot_length_s;
        rates.iter().enumerate().map(|(i, &r)| t_len * r / (bits[i % self.gateways] * LN_2)).collect()
    }

    fn grad_v(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let (rates, slopes) = self.rates(v, true);
        let bits = self.bits(u, &rates);
        let n = self.gateways;
        (0..self.slots)
            .map(|t| {
                let dp: f64 = (0..n).map(|g| u[t * n + g] * slopes[t * n + g] / (bits[g] * LN_2)).sum();
                dp * self.energy_scale
            })
            .collect()
    }

    fn project_u(&self, y: &[f64], cycles: usize) -> Vec<f64> {
        project_airtime(y, self.gateways, self.eps_u, cycles)
    }

    fn project_v(&self, y: &[f64], cycles: usize) -> Vec<f64> {
        project_causal(y, &self.caps, cycles)
    }

    fn check_input(&self, alloc: &Allocation, energies: &EnergySeries, what: &str) -> Result<()> {
        let rep = check_feasibility_with_tol(alloc, energies, self.cfg, ITERATE_TOL)?;
        match rep.violations.first() {
            Some(v) => Err(Error::invalid(format!("infeasible {what}: {v}"))),
            None => Ok(()),
        }
    }
}

/// Euclidean projection onto the probability simplex (sorting method).
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = y.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &x) in s.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn project_rows(y: &[f64], n: usize) -> Vec<f64> {
    y.chunks(n).flat_map(project_simplex).collect()
}

fn gateway_totals(u: &[f64], n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n];
    for (i, &x) in u.iter().enumerate() {
        s[i % n] += x;
    }
    s
}

/// Projection onto `{u ≥ 0, Σ_n u_tn = 1, Σ_t u_tn ≥ eps}` with `u` laid
/// out slot-major. The floor constraints are only brought in (via Dykstra)
/// when the plain simplex projection violates them.
pub fn project_airtime(y: &[f64], n: usize, eps: f64, cycles: usize) -> Vec<f64> {
    let k = y.len() / n;
    let mut x = project_rows(y, n);
    if eps <= 0.0 || gateway_totals(&x, n).iter().all(|&s| s >= eps) {
        return x;
    }
    let floor = |z: &[f64]| {
        let totals = gateway_totals(z, n);
        z.iter().enumerate().map(|(i, &v)| v + ((eps - totals[i % n]) / k as f64).max(0.0)).collect::<Vec<_>>()
    };
    let mut x_cur = y.to_vec();
    let mut p = vec![0.0; y.len()];
    let mut q = vec![0.0; y.len()];
    for _ in 0..cycles {
        let a_in: Vec<f64> = x_cur.iter().zip(&p).map(|(a, b)| a + b).collect();
        let a = project_rows(&a_in, n);
        p = a_in.iter().zip(&a).map(|(s, t)| s - t).collect();
        let b_in: Vec<f64> = a.iter().zip(&q).map(|(a, b)| a + b).collect();
        let b = floor(&b_in);
        q = b_in.iter().zip(&b).map(|(s, t)| s - t).collect();
        let change = b.iter().zip(&x_cur).map(|(s, t)| (s - t).abs()).fold(0.0, f64::max);
        x_cur = b;
        if change < 1e-15 {
            break;
        }
    }
    x = project_rows(&x_cur, n);
    // close any remaining shortfall by moving airtime from the busiest gateway
    let totals = gateway_totals(&x, n);
    for g in 0..n {
        let mut short = eps - totals[g];
        for t in 0..k {
            if short <= 0.0 {
                break;
            }
            let row = &mut x[t * n..(t + 1) * n];
            let (donor, &amount) = row
                .iter()
                .enumerate()
                .filter(|&(h, _)| h != g)
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("at least two gateways when a floor binds");
            let moved = short.min(amount);
            row[donor] -= moved;
            row[g] += moved;
            short -= moved;
        }
    }
    x
}

/// Projection onto `{v ≥ 0, Σ_{i≤t} v_i ≤ caps[t]}` by cyclic Dykstra over
/// the 2K half-spaces, followed by a forward pass that removes any residual
/// infeasibility. `caps` must be nondecreasing and nonnegative.
pub fn project_causal(y: &[f64], caps: &[f64], cycles: usize) -> Vec<f64> {
    let k = y.len();
    let repair = |x: &mut [f64]| {
        let mut acc = 0.0;
        for t in 0..k {
            x[t] = x[t].clamp(0.0, (caps[t] - acc).max(0.0));
            acc += x[t];
        }
    };
    let feasible = |x: &[f64]| {
        let mut acc = 0.0;
        x.iter().zip(caps).all(|(&v, &c)| {
            acc += v;
            v >= 0.0 && acc <= c
        })
    };
    if feasible(y) {
        return y.to_vec();
    }
    let mut x = y.to_vec();
    let mut incr = vec![vec![0.0; k]; 2 * k];
    for _ in 0..cycles {
        let mut change: f64 = 0.0;
        for h in 0..2 * k {
            let z: Vec<f64> = x.iter().zip(&incr[h]).map(|(a, b)| a + b).collect();
            let mut proj = z.clone();
            if h < k {
                proj[h] = proj[h].max(0.0);
            } else {
                let t = h - k;
                let s: f64 = proj[..=t].iter().sum();
                if s > caps[t] {
                    let d = (s - caps[t]) / (t + 1) as f64;
                    proj[..=t].iter_mut().for_each(|v| *v -= d);
                }
            }
            for i in 0..k {
                incr[h][i] = z[i] - proj[i];
                change = change.max((proj[i] - x[i]).abs());
            }
            x = proj;
        }
        if change < 1e-15 {
            break;
        }
    }
    repair(&mut x);
    x
}

struct Ascent {
    x: Vec<f64>,
    value: f64,
    kkt: f64,
    iterations: usize,
}

/// Projected gradient ascent with Barzilai–Borwein trial steps and Armijo
/// backtracking along the projection arc. Every accepted step improves
/// `f`.
fn projected_ascent(
    x0: Vec<f64>,
    f: impl Fn(&[f64]) -> Option<f64>,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    proj: impl Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Ascent> {
    let residual = |x: &[f64], g: &[f64]| {
        let step: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
        proj(&step).iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let mut x = x0;
    let mut fx = f(&x).ok_or(Error::UtilityUndefined { gateway: 0 })?;
    let mut g = grad(&x);
    let mut alpha = 1.0;
    let mut kkt = residual(&x, &g);
    let mut it = 0;
    while it < max_iter && kkt > tol {
        it += 1;
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + a * gi).collect();
            let y = proj(&trial);
            let lin: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
            if let Some(fy) = f(&y) {
                if fy >= fx + ARMIJO_SLOPE * lin && fy >= fx {
                    accepted = Some((y, fy));
                    break;
                }
            }
            a *= BACKTRACK;
        }
        let Some((y, fy)) = accepted else { break };
        let gy = grad(&y);
        let s: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s.iter().zip(gy.iter().zip(&g)).map(|(si, (n, o))| si * (n - o)).sum();
        alpha = if sy < 0.0 && ss > 0.0 { (ss / -sy).clamp(1e-12, 1e12) } else { (a * 2.0).min(1e12) };
        let stalled = ss == 0.0;
        x = y;
        fx = fy;
        g = gy;
        kkt = residual(&x, &g);
        if stalled {
            break;
        }
    }
    Ok(Ascent { x, value: fx, kkt, iterations: it })
}

/// Maximises utility over airtime for a fixed power profile.
pub fn optimize_tau_given_p(
    power_w: &[f64],
    cfg: &SystemConfig,
    energies: &EnergySeries,
    tau_init: &[Vec<f64>],
    opts: &SolverOptions,
) -> Result<BlockSolution<Vec<Vec<f64>>>> {
    let prob = Problem::new(energies, cfg)?;
    let init = Allocation { power_w: power_w.to_vec(), time_s: tau_init.to_vec() };
    prob.check_input(&init, energies, "initial allocation")?;
    let (rates, _) = prob.rates(&prob.v_of(power_w), false);
    let r = projected_ascent(
        prob.u_of(tau_init),
        |u| prob.utility(u, &rates),
        |u| prob.grad_u(u, &rates),
        |y| prob.project_u(y, opts.dykstra_cycles),
        opts.kkt_tol,
        opts.max_inner_iterations,
    )?;
    Ok(BlockSolution { value: prob.tau_of(&r.x), utility: r.value, kkt_residual: r.kkt, iterations: r.iterations })
}

/// Maximises utility over the power profile for fixed airtime.
pub fn optimize_p_given_tau(
    tau: &[Vec<f64>],
    cfg: &SystemConfig,
    energies: &EnergySeries,
    p_init: &[f64],
    opts: &SolverOptions,
) -> Result<BlockSolution<Vec<f64>>> {
    let prob = Problem::new(energies, cfg)?;
    let init = Allocation { power_w: p_init.to_vec(), time_s: tau.to_vec() };
    prob.check_input(&init, energies, "initial allocation")?;
    let u = prob.u_of(tau);
    let r = projected_ascent(
        prob.project_v(&prob.v_of(p_init), opts.dykstra_cycles),
        |v| prob.utility(&u, &prob.rates(v, false).0),
        |v| prob.grad_v(&u, v),
        |y| prob.project_v(y, opts.dykstra_cycles),
        opts.kkt_tol,
        opts.max_inner_iterations,
    )?;
    Ok(BlockSolution { value: prob.power_of(&r.x), utility: r.value, kkt_residual: r.kkt, iterations: r.iterations })
}

/// Uniform airtime with the flat power profile.
pub fn default_init(energies: &EnergySeries, cfg: &SystemConfig) -> Result<Allocation> {
    energies.check_frame(cfg)?;
    Ok(Allocation::uniform_time(flat_profile(&energies.energies(), cfg.slot_length_s), cfg))
}

/// A random feasible allocation: Dirichlet(1) airtime in every slot and a
/// power profile spending a uniform fraction of what is available each slot.
pub fn random_init(energies: &EnergySeries, cfg: &SystemConfig, rng: &mut impl Rng) -> Result<Allocation> {
    energies.check_frame(cfg)?;
    let n = cfg.num_gateways();
    let t_len = cfg.slot_length_s;
    let mut time_s = Vec::with_capacity(energies.len());
    let mut power_w = Vec::with_capacity(energies.len());
    let mut available = 0.0;
    for e in &energies.entries {
        let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let s: f64 = w.iter().sum();
        time_s.push(w.iter().map(|x| x / s * t_len).collect());
        available += e.energy_j;
        let spend = available * rng.random::<f64>();
        available -= spend;
        power_w.push(spend / t_len);
    }
    Ok(Allocation { power_w, time_s })
}

fn utility_and_violation(alloc: &Allocation, energies: &EnergySeries, cfg: &SystemConfig) -> Result<BcdIteration> {
    let utility = crate::domain::utility_of_bits(&alloc.bits_per_gateway(cfg)?)?;
    let violation = check_feasibility_with_tol(alloc, energies, cfg, 0.0)?.max_violation;
    Ok(BcdIteration { utility, violation })
}

/// Alternates the two block maximisations from `init` (or the default
/// start when `init` is absent or leaves some gateway without bits).
pub fn bcd_solve(
    energies: &EnergySeries,
    cfg: &SystemConfig,
    init: Option<&Allocation>,
    opts: &SolverOptions,
) -> Result<BcdTrace> {
    let prob = Problem::new(energies, cfg)?;
    let mut alloc = match init {
        Some(a) => {
            prob.check_input(a, energies, "initial allocation")?;
            match utility_and_violation(a, energies, cfg) {
                Ok(_) => a.clone(),
                Err(Error::UtilityUndefined { .. }) => default_init(energies, cfg)?,
                Err(e) => return Err(e),
            }
        }
        None => default_init(energies, cfg)?,
    };
    let mut iterations = vec![utility_and_violation(&alloc, energies, cfg)?];
    let mut converged = false;
    for _ in 0..opts.max_sweeps {
        let before = iterations.last().expect("nonempty").utility;
        let tau = optimize_tau_given_p(&alloc.power_w, cfg, energies, &alloc.time_s, opts)?;
        let power = optimize_p_given_tau(&tau.value, cfg, energies, &alloc.power_w, opts)?;
        let next = Allocation { power_w: power.value, time_s: tau.value };
        let rec = utility_and_violation(&next, energies, cfg)?;
        if rec.utility < before {
            // rounding in the coordinate maps; keep the better iterate
            iterations.push(BcdIteration { utility: before, ..*iterations.last().expect("nonempty") });
            converged = true;
            break;
        }
        alloc = next;
        iterations.push(rec);
        if rec.utility - before < opts.sweep_tol {
            converged = true;
            break;
        }
    }
    Ok(BcdTrace { iterations, allocation: alloc, converged })
}

/// Runs `restarts` BCD solves and keeps the best. Restart 0 starts from the
/// default init, the rest from random feasible points; restart `i` draws
/// from stream `i` of a ChaCha8 generator seeded with `seed`.
pub fn bcd_best_of(
    energies: &EnergySeries,
    cfg: &SystemConfig,
    restarts: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<BcdTrace> {
    let mut best: Option<BcdTrace> = None;
    for i in 0..restarts.max(1) {
        let init = if i == 0 {
            default_init(energies, cfg)?
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            random_init(energies, cfg, &mut rng)?
        };
        let trace = bcd_solve(energies, cfg, Some(&init), opts)?;
        if best.as_ref().is_none_or(|b| trace.final_utility() > b.final_utility()) {
            best = Some(trace);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::check_feasibility;
    use crate::scheduler::ptf_offline;
    use proptest::prelude::*;

    fn cfg(k: usize, losses: &[f64]) -> SystemConfig {
        SystemConfig::reference().with_frame(k, losses).unwrap()
    }

    fn utility(alloc: &Allocation, c: &SystemConfig) -> f64 {
        crate::domain::utility_of_bits(&alloc.bits_per_gateway(c).unwrap()).unwrap()
    }

    fn rate(p: f64, c: &SystemConfig, g: usize) -> f64 {
        rate_bits_per_sec(p, &c.gateways[g], c).unwrap()
    }

    /// Exact airtime optimum for two gateways: gateway 0 takes the slots
    /// with the highest rate ratio, with at most one slot split.
    fn two_gateway_tau_oracle(power: &[f64], c: &SystemConfig) -> f64 {
        let t = c.slot_length_s;
        let a: Vec<f64> = power.iter().map(|&p| t * rate(p, c, 0)).collect();
        let b: Vec<f64> = power.iter().map(|&p| t * rate(p, c, 1)).collect();
        let mut order: Vec<usize> = (0..power.len()).collect();
        order.sort_by(|&i, &j| (a[j] * b[i]).total_cmp(&(a[i] * b[j])));
        let mut best = f64::NEG_INFINITY;
        for m in 0..order.len() {
            let big_a: f64 = order[..m].iter().map(|&i| a[i]).sum();
            let big_b: f64 = order[m + 1..].iter().map(|&i| b[i]).sum();
            let (am, bm) = (a[order[m]], b[order[m]]);
            let f = if am > 0.0 && bm > 0.0 {
                ((am * big_b + am * bm - bm * big_a) / (2.0 * am * bm)).clamp(0.0, 1.0)
            } else {
                0.5
            };
            let ua = big_a + f * am;
            let ub = big_b + (1.0 - f) * bm;
            if ua > 0.0 && ub > 0.0 {
                best = best.max(ua.log2() + ub.log2());
            }
        }
        best
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, 0.3, 0.3]);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn causal_projection_matches_closed_form() {
        let caps = [1.0, 1.0, 2.0];
        let p = project_causal(&[2.0, 0.0, 0.0], &caps, 10_000);
        assert!((p[0] - 1.0).abs() < 1e-9 && p[1].abs() < 1e-9 && p[2].abs() < 1e-9, "{p:?}");
        let p = project_causal(&[1.0, 1.0, 0.0], &caps, 10_000);
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9, "{p:?}");
    }

    #[test]
    fn airtime_floor_is_restored() {
        let u = project_airtime(&[1.0, 0.0, 1.0, 0.0], 2, 0.1, 10_000);
        let totals = gateway_totals(&u, 2);
        assert!(totals[1] >= 0.1 - 1e-12, "{u:?}");
        for row in u.chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12 && row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn tau_single_gateway_takes_every_slot() {
        let c = cfg(3, &[92.0]);
        let e = EnergySeries::measured(&[1000.0, 2000.0, 0.0]).unwrap();
        let init = vec![vec![c.slot_length_s]; 3];
        let r = optimize_tau_given_p(&[0.5, 0.5, 0.5], &c, &e, &init, &SolverOptions::default()).unwrap();
        assert!(r.value.iter().all(|row| row[0] == c.slot_length_s));
    }

    #[test]
    fn tau_symmetric_split() {
        let c = SystemConfig::new(1e7, 1e-19, 1800.0, 1, &[92.0, 92.0], 1e-9).unwrap();
        let e = EnergySeries::measured(&[1800.0]).unwrap();
        let init = vec![vec![1700.0, 100.0]];
        let r = optimize_tau_given_p(&[1.0], &c, &e, &init, &SolverOptions::default()).unwrap();
        assert!((r.value[0][0] - 900.0).abs() < 1e-3, "{:?}", r.value);
        assert!(r.kkt_residual <= 1e-6);
    }

    #[test]
    fn tau_matches_grid_search() {
        let c = cfg(2, &[78.0, 92.0]);
        let e = EnergySeries::measured(&[1800.0, 1800.0]).unwrap();
        let p = [1.0, 1.0];
        let t = c.slot_length_s;
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let (x, y) = (i as f64 / 200.0 * t, j as f64 / 200.0 * t);
                let a = Allocation { power_w: p.to_vec(), time_s: vec![vec![x, t - x], vec![y, t - y]] };
                if let Ok(u) = crate::domain::utility_of_bits(&a.bits_per_gateway(&c).unwrap()) {
                    grid_best = grid_best.max(u);
                }
            }
        }
        let init = vec![vec![t / 2.0; 2]; 2];
        let r = optimize_tau_given_p(&p, &c, &e, &init, &SolverOptions::default()).unwrap();
        let start = utility(&Allocation { power_w: p.to_vec(), time_s: init }, &c);
        assert!(r.utility >= start - 1e-12);
        assert!((r.utility - grid_best).abs() <= 1e-4, "{} vs {grid_best}", r.utility);
        assert!(r.kkt_residual <= 1e-6);
    }

    #[test]
    fn p_single_slot_spends_everything() {
        let c = cfg(1, &[78.0, 92.0]);
        let e = EnergySeries::measured(&[3600.0]).unwrap();
        let tau = vec![vec![900.0, 900.0]];
        let r = optimize_p_given_tau(&tau, &c, &e, &[0.1], &SolverOptions::default()).unwrap();
        assert!((r.value[0] - 2.0).abs() < 1e-9, "{:?}", r.value);
    }

    #[test]
    fn p_single_gateway_is_flat() {
        let c = cfg(2, &[92.0]);
        let e = EnergySeries::measured(&[3600.0, 0.0]).unwrap();
        let tau = vec![vec![1800.0]; 2];
        let r = optimize_p_given_tau(&tau, &c, &e, &[0.5, 0.0], &SolverOptions::default()).unwrap();
        let flat = flat_profile(&e.energies(), c.slot_length_s);
        for (a, b) in r.value.iter().zip(&flat) {
            assert!((a - b).abs() < 1e-6, "{:?} vs {flat:?}", r.value);
        }
    }

    #[test]
    fn p_matches_grid_search() {
        let c = cfg(2, &[78.0, 92.0]);
        let e = EnergySeries::measured(&[2500.0, 1100.0]).unwrap();
        let t = c.slot_length_s;
        let tau = vec![vec![1200.0, 600.0], vec![300.0, 1500.0]];
        let (c1, c2) = (2500.0, 3600.0);
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..=200 {
            let s1 = c1 * i as f64 / 200.0;
            for j in 0..=200 {
                let s2 = (c2 - s1) * j as f64 / 200.0;
                let a = Allocation { power_w: vec![s1 / t, s2 / t], time_s: tau.clone() };
                if let Ok(u) = crate::domain::utility_of_bits(&a.bits_per_gateway(&c).unwrap()) {
                    grid_best = grid_best.max(u);
                }
            }
        }
        let r = optimize_p_given_tau(&tau, &c, &e, &[0.1, 0.1], &SolverOptions::default()).unwrap();
        assert!(r.utility >= grid_best - 1e-4, "{} vs {grid_best}", r.utility);
        assert!(r.utility <= grid_best + 1e-4);
        assert!(r.kkt_residual <= 1e-6);
    }

    #[test]
    fn infeasible_init_is_rejected() {
        let c = cfg(2, &[78.0, 92.0]);
        let e = EnergySeries::measured(&[100.0, 0.0]).unwrap();
        let tau = vec![vec![900.0, 900.0]; 2];
        let err = optimize_p_given_tau(&tau, &c, &e, &[1.0, 1.0], &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let err = optimize_tau_given_p(&[0.01, 0.0], &c, &e, &vec![vec![100.0, 0.0]; 2], &SolverOptions::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn fixed_point_terminates_after_one_sweep() {
        let c = cfg(3, &[92.0]);
        let e = EnergySeries::measured(&[3000.0, 600.0, 0.0]).unwrap();
        let init = default_init(&e, &c).unwrap();
        let trace = bcd_solve(&e, &c, Some(&init), &SolverOptions::default()).unwrap();
        assert_eq!(trace.sweeps(), 1);
        for (a, b) in trace.allocation.power_w.iter().zip(&init.power_w) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn bcd_beats_ptf_and_is_monotone() {
        let c = cfg(4, &[78.0, 92.0]);
        let e = EnergySeries::measured(&[4000.0, 500.0, 9000.0, 0.0]).unwrap();
        let trace = bcd_solve(&e, &c, None, &SolverOptions::default()).unwrap();
        let ptf = ptf_offline(&e, &c).unwrap().utility().unwrap();
        assert!(trace.final_utility() >= ptf - 1e-9, "{} < {ptf}", trace.final_utility());
        for w in trace.iterations.windows(2) {
            assert!(w[1].utility >= w[0].utility - 1e-9);
        }
        assert!(trace.iterations.last().unwrap().violation <= 1e-7);
        assert!(check_feasibility(&trace.allocation, &e, &c).unwrap().is_feasible());
    }

    #[test]
    fn bcd_restarts_match_grid_oracle() {
        let c = cfg(3, &[78.0, 92.0]);
        let e = EnergySeries::measured(&[1500.0, 300.0, 2700.0]).unwrap();
        let t = c.slot_length_s;
        let caps = [1500.0, 1800.0, 4500.0];
        // full-spend power grid with zoom refinement, exact airtime per point
        let eval = |s1: f64, s2: f64| {
            if s1 < 0.0 || s1 > caps[0] || s2 < 0.0 || s1 + s2 > caps[1] {
                return f64::NEG_INFINITY;
            }
            two_gateway_tau_oracle(&[s1 / t, s2 / t, (caps[2] - s1 - s2) / t], &c)
        };
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let n = 60;
        for i in 0..=n {
            for j in 0..=n {
                let s1 = caps[0] * i as f64 / n as f64;
                let s2 = (caps[1] - s1) * j as f64 / n as f64;
                let v = eval(s1, s2);
                if v > best.0 {
                    best = (v, s1, s2);
                }
            }
        }
        let mut radius = caps[1] / n as f64;
        for _ in 0..40 {
            let (_, c1, c2) = best;
            for i in -10..=10 {
                for j in -10..=10 {
                    let s1 = c1 + radius * i as f64 / 10.0;
                    let s2 = c2 + radius * j as f64 / 10.0;
                    let v = eval(s1, s2);
                    if v > best.0 {
                        best = (v, s1, s2);
                    }
                }
            }
            radius *= 0.5;
        }
        let trace = bcd_best_of(&e, &c, 10, 7, &SolverOptions::default()).unwrap();
        assert!((trace.final_utility() - best.0).abs() <= 1e-3, "{} vs {}", trace.final_utility(), best.0);
    }

    #[test]
    fn restarts_are_deterministic() {
        let c = cfg(3, &[78.0, 92.0, 100.0]);
        let e = EnergySeries::measured(&[1500.0, 300.0, 2700.0]).unwrap();
        let a = bcd_best_of(&e, &c, 3, 11, &SolverOptions::default()).unwrap();
        let b = bcd_best_of(&e, &c, 3, 11, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_csv_header() {
        let c = cfg(2, &[92.0]);
        let e = EnergySeries::measured(&[900.0, 900.0]).unwrap();
        let trace = bcd_solve(&e, &c, None, &SolverOptions::default()).unwrap();
        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("iteration,utility,violation\n0,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn single_gateway_bcd_is_flat(e in prop::collection::vec(0.0f64..10_000.0, 2..6)) {
            prop_assume!(e[0] > 1.0);
            let c = cfg(e.len(), &[92.0]);
            let es = EnergySeries::measured(&e).unwrap();
            let trace = bcd_solve(&es, &c, None, &SolverOptions::default()).unwrap();
            let flat = flat_profile(&e, c.slot_length_s);
            for (a, b) in trace.allocation.power_w.iter().zip(&flat) {
                prop_assert!((a - b).abs() <= 1e-6, "{:?} vs {:?}", trace.allocation.power_w, flat);
            }
        }

        #[test]
        fn bcd_iterates_stay_feasible(e in prop::collection::vec(0.0f64..10_000.0, 2..5), seed in 0u64..1000) {
            prop_assume!(e[0] > 1.0);
            let c = cfg(e.len(), &[78.0, 92.0]);
            let es = EnergySeries::measured(&e).unwrap();
            let trace = bcd_best_of(&es, &c, 2, seed, &SolverOptions::default()).unwrap();
            for w in trace.iterations.windows(2) {
                prop_assert!(w[1].utility >= w[0].utility - 1e-9);
            }
            prop_assert!(trace.iterations.iter().all(|i| i.violation <= 1e-7));
        }
    }
}
