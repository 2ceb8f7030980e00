//! Core types of the downlink model: radio configuration, per-slot energy
//! series, power/time allocations and the schedules built from them.
//!
//! All quantities are SI internally (J, s, W, Hz, bits). Kilojoules only
//! appear at file boundaries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default slot (sub-hour) length in seconds.
pub const DEFAULT_SLOT_LENGTH_S: f64 = 1800.0;
/// Default number of slots per 24 h frame.
pub const DEFAULT_SLOTS_PER_FRAME: usize = 48;
/// Default lower bound on per-gateway time within a frame.
pub const DEFAULT_EPSILON_TIME_S: f64 = 1e-9;

/// Relative slack used by [`check_feasibility`].
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayChannel {
    pub id: usize,
    pub path_loss_db: f64,
    pub gain: f64,
}

impl GatewayChannel {
    pub fn from_path_loss_db(id: usize, path_loss_db: f64) -> Result<Self> {
        if !path_loss_db.is_finite() || path_loss_db < 0.0 {
            return Err(Error::invalid(format!(
                "gateway {id}: path loss must be finite and >= 0 dB, got {path_loss_db}"
            )));
        }
        Ok(Self {
            id,
            path_loss_db,
            gain: 10f64.powf(-path_loss_db / 10.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub bandwidth_hz: f64,
    pub noise_density_w_per_hz: f64,
    pub slot_length_s: f64,
    pub slots_per_frame: usize,
    pub gateways: Vec<GatewayChannel>,
    pub epsilon_time_s: f64,
}

impl SystemConfig {
    pub fn new(
        bandwidth_hz: f64,
        noise_density_w_per_hz: f64,
        slot_length_s: f64,
        slots_per_frame: usize,
        path_losses_db: &[f64],
        epsilon_time_s: f64,
    ) -> Result<Self> {
        let gateways = path_losses_db
            .iter()
            .enumerate()
            .map(|(id, &db)| GatewayChannel::from_path_loss_db(id, db))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            bandwidth_hz,
            noise_density_w_per_hz,
            slot_length_s,
            slots_per_frame,
            gateways,
            epsilon_time_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// W = 10 MHz, N_o = 1e-19 W/Hz, 30 min slots, 48 slots, gateways at
    /// 78 / 92 / 100 dB.
    pub fn reference() -> Self {
        Self::new(
            1e7,
            1e-19,
            DEFAULT_SLOT_LENGTH_S,
            DEFAULT_SLOTS_PER_FRAME,
            &[78.0, 92.0, 100.0],
            DEFAULT_EPSILON_TIME_S,
        )
        .expect("reference configuration is valid")
    }

    /// Same radio constants with a different frame length and gateway set.
    pub fn with_frame(&self, slots_per_frame: usize, path_losses_db: &[f64]) -> Result<Self> {
        Self::new(
            self.bandwidth_hz,
            self.noise_density_w_per_hz,
            self.slot_length_s,
            slots_per_frame,
            path_losses_db,
            self.epsilon_time_s,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_density", self.noise_density_w_per_hz),
            ("slot_length_s", self.slot_length_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.epsilon_time_s.is_finite() && self.epsilon_time_s >= 0.0) {
            return Err(Error::invalid("epsilon_time_s must be finite and >= 0"));
        }
        if self.slots_per_frame == 0 {
            return Err(Error::invalid("slots_per_frame must be >= 1"));
        }
        if self.gateways.is_empty() {
            return Err(Error::invalid("at least one gateway is required"));
        }
        for gw in &self.gateways {
            if !(gw.gain > 0.0 && gw.gain <= 1.0) {
                return Err(Error::invalid(format!("gateway {}: gain {} not in (0, 1]", gw.id, gw.gain)));
            }
            let expected = 10f64.powf(-gw.path_loss_db / 10.0);
            if ((gw.gain - expected) / expected).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "gateway {}: gain inconsistent with path loss",
                    gw.id
                )));
            }
        }
        Ok(())
    }

    pub fn num_gateways(&self) -> usize {
        self.gateways.len()
    }

    /// Index of the gateway with the largest channel gain (lowest index on ties).
    pub fn best_channel(&self) -> usize {
        let mut best = 0;
        for (n, gw) in self.gateways.iter().enumerate() {
            if gw.gain > self.gateways[best].gain {
                best = n;
            }
        }
        best
    }

    /// Parses the plain-text `key = value` format. `#` starts a comment.
    ///
    /// Recognised keys: `bandwidth_hz`, `noise_density`, `slot_length_s`,
    /// `slots_per_frame`, `gateway_path_loss_db` (comma list),
    /// `epsilon_time_s`. Missing keys fall back to [`SystemConfig::reference`].
    pub fn parse(text: &str) -> Result<Self> {
        let base = Self::reference();
        let mut bandwidth = base.bandwidth_hz;
        let mut noise = base.noise_density_w_per_hz;
        let mut slot = base.slot_length_s;
        let mut slots = base.slots_per_frame;
        let mut eps = base.epsilon_time_s;
        let mut losses: Vec<f64> = base.gateways.iter().map(|g| g.path_loss_db).collect();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::invalid(format!("config line {}: bad {what} '{value}'", lineno + 1));
            match key {
                "bandwidth_hz" => bandwidth = value.parse().map_err(|_| bad(key))?,
                "noise_density" | "noise_density_w_per_hz" => noise = value.parse().map_err(|_| bad(key))?,
                "slot_length_s" => slot = value.parse().map_err(|_| bad(key))?,
                "slots_per_frame" => slots = value.parse().map_err(|_| bad(key))?,
                "epsilon_time_s" => eps = value.parse().map_err(|_| bad(key))?,
                "gateway_path_loss_db" => {
                    losses = value
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(key))?;
                }
                other => {
                    return Err(Error::invalid(format!(
                        "config line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(bandwidth, noise, slot, slots, &losses, eps)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_config_string(&self) -> String {
        let losses: Vec<String> = self.gateways.iter().map(|g| g.path_loss_db.to_string()).collect();
        format!(
            "bandwidth_hz = {}\nnoise_density = {:e}\nslot_length_s = {}\nslots_per_frame = {}\ngateway_path_loss_db = {}\nepsilon_time_s = {:e}\n",
            self.bandwidth_hz,
            self.noise_density_w_per_hz,
            self.slot_length_s,
            self.slots_per_frame,
            losses.join(", "),
            self.epsilon_time_s
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Measured,
    Ksep,
    Ssep,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Measured => "measured",
            Provenance::Ksep => "ksep",
            Provenance::Ssep => "ssep",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEntry {
    pub energy_j: f64,
    pub provenance: Provenance,
}

/// Per-slot harvested energy, each entry tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySeries {
    pub entries: Vec<EnergyEntry>,
    /// Epoch seconds of the first slot.
    pub origin: i64,
}

impl EnergySeries {
    pub fn new(entries: Vec<EnergyEntry>, origin: i64) -> Result<Self> {
        for (t, e) in entries.iter().enumerate() {
            if !(e.energy_j.is_finite() && e.energy_j >= 0.0) {
                return Err(Error::invalid(format!("slot {t}: energy {} must be finite and >= 0", e.energy_j)));
            }
        }
        Ok(Self { entries, origin })
    }

    /// All entries tagged [`Provenance::Measured`].
    pub fn measured(energies_j: &[f64]) -> Result<Self> {
        Self::new(
            energies_j
                .iter()
                .map(|&energy_j| EnergyEntry { energy_j, provenance: Provenance::Measured })
                .collect(),
            0,
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.energy_j).collect()
    }

    pub fn total_j(&self) -> f64 {
        self.entries.iter().map(|e| e.energy_j).sum()
    }

    pub fn check_frame(&self, cfg: &SystemConfig) -> Result<()> {
        if self.len() != cfg.slots_per_frame {
            return Err(Error::invalid(format!(
                "energy series has {} entries, frame has {} slots",
                self.len(),
                cfg.slots_per_frame
            )));
        }
        Ok(())
    }
}

/// Per-slot power `p_t` and per-slot, per-gateway airtime `tau[t][n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub power_w: Vec<f64>,
    pub time_s: Vec<Vec<f64>>,
}

impl Allocation {
    /// Whole slot `t` goes to `assigned[t]`.
    pub fn whole_slots(power_w: Vec<f64>, assigned: &[usize], cfg: &SystemConfig) -> Self {
        let n = cfg.num_gateways();
        let time_s = assigned
            .iter()
            .map(|&g| {
                let mut row = vec![0.0; n];
                row[g] = cfg.slot_length_s;
                row
            })
            .collect();
        Self { power_w, time_s }
    }

    /// Each slot split evenly across gateways.
    pub fn uniform_time(power_w: Vec<f64>, cfg: &SystemConfig) -> Self {
        let n = cfg.num_gateways();
        let share = cfg.slot_length_s / n as f64;
        let time_s = vec![vec![share; n]; power_w.len()];
        Self { power_w, time_s }
    }

    pub fn slots(&self) -> usize {
        self.power_w.len()
    }

    /// Bits delivered to each gateway over the frame.
    pub fn bits_per_gateway(&self, cfg: &SystemConfig) -> Result<Vec<f64>> {
        let mut bits = vec![0.0; cfg.num_gateways()];
        for (t, (&p, row)) in self.power_w.iter().zip(&self.time_s).enumerate() {
            if row.len() != cfg.num_gateways() {
                return Err(Error::invalid(format!("slot {t}: time row has wrong length")));
            }
            for (n, (&tau, gw)) in row.iter().zip(&cfg.gateways).enumerate() {
                bits[n] += tau * rate_bits_per_sec(p, gw, cfg)?;
            }
        }
        Ok(bits)
    }

    /// Bits delivered in each slot (summed over gateways).
    pub fn bits_per_slot(&self, cfg: &SystemConfig) -> Result<Vec<f64>> {
        self.power_w
            .iter()
            .zip(&self.time_s)
            .map(|(&p, row)| {
                row.iter()
                    .zip(&cfg.gateways)
                    .map(|(&tau, gw)| rate_bits_per_sec(p, gw, cfg).map(|r| tau * r))
                    .sum()
            })
            .collect()
    }
}

/// A frame's allocation with its per-slot gateway assignment and bit totals.
///
/// `assigned_gateway[t]` is `None` when slot `t` is time-shared between
/// several gateways (SG+TDMA, BCD); for whole-slot schedules it names the
/// gateway that received the slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub allocation: Allocation,
    pub assigned_gateway: Vec<Option<usize>>,
    pub bits_per_gateway: Vec<f64>,
}

impl Schedule {
    pub fn from_allocation(allocation: Allocation, cfg: &SystemConfig) -> Result<Self> {
        let assigned_gateway = allocation
            .time_s
            .iter()
            .map(|row| {
                let busy: Vec<usize> = (0..row.len()).filter(|&n| row[n] > 0.0).collect();
                (busy.len() == 1).then(|| busy[0])
            })
            .collect();
        let bits_per_gateway = allocation.bits_per_gateway(cfg)?;
        Ok(Self { allocation, assigned_gateway, bits_per_gateway })
    }

    pub fn total_bits(&self) -> f64 {
        self.bits_per_gateway.iter().sum()
    }

    pub fn utility(&self) -> Result<f64> {
        utility_of_bits(&self.bits_per_gateway)
    }

    /// CSV `slot,power_w,gateway,bits`; `gateway` is empty for shared slots.
    pub fn write_csv<W: std::io::Write>(&self, cfg: &SystemConfig, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "power_w", "gateway", "bits"])?;
        let per_slot = self.allocation.bits_per_slot(cfg)?;
        for (t, (&p, bits)) in self.allocation.power_w.iter().zip(per_slot).enumerate() {
            let gw = self.assigned_gateway[t].map(|g| g.to_string()).unwrap_or_default();
            w.write_record([t.to_string(), p.to_string(), gw, bits.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// AWGN capacity `W log2(1 + p g / (N_o W))` in bits/s.
pub fn rate_bits_per_sec(power_w: f64, gateway: &GatewayChannel, cfg: &SystemConfig) -> Result<f64> {
    if !(power_w.is_finite() && power_w >= 0.0) {
        return Err(Error::invalid(format!("power must be finite and >= 0, got {power_w}")));
    }
    let w = cfg.bandwidth_hz;
    let snr = power_w * gateway.gain / (cfg.noise_density_w_per_hz * w);
    Ok(w * snr.ln_1p() / std::f64::consts::LN_2)
}

/// `Σ_n log2(R_n)` over the frame's per-gateway bit totals.
pub fn frame_utility(schedule: &Schedule, cfg: &SystemConfig) -> Result<f64> {
    if schedule.bits_per_gateway.len() != cfg.num_gateways() {
        return Err(Error::invalid("schedule gateway count does not match configuration"));
    }
    utility_of_bits(&schedule.bits_per_gateway)
}

pub fn utility_of_bits(bits: &[f64]) -> Result<f64> {
    let mut u = 0.0;
    for (gateway, &b) in bits.iter().enumerate() {
        if !b.is_finite() || b < 0.0 {
            return Err(Error::invalid(format!("gateway {gateway}: bit total {b} is not a valid rate")));
        }
        if b == 0.0 {
            return Err(Error::UtilityUndefined { gateway });
        }
        u += b.log2();
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NegativePower { slot: usize, power_w: f64 },
    NegativeTime { slot: usize, gateway: usize, time_s: f64 },
    SlotTime { slot: usize, total_s: f64 },
    GatewayStarved { gateway: usize, total_s: f64 },
    Causality { slot: usize, spent_j: f64, harvested_j: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativePower { slot, power_w } => write!(f, "slot {slot}: negative power {power_w}"),
            Violation::NegativeTime { slot, gateway, time_s } => {
                write!(f, "slot {slot}, gateway {gateway}: negative time {time_s}")
            }
            Violation::SlotTime { slot, total_s } => write!(f, "slot {slot}: time allocations sum to {total_s}"),
            Violation::GatewayStarved { gateway, total_s } => {
                write!(f, "gateway {gateway}: only {total_s} s in the frame")
            }
            Violation::Causality { slot, spent_j, harvested_j } => write!(
                f,
                "slot {slot}: cumulative spend {spent_j} J exceeds cumulative harvest {harvested_j} J"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
    /// Largest violation, normalised by the slot length (time) or by the
    /// frame's harvest (energy). Zero when feasible.
    pub max_violation: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_feasibility(alloc: &Allocation, energies: &EnergySeries, cfg: &SystemConfig) -> Result<FeasibilityReport> {
    check_feasibility_with_tol(alloc, energies, cfg, FEASIBILITY_TOL)
}

/// Nonnegativity, per-slot time sums, the `ε` airtime floor and cumulative
/// energy causality at every slot boundary. `tol` is relative.
pub fn check_feasibility_with_tol(
    alloc: &Allocation,
    energies: &EnergySeries,
    cfg: &SystemConfig,
    tol: f64,
) -> Result<FeasibilityReport> {
    let k = energies.len();
    let n = cfg.num_gateways();
    if alloc.power_w.len() != k || alloc.time_s.len() != k || alloc.time_s.iter().any(|r| r.len() != n) {
        return Err(Error::invalid(format!(
            "allocation shape ({} powers, {} time rows) incompatible with {k} slots x {n} gateways",
            alloc.power_w.len(),
            alloc.time_s.len()
        )));
    }
    let t_len = cfg.slot_length_s;
    let energy_scale = energies.total_j().max(1.0);
    let mut report = FeasibilityReport::default();
    let note = |report: &mut FeasibilityReport, v: Violation, size: f64| {
        report.max_violation = report.max_violation.max(size);
        report.violations.push(v);
    };

    let mut per_gateway = vec![0.0; n];
    for t in 0..k {
        let p = alloc.power_w[t];
        if p < 0.0 || !p.is_finite() {
            note(&mut report, Violation::NegativePower { slot: t, power_w: p }, (-p * t_len) / energy_scale);
        }
        let mut total = 0.0;
        for (g, &tau) in alloc.time_s[t].iter().enumerate() {
            if tau < 0.0 || !tau.is_finite() {
                note(&mut report, Violation::NegativeTime { slot: t, gateway: g, time_s: tau }, -tau / t_len);
            }
            total += tau;
            per_gateway[g] += tau;
        }
        let dev = (total - t_len).abs() / t_len;
        if dev > tol || !dev.is_finite() {
            note(&mut report, Violation::SlotTime { slot: t, total_s: total }, dev);
        }
    }
    for (g, &total) in per_gateway.iter().enumerate() {
        let eps = cfg.epsilon_time_s;
        if eps > 0.0 && total < eps * (1.0 - tol) {
            let short = (eps - total) / eps;
            note(&mut report, Violation::GatewayStarved { gateway: g, total_s: total }, short);
        }
    }
    let mut spent = 0.0;
    let mut harvested = 0.0;
    for t in 0..k {
        spent += alloc.power_w[t] * t_len;
        harvested += energies.entries[t].energy_j;
        let excess = (spent - harvested) / energy_scale;
        if excess > tol {
            note(&mut report, Violation::Causality { slot: t, spent_j: spent, harvested_j: harvested }, excess);
        }
    }
    Ok(report)
}

/// Parses `"ptf"`-style algorithm selectors used by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Ptf,
    PtfOn,
    SgTdma,
    Bcd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ptf => "ptf",
            Algorithm::PtfOn => "ptfon",
            Algorithm::SgTdma => "sgtdma",
            Algorithm::Bcd => "bcd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ptf" => Ok(Algorithm::Ptf),
            "ptfon" | "ptf-on" => Ok(Algorithm::PtfOn),
            "sgtdma" | "sg+tdma" => Ok(Algorithm::SgTdma),
            "bcd" => Ok(Algorithm::Bcd),
            other => Err(Error::invalid(format!("unknown algorithm '{other}'"))),
        }
    }
}
