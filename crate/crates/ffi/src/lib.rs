//! C ABI over the `ptfon` core.
//!
//! Objects are opaque handles created by `*_new`/`*_from_*` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`PtfonStatus`]; on failure `ptfon_last_error_message` describes the
//! error for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ptfon::domain::{rate_bits_per_sec, EnergySeries, Schedule, SystemConfig};
use ptfon::metrics::jain_index;
use ptfon::predictor::{ssep_predict, KalmanState, NoiseVariances, WeightSet};
use ptfon::scheduler::{flat_power_allocation, ptf_offline, sg_tdma};
use ptfon::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtfonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    InsufficientHistory = 3,
    Parse = 4,
    Infeasible = 5,
    UtilityUndefined = 6,
    UndefinedFairness = 7,
    Io = 8,
    Internal = 9,
}

/// System configuration handle.
pub struct PtfonConfig(SystemConfig);

/// One frame's schedule.
pub struct PtfonSchedule(Schedule);

/// K-SEP filter state.
pub struct PtfonKalman(KalmanState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PtfonStatus {
    match e {
        Error::InvalidInput(_) | Error::Data(_) | Error::Gap { .. } | Error::SingularFit => PtfonStatus::InvalidInput,
        Error::InsufficientHistory { .. } => PtfonStatus::InsufficientHistory,
        Error::Parse { .. } | Error::Config { .. } | Error::Csv(_) | Error::Json(_) => PtfonStatus::Parse,
        Error::Infeasible(_) => PtfonStatus::Infeasible,
        Error::UtilityUndefined { .. } => PtfonStatus::UtilityUndefined,
        Error::UndefinedFairness => PtfonStatus::UndefinedFairness,
        Error::Io(_) => PtfonStatus::Io,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (PtfonStatus, String)>) -> PtfonStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtfonStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PtfonStatus::Internal
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (PtfonStatus, String)>;
}

impl<T> OrStatus<T> for ptfon::Result<T> {
    fn or_status(self) -> Result<T, (PtfonStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (PtfonStatus, String) {
    (PtfonStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PtfonStatus, String)> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (PtfonStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), (PtfonStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { out.write(v) };
    Ok(())
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn ptfon_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// The built-in reference configuration (48 × 30 min slots, three gateways).
#[no_mangle]
pub extern "C" fn ptfon_config_reference() -> *mut PtfonConfig {
    Box::into_raw(Box::new(PtfonConfig(SystemConfig::reference())))
}

/// # Safety
/// `path_loss_db` must point to `gateways` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_config_new(
    bandwidth_hz: f64,
    noise_density_w_per_hz: f64,
    slot_length_s: f64,
    slots_per_frame: usize,
    path_loss_db: *const f64,
    gateways: usize,
    epsilon_time_s: f64,
    out: *mut *mut PtfonConfig,
) -> PtfonStatus {
    guard(|| {
        let losses = unsafe { slice(path_loss_db, gateways, "path_loss_db") }?;
        let cfg = SystemConfig::new(bandwidth_hz, noise_density_w_per_hz, slot_length_s, slots_per_frame, losses, epsilon_time_s)
            .or_status()?;
        unsafe { write(out, Box::into_raw(Box::new(PtfonConfig(cfg)))) }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_config_from_file(path: *const c_char, out: *mut *mut PtfonConfig) -> PtfonStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| (PtfonStatus::InvalidInput, "path is not UTF-8".to_string()))?;
        let cfg = SystemConfig::from_file(path).map_err(|e| match e {
            Error::InvalidInput(m) => (PtfonStatus::Parse, format!("{path}: {m}")),
            other => (status_of(&other), other.to_string()),
        })?;
        unsafe { write(out, Box::into_raw(Box::new(PtfonConfig(cfg)))) }
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ptfon_config_free(cfg: *mut PtfonConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Zero for a null handle.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ptfon_config_gateways(cfg: *const PtfonConfig) -> usize {
    unsafe { cfg.as_ref() }.map_or(0, |c| c.0.num_gateways())
}

/// Zero for a null handle.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ptfon_config_slots_per_frame(cfg: *const PtfonConfig) -> usize {
    unsafe { cfg.as_ref() }.map_or(0, |c| c.0.slots_per_frame)
}

/// Achievable rate (bit/s) to `gateway` at `power_w`.
///
/// # Safety
/// `cfg` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_rate(cfg: *const PtfonConfig, gateway: usize, power_w: f64, out: *mut f64) -> PtfonStatus {
    guard(|| {
        let cfg = &unsafe { as_ref(cfg, "cfg") }?.0;
        let gw = cfg
            .gateways
            .get(gateway)
            .ok_or_else(|| (PtfonStatus::InvalidInput, format!("no gateway {gateway}")))?;
        let r = rate_bits_per_sec(power_w, gw, cfg).or_status()?;
        unsafe { write(out, r) }
    })
}

unsafe fn frame<'a>(
    cfg: *const PtfonConfig,
    energies_j: *const f64,
    len: usize,
) -> Result<(&'a SystemConfig, EnergySeries), (PtfonStatus, String)> {
    let cfg = &unsafe { as_ref(cfg, "cfg") }?.0;
    let e = unsafe { slice(energies_j, len, "energies_j") }?;
    Ok((cfg, EnergySeries::measured(e).or_status()?))
}

/// Flat causal power profile; writes `len` watts to `power_w`.
///
/// # Safety
/// `energies_j` and `power_w` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ptfon_flat_power(
    cfg: *const PtfonConfig,
    energies_j: *const f64,
    len: usize,
    power_w: *mut f64,
) -> PtfonStatus {
    guard(|| {
        let (cfg, e) = unsafe { frame(cfg, energies_j, len) }?;
        let p = flat_power_allocation(&e, cfg).or_status()?;
        if power_w.is_null() {
            return Err(null("power_w"));
        }
        unsafe { ptr::copy_nonoverlapping(p.as_ptr(), power_w, p.len()) };
        Ok(())
    })
}

unsafe fn schedule_with(
    cfg: *const PtfonConfig,
    energies_j: *const f64,
    len: usize,
    out: *mut *mut PtfonSchedule,
    algo: fn(&EnergySeries, &SystemConfig) -> ptfon::Result<Schedule>,
) -> PtfonStatus {
    guard(|| {
        let (cfg, e) = unsafe { frame(cfg, energies_j, len) }?;
        let s = algo(&e, cfg).or_status()?;
        unsafe { write(out, Box::into_raw(Box::new(PtfonSchedule(s)))) }
    })
}

/// Offline PTF over one frame of known harvests.
///
/// # Safety
/// `energies_j` must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_ptf(
    cfg: *const PtfonConfig,
    energies_j: *const f64,
    len: usize,
    out: *mut *mut PtfonSchedule,
) -> PtfonStatus {
    unsafe { schedule_with(cfg, energies_j, len, out, ptf_offline) }
}

/// SG+TDMA over one frame.
///
/// # Safety
/// As for [`ptfon_schedule_ptf`].
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_sgtdma(
    cfg: *const PtfonConfig,
    energies_j: *const f64,
    len: usize,
    out: *mut *mut PtfonSchedule,
) -> PtfonStatus {
    unsafe { schedule_with(cfg, energies_j, len, out, sg_tdma) }
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_free(s: *mut PtfonSchedule) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Zero for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_slots(s: *const PtfonSchedule) -> usize {
    unsafe { s.as_ref() }.map_or(0, |s| s.0.allocation.slots())
}

/// Zero for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_gateways(s: *const PtfonSchedule) -> usize {
    unsafe { s.as_ref() }.map_or(0, |s| s.0.bits_per_gateway.len())
}

/// # Safety
/// `s` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_power(s: *const PtfonSchedule, slot: usize, out: *mut f64) -> PtfonStatus {
    guard(|| {
        let s = &unsafe { as_ref(s, "schedule") }?.0;
        let p = *s.allocation.power_w.get(slot).ok_or_else(|| (PtfonStatus::InvalidInput, format!("no slot {slot}")))?;
        unsafe { write(out, p) }
    })
}

/// Gateway owning `slot`, or -1 when the slot is shared.
///
/// # Safety
/// `s` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_gateway(s: *const PtfonSchedule, slot: usize, out: *mut i64) -> PtfonStatus {
    guard(|| {
        let s = &unsafe { as_ref(s, "schedule") }?.0;
        let g = s.assigned_gateway.get(slot).ok_or_else(|| (PtfonStatus::InvalidInput, format!("no slot {slot}")))?;
        unsafe { write(out, g.map_or(-1, |g| g as i64)) }
    })
}

/// Airtime (s) of `gateway` in `slot`.
///
/// # Safety
/// `s` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_time(
    s: *const PtfonSchedule,
    slot: usize,
    gateway: usize,
    out: *mut f64,
) -> PtfonStatus {
    guard(|| {
        let s = &unsafe { as_ref(s, "schedule") }?.0;
        let t = s
            .allocation
            .time_s
            .get(slot)
            .and_then(|row| row.get(gateway))
            .ok_or_else(|| (PtfonStatus::InvalidInput, format!("no entry ({slot}, {gateway})")))?;
        unsafe { write(out, *t) }
    })
}

/// # Safety
/// `s` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_gateway_bits(s: *const PtfonSchedule, gateway: usize, out: *mut f64) -> PtfonStatus {
    guard(|| {
        let s = &unsafe { as_ref(s, "schedule") }?.0;
        let b = *s.bits_per_gateway.get(gateway).ok_or_else(|| (PtfonStatus::InvalidInput, format!("no gateway {gateway}")))?;
        unsafe { write(out, b) }
    })
}

/// `Σ log2 R_n`; fails with `UtilityUndefined` if some gateway got no bits.
///
/// # Safety
/// `s` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_schedule_utility(s: *const PtfonSchedule, out: *mut f64) -> PtfonStatus {
    guard(|| {
        let s = &unsafe { as_ref(s, "schedule") }?.0;
        let u = s.utility().or_status()?;
        unsafe { write(out, u) }
    })
}

/// Starts a K-SEP filter from the 48 harvests (J, oldest first) preceding
/// the next measurement.
///
/// # Safety
/// `previous_day_j` must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_kalman_new(
    previous_day_j: *const f64,
    len: usize,
    last_irradiation: f64,
    alpha1: f64,
    alpha2: f64,
    beta1: f64,
    sigma_w_sq: f64,
    sigma_v_sq: f64,
    next_phase: usize,
    out: *mut *mut PtfonKalman,
) -> PtfonStatus {
    guard(|| {
        let prev = unsafe { slice(previous_day_j, len, "previous_day_j") }?;
        let weights = WeightSet::new(alpha1, alpha2, beta1);
        let noise = NoiseVariances { sigma_w_sq, sigma_v_sq };
        let state = KalmanState::from_previous_day(prev, last_irradiation, weights, noise, next_phase).or_status()?;
        unsafe { write(out, Box::into_raw(Box::new(PtfonKalman(state)))) }
    })
}

/// Measures `z_j`, propagates with `y`, writes the clamped next prediction.
///
/// # Safety
/// `k` and `prediction_j` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_kalman_step(k: *mut PtfonKalman, y: f64, z_j: f64, prediction_j: *mut f64) -> PtfonStatus {
    guard(|| {
        let k = unsafe { k.as_mut() }.ok_or_else(|| null("kalman"))?;
        let (pred, _) = k.0.step_in_place(y, z_j).or_status()?;
        unsafe { write(prediction_j, pred) }
    })
}

/// # Safety
/// `k` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ptfon_kalman_free(k: *mut PtfonKalman) {
    if !k.is_null() {
        drop(unsafe { Box::from_raw(k) });
    }
}

/// # Safety
/// `x` must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_jain_index(x: *const f64, len: usize, out: *mut f64) -> PtfonStatus {
    guard(|| {
        let x = unsafe { slice(x, len, "x") }?;
        let j = jain_index(x).or_status()?;
        unsafe { write(out, j) }
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptfon_ssep_predict(day_minus_1_j: f64, day_minus_2_j: f64, out: *mut f64) -> PtfonStatus {
    guard(|| {
        let v = ssep_predict(day_minus_1_j, day_minus_2_j).or_status()?;
        unsafe { write(out, v) }
    })
}
