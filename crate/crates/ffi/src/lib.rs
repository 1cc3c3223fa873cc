//! C ABI over the `mlmc-pimd` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or by an
//! estimator call and released with the matching `*_free`. Every fallible
//! function returns an [`MlmcStatus`]; on failure the message is available
//! from [`mlmc_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mlmc_pimd::dynamics::{pimdsh_estimate, HopConfig, LangevinConfig};
use mlmc_pimd::estimators::{
    allocation_plan, equal_plan, run_plan, EstimateReport, Method, SamplerConfig,
};
use mlmc_pimd::model::TestCase;
use mlmc_pimd::oracle::{
    pseudospectral_reference, quadrature_truncated_average, QuadratureGrid, SpectralGrid,
};
use mlmc_pimd::polymer::LevelEvaluator;
use mlmc_pimd::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Model = 3,
    Polymer = 4,
    Dynamics = 5,
    Estimator = 6,
    Oracle = 7,
    Config = 8,
    Io = 9,
    Panic = 10,
}

/// Which level allocation [`mlmc_estimate`] uses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlmcMethod {
    Rm = 0,
    Mlmc = 1,
}

/// How level sums are evaluated.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlmcLevelSum {
    Enumerate = 0,
    Transfer = 1,
}

/// Langevin and level-sum settings.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcSamplerOptions {
    pub gamma: f64,
    pub dt: f64,
    pub n_burn: u64,
    pub level_sum: MlmcLevelSum,
}

/// One level of a report.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MlmcLevel {
    pub k: usize,
    pub count: u64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub seed_a: u64,
    pub seed_b: u64,
}

/// Opaque test case handle.
pub struct MlmcTestCase(TestCase);

/// Opaque estimate report handle.
pub struct MlmcReport(EstimateReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MlmcStatus {
    match e {
        Error::Model(_) => MlmcStatus::Model,
        Error::Domain(_) => MlmcStatus::Polymer,
        Error::Trajectory { .. } | Error::HopConfig(_) => MlmcStatus::Dynamics,
        Error::SubEstimator { .. } | Error::Estimator(_) => MlmcStatus::Estimator,
        Error::Oracle(_) => MlmcStatus::Oracle,
        Error::Config(_) => MlmcStatus::Config,
        Error::Io { .. } | Error::Csv(_) => MlmcStatus::Io,
    }
}

enum Failure {
    Status(MlmcStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MlmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MlmcStatus::Ok
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside mlmc-pimd".into());
            MlmcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(MlmcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(MlmcStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn sampler(opts: &MlmcSamplerOptions) -> SamplerConfig {
    SamplerConfig {
        langevin: LangevinConfig {
            gamma: opts.gamma,
            dt: opts.dt,
            n_burn: opts.n_burn,
            seed: 0,
        },
        evaluator: match opts.level_sum {
            MlmcLevelSum::Enumerate => LevelEvaluator::Enumerate,
            MlmcLevelSum::Transfer => LevelEvaluator::Transfer,
        },
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mlmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn mlmc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Defaults: `gamma = 1`, `dt = 0.005`, `n_burn = 100000`, enumeration.
#[no_mangle]
pub extern "C" fn mlmc_sampler_options_default() -> MlmcSamplerOptions {
    let d = LangevinConfig::default();
    MlmcSamplerOptions {
        gamma: d.gamma,
        dt: d.dt,
        n_burn: d.n_burn,
        level_sum: MlmcLevelSum::Enumerate,
    }
}

/// Looks up a built-in model and observable by name, e.g.
/// `"coupled-wells"` and `"mixed-trig"`.
///
/// # Safety
/// `model` and `observable` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mlmc_test_case_new(
    model: *const c_char,
    observable: *const c_char,
    beta: f64,
    mass: f64,
    out: *mut *mut MlmcTestCase,
) -> MlmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = str_arg(model, "model")?;
        let o = str_arg(observable, "observable")?;
        let case = TestCase::named(m, o, beta, mass)?;
        *out = Box::into_raw(Box::new(MlmcTestCase(case)));
        Ok(())
    })
}

/// # Safety
/// `case` must come from [`mlmc_test_case_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mlmc_test_case_free(case: *mut MlmcTestCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// Counts per level for `method`; `counts` must hold `k0 + 1` entries.
///
/// # Safety
/// `counts` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn mlmc_allocation_plan(
    method: MlmcMethod,
    beads: usize,
    k0: usize,
    n_total: u64,
    counts: *mut u64,
    len: usize,
) -> MlmcStatus {
    guard(|| {
        if counts.is_null() {
            return Err(null("counts"));
        }
        if len < k0 + 1 {
            return Err(invalid(format!(
                "counts holds {len} entries, need {}",
                k0 + 1
            )));
        }
        let plan = match method {
            MlmcMethod::Rm => equal_plan(beads, k0, n_total)?,
            MlmcMethod::Mlmc => allocation_plan(beads, k0, n_total)?,
        };
        std::slice::from_raw_parts_mut(counts, k0 + 1).copy_from_slice(&plan.counts);
        Ok(())
    })
}

/// Runs RM-PIMD or MLMC-PIMD. Seeds derive from `(seed, replicate)`.
///
/// # Safety
/// `case` and `options` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlmc_estimate(
    case: *const MlmcTestCase,
    method: MlmcMethod,
    beads: usize,
    k0: usize,
    n_total: u64,
    options: *const MlmcSamplerOptions,
    seed: u64,
    replicate: u64,
    out: *mut *mut MlmcReport,
) -> MlmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let case = &ref_arg(case, "case")?.0;
        let opts = ref_arg(options, "options")?;
        let (plan, m) = match method {
            MlmcMethod::Rm => (equal_plan(beads, k0, n_total)?, Method::Rm),
            MlmcMethod::Mlmc => (allocation_plan(beads, k0, n_total)?, Method::Mlmc),
        };
        let report = run_plan(case, m, &plan, &sampler(opts), seed, replicate)?;
        *out = Box::into_raw(Box::new(MlmcReport(report)));
        Ok(())
    })
}

/// Time average of `W_N[A]` along one PIMD-SH trajectory of `n_samples`
/// steps after burn-in.
///
/// # Safety
/// `case` and `options` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlmc_pimdsh_estimate(
    case: *const MlmcTestCase,
    beads: usize,
    eta: f64,
    options: *const MlmcSamplerOptions,
    n_samples: u64,
    seed: u64,
    out: *mut *mut MlmcReport,
) -> MlmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let case = &ref_arg(case, "case")?.0;
        let opts = ref_arg(options, "options")?;
        let hop = HopConfig {
            eta,
            base: sampler(opts).langevin.with_seed(seed),
        };
        hop.validate()?;
        let report = pimdsh_estimate(case, beads, &hop, n_samples)?;
        *out = Box::into_raw(Box::new(MlmcReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must be valid and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn mlmc_report_estimate(
    report: *const MlmcReport,
    value: *mut f64,
) -> MlmcStatus {
    guard(|| {
        *out_arg(value, "value")? = ref_arg(report, "report")?.0.estimate;
        Ok(())
    })
}

/// Seconds spent producing the report.
///
/// # Safety
/// `report` must be valid and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn mlmc_report_wall_clock(
    report: *const MlmcReport,
    value: *mut f64,
) -> MlmcStatus {
    guard(|| {
        *out_arg(value, "value")? = ref_arg(report, "report")?.0.wall_clock;
        Ok(())
    })
}

/// Number of levels in the report; 0 for PIMD-SH or a null handle.
///
/// # Safety
/// `report` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn mlmc_report_level_count(report: *const MlmcReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.per_level.len())
}

/// # Safety
/// `report` must be valid and `level` writable.
#[no_mangle]
pub unsafe extern "C" fn mlmc_report_level(
    report: *const MlmcReport,
    k: usize,
    level: *mut MlmcLevel,
) -> MlmcStatus {
    guard(|| {
        let r = &ref_arg(report, "report")?.0;
        let out = out_arg(level, "level")?;
        let l = r.per_level.get(k).ok_or_else(|| {
            invalid(format!(
                "level {k} out of range ({} levels)",
                r.per_level.len()
            ))
        })?;
        *out = MlmcLevel {
            k: l.k,
            count: l.count,
            mean_a: l.mean_a,
            mean_b: l.mean_b,
            var_a: l.var_a,
            var_b: l.var_b,
            seed_a: l.seed_a,
            seed_b: l.seed_b,
        };
        Ok(())
    })
}

/// # Safety
/// `report` must come from an estimator call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mlmc_report_free(report: *mut MlmcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Exact thermal average on a Fourier grid of `n_points` over
/// `[-half_width, half_width]`.
///
/// # Safety
/// `case` must be valid and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn mlmc_pseudospectral_reference(
    case: *const MlmcTestCase,
    n_points: usize,
    half_width: f64,
    value: *mut f64,
) -> MlmcStatus {
    guard(|| {
        let out = out_arg(value, "value")?;
        let case = &ref_arg(case, "case")?.0;
        let grid = SpectralGrid::new(n_points, half_width)?;
        *out = pseudospectral_reference(case, &grid)?;
        Ok(())
    })
}

/// Truncated average `I_{2k0}` by quadrature for `beads <= 4`.
///
/// # Safety
/// `case` must be valid and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn mlmc_quadrature_truncated_average(
    case: *const MlmcTestCase,
    beads: usize,
    k0: usize,
    n_points: usize,
    half_width: f64,
    value: *mut f64,
) -> MlmcStatus {
    guard(|| {
        let out = out_arg(value, "value")?;
        let case = &ref_arg(case, "case")?.0;
        let grid = QuadratureGrid {
            n_points,
            half_width,
            ..Default::default()
        };
        *out = quadrature_truncated_average(case, beads, k0, &grid)?;
        Ok(())
    })
}
