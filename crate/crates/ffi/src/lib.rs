//! C ABI over `isocg`.
//!
//! Every fallible function returns an [`IsocgStatus`]; on anything other than
//! `ISOCG_STATUS_OK` a message is kept per thread and can be copied out with
//! [`isocg_last_error`]. Panics never cross the boundary.
//!
//! Strings are NUL-terminated UTF-8. Matrices are dense row-major `n×n`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use isocg::fault::{BitDomain, FaultInjector, FaultPolicy};
use isocg::iso::{self, Composition, HybridSystem, IsoError, IsoMode, IsoReference};
use isocg::machine::{self, ModelError};
use isocg::solver::{self, SolveConfig, SolveReport, SolverError};
use isocg::{DenseMatrix, DenseVector, OperatingPoint, ProblemClass, SampleSet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsocgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    UnknownMachine = 5,
    NotFound = 6,
    Infeasible = 7,
    NoBreakEven = 8,
    Diverged = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsocgBitDomain {
    Sign = 0,
    Mantissa = 1,
    SignMantissa = 2,
    Exponent = 3,
    Any = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsocgProblemClass {
    OnChip = 0,
    OffChip = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsocgIsoMode {
    Performance = 0,
    Power = 1,
    Capacity = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsocgComposition {
    WorkWeighted = 0,
    TimeWeighted = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsocgOperatingPoint {
    pub gflops: f64,
    pub watts: f64,
}

/// `rate == 0` disables injection. `max_events == 0` means no limit.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsocgFaultConfig {
    pub rate: f64,
    pub flips_per_event: u32,
    pub bit_domain: IsocgBitDomain,
    pub seed: u64,
    pub allow_non_finite: bool,
    pub max_events: u64,
}

/// `max_iter == 0` selects the default of `50·n`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsocgSolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub ss_period: usize,
    pub fault: IsocgFaultConfig,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IsocgSolveResult {
    pub converged: bool,
    pub iterations: usize,
    pub flops: u64,
    pub gemv_flops: u64,
    pub corrections: usize,
    pub fault_events: usize,
    /// Last residual seen by the iteration; NaN when no iteration ran.
    pub final_relative_residual: f64,
    pub true_relative_residual: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsocgHybrid {
    pub reliable: IsocgOperatingPoint,
    pub unreliable: IsocgOperatingPoint,
    pub ss_fraction: f64,
    pub composition: IsocgComposition,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IsocgIsoResult {
    pub cluster_count: f64,
    pub gflops: f64,
    pub watts: f64,
}

/// Opaque machine specs plus measured samples.
pub struct IsocgSampleSet {
    inner: SampleSet,
}

type Failure = (IsocgStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IsocgStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IsocgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            IsocgStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    (IsocgStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    (IsocgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn model_failure(e: ModelError) -> Failure {
    let status = match &e {
        ModelError::Io { .. } => IsocgStatus::Io,
        ModelError::UnknownMachine { .. } => IsocgStatus::UnknownMachine,
        ModelError::Parse { .. } | ModelError::DuplicateSample { .. } | ModelError::Serialize { .. } => {
            IsocgStatus::Parse
        }
        _ => IsocgStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn iso_failure(e: IsoError) -> Failure {
    let status = match &e {
        IsoError::InvalidInput(_) => IsocgStatus::InvalidArgument,
        IsoError::Infeasible(_) => IsocgStatus::Infeasible,
        IsoError::NoBreakEven { .. } => IsocgStatus::NoBreakEven,
    };
    (status, e.to_string())
}

impl From<IsocgOperatingPoint> for OperatingPoint {
    fn from(p: IsocgOperatingPoint) -> Self {
        OperatingPoint::new(p.gflops, p.watts)
    }
}

impl From<IsocgBitDomain> for BitDomain {
    fn from(d: IsocgBitDomain) -> Self {
        match d {
            IsocgBitDomain::Sign => BitDomain::Sign,
            IsocgBitDomain::Mantissa => BitDomain::Mantissa,
            IsocgBitDomain::SignMantissa => BitDomain::SignMantissa,
            IsocgBitDomain::Exponent => BitDomain::Exponent,
            IsocgBitDomain::Any => BitDomain::Any,
        }
    }
}

impl IsocgFaultConfig {
    fn policy(&self) -> Result<Option<FaultPolicy>, Failure> {
        if self.rate == 0.0 {
            return Ok(None);
        }
        let mut policy = FaultPolicy::new(self.rate, self.flips_per_event, self.bit_domain.into(), self.seed)
            .map_err(|e| invalid(e.to_string()))?;
        policy.allow_non_finite = self.allow_non_finite;
        policy.max_events = (self.max_events > 0).then_some(self.max_events);
        Ok(Some(policy))
    }
}

impl IsocgSolveOptions {
    fn config(&self) -> Result<SolveConfig, Failure> {
        let cfg = SolveConfig {
            tol: self.tol,
            max_iter: (self.max_iter > 0).then_some(self.max_iter),
            ss_period: self.ss_period,
            fault_policy: self.fault.policy()?,
        };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }
}

impl From<&SolveReport> for IsocgSolveResult {
    fn from(r: &SolveReport) -> Self {
        Self {
            converged: r.converged,
            iterations: r.iterations,
            flops: r.flops,
            gemv_flops: r.gemv_flops,
            corrections: r.corrections,
            fault_events: r.fault_events.len(),
            final_relative_residual: r.final_relative_residual().unwrap_or(f64::NAN),
            true_relative_residual: r.true_relative_residual,
        }
    }
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// plus one, so a caller can size a second attempt.
#[no_mangle]
pub unsafe extern "C" fn isocg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn isocg_status_name(status: IsocgStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        IsocgStatus::Ok => b"ok\0",
        IsocgStatus::NullPointer => b"null pointer\0",
        IsocgStatus::InvalidArgument => b"invalid argument\0",
        IsocgStatus::Io => b"i/o error\0",
        IsocgStatus::Parse => b"parse error\0",
        IsocgStatus::UnknownMachine => b"unknown machine\0",
        IsocgStatus::NotFound => b"not found\0",
        IsocgStatus::Infeasible => b"infeasible\0",
        IsocgStatus::NoBreakEven => b"no break-even\0",
        IsocgStatus::Diverged => b"diverged\0",
        IsocgStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

// ---- machine data -------------------------------------------------------

/// The bundled fixture. Free with `isocg_sampleset_free`.
#[no_mangle]
pub extern "C" fn isocg_sampleset_bundled() -> *mut IsocgSampleSet {
    Box::into_raw(Box::new(IsocgSampleSet {
        inner: SampleSet::bundled(),
    }))
}

/// Loads a sample CSV and its sibling `.toml` machine specs.
#[no_mangle]
pub unsafe extern "C" fn isocg_sampleset_load(path: *const c_char, out: *mut *mut IsocgSampleSet) -> IsocgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = machine::load_sampleset(Path::new(path)).map_err(model_failure)?;
        *out = Box::into_raw(Box::new(IsocgSampleSet { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn isocg_sampleset_save(set: *const IsocgSampleSet, path: *const c_char) -> IsocgStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let path = str_arg(path, "path")?;
        machine::save_sampleset(&set.inner, Path::new(path)).map_err(model_failure)
    })
}

#[no_mangle]
pub unsafe extern "C" fn isocg_sampleset_free(set: *mut IsocgSampleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

#[no_mangle]
pub unsafe extern "C" fn isocg_sampleset_len(set: *const IsocgSampleSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.samples().len())
}

/// Looks up one measured operating point.
#[no_mangle]
pub unsafe extern "C" fn isocg_sampleset_find(
    set: *const IsocgSampleSet,
    machine: *const c_char,
    active_cores: u32,
    freq_ghz: f64,
    class: IsocgProblemClass,
    out: *mut IsocgOperatingPoint,
) -> IsocgStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let out = out_ref(out, "out")?;
        let name = str_arg(machine, "machine")?;
        if set.inner.spec(name).is_none() {
            return Err((IsocgStatus::UnknownMachine, format!("unknown machine '{name}'")));
        }
        let class = match class {
            IsocgProblemClass::OnChip => ProblemClass::OnChip,
            IsocgProblemClass::OffChip => ProblemClass::OffChip,
        };
        let s = set.inner.find(name, active_cores, freq_ghz, class).ok_or_else(|| {
            (
                IsocgStatus::NotFound,
                format!("no sample for {name} with {active_cores} cores at {freq_ghz} GHz"),
            )
        })?;
        *out = IsocgOperatingPoint {
            gflops: s.gflops,
            watts: s.watts,
        };
        Ok(())
    })
}

/// Bandwidth-bound GFLOPS of `machine` at the given arithmetic intensity.
#[no_mangle]
pub unsafe extern "C" fn isocg_roofline_gflops(
    set: *const IsocgSampleSet,
    machine: *const c_char,
    arithmetic_intensity: f64,
    out: *mut f64,
) -> IsocgStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let out = out_ref(out, "out")?;
        let name = str_arg(machine, "machine")?;
        let spec = set
            .inner
            .spec(name)
            .ok_or_else(|| (IsocgStatus::UnknownMachine, format!("unknown machine '{name}'")))?;
        *out = machine::roofline_gflops(spec, arithmetic_intensity);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn isocg_max_onchip_n(llc_bytes: u64) -> u64 {
    machine::max_onchip_n(llc_bytes)
}

// ---- faults -------------------------------------------------------------

/// XORs the given bit positions (0 = least significant) into `value`.
#[no_mangle]
pub unsafe extern "C" fn isocg_flip_bits(value: f64, positions: *const u8, count: usize, out: *mut f64) -> IsocgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let positions = slice_arg(positions, count, "positions")?;
        if let Some(bad) = positions.iter().find(|&&p| p >= 64) {
            return Err(invalid(format!("bit position {bad} out of range")));
        }
        *out = isocg::flip_bits(value, positions);
        Ok(())
    })
}

// ---- solvers ------------------------------------------------------------

#[no_mangle]
pub extern "C" fn isocg_solve_options_default() -> IsocgSolveOptions {
    IsocgSolveOptions {
        tol: solver::DEFAULT_TOL,
        max_iter: 0,
        ss_period: solver::DEFAULT_SS_PERIOD,
        fault: IsocgFaultConfig {
            rate: 0.0,
            flips_per_event: 1,
            bit_domain: IsocgBitDomain::SignMantissa,
            seed: 0,
            allow_non_finite: false,
            max_events: 0,
        },
    }
}

#[derive(Clone, Copy)]
enum Which {
    Cg,
    SsCg,
}

unsafe fn solve(
    which: Which,
    n: usize,
    a: *const f64,
    b: *const f64,
    options: *const IsocgSolveOptions,
    x_out: *mut f64,
    result: *mut IsocgSolveResult,
) -> IsocgStatus {
    guard(|| {
        let result = out_ref(result, "result")?;
        *result = IsocgSolveResult::default();
        if n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        if x_out.is_null() {
            return Err(null("x_out"));
        }
        let nn = n.checked_mul(n).ok_or_else(|| invalid("n too large"))?;
        let a = slice_arg(a, nn, "a")?;
        let b = slice_arg(b, n, "b")?;
        let opts = options
            .as_ref()
            .copied()
            .unwrap_or_else(|| isocg_solve_options_default());
        let cfg = opts.config()?;

        let a = DenseMatrix::from_row_major(n, n, a.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let b = DenseVector::from_vec(b.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let outcome = match which {
            Which::Cg => solver::cg_solve(&a, &b, &cfg),
            Which::SsCg => {
                let mut injector = match &cfg.fault_policy {
                    Some(p) => FaultInjector::new(p.clone()).map_err(|e| invalid(e.to_string()))?,
                    None => FaultInjector::disabled(),
                };
                let cfg = SolveConfig {
                    fault_policy: None,
                    ..cfg
                };
                solver::sscg_solve(&a, &b, &cfg, &mut injector)
            }
        };
        match outcome {
            Ok(sol) => {
                *result = (&sol.report).into();
                std::slice::from_raw_parts_mut(x_out, n).copy_from_slice(sol.x.as_slice());
                Ok(())
            }
            Err(SolverError::Diverged { iteration, report }) => {
                *result = (&*report).into();
                Err((IsocgStatus::Diverged, format!("diverged at iteration {iteration}")))
            }
            Err(e) => Err(invalid(e.to_string())),
        }
    })
}

/// Plain CG from `x = 0`. Faults in `options` are injected into every gemv.
/// `options` may be null for defaults. A run that stops at the iteration cap
/// returns `ISOCG_STATUS_OK` with `converged == false`.
#[no_mangle]
pub unsafe extern "C" fn isocg_cg_solve(
    n: usize,
    a: *const f64,
    b: *const f64,
    options: *const IsocgSolveOptions,
    x_out: *mut f64,
    result: *mut IsocgSolveResult,
) -> IsocgStatus {
    solve(Which::Cg, n, a, b, options, x_out, result)
}

/// Self-stabilizing CG: every `ss_period`-th iteration is reliable and
/// followed by a residual correction; faults hit the other gemvs.
#[no_mangle]
pub unsafe extern "C" fn isocg_sscg_solve(
    n: usize,
    a: *const f64,
    b: *const f64,
    options: *const IsocgSolveOptions,
    x_out: *mut f64,
    result: *mut IsocgSolveResult,
) -> IsocgStatus {
    solve(Which::SsCg, n, a, b, options, x_out, result)
}

// ---- iso analysis -------------------------------------------------------

/// Unreliable cluster count matching `reference` in the chosen metric.
/// `reference_llc_bytes` and `unit_llc_bytes` are only read for capacity.
#[no_mangle]
pub unsafe extern "C" fn isocg_solve_hybrid(
    mode: IsocgIsoMode,
    reference: IsocgOperatingPoint,
    reference_llc_bytes: u64,
    hybrid: *const IsocgHybrid,
    unit_llc_bytes: u64,
    out: *mut IsocgIsoResult,
) -> IsocgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let h = hybrid.as_ref().ok_or_else(|| null("hybrid"))?;
        let mode = match mode {
            IsocgIsoMode::Performance => IsoMode::IsoPerformance,
            IsocgIsoMode::Power => IsoMode::IsoPower,
            IsocgIsoMode::Capacity => IsoMode::IsoCapacity,
        };
        let mut template = HybridSystem::new(h.reliable.into(), h.unreliable.into(), 1.0);
        template.ss_fraction = h.ss_fraction;
        template.composition = match h.composition {
            IsocgComposition::WorkWeighted => Composition::WorkWeighted,
            IsocgComposition::TimeWeighted => Composition::TimeWeighted,
        };
        let reference = IsoReference {
            point: reference.into(),
            llc_bytes: reference_llc_bytes,
        };
        let r = iso::solve_hybrid_for_mode(mode, &reference, &template, unit_llc_bytes).map_err(iso_failure)?;
        *out = IsocgIsoResult {
            cluster_count: r.cluster_count,
            gflops: r.achieved_gflops,
            watts: r.achieved_watts,
        };
        Ok(())
    })
}

/// Fractional slowdown of `hybrid` at which its energy-to-solution equals
/// that of `reference` (3.0 means 300 %).
#[no_mangle]
pub unsafe extern "C" fn isocg_breakeven_degradation(
    reference: IsocgOperatingPoint,
    hybrid: IsocgOperatingPoint,
    out: *mut f64,
) -> IsocgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = iso::breakeven_degradation(reference.into(), hybrid.into()).map_err(iso_failure)?;
        Ok(())
    })
}

/// Joules to execute `flops` at the given rate and power.
#[no_mangle]
pub extern "C" fn isocg_ets(flops: f64, gflops: f64, watts: f64) -> f64 {
    iso::ets(flops, gflops, watts)
}
