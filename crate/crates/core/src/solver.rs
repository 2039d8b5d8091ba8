//! Conjugate Gradient and its self-stabilizing variant.
//!
//! Both solvers start from `x₀ = 0` and stop when the relative residual
//! `‖r‖₂/‖b‖₂` falls to `tol`. The self-stabilizing solver runs every
//! `ss_period`-th iteration reliably and follows it with a correction:
//! `r ← b − A·x` (a second, fault-free gemv), `p ← r`, `ρ ← rᵀr`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{FaultError, FaultEvent, FaultInjector, FaultPolicy, RNG_ALGORITHM};
use crate::linalg::{self, dot_unchecked, DenseMatrix, DenseVector, FlopCounter, LinalgError};

pub const DEFAULT_TOL: f64 = 1.0e-8;
pub const DEFAULT_SS_PERIOD: usize = 10;
/// Default iteration cap is this many times `n`.
pub const DEFAULT_MAX_ITER_FACTOR: usize = 50;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error("solver diverged at iteration {iteration}: non-finite state")]
    Diverged { iteration: usize, report: Box<SolveReport> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tol: f64,
    /// `None` means `50·n`.
    pub max_iter: Option<usize>,
    pub ss_period: usize,
    /// Injection applied to every gemv of plain CG when set.
    pub fault_policy: Option<FaultPolicy>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            ss_period: DEFAULT_SS_PERIOD,
            fault_policy: None,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(SolverError::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == Some(0) {
            return Err(SolverError::InvalidConfig("max_iter must be >= 1".into()));
        }
        if self.ss_period == 0 {
            return Err(SolverError::InvalidConfig("ss_period must be >= 1".into()));
        }
        if let Some(policy) = &self.fault_policy {
            policy.validate()?;
        }
        Ok(())
    }

    pub fn effective_max_iter(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(DEFAULT_MAX_ITER_FACTOR * n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cg,
    SsCg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Relative residual after each iteration (the corrected value on
    /// correction steps).
    pub relative_residuals: Vec<f64>,
    /// One gemv-equivalent per iteration: `iterations·2n²`.
    pub flops: u64,
    /// Every gemv actually executed, correction gemvs included.
    pub gemv_flops: u64,
    pub corrections: usize,
    pub fault_events: Vec<FaultEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_algorithm: Option<String>,
    /// `‖b − A·x‖₂/‖b‖₂` for the returned iterate, recomputed reliably and
    /// outside the flop accounting.
    pub true_relative_residual: f64,
}

impl SolveReport {
    fn new(method: Method, n: usize) -> Self {
        Self {
            method,
            n,
            converged: false,
            iterations: 0,
            relative_residuals: Vec::new(),
            flops: 0,
            gemv_flops: 0,
            corrections: 0,
            fault_events: Vec::new(),
            rng_algorithm: None,
            true_relative_residual: f64::NAN,
        }
    }

    pub fn final_relative_residual(&self) -> Option<f64> {
        self.relative_residuals.last().copied()
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DenseVector,
    pub report: SolveReport,
}

/// Mutable CG state.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: DenseVector,
    pub r: DenseVector,
    pub p: DenseVector,
    pub rho: f64,
    pub iteration: usize,
}

impl SolverState {
    fn start(b: &DenseVector) -> Self {
        let r = b.clone();
        let rho = dot_unchecked(r.as_slice(), r.as_slice());
        Self {
            x: DenseVector::zeros(b.len()),
            p: r.clone(),
            r,
            rho,
            iteration: 0,
        }
    }

    /// `x += αp`, `r −= αw`; returns the new `rᵀr`.
    fn advance(&mut self, w: &DenseVector) -> Option<f64> {
        let pw = dot_unchecked(self.p.as_slice(), w.as_slice());
        let alpha = self.rho / pw;
        if !alpha.is_finite() {
            return None;
        }
        for (xi, pi) in self.x.as_mut_slice().iter_mut().zip(self.p.as_slice()) {
            *xi += alpha * pi;
        }
        for (ri, wi) in self.r.as_mut_slice().iter_mut().zip(w.as_slice()) {
            *ri -= alpha * wi;
        }
        Some(dot_unchecked(self.r.as_slice(), self.r.as_slice()))
    }

    /// `p ← r + βp` with `β = ρ_new/ρ`.
    fn new_direction(&mut self, rho_new: f64) {
        let beta = rho_new / self.rho;
        for (pi, ri) in self.p.as_mut_slice().iter_mut().zip(self.r.as_slice()) {
            *pi = ri + beta * *pi;
        }
        self.rho = rho_new;
    }
}

fn check_system(a: &DenseMatrix, b: &DenseVector) -> Result<usize, SolverError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch {
            op: "solve",
            expected: a.rows(),
            found: a.cols(),
        }
        .into());
    }
    if a.rows() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            op: "solve",
            expected: a.rows(),
            found: b.len(),
        }
        .into());
    }
    Ok(b.len())
}

fn gemv_flops(n: usize) -> u64 {
    2 * (n as u64) * (n as u64)
}

/// Reliable `‖b − A·x‖₂/‖b‖₂`, not counted in any report.
pub fn true_relative_residual(a: &DenseMatrix, x: &DenseVector, b: &DenseVector) -> Result<f64, LinalgError> {
    let mut scratch = FlopCounter::new();
    let ax = linalg::gemv(a, x, &mut scratch)?;
    let r = linalg::axpy(-1.0, &ax, b)?;
    Ok(linalg::norm2(&r) / linalg::norm2(b))
}

fn finish(mut report: SolveReport, a: &DenseMatrix, x: DenseVector, b: &DenseVector) -> Result<Solution, SolverError> {
    report.true_relative_residual = true_relative_residual(a, &x, b)?;
    Ok(Solution { x, report })
}

fn diverged(mut report: SolveReport, iteration: usize) -> SolverError {
    report.iterations = iteration;
    report.true_relative_residual = f64::NAN;
    SolverError::Diverged {
        iteration,
        report: Box::new(report),
    }
}

fn zero_rhs(method: Method, n: usize) -> Solution {
    let mut report = SolveReport::new(method, n);
    report.converged = true;
    report.true_relative_residual = 0.0;
    Solution {
        x: DenseVector::zeros(n),
        report,
    }
}

/// Plain Hestenes–Stiefel CG. When `cfg.fault_policy` is set, every gemv
/// output passes through an injector built from it.
pub fn cg_solve(a: &DenseMatrix, b: &DenseVector, cfg: &SolveConfig) -> Result<Solution, SolverError> {
    cfg.validate()?;
    let n = check_system(a, b)?;
    let mut injector = cfg.fault_policy.clone().map(FaultInjector::new).transpose()?;

    let b_norm = linalg::norm2(b);
    if b_norm == 0.0 {
        return Ok(zero_rhs(Method::Cg, n));
    }

    let mut report = SolveReport::new(Method::Cg, n);
    report.rng_algorithm = injector.as_ref().map(|_| RNG_ALGORITHM.to_string());
    let mut counter = FlopCounter::new();
    let mut state = SolverState::start(b);
    let mut w = DenseVector::zeros(n);

    for k in 1..=cfg.effective_max_iter(n) {
        state.iteration = k;
        linalg::gemv_into(a, &state.p, &mut w, &mut counter)?;
        if let Some(inj) = injector.as_mut() {
            if let Some(mut event) = inj.inject_in_place(&mut w) {
                event.iteration = Some(k);
                report.fault_events.push(event);
            }
        }
        report.iterations = k;
        report.flops += gemv_flops(n);
        report.gemv_flops = counter.total();

        let rho_new = match state.advance(&w) {
            Some(v) if v.is_finite() && state.x.is_finite() => v,
            _ => return Err(diverged(report, k)),
        };
        let rel = rho_new.sqrt() / b_norm;
        report.relative_residuals.push(rel);
        if rel <= cfg.tol {
            report.converged = true;
            break;
        }
        state.new_direction(rho_new);
    }

    finish(report, a, state.x, b)
}

/// Self-stabilizing CG.
///
/// Iterations `k` with `k % ss_period == 0` run reliably and end with a
/// correction step. Every other iteration routes its gemv through
/// `injector`. Convergence is only declared on a corrected residual: when
/// the recurrence residual drops below `tol` on an unreliable iteration,
/// the correction is applied there too.
pub fn sscg_solve(
    a: &DenseMatrix,
    b: &DenseVector,
    cfg: &SolveConfig,
    injector: &mut FaultInjector,
) -> Result<Solution, SolverError> {
    cfg.validate()?;
    let n = check_system(a, b)?;

    let b_norm = linalg::norm2(b);
    if b_norm == 0.0 {
        return Ok(zero_rhs(Method::SsCg, n));
    }

    let mut report = SolveReport::new(Method::SsCg, n);
    report.rng_algorithm = Some(injector.rng_algorithm().to_string());
    let mut counter = FlopCounter::new();
    let mut state = SolverState::start(b);
    let mut w = DenseVector::zeros(n);

    for k in 1..=cfg.effective_max_iter(n) {
        state.iteration = k;
        let reliable = k % cfg.ss_period == 0;

        linalg::gemv_into(a, &state.p, &mut w, &mut counter)?;
        if !reliable {
            if let Some(mut event) = injector.inject_in_place(&mut w) {
                event.iteration = Some(k);
                report.fault_events.push(event);
            }
        }
        report.iterations = k;
        report.flops += gemv_flops(n);

        let recurrence = state.advance(&w).filter(|v| v.is_finite());
        if !state.x.is_finite() {
            report.gemv_flops = counter.total();
            return Err(diverged(report, k));
        }

        let needs_correction = match recurrence {
            Some(rho_new) => reliable || rho_new.sqrt() / b_norm <= cfg.tol,
            // A corrupted step left r or ρ unusable but x is intact.
            None => true,
        };

        if needs_correction {
            linalg::gemv_into(a, &state.x, &mut w, &mut counter)?;
            for ((ri, bi), wi) in state.r.as_mut_slice().iter_mut().zip(b.as_slice()).zip(w.as_slice()) {
                *ri = bi - wi;
            }
            state.p = state.r.clone();
            state.rho = dot_unchecked(state.r.as_slice(), state.r.as_slice());
            report.corrections += 1;
            report.gemv_flops = counter.total();
            if !state.rho.is_finite() {
                return Err(diverged(report, k));
            }
            let rel = state.rho.sqrt() / b_norm;
            report.relative_residuals.push(rel);
            if rel <= cfg.tol {
                report.converged = true;
                break;
            }
        } else {
            let rho_new = recurrence.expect("checked above");
            report.gemv_flops = counter.total();
            report.relative_residuals.push(rho_new.sqrt() / b_norm);
            state.new_direction(rho_new);
        }
    }

    finish(report, a, state.x, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::BitDomain;
    use crate::linalg::gen_spd_diag_dominant;

    fn vecf(v: &[f64]) -> DenseVector {
        DenseVector::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn identity_system_one_iteration() {
        let sol = cg_solve(&DenseMatrix::identity(2), &vecf(&[5.0, -3.0]), &SolveConfig::default()).unwrap();
        assert_eq!(sol.x.as_slice(), &[5.0, -3.0]);
        assert_eq!(sol.report.iterations, 1);
        assert!(sol.report.converged);
        assert_eq!(sol.report.flops, 8);
    }

    #[test]
    fn hand_2x2_matches_inverse() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let sol = cg_solve(&a, &vecf(&[1.0, 2.0]), &SolveConfig::default()).unwrap();
        // inverse: 1/11 · [[3,-1],[-1,4]]
        assert!((sol.x[0] - 1.0 / 11.0).abs() < 1e-10);
        assert!((sol.x[1] - 7.0 / 11.0).abs() < 1e-10);
        assert!(sol.report.iterations <= 2);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let sol = cg_solve(
            &DenseMatrix::identity(3),
            &DenseVector::zeros(3),
            &SolveConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.report.iterations, 0);
        assert!(sol.report.converged);
        assert_eq!(sol.x, DenseVector::zeros(3));
    }

    #[test]
    fn config_validation() {
        let a = DenseMatrix::identity(2);
        let b = vecf(&[1.0, 1.0]);
        for cfg in [
            SolveConfig {
                tol: 0.0,
                ..Default::default()
            },
            SolveConfig {
                max_iter: Some(0),
                ..Default::default()
            },
            SolveConfig {
                ss_period: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(cg_solve(&a, &b, &cfg), Err(SolverError::InvalidConfig(_))));
        }
        assert!(matches!(
            cg_solve(&a, &vecf(&[1.0]), &SolveConfig::default()),
            Err(SolverError::Linalg(_))
        ));
    }

    #[test]
    fn max_iter_cap_reports_non_convergence() {
        let a = gen_spd_diag_dominant(32, 1);
        let b = DenseVector::filled(32, 1.0);
        let cfg = SolveConfig {
            max_iter: Some(1),
            ..Default::default()
        };
        let sol = cg_solve(&a, &b, &cfg).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.iterations, 1);
    }

    #[test]
    fn sscg_fault_free_converges_with_corrections() {
        let n = 48;
        let a = gen_spd_diag_dominant(n, 2);
        let b = DenseVector::filled(n, 1.0);
        let cfg = SolveConfig {
            ss_period: 3,
            ..Default::default()
        };
        let sol = sscg_solve(&a, &b, &cfg, &mut FaultInjector::disabled()).unwrap();
        assert!(sol.report.converged);
        assert!(sol.report.true_relative_residual <= 1e-8);
        assert!(sol.report.corrections >= 1);
        assert_eq!(sol.report.flops, sol.report.iterations as u64 * 2 * (n * n) as u64);
        assert_eq!(
            sol.report.gemv_flops,
            (sol.report.iterations + sol.report.corrections) as u64 * 2 * (n * n) as u64
        );
    }

    #[test]
    fn sscg_records_events_only_on_unreliable_iterations() {
        let n = 32;
        let a = gen_spd_diag_dominant(n, 3);
        let b = DenseVector::filled(n, 1.0);
        let cfg = SolveConfig {
            ss_period: 2,
            ..Default::default()
        };
        let mut inj = FaultInjector::new(FaultPolicy::new(1.0, 1, BitDomain::Sign, 8).unwrap()).unwrap();
        let sol = sscg_solve(&a, &b, &cfg, &mut inj).unwrap();
        assert!(sol.report.converged);
        assert!(!sol.report.fault_events.is_empty());
        for e in &sol.report.fault_events {
            assert_ne!(e.iteration.unwrap() % 2, 0);
        }
    }
}
