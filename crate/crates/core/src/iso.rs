//! Iso-performance, iso-power and iso-capacity matching, the reliable +
//! unreliable hybrid composition, and energy-to-solution curves.
//!
//! A hybrid runs a fraction `α` of the CG iterations (the self-stabilizing
//! ones) on one reliable cluster and the rest on `n` unreliable clusters.
//! Under [`Composition::WorkWeighted`] (the default)
//!
//! ```text
//! G(n) = α·G_rel + (1−α)·n·G_unrel
//! P(n) = α·P_rel + (1−α)·n·P_unrel
//! ```
//!
//! Both are affine in `n`, so every iso query inverts in closed form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::OperatingPoint;

pub const DEFAULT_SS_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("no break-even: the hybrid needs {ratio:.4}x the reference energy even without degradation")]
    NoBreakEven { ratio: f64 },
}

fn positive(name: &str, v: f64) -> Result<f64, IsoError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(IsoError::InvalidInput(format!(
            "{name} must be finite and > 0, got {v}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsoMode {
    IsoPerformance,
    IsoPower,
    IsoCapacity,
}

impl fmt::Display for IsoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IsoMode::IsoPerformance => "iso_performance",
            IsoMode::IsoPower => "iso_power",
            IsoMode::IsoCapacity => "iso_capacity",
        })
    }
}

impl FromStr for IsoMode {
    type Err = IsoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perf" | "iso-perf" | "iso_perf" | "iso-performance" | "iso_performance" => Ok(IsoMode::IsoPerformance),
            "power" | "iso-power" | "iso_power" => Ok(IsoMode::IsoPower),
            "capacity" | "iso-capacity" | "iso_capacity" => Ok(IsoMode::IsoCapacity),
            other => Err(IsoError::InvalidInput(format!("unknown iso mode '{other}'"))),
        }
    }
}

/// Number of target clusters matching a reference throughput.
pub fn iso_performance_clusters(ref_gflops: f64, target_cluster_gflops: f64) -> f64 {
    ref_gflops / target_cluster_gflops
}

/// Number of target clusters matching a reference power budget.
pub fn iso_power_clusters(ref_watts: f64, target_cluster_watts: f64) -> f64 {
    ref_watts / target_cluster_watts
}

/// Number of target clusters whose aggregate LLC matches the reference.
pub fn iso_capacity_clusters(ref_llc_bytes: f64, target_llc_bytes: f64) -> f64 {
    ref_llc_bytes / target_llc_bytes
}

/// Result of an iso query. `ratios` keys are stable and sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoReport {
    pub mode: IsoMode,
    pub cluster_count: f64,
    pub achieved_gflops: f64,
    pub achieved_watts: f64,
    pub ratios: BTreeMap<String, f64>,
}

impl IsoReport {
    fn with_reference(mode: IsoMode, cluster_count: f64, achieved: OperatingPoint, reference: OperatingPoint) -> Self {
        let mut ratios = BTreeMap::new();
        ratios.insert("perf_ratio".to_string(), achieved.gflops / reference.gflops);
        ratios.insert("power_ratio".to_string(), achieved.watts / reference.watts);
        ratios.insert(
            "efficiency_ratio".to_string(),
            achieved.gflops_per_watt() / reference.gflops_per_watt(),
        );
        ratios.insert("slowdown".to_string(), reference.gflops / achieved.gflops);
        ratios.insert("power_reduction".to_string(), reference.watts / achieved.watts);
        Self {
            mode,
            cluster_count,
            achieved_gflops: achieved.gflops,
            achieved_watts: achieved.watts,
            ratios,
        }
    }

    pub fn ratio(&self, name: &str) -> Option<f64> {
        self.ratios.get(name).copied()
    }

    pub fn achieved(&self) -> OperatingPoint {
        OperatingPoint::new(self.achieved_gflops, self.achieved_watts)
    }

    pub const CSV_HEADER: &'static str =
        "mode,cluster_count,achieved_gflops,achieved_watts,efficiency_ratio,perf_ratio,power_ratio,power_reduction,slowdown";

    /// One CSV row in [`IsoReport::CSV_HEADER`] order.
    pub fn csv_row(&self) -> String {
        let r = |k: &str| self.ratio(k).map_or_else(String::new, |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.cluster_count,
            self.achieved_gflops,
            self.achieved_watts,
            r("efficiency_ratio"),
            r("perf_ratio"),
            r("power_ratio"),
            r("power_reduction"),
            r("slowdown"),
        )
    }
}

/// Homogeneous iso query: how many `target` clusters match `reference`?
///
/// For [`IsoMode::IsoCapacity`], `llc` carries `(reference, target)` LLC
/// bytes; other modes ignore it.
pub fn iso_report(
    mode: IsoMode,
    reference: OperatingPoint,
    target: OperatingPoint,
    llc: Option<(u64, u64)>,
) -> Result<IsoReport, IsoError> {
    positive("reference gflops", reference.gflops)?;
    positive("reference watts", reference.watts)?;
    positive("target gflops", target.gflops)?;
    positive("target watts", target.watts)?;
    let count = match mode {
        IsoMode::IsoPerformance => iso_performance_clusters(reference.gflops, target.gflops),
        IsoMode::IsoPower => iso_power_clusters(reference.watts, target.watts),
        IsoMode::IsoCapacity => {
            let (ref_llc, target_llc) =
                llc.ok_or_else(|| IsoError::InvalidInput("iso-capacity needs LLC sizes".into()))?;
            iso_capacity_clusters(
                positive("reference llc", ref_llc as f64)?,
                positive("target llc", target_llc as f64)?,
            )
        }
    };
    let achieved = OperatingPoint::new(count * target.gflops, count * target.watts);
    Ok(IsoReport::with_reference(mode, count, achieved, reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// `α·G_rel + (1−α)·n·G_unrel`, and likewise for power.
    #[default]
    WorkWeighted,
    /// Phases run back to back: `1/G = α/G_rel + (1−α)/(n·G_unrel)`, with
    /// power the time-weighted mean of the two phases.
    TimeWeighted,
}

/// One reliable cluster plus `n_unreliable` unreliable clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSystem {
    pub reliable: OperatingPoint,
    pub unreliable: OperatingPoint,
    pub n_unreliable: f64,
    pub ss_fraction: f64,
    #[serde(default)]
    pub composition: Composition,
}

impl HybridSystem {
    pub fn new(reliable: OperatingPoint, unreliable: OperatingPoint, n_unreliable: f64) -> Self {
        Self {
            reliable,
            unreliable,
            n_unreliable,
            ss_fraction: DEFAULT_SS_FRACTION,
            composition: Composition::WorkWeighted,
        }
    }

    pub fn validate(&self) -> Result<(), IsoError> {
        positive("reliable gflops", self.reliable.gflops)?;
        positive("reliable watts", self.reliable.watts)?;
        positive("unreliable gflops", self.unreliable.gflops)?;
        positive("unreliable watts", self.unreliable.watts)?;
        positive("n_unreliable", self.n_unreliable)?;
        if !(self.ss_fraction > 0.0 && self.ss_fraction < 1.0) {
            return Err(IsoError::InvalidInput(format!(
                "ss_fraction must lie in (0, 1), got {}",
                self.ss_fraction
            )));
        }
        Ok(())
    }

    pub fn with_clusters(&self, n_unreliable: f64) -> Self {
        Self {
            n_unreliable,
            ..self.clone()
        }
    }

    /// Energy per GFLOP of the time-weighted model; independent of `n`.
    fn time_weighted_joules_per_gflop(&self) -> f64 {
        let a = self.ss_fraction;
        a * self.reliable.watts / self.reliable.gflops + (1.0 - a) * self.unreliable.watts / self.unreliable.gflops
    }

    pub fn operating_point(&self) -> OperatingPoint {
        OperatingPoint::new(hybrid_gflops(self), hybrid_watts(self))
    }
}

pub fn hybrid_gflops(h: &HybridSystem) -> f64 {
    let a = h.ss_fraction;
    let n = h.n_unreliable;
    match h.composition {
        Composition::WorkWeighted => a * h.reliable.gflops + (1.0 - a) * n * h.unreliable.gflops,
        Composition::TimeWeighted => 1.0 / (a / h.reliable.gflops + (1.0 - a) / (n * h.unreliable.gflops)),
    }
}

pub fn hybrid_watts(h: &HybridSystem) -> f64 {
    let a = h.ss_fraction;
    let n = h.n_unreliable;
    match h.composition {
        Composition::WorkWeighted => a * h.reliable.watts + (1.0 - a) * n * h.unreliable.watts,
        Composition::TimeWeighted => hybrid_gflops(h) * h.time_weighted_joules_per_gflop(),
    }
}

/// What a hybrid is matched against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsoReference {
    pub point: OperatingPoint,
    pub llc_bytes: u64,
}

/// Solves for the unreliable cluster count that makes the hybrid match
/// `reference` in the requested metric. `unit_llc_bytes` is the LLC of one
/// unreliable cluster (used by iso-capacity only).
///
/// The `n_unreliable` of `template` is ignored.
pub fn solve_hybrid_for_mode(
    mode: IsoMode,
    reference: &IsoReference,
    template: &HybridSystem,
    unit_llc_bytes: u64,
) -> Result<IsoReport, IsoError> {
    template.with_clusters(1.0).validate()?;
    let g_ref = positive("reference gflops", reference.point.gflops)?;
    let p_ref = positive("reference watts", reference.point.watts)?;
    let a = template.ss_fraction;
    let rel = template.reliable;
    let unrel = template.unreliable;

    let n = match (mode, template.composition) {
        (IsoMode::IsoCapacity, _) => iso_capacity_clusters(
            positive("reference llc", reference.llc_bytes as f64)?,
            positive("unreliable llc", unit_llc_bytes as f64)?,
        ),
        (IsoMode::IsoPerformance, Composition::WorkWeighted) => {
            let fixed = a * rel.gflops;
            if fixed >= g_ref {
                return Err(IsoError::Infeasible(format!(
                    "reliable share alone delivers {fixed} GFLOPS >= reference {g_ref}"
                )));
            }
            (g_ref - fixed) / ((1.0 - a) * unrel.gflops)
        }
        (IsoMode::IsoPower, Composition::WorkWeighted) => {
            let fixed = a * rel.watts;
            if fixed >= p_ref {
                return Err(IsoError::Infeasible(format!(
                    "reliable share alone draws {fixed} W >= reference {p_ref}"
                )));
            }
            (p_ref - fixed) / ((1.0 - a) * unrel.watts)
        }
        (IsoMode::IsoPerformance | IsoMode::IsoPower, Composition::TimeWeighted) => {
            let g_target = match mode {
                IsoMode::IsoPerformance => g_ref,
                _ => p_ref / template.time_weighted_joules_per_gflop(),
            };
            let slack = 1.0 / g_target - a / rel.gflops;
            if slack <= 0.0 {
                return Err(IsoError::Infeasible(format!(
                    "reliable phase alone caps throughput below {g_target} GFLOPS"
                )));
            }
            (1.0 - a) / (unrel.gflops * slack)
        }
    };

    let achieved = template.with_clusters(n).operating_point();
    Ok(IsoReport::with_reference(mode, n, achieved, reference.point))
}

/// Recomputes a hybrid report for a whole number of unreliable clusters.
pub fn round_clusters(report: &IsoReport, reference: &IsoReference, template: &HybridSystem) -> IsoReport {
    let n = report.cluster_count.round().max(1.0);
    let achieved = template.with_clusters(n).operating_point();
    IsoReport::with_reference(report.mode, n, achieved, reference.point)
}

/// Joules to execute `flops_total` flops at `gflops` while drawing `watts`.
pub fn ets(flops_total: f64, gflops: f64, watts: f64) -> f64 {
    flops_total / (gflops * 1e9) * watts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtsPoint {
    /// Fraction of extra iterations (0.5 = +50%).
    pub degradation: f64,
    /// Joules.
    pub ets: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtsPair {
    pub reference: EtsPoint,
    pub hybrid: EtsPoint,
}

impl EtsPair {
    pub fn ratio(&self) -> f64 {
        self.hybrid.ets / self.reference.ets
    }

    pub const CSV_HEADER: &'static str = "degradation_pct,ets_reference_j,ets_hybrid_j,ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.reference.degradation * 100.0,
            self.reference.ets,
            self.hybrid.ets,
            self.ratio()
        )
    }
}

/// Reference ETS stays flat (reliable, no degradation); the hybrid pays
/// `(1+d)` times the fault-free work.
pub fn ets_curve(
    flops_total: f64,
    reference: OperatingPoint,
    hybrid: &HybridSystem,
    degradations: &[f64],
) -> Result<Vec<EtsPair>, IsoError> {
    positive("flops_total", flops_total)?;
    hybrid.validate()?;
    let h = hybrid.operating_point();
    let base_ref = ets(
        flops_total,
        positive("reference gflops", reference.gflops)?,
        positive("reference watts", reference.watts)?,
    );
    let base_hybrid = ets(flops_total, h.gflops, h.watts);
    degradations
        .iter()
        .map(|&d| {
            if !(d.is_finite() && d >= 0.0) {
                return Err(IsoError::InvalidInput(format!("degradation must be >= 0, got {d}")));
            }
            Ok(EtsPair {
                reference: EtsPoint {
                    degradation: d,
                    ets: base_ref,
                },
                hybrid: EtsPoint {
                    degradation: d,
                    ets: base_hybrid * (1.0 + d),
                },
            })
        })
        .collect()
}

/// Extra-iteration fraction at which the hybrid's ETS reaches the
/// reference's: `d* = (G_h/G_ref)·(P_ref/P_h) − 1`.
pub fn breakeven_degradation(reference: OperatingPoint, hybrid: OperatingPoint) -> Result<f64, IsoError> {
    positive("reference gflops", reference.gflops)?;
    positive("reference watts", reference.watts)?;
    positive("hybrid gflops", hybrid.gflops)?;
    positive("hybrid watts", hybrid.watts)?;
    let advantage = (hybrid.gflops / reference.gflops) * (reference.watts / hybrid.watts);
    if advantage < 1.0 {
        return Err(IsoError::NoBreakEven { ratio: 1.0 / advantage });
    }
    Ok(advantage - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A15: OperatingPoint = OperatingPoint {
        gflops: 2.1,
        watts: 5.49,
    };
    const A7: OperatingPoint = OperatingPoint {
        gflops: 0.38,
        watts: 0.1413,
    };

    #[test]
    fn cluster_count_identities() {
        assert_eq!(iso_performance_clusters(3.5, 3.5), 1.0);
        assert_eq!(iso_power_clusters(7.0, 7.0), 1.0);
        assert_eq!(iso_capacity_clusters(20.0, 2.0), 10.0);
    }

    #[test]
    fn hybrid_rows() {
        let h = HybridSystem::new(A15, A7, 5.51);
        assert!((hybrid_gflops(&h) - 2.09).abs() < 0.02);
        assert!((hybrid_watts(&h) - 1.24).abs() < 0.02);
        let h = h.with_clusters(4.0);
        assert!((hybrid_gflops(&h) - 1.57).abs() < 0.02);
        assert!((hybrid_watts(&h) - 1.05).abs() < 0.02);
    }

    #[test]
    fn validation_errors() {
        let mut h = HybridSystem::new(A15, A7, 1.0);
        h.ss_fraction = 1.0;
        assert!(h.validate().is_err());
        h.ss_fraction = 0.1;
        h.n_unreliable = 0.0;
        assert!(h.validate().is_err());
        assert!(iso_report(IsoMode::IsoCapacity, A15, A7, None).is_err());
        assert!(ets_curve(1.0, A15, &HybridSystem::new(A15, A7, 1.0), &[-0.5]).is_err());
    }

    #[test]
    fn infeasible_targets() {
        let reference = IsoReference {
            point: OperatingPoint::new(0.1, 0.1),
            llc_bytes: 1,
        };
        let t = HybridSystem::new(A15, A7, 1.0);
        for mode in [IsoMode::IsoPerformance, IsoMode::IsoPower] {
            assert!(matches!(
                solve_hybrid_for_mode(mode, &reference, &t, 1),
                Err(IsoError::Infeasible(_))
            ));
            // Phases in series: the reliable phase caps throughput at G_rel/α.
            let tw = HybridSystem {
                composition: Composition::TimeWeighted,
                ..t.clone()
            };
            let high = IsoReference {
                point: OperatingPoint::new(100.0, 100.0),
                llc_bytes: 1,
            };
            assert!(matches!(
                solve_hybrid_for_mode(mode, &high, &tw, 1),
                Err(IsoError::Infeasible(_))
            ));
        }
    }

    #[test]
    fn breakeven_edges() {
        let p = OperatingPoint::new(2.0, 3.0);
        assert_eq!(breakeven_degradation(p, p).unwrap(), 0.0);
        assert!(matches!(
            breakeven_degradation(p, OperatingPoint::new(2.0, 6.0)),
            Err(IsoError::NoBreakEven { .. })
        ));
    }

    #[test]
    fn ets_basics() {
        assert!((ets(1e9, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((ets(1e9, 1.0, 2.0) - 2.0 * ets(1e9, 1.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("perf".parse::<IsoMode>().unwrap(), IsoMode::IsoPerformance);
        assert_eq!("iso-power".parse::<IsoMode>().unwrap(), IsoMode::IsoPower);
        assert_eq!("capacity".parse::<IsoMode>().unwrap(), IsoMode::IsoCapacity);
        assert!("speed".parse::<IsoMode>().is_err());
    }
}
