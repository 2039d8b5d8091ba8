//! Dense Conjugate Gradient with deterministic bit-flip fault injection and
//! a self-stabilizing recovery variant, plus the analytical machine models
//! used to compare a big.LITTLE SoC against a server CPU: roofline bounds,
//! static-power regression, frequency scaling, iso-performance / iso-power /
//! iso-capacity matching, reliable+unreliable hybrids and energy-to-solution.

pub mod cli;
pub mod fault;
pub mod iso;
pub mod linalg;
pub mod machine;
pub mod solver;

pub use fault::{flip_bits, BitDomain, FaultEvent, FaultInjector, FaultPolicy};
pub use iso::{
    breakeven_degradation, ets, ets_curve, hybrid_gflops, hybrid_watts, iso_capacity_clusters,
    iso_performance_clusters, iso_power_clusters, solve_hybrid_for_mode, Composition, EtsPair, EtsPoint, HybridSystem,
    IsoMode, IsoReference, IsoReport,
};
pub use linalg::{DenseMatrix, DenseVector, FlopCounter};
pub use machine::{MachineSpec, OperatingPoint, PerfSample, ProblemClass, Provenance, SampleSet};
pub use solver::{cg_solve, sscg_solve, Solution, SolveConfig, SolveReport, SolverError};
