//! Safe and unsafe critical clearing times for power-grid faults.
//!
//! A networked swing-equation model (the post-fault effective network) is
//! decoupled into one constrained planar system per generator. For each
//! generator the admissible set and the maximal robust positively invariant
//! set are computed from barrier trajectories, and a single fault-on
//! simulation is intersected with them to bracket the critical clearing time.

pub mod bounds_opt;
pub mod cct;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod geometry;
pub mod model;
pub mod ode;
pub mod pipeline;
pub mod safety_sets;
pub mod svg;

pub use bounds_opt::{
    objective, optimize_bounds, BoundsCandidate, HistoryEntry, OptimizeOptions, OptimizeResult,
};
pub use cct::{
    cct_summary, classify, crossing_times, simulate_fault, verify_classification, CctReport,
    Classification, MachineCrossing, SimulationVerdict,
};
pub use dynamics::{coupled_rhs, decoupled_rhs, MachineModel};
pub use equilibrium::{
    find_equilibrium, laplacian, pseudoinverse, sync_certificate, Certificate, EquilibriumResult,
};
pub use error::{Error, Result};
pub use geometry::Point;
pub use model::{
    load_scenario, rotating_frame_shift, Bounds, GridState, Metadata, Scenario, SolverSettings,
    StageModel,
};
pub use ode::{event_time, integrate, OdeSettings, Trajectory};
pub use pipeline::{run_analysis, run_pipeline, Analysis, AnalysisReport, PipelineOptions};
pub use safety_sets::{
    assemble_set, barrier_curve, contains, extremal_input, oracle_set, volume, Corner, InputMode,
    OracleGrid, SafetySet, SetKind, SetSettings,
};

/// Crate version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
