//! Distributed 3D formation control: structured-gain synthesis by
//! smallest-eigenvalue maximization, plus a deterministic local-measurement
//! simulator with robustness perturbations and safety-cylinder collision
//! avoidance.
//!
//! Pipeline: describe a target formation and sensing graph
//! ([`FormationSpec`]), build the invariant-direction basis
//! ([`basis::build_basis`]), synthesize per-edge gains ([`sdp::solve`]),
//! verify them independently ([`sdp::verify_gains`]), then fly them in the
//! simulator ([`sim::run`]) and score the result with [`metrics`].

pub mod avoidance;
pub mod basis;
pub mod error;
pub mod metrics;
pub mod model;
pub mod sdp;
pub mod sim;

pub use avoidance::{avoid_collisions, AvoidFlag, AvoidanceConfig, AvoidanceOutcome};
pub use basis::{build_basis, InvarianceBasis};
pub use error::{CoreError, Result};
pub use metrics::{
    formation_error, min_separation_snapshot, scale_error, AlignmentReport, ErrorMode,
};
pub use model::{
    assemble_aggregate, materialize_block, AggregateGain, FormationSpec, GainBlock, GainSet,
    SensingGraph,
};
pub use sdp::{
    solve, verify_gains, SdpProblem, SdpSolution, SolveOptions, VariableLayout, VerifyReport,
};
pub use sim::{
    run, AgentState, PerturbationModel, ScaleControl, ScaleShape, SimConfig, SimResult, StepRecord,
    Termination, WorldState,
};
