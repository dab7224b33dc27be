use thiserror::Error;

/// Errors produced by formation modeling, gain synthesis, and simulation.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A formation definition violates its invariants (wrong length, non-finite
    /// coordinates, all points coincident, too few agents).
    #[error("invalid formation: {0}")]
    InvalidFormation(String),

    /// A sensing graph definition violates its invariants (self-loop, index out
    /// of range, duplicate edge).
    #[error("invalid sensing graph: {0}")]
    InvalidGraph(String),

    /// The domain of a gain set does not match the directed edges of the graph.
    #[error("gain set does not match graph: {0}")]
    GainDomainMismatch(String),

    /// An aggregate vector whose length is not a multiple of 3 was passed to a
    /// per-agent operation.
    #[error("aggregate vector length {0} is not divisible by 3")]
    BadAggregateLength(usize),

    /// The invariance matrix has rank below 4; the formation is degenerate
    /// (for example all agents coincident).
    #[error("degenerate formation: invariance matrix has rank {rank} < 4")]
    DegenerateFormation { rank: usize },

    /// A basis requires at least 3 agents so that a nontrivial orthogonal
    /// complement exists.
    #[error("too few agents: need n >= 3, got {0}")]
    TooFewAgents(usize),

    /// Only the zero gain vector satisfies the invariance constraints.
    #[error("graph too sparse for this formation: only zero gains are feasible")]
    InfeasibleStructure,

    /// The optimizer found no gains with a positive stability margin.
    #[error("formation not stabilizable with this graph: best margin {best:.3e} <= 0")]
    NotStabilizable { best: f64 },

    /// An operation received a matrix that violates its symmetry contract.
    #[error("matrix is not symmetric: max asymmetry {max_asym:.3e} exceeds {tol:.1e}")]
    NotSymmetric { max_asym: f64, tol: f64 },

    /// A relative-position query for a pair that is not a sensing edge.
    #[error("agents {i} and {j} are not connected by a sensing edge")]
    NotAnEdge { i: usize, j: usize },

    /// A control computation is missing the measurement of one neighbor.
    #[error("missing measurement of neighbor {j} for agent {i}")]
    MissingMeasurement { i: usize, j: usize },

    /// The integrator produced a non-finite state.
    #[error("numerical divergence: non-finite state at t = {time:.6}")]
    NumericalDivergence { time: f64 },

    /// A configuration value violates its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
