use thiserror::Error;

use crate::algebra::Source;
use crate::model::{Rank, Violation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("extent at offset {offset} has zero length")]
    ZeroLength { offset: u64 },
    #[error("extent ({offset}, {length}) overflows the file offset range")]
    OffsetOverflow { offset: u64, length: u64 },
    #[error("invalid request list: {0}")]
    InvalidList(Violation),
    #[error("rank {rank}: extent {index} overlaps the previous extent")]
    SelfOverlap { rank: Rank, index: usize },
    #[error("topology needs at least one node and one process per node")]
    EmptyTopology,
    #[error("{procs} processes cannot be spread uniformly over {nodes} nodes")]
    NonUniform { procs: usize, nodes: usize },
    #[error("rank {rank} out of range for {nprocs} processes")]
    RankOutOfRange { rank: Rank, nprocs: usize },
    #[error("at least one global aggregator is required")]
    NoGlobalAggregators,
    #[error("rank {0} appears twice in the global aggregator list")]
    DuplicateGlobalAggregator(Rank),
    #[error("global aggregator {0} is not a local aggregator")]
    GlobalNotLocal(Rank),
    #[error("node {node} has no local aggregator covering its first rank")]
    UncoveredNode { node: usize },
    #[error("stripe size must be positive")]
    ZeroStripeSize,
    #[error("stripe count must be at least 1")]
    ZeroStripeCount,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("cannot select {c} local aggregators from {q} processes")]
    InvalidCount { q: usize, c: usize },
    #[error("{requested} global aggregators requested but only {nprocs} processes exist")]
    TooManyGlobal { requested: usize, nprocs: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlgebraError {
    #[error("input list {list} is not sorted at position {index}")]
    Unsorted { list: usize, index: usize },
    #[error("overlapping extents at offset {offset}: {first:?} and {second:?}")]
    Overlap { offset: u64, first: Source, second: Source },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("expected {expected} process requests in rank order, found {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("two-phase I/O needs every process as a local aggregator ({local} of {nprocs})")]
    NotDegenerate { local: usize, nprocs: usize },
    #[error("global aggregator count {layout} disagrees with file domain count {domains}")]
    DomainMismatch { layout: usize, domains: usize },
    #[error("stripes per round must be at least 1")]
    ZeroRoundWidth,
    #[error("round discipline violated: {0}")]
    RoundDiscipline(String),
    #[error("byte at offset {offset} written twice (aggregator {aggregator}, round {round})")]
    WriteOverlap { offset: u64, aggregator: usize, round: usize },
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("BTIO needs a square process count, got {0}")]
    NotSquare(usize),
    #[error("{what}: {divisor} does not divide {n}")]
    NotDivisible { what: &'static str, n: usize, divisor: usize },
    #[error("process grid {px}x{py}x{pz} does not match {procs} processes")]
    BadFactorization { px: usize, py: usize, pz: usize, procs: usize },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("decomposition: {0}")]
    Malformed(String),
    #[error("decomposition records {recorded} processes, cannot spread onto {target}")]
    TooFewRecorded { recorded: usize, target: usize },
    #[error("reading decomposition: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing decomposition: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Oracle-side write conflicts.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("ranks {first} and {second} both write offset {offset}")]
    Overlap { offset: u64, first: Rank, second: Rank },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: &'static str, message: String },
    #[error("reading config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Json(#[from] serde_json::Error),
}

impl ConfigError {
    pub fn field(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError::Field { field, message: message.into() }
    }
}

/// Top-level error for a full run.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for problems with the supplied configuration or inputs rather
    /// than the simulated data path.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Select(_) | Error::Workload(_) | Error::Model(_))
    }
}
