use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read mesh {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: non-triangular face with {count} vertices")]
    NonTriangularFace { line: usize, count: usize },
    #[error("face {face}: vertex index {index} out of range (mesh has {count} vertices)")]
    IndexOutOfRange { face: usize, index: i64, count: usize },
    #[error("edge ({0}, {1}) is shared by more than two faces")]
    NonManifoldEdge(usize, usize),
    #[error("face {face} is degenerate (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("topology has not been built")]
    MissingTopology,
    #[error("edge {0} is not an interior edge")]
    NotInterior(usize),
    #[error("need at least 3 Dirichlet vertices, got {0}")]
    TooFewDirichlet(usize),
    #[error("all Dirichlet vertices are collinear")]
    CollinearDirichlet,
    #[error("Dirichlet index {0} out of range")]
    DirichletOutOfRange(usize),
    #[error("vertex {0}: adjacent face normals cancel")]
    ZeroNormal(usize),
}

#[derive(Debug, Error)]
pub enum ElasticError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("face {face}: deformed element is inverted or degenerate (det {det:e})")]
    InvertedElement { face: usize, det: f64 },
    #[error("energy density undefined for det A = {0:e}")]
    NonPositiveDeterminant(f64),
    #[error("stiffness matrix is not positive definite at vertex {vertex} coordinate {coord} (pivot {pivot})")]
    NotPositiveDefinite { vertex: usize, coord: usize, pivot: usize },
    #[error("face {0} is frozen")]
    FrozenFace(usize),
    #[error("expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("thickness of face {face} is not positive ({value})")]
    NonPositiveThickness { face: usize, value: f64 },
}

#[derive(Debug, Error)]
pub enum FollowerError {
    #[error(transparent)]
    Elastic(#[from] ElasticError),
    #[error("force coefficients violate constraint {constraint} (Q = {value:e})")]
    Infeasible { constraint: usize, value: f64 },
    #[error("no seed points supplied")]
    NoSeeds,
    #[error("coefficient dimension {got} does not match the force basis ({expected})")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum LeaderError {
    #[error(transparent)]
    Elastic(#[from] ElasticError),
    #[error(transparent)]
    Follower(#[from] FollowerError),
    #[error("thickness is not strictly feasible: {0}")]
    Infeasible(String),
    #[error("follower did not converge on sample {sample} after {iterations} iterations")]
    FollowerNotConverged { sample: usize, iterations: usize },
    #[error("feasibility backtracking exhausted at iteration {iteration} (|g|_inf = {grad_norm:e})")]
    StepExhausted { iteration: usize, grad_norm: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("every sample was excluded")]
    NoSamples,
}

#[derive(Debug, Error)]
pub enum BilevelError {
    #[error("H[u] is not positive definite at u = {0:?}")]
    NotSpd(Vec<f64>),
    #[error("extreme point set is empty")]
    NoExtremePoints,
    #[error("eta must be positive, got {0}")]
    InvalidEta(f64),
    #[error("no grid point is eta-optimal at this resolution; refine the grid")]
    EmptyFilteredSet,
    #[error("grid search needs a box hull with dimension <= 3")]
    NoBox,
}

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("sample is empty")]
    Empty,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("beta must lie in [0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("order must be >= 1, got {0}")]
    InvalidOrder(f64),
}
