use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid complex: {0}")]
    InvalidComplex(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("subcomplexes too close to separate (distance {0:e})")]
    DegenerateSeparation(f64),
    #[error("eigensolver failed to converge")]
    EigensolverFailure,
    #[error("multiset length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rank crossing of the tolerance could not be localised on simplex {0}")]
    UnresolvedCrossing(usize),
    #[error("refinement budget of {0} subdivisions exceeded")]
    BudgetExceeded(usize),
    #[error("spectral gap {eta:e} of stratum {stratum} is below 10x the rank tolerance")]
    GapTooSmall { stratum: usize, eta: f64 },
    #[error("stratum {0} has an empty boundary")]
    EmptyBoundary(usize),
    #[error("eigenvalue count crosses the cut inside the region (simplex {0})")]
    RankJump(usize),
    #[error("frame rank {rank} is below the extension bound {bound}")]
    DimensionObstruction { rank: usize, bound: usize },
    #[error("frame extension stuck on simplex {0}")]
    ExtensionStuck(usize),
    #[error("no trivial complement of rank <= {0} found")]
    NoComplementFound(usize),
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("construction failed: {0}")]
    ConstructionFailed(String),
    #[error("rank violation: rank(A) = {0} exceeds rank(B) = {1}")]
    RankViolation(usize, usize),
    #[error("no delta in [1e-12, 1] reaches the target (best residual {0:e})")]
    DeltaSearchFailed(f64),
    #[error("rank gap hypothesis violated: target rank {0} too large")]
    GapViolation(usize),
    #[error("collar threshold {0:e} underflows the rank tolerance")]
    CollarTooThin(f64),
    #[error("no delta found down to 2^-40")]
    NoDeltaFound,
    #[error("estimators disagree: rank integral {0} vs trace limit {1}")]
    EstimatorDisagreement(f64, f64),
    #[error("sample budget exceeded")]
    SampleBudgetExceeded,
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
