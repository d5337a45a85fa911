use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("dimension {0} unsupported (need 2..={max})", max = crate::lattice::MAX_DIM)]
    Dimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed bond: endpoints are not nearest neighbours")]
    MalformedBond,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("path was not sampled in this field/bias (config hash {path:016x} vs {expected:016x})")]
    ConfigMismatch { path: u64, expected: u64 },
    #[error("start site {0} is absorbing")]
    StartAbsorbing(usize),
    #[error("start site {0} cannot reach the absorbing set")]
    Disconnected(usize),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("path enumeration length {n} exceeds cap {cap}")]
    EnumerationCap { n: usize, cap: usize },
    #[error("function is not a solution of the harmonic/caloric equation (residual {residual:e})")]
    NotASolution { residual: f64 },
    #[error("function is not strictly positive on the ball")]
    NotPositive,
    #[error("coin parameter beta = {beta} exceeds the feasible bound {beta_max}")]
    InfeasibleBeta { beta: f64, beta_max: f64 },
    #[error("horizon exhausted before the first regeneration")]
    NoRegeneration,
    #[error("too few regeneration blocks: {found} (need {needed})")]
    TooFewBlocks { found: usize, needed: usize },
    #[error("lookahead {lookahead} shorter than level spacing {l1}")]
    LookaheadTooShort { lookahead: usize, l1: i64 },
    #[error("path length {len} does not exceed lookahead {lookahead}")]
    PathTooShort { len: usize, lookahead: usize },
    #[error("state space of {states} exceeds cap {cap}")]
    TooLarge { states: usize, cap: usize },
    #[error("Girsanov weights degenerate: effective sample fraction {fraction:.4} < 0.05")]
    WeightDegeneracy { fraction: f64 },
    #[error("{0} requires a positive tilt")]
    NeedsBias(&'static str),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> LabError {
    LabError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
