use thiserror::Error;

/// Errors surfaced by simulation, diagnostics and planning routines.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("backward horizon exceeded: requested t = {t}, maximal backward time {horizon}")]
    BackwardHorizonExceeded { t: f64, horizon: f64 },
    #[error("integration diverged: {0}")]
    IntegrationDiverged(String),
    #[error("bracket family exceeded budget: {size} > {cap}")]
    DepthBudgetExceeded { size: usize, cap: usize },
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("state not in K: {0}")]
    NotInK(String),
    #[error("law has no absolutely continuous part")]
    NoDensity,
    #[error("exponential-decay parameters inconsistent with laws: {0}")]
    NoExpDecay(String),
    #[error("survival function of law {state} has a jump below its terminal time")]
    DiscontinuousLaw { state: usize },
    #[error("time {t} outside recorded range [0, {t_end}]")]
    OutOfRange { t: f64, t_end: f64 },
    #[error("jump budget {budget} exceeded before reaching the horizon")]
    JumpBudgetExceeded { budget: usize },
    #[error("control sequence not admissible: {0}")]
    NotAdmissible(String),
    #[error("0 is not in the support of law {state}")]
    ZeroNotInSupport { state: usize },
    #[error("no everywhere-positive transition path from {from} to {to}")]
    IrreducibilityPathNotFound { from: usize, to: usize },
    #[error("iteration is not contracting (empirical factor {factor})")]
    NotContracting { factor: f64 },
    #[error("histogram axes differ")]
    AxisMismatch,
    #[error("degenerate dwell threshold: {0}")]
    DegenerateThreshold(String),
    #[error("invalid system specification: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
