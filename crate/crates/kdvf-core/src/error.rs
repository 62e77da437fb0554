use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KdvfError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical setup error: {0}")]
    NumericalSetup(String),
    #[error("blow-up at t = {t}")]
    BlowUp { t: f64 },
    #[error("kernel solve failed: {0}")]
    KernelSolve(String),
    #[error("degenerate transform: smallest singular value {0:e}")]
    DegenerateTransform(f64),
    #[error("degenerate gain: p vanishes")]
    DegenerateGain,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("resonant length L = {0}: sin(L/2) vanishes")]
    ResonantLength(f64),
    #[error("critical length L = {length}: witness (k, l) = ({k}, {l})")]
    CriticalLength { length: f64, k: u32, l: u32 },
    #[error("near-critical length: {0}")]
    NearCritical(String),
    #[error("fixed point did not contract after {iterations} iterations (last ratio {ratio})")]
    NonContraction { iterations: usize, ratio: f64 },
}

pub type Result<T> = std::result::Result<T, KdvfError>;
