use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigensolver did not converge: {0}")]
    EigenNonConvergence(String),

    #[error(
        "scattering length {a_s} sits on the confinement-induced resonance (a_s = {resonance})"
    )]
    CouplingResonance { a_s: f64, resonance: f64 },

    #[error("capacity exceeded: {what} needs {needed}, budget is {budget}")]
    Capacity {
        what: String,
        needed: usize,
        budget: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("orbital bases live on different grids")]
    GridMismatch,

    #[error("species {0} has no particles left to annihilate")]
    EmptySpecies(crate::fock::Species),

    #[error("operator failed the hermiticity check: relative asymmetry {0:e}")]
    NonHermitian(f64),

    #[error("Lanczos did not converge after {iterations} iterations (best residual {residual:e})")]
    LanczosNonConvergence { iterations: usize, residual: f64 },

    #[error(
        "propagation step underflow at t = {time}: step {step:e} still has error estimate {error:e}"
    )]
    StepUnderflow { time: f64, step: f64, error: f64 },

    #[error("pair probability for {0} needs at least two particles of that species")]
    TooFewParticles(String),

    #[error("time grid is not uniform (step {index} has dt = {dt}, expected {expected})")]
    NonUniformTimeGrid {
        index: usize,
        dt: f64,
        expected: f64,
    },

    #[error("density is identically zero")]
    ZeroDensity,

    #[error("state collapsed to zero norm after {attempts} annihilation attempts")]
    Renormalization { attempts: usize },

    #[error("no shot records to average")]
    EmptyShots,

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
