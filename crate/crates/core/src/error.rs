use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error{}: {message}", location(*.line, *.column))]
    Parse {
        message: String,
        line: Option<usize>,
        column: Option<usize>,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite derivative at t = {t}")]
    NonFinite { t: f64 },

    #[error("step limit of {max_steps} reached at t = {t}")]
    StepLimit { t: f64, max_steps: usize },

    #[error("numerical rank failure, singular values {singular_values:?}")]
    RankFailure { singular_values: Vec<f64> },

    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian at Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("ambiguous set topology for machine G{machine}: {detail}")]
    AmbiguousTopology { machine: usize, detail: String },

    #[error("barrier integration failed for machine G{machine} after {points} points: {source}")]
    Barrier {
        machine: usize,
        points: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("synchronization certificate failed: {lhs:.6} > sin({gamma:.6}) = {rhs:.6}")]
    CertificateFailed { gamma: f64, lhs: f64, rhs: f64 },

    #[error("no feasible bounds candidate within {evaluations} evaluations")]
    NoFeasibleCandidate { evaluations: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tags an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" at line {l}, column {c}"),
        (Some(l), None) => format!(" at line {l}"),
        _ => String::new(),
    }
}
