use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot step from the goal state")]
    StepFromGoal,
    #[error("state index {0} is out of range")]
    InvalidState(usize),
    #[error("action index {0} is out of range")]
    InvalidAction(usize),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle parameter: {0}")]
    InvalidParameter(String),
    #[error("value iteration did not converge within {0} sweeps; is there a proper policy?")]
    IterationCap(usize),
    #[error("policy has {got} entries, model has {expected} states")]
    PolicyShape { expected: usize, got: usize },
    #[error("linear solve failed for a proper policy")]
    Singular,
}

#[derive(Debug, Error)]
pub enum VisgoError {
    #[error("observed cost {0} is outside [0, 1]")]
    CostOutOfRange(f64),
    #[error("index out of range: state {state}, action {action}, next {next}")]
    IndexOutOfRange { state: usize, action: usize, next: usize },
    #[error("invalid precision {0}; must be positive")]
    InvalidPrecision(f64),
    #[error(
        "value iteration ran {iterations} sweeps, above the contraction bound {bound} \
         (nu = {nu}, last change {last_change})"
    )]
    ContractionViolation {
        iterations: usize,
        bound: usize,
        nu: f64,
        last_change: f64,
    },
}

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model is not valid: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Visgo(#[from] VisgoError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
