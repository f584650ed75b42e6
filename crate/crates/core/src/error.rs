use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("residual has no sign change below eta cap {cap:e}")]
    NoBracket { cap: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular implicit step at t = {t}")]
    SingularStep { t: f64 },
    #[error("time grid too coarse: dt * k_max = {value} exceeds 0.5")]
    GridTooCoarse { value: f64 },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("mode {k} never exceeds twice its initial amplitude")]
    NoPeak { k: i64 },
    #[error("parse error{}: {msg}", fmt_loc(.line, .key))]
    Parse {
        line: Option<usize>,
        key: Option<String>,
        msg: String,
    },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn fmt_loc(line: &Option<usize>, key: &Option<String>) -> String {
    match (line, key) {
        (Some(l), Some(k)) => format!(" at line {l}, key `{k}`"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(k)) => format!(" at key `{k}`"),
        (None, None) => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
