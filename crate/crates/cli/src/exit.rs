use optflow_core::Error;

pub const OK: u8 = 0;
pub const CHECK_FAILED: u8 = 1;
pub const INVALID_INPUT: u8 = 2;
pub const ORACLE_FAILURE: u8 = 3;
pub const INVARIANT_VIOLATION: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn input(msg: impl std::fmt::Display) -> Self {
        Failure::new(INVALID_INPUT, anyhow::anyhow!("{msg}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::OracleFailure { .. } => ORACLE_FAILURE,
            Error::NonFiniteState { .. } => INVARIANT_VIOLATION,
            _ => INVALID_INPUT,
        };
        Failure::new(code, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(INVALID_INPUT, e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::new(INVALID_INPUT, e)
    }
}
