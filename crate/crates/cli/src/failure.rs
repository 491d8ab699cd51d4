use std::fmt;

use msm_bounds::Error;

pub const OK: u8 = 0;
pub const VERIFICATION: u8 = 1;
pub const INPUT: u8 = 2;
pub const SOLVER: u8 = 3;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: String) -> Self {
        Failure { code: INPUT, message }
    }

    pub fn io(context: &str, e: impl fmt::Display) -> Self {
        Failure::input(format!("{context}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::InvalidData(_) | Error::InvalidArgument(_) | Error::NonBinaryOutcome(_) | Error::EmptyTreatedGroup => {
                INPUT
            }
            _ => SOLVER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}
