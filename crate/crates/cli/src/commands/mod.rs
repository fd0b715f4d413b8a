pub mod duality;
pub mod flux;
pub mod generate;
pub mod gini;
pub mod train;

use flowfield::Error;
use std::path::Path;

pub enum Status {
    Pass,
    Fail(String),
}

#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

impl CmdError {
    pub fn usage(message: impl Into<String>) -> Self {
        CmdError { code: 1, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CmdError { code: 1, message: format!("{}: {e}", path.display()) }
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } => 2,
            _ => 1,
        };
        CmdError { code, message: e.to_string() }
    }
}

pub fn json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("report types serialize");
    s.push(b'\n');
    s
}
