//! Configuration and commands behind the `droughtformer` binary.

pub mod commands;
pub mod config;

use droughtformer::Error;

/// Process exit status for an error: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        Error::Data(_) | Error::Format { .. } | Error::Io { .. } | Error::Shape(_) => 3,
    }
}
