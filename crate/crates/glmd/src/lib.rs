//! Runtime around `glmd-core`: TCP coordinator and workers, the Monte-Carlo
//! sweep and its CSV outputs, the spline case study, and the `glmd` CLI.

pub mod casestudy;
pub mod config;
pub mod experiment;
pub mod net;
pub mod report;

/// A bad command line, configuration or input file.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_TRANSPORT: u8 = 4;

/// Process exit status for an error: 2 usage, 3 numerical failure,
/// 4 transport failure, 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<glmd_core::Error>() {
            return if e.is_numerical() {
                EXIT_NUMERICAL
            } else if e.is_transport() {
                EXIT_TRANSPORT
            } else if matches!(e, glmd_core::Error::InvalidArgument(_)) {
                EXIT_USAGE
            } else {
                EXIT_OTHER
            };
        }
    }
    EXIT_OTHER
}
