//! Front-end plumbing for the `qgn` binary: config parsing, the experiment
//! driver, reference-series oracles, comparison reports, the invariant
//! battery, and MPS conversion. Exposed as a library so integration tests
//! can drive the same code paths the binary uses.

pub mod config;
pub mod convert;
pub mod oracle;
pub mod report;
pub mod run;
pub mod verify;
