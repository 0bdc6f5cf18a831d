//! Persistence, reports, the annotation service and the `mmr` command line
//! around [`mmr_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod runio;
pub mod serve;
pub mod store;

pub use config::LabConfig;
pub use error::{LabError, Result};
