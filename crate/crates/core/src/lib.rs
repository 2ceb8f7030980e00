//! Solar-powered downlink scheduling: K-SEP harvest prediction, PTF / PTF-On
//! proportionally fair power and slot allocation, an SG+TDMA baseline and a
//! block-coordinate reference solver.

pub mod cli;
pub mod domain;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod predictor;
pub mod refsolver;
pub mod scheduler;
pub mod synthetic;

pub use error::{Error, Result};
