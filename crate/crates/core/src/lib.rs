//! Statistical toolkit for space-time panel data: ingestion of panel and
//! gridded CSV inputs, per-series preprocessing, panel regressions with
//! robust covariance estimators, canonical correlation analysis with
//! significance testing, sparse multi-set CCA, rolling-correlation
//! compounding analysis and planted-structure synthetic data.

pub mod cca;
pub mod compound;
pub mod error;
pub mod ingest;
pub mod preprocess;
pub mod regress;
pub mod smcca;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
