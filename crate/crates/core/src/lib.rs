//! Forecasting nonstationary functional time series (such as yearly
//! age-specific log mortality curves) with two-stage dynamic functional
//! principal component analysis.

pub mod error;
pub mod eval;
pub mod fpca;
pub mod fts;
pub mod ingest;
pub mod lrcov;
pub mod model_io;
pub mod nsmodel;
pub mod pipeline;
pub mod scorecast;
pub mod smooth;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, Result};
