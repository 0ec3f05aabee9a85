pub mod baselines;
pub mod cache;
pub mod calibration;
pub mod context;
pub mod critic;
pub mod dataset;
pub mod diff;
pub mod evaluation;
pub mod transport;
