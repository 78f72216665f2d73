//! Online MCMC debugging engine: chain storage, diagnostics, warning rules
//! and reference samplers.

pub mod analysis;
pub mod diagnostics;
pub mod log;
pub mod model;
pub mod report;
pub mod sampler;
pub mod store;
pub mod warnings;
