//! Deconvolution and phase-retrieval baselines.

mod gs;
mod rld;

pub use gs::{gs_phase_retrieval, GsConfig, GsResult};
pub use rld::{richardson_lucy, rld_blind, rld_nonblind, RldConfig};
