//! Quantitative evaluation: SNR, SBR, correlation, transport distance,
//! contrast, spectra and breakpoint fitting.

mod cutoff;
mod filter;
mod noise;
mod sbr;
mod similarity;
mod spectral;

use serde::{Deserialize, Serialize};

pub use cutoff::{piecewise_cutoff, PiecewiseFit};
pub use filter::gaussian_blur_3d;
pub use noise::{camera_gain, snr};
pub use sbr::{sbr, SbrConfig, SbrResult};
pub use similarity::{emd_sliced, pcc};
pub use spectral::{image_contrast, percentile, radial_psd, RadialPsd};

use crate::optics::WavefrontAberration;

/// ℓ2 norm of the coefficient difference over the union of modes (λ).
pub fn wavefront_rms_error(estimate: &WavefrontAberration, truth: &WavefrontAberration) -> f64 {
    let keys: std::collections::BTreeSet<u32> =
        estimate.coefficients.keys().chain(truth.coefficients.keys()).copied().collect();
    keys.iter().map(|&j| (estimate.get(j) - truth.get(j)).powi(2)).sum::<f64>().sqrt()
}

/// Evaluation of one run; absent entries were not computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub snr: Option<f64>,
    pub sbr: Option<f64>,
    pub pcc: Option<f64>,
    pub emd: Option<f64>,
    pub contrast: Option<f64>,
    pub rms_wavefront_error: Option<f64>,
    pub radial_psd: Option<RadialPsd>,
}
