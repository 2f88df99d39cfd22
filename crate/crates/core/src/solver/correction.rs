//! Simulated closed-loop correction: each round images the sample under the
//! current residual aberration, estimates it, and applies the negated
//! estimate on top of the previous corrections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{compose_correction, simulate_stack, Illumination, NoiseModel};
use crate::metrics::image_contrast;
use crate::optics::{psf_3d, wavefront_rms, OpticalConfig, WavefrontAberration};
use crate::solver::train::{estimate, TrainConfig};
use crate::volume::{mip, ImageStack, Structure3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub rounds: usize,
    pub illumination: Illumination,
    /// Camera noise; the seed is offset by the round index.
    pub noise: Option<NoiseModel>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { rounds: 3, illumination: Illumination::default(), noise: Some(NoiseModel::default()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRound {
    pub round: usize,
    /// Estimate obtained in this round.
    pub estimated: WavefrontAberration,
    /// Accumulated corrective wavefront after this round.
    pub corrective: WavefrontAberration,
    /// RMS of sample + corrective after this round (λ).
    pub residual_rms: f64,
    /// p99/p1 contrast of the lateral MIP imaged after this round's correction.
    pub contrast: f64,
}

fn acquire(
    structure: &Structure3D,
    residual: &WavefrontAberration,
    optical: &OpticalConfig,
    config: &LoopConfig,
    round: usize,
) -> Result<ImageStack> {
    let psf = psf_3d(optical, residual)?;
    let noise = config.noise.map(|n| NoiseModel { seed: n.seed.wrapping_add(round as u64), ..n });
    Ok(simulate_stack(structure, &psf, &config.illumination, noise.as_ref())?.noisy)
}

/// Runs `config.rounds` rounds of image → estimate → correct.
pub fn iterative_correction(
    sample: &WavefrontAberration,
    phantom: &Structure3D,
    optical: &OpticalConfig,
    train: &TrainConfig,
    config: &LoopConfig,
) -> Result<Vec<CorrectionRound>> {
    if config.rounds == 0 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }
    let (nz, ny, nx) = phantom.dims();
    let optical = optical.with_dims(nz, ny, nx);
    let mut corrective = WavefrontAberration::zero();
    let mut residual = sample.clone();
    let mut stack = acquire(phantom, &residual, &optical, config, 0)?;
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let result = estimate(&stack, &optical, train)?;
        let step = result.aberration.negated();
        corrective = compose_correction(&corrective, &step);
        residual = compose_correction(sample, &corrective);
        stack = acquire(phantom, &residual, &optical, config, round + 1)?;
        let contrast = image_contrast(&mip(&stack.values))?;
        let residual_rms = wavefront_rms(&residual);
        log::info!("round {}: residual {:.4} λ, contrast {:.3}", round + 1, residual_rms, contrast);
        rounds.push(CorrectionRound { round: round + 1, estimated: result.aberration, corrective: corrective.clone(), residual_rms, contrast });
    }
    Ok(rounds)
}
