//! Camera noise: Poisson photon statistics, linear gain and Gaussian readout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{AcquisitionMeta, ImageStack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Gain β in pixel value per photon.
    pub gain: f64,
    /// Readout noise standard deviation in pixel values.
    pub readout_noise: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { gain: 1.0, readout_noise: 0.0, seed: 0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return Err(Error::Config(format!("gain must be positive, got {}", self.gain)));
        }
        if !(self.readout_noise >= 0.0) || !self.readout_noise.is_finite() {
            return Err(Error::Config(format!("readout noise must be non-negative, got {}", self.readout_noise)));
        }
        Ok(())
    }
}

/// Mean above which Poisson counts are drawn from the normal approximation.
const NORMAL_APPROX_MEAN: f64 = 1e4;

/// Draws `β·Poisson(c) + N(0, n_r)` per voxel, where `c` is the expected
/// photon count held in `stack`.
pub fn apply_noise(stack: &ImageStack, noise: &NoiseModel) -> Result<ImageStack> {
    noise.validate()?;
    if let Some(v) = stack.values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("expected photon counts must be non-negative, found {v}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let readout = Normal::new(0.0, noise.readout_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let values = stack.values.mapv(|c| {
        let count = sample_poisson(c, &mut rng);
        let read = if noise.readout_noise > 0.0 { readout.sample(&mut rng) } else { 0.0 };
        noise.gain * count + read
    });
    let meta = AcquisitionMeta { gain: noise.gain, readout_noise: noise.readout_noise, ..stack.meta };
    Ok(ImageStack { values, pitch: stack.pitch, meta })
}

pub(crate) fn sample_poisson(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    if mean <= 0.0 {
        0.0
    } else if mean > NORMAL_APPROX_MEAN {
        let n = Normal::new(mean, mean.sqrt()).expect("finite mean");
        n.sample(rng).round().max(0.0)
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng)
    }
}
