//! Run configuration: JSON file merged over defaults, then flag overrides.

use std::path::Path;

use cocoa_core::baselines::{GsConfig, RldConfig};
use cocoa_core::forward::{Illumination, ModeSet, NoiseModel, PhantomSpec};
use cocoa_core::metrics::SbrConfig;
use cocoa_core::optics::{OpticalConfig, WavefrontAberration};
use cocoa_core::solver::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Values are log10 of photons per unit structure intensity.
    Illumination,
    /// Values are the wavefront RMS (λ) of random mixed aberrations.
    AberrationRms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub repeats: usize,
    /// Mode family for aberration-RMS sweeps.
    pub mode_set: ModeSet,
    /// Aberration held fixed during illumination sweeps.
    pub fixed_aberration: WavefrontAberration,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            variable: SweepVariable::AberrationRms,
            values: (0..8).map(|k| 0.04 * k as f64).collect(),
            repeats: 3,
            mode_set: ModeSet::Low,
            fixed_aberration: WavefrontAberration::from_pairs([(7, 0.15)]),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Err(CliError::Usage("sweep needs at least one value".into()));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) || self.values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Usage("sweep values must be finite and strictly increasing".into()));
        }
        if self.repeats == 0 {
            return Err(CliError::Usage("sweep repeats must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub emd_projections: usize,
    pub sbr: SbrConfig,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { emd_projections: 200, sbr: SbrConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every nested seed is derived from it.
    pub seed: u64,
    pub optical: OpticalConfig,
    pub phantom: PhantomSpec,
    /// Sample aberration for `psf`, `simulate` and `correct-loop`.
    pub aberration: WavefrontAberration,
    pub illumination: Illumination,
    /// `null` disables shot and readout noise.
    pub noise: Option<NoiseModel>,
    pub train: TrainConfig,
    pub rld: RldConfig,
    pub gs: GsConfig,
    pub rounds: usize,
    pub sweep: SweepSpec,
    pub metrics: MetricsSection,
    /// Seed for the sliced Wasserstein projections.
    pub emd_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            optical: OpticalConfig::default(),
            phantom: PhantomSpec::default(),
            aberration: WavefrontAberration::zero(),
            illumination: Illumination::default(),
            noise: Some(NoiseModel::default()),
            train: TrainConfig::default(),
            rld: RldConfig::default(),
            gs: GsConfig::default(),
            rounds: 3,
            sweep: SweepSpec::default(),
            metrics: MetricsSection::default(),
            emd_seed: 0,
        }
    }
}

/// 64-bit seed from SHA-256 over the parts.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
}

impl RunConfig {
    /// Reads `path` (if any) over the defaults; a missing file is
    /// [`CliError::MissingConfig`].
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingConfig(path.to_path_buf(), e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Overwrites the nested seeds with values derived from [`Self::seed`].
    pub fn derive_seeds(&mut self) {
        let s = self.seed.to_le_bytes();
        self.phantom.seed = derive_seed(&[&s, b"phantom"]);
        if let Some(n) = &mut self.noise {
            n.seed = derive_seed(&[&s, b"noise"]);
        }
        self.train.seed = derive_seed(&[&s, b"train"]);
        self.emd_seed = derive_seed(&[&s, b"emd"]);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.optical.validate()?;
        self.phantom.validate()?;
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        self.train.validate()?;
        self.rld.validate()?;
        self.metrics.sbr.validate()?;
        if self.rounds == 0 {
            return Err(CliError::Config("rounds must be at least 1".into()));
        }
        if self.metrics.emd_projections == 0 {
            return Err(CliError::Config("emd_projections must be at least 1".into()));
        }
        Ok(())
    }
}
