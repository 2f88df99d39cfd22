use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::filter::gaussian_blur_3d;
use crate::metrics::spectral::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbrConfig {
    /// Denoising σ in voxels.
    pub lowpass_sigma: f64,
    /// σ of the blur subtracted to remove slowly varying background.
    pub highpass_sigma: f64,
    pub max_iterations: usize,
    /// Relative log-likelihood change that ends EM.
    pub tolerance: f64,
    /// Percentiles initializing the two component means.
    pub init_percentiles: [f64; 2],
    /// Share one variance between the components.
    pub tied_variance: bool,
}

impl Default for SbrConfig {
    fn default() -> Self {
        Self { lowpass_sigma: 1.0, highpass_sigma: 10.0, max_iterations: 500, tolerance: 1e-8, init_percentiles: [10.0, 90.0], tied_variance: true }
    }
}

impl SbrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.highpass_sigma > self.lowpass_sigma) || self.lowpass_sigma < 0.0 {
            return Err(Error::Config("need 0 ≤ lowpass_sigma < highpass_sigma".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("EM tolerance and iteration count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbrResult {
    pub sbr: f64,
    pub signal: Array3<bool>,
    pub background: Array3<bool>,
    pub converged: bool,
    /// Component means of the filtered values, `[background, signal]`.
    pub means: [f64; 2],
}

struct Gmm {
    weight: [f64; 2],
    mean: [f64; 2],
    var: [f64; 2],
}

impl Gmm {
    fn log_density(&self, k: usize, x: f64) -> f64 {
        let d = x - self.mean[k];
        self.weight[k].ln() - 0.5 * (2.0 * std::f64::consts::PI * self.var[k]).ln() - d * d / (2.0 * self.var[k])
    }

    /// Posterior probability of component 1.
    fn posterior(&self, x: f64) -> f64 {
        let a = self.log_density(0, x);
        let b = self.log_density(1, x);
        1.0 / (1.0 + (a - b).exp())
    }
}

fn fit_gmm(values: &[f64], config: &SbrConfig) -> Result<(Gmm, bool)> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 1e-12 * (1.0 + mean * mean)) {
        return Err(Error::Undefined("SBR undefined for a single-level stack".into()));
    }
    let floor = 1e-9 * var;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m0 = percentile(&sorted, config.init_percentiles[0]);
    let m1 = percentile(&sorted, config.init_percentiles[1]);
    if !(m1 > m0) {
        return Err(Error::Undefined("SBR undefined: percentiles coincide".into()));
    }
    // initial spread and weights from the split halfway between the means
    let cut = 0.5 * (m0 + m1);
    let (mut acc, mut cnt) = ([0.0f64; 2], [0.0f64; 2]);
    for &v in values {
        let k = usize::from(v > cut);
        let d = v - [m0, m1][k];
        acc[k] += d * d;
        cnt[k] += 1.0;
    }
    let init_var = if config.tied_variance {
        [((acc[0] + acc[1]) / n).max(floor); 2]
    } else {
        [(acc[0] / cnt[0].max(1.0)).max(floor), (acc[1] / cnt[1].max(1.0)).max(floor)]
    };
    let w1 = (cnt[1] / n).clamp(0.01, 0.99);
    let mut g = Gmm { weight: [1.0 - w1, w1], mean: [m0, m1], var: init_var };
    let mut last = f64::NEG_INFINITY;
    let mut resp = vec![0.0; values.len()];
    for _ in 0..config.max_iterations {
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(values) {
            let a = g.log_density(0, x);
            let b = g.log_density(1, x);
            let m = a.max(b);
            ll += m + ((a - m).exp() + (b - m).exp()).ln();
            *r = 1.0 / (1.0 + (a - b).exp());
        }
        let w1: f64 = resp.iter().sum();
        let w0 = n - w1;
        if w0 < 1e-9 || w1 < 1e-9 {
            return Err(Error::Undefined("SBR undefined: mixture collapsed to one component".into()));
        }
        let mu1 = resp.iter().zip(values).map(|(r, x)| r * x).sum::<f64>() / w1;
        let mu0 = resp.iter().zip(values).map(|(r, x)| (1.0 - r) * x).sum::<f64>() / w0;
        let v1 = resp.iter().zip(values).map(|(r, x)| r * (x - mu1).powi(2)).sum::<f64>() / w1;
        let v0 = resp.iter().zip(values).map(|(r, x)| (1.0 - r) * (x - mu0).powi(2)).sum::<f64>() / w0;
        let var = if config.tied_variance {
            let v = (w0 * v0 + w1 * v1) / n;
            [v.max(floor); 2]
        } else {
            [v0.max(floor), v1.max(floor)]
        };
        g = Gmm { weight: [w0 / n, w1 / n], mean: [mu0, mu1], var };
        if (ll - last).abs() <= config.tolerance * ll.abs().max(1.0) {
            return Ok((g, true));
        }
        last = ll;
    }
    log::warn!("EM did not converge in {} iterations; using the last iterate", config.max_iterations);
    Ok((g, false))
}

/// Signal-to-background ratio: low-pass, remove the slowly varying
/// component, classify voxels with a two-component Gaussian mixture, and
/// take the ratio of the mean original values over the two classes.
pub fn sbr(stack: &Array3<f64>, config: &SbrConfig) -> Result<SbrResult> {
    config.validate()?;
    if stack.is_empty() || stack.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("SBR needs a non-empty finite stack".into()));
    }
    let lo = gaussian_blur_3d(stack, [config.lowpass_sigma; 3]);
    let filtered = &lo - &gaussian_blur_3d(&lo, [config.highpass_sigma; 3]);
    let values: Vec<f64> = filtered.iter().copied().collect();
    let (gmm, converged) = fit_gmm(&values, config)?;
    let high = usize::from(gmm.mean[1] > gmm.mean[0]);
    let signal = filtered.mapv(|x| {
        let p = gmm.posterior(x);
        if high == 1 {
            p > 0.5
        } else {
            p < 0.5
        }
    });
    let background = signal.mapv(|s| !s);
    let mean_over = |mask: &Array3<bool>| {
        let (s, c) = stack.iter().zip(mask.iter()).filter(|(_, &m)| m).fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        (c > 0).then(|| s / c as f64)
    };
    let (Some(sig), Some(bg)) = (mean_over(&signal), mean_over(&background)) else {
        return Err(Error::Undefined("SBR undefined: one class is empty".into()));
    };
    if !(bg > 0.0) {
        return Err(Error::Undefined("SBR undefined: non-positive background".into()));
    }
    let means = [gmm.mean[1 - high], gmm.mean[high]];
    Ok(SbrResult { sbr: sig / bg, signal, background, converged, means })
}
