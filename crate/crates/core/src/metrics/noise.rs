use ndarray::{Array3, Axis};

use crate::error::{Error, Result};

/// Gain from frames at constant illumination, `(frame, y, x)`: median over
/// pixels of the temporal variance (n − 1) over the temporal mean. Pixels
/// with non-positive mean or zero variance are excluded.
pub fn camera_gain(frames: &Array3<f64>) -> Result<f64> {
    let t = frames.len_of(Axis(0));
    if t < 2 {
        return Err(Error::Input("gain estimation needs at least two frames".into()));
    }
    let mean = frames.mean_axis(Axis(0)).expect("non-empty");
    let var = frames.var_axis(Axis(0), 1.0);
    let mut ratios: Vec<f64> =
        mean.iter().zip(var.iter()).filter(|(m, v)| **m > 0.0 && **v > 0.0).map(|(m, v)| v / m).collect();
    if ratios.is_empty() {
        return Err(Error::Input("every pixel was excluded (zero mean or zero variance)".into()));
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    Ok(if n % 2 == 1 { ratios[n / 2] } else { 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]) })
}

/// `SNR = (ȳ/β) / √(ȳ/β + (n_r/β)²)`, with ȳ the mean over `mask`.
pub fn snr(stack: &Array3<f64>, mask: &Array3<bool>, gain: f64, readout_noise: f64) -> Result<f64> {
    crate::volume::check_same_shape(stack, &mask.mapv(|_| 0.0), "SNR mask")?;
    if !(gain > 0.0) {
        return Err(Error::Domain("gain must be positive".into()));
    }
    let (sum, count) = stack.iter().zip(mask.iter()).filter(|(_, &m)| m).fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if count == 0 {
        return Err(Error::Input("empty signal mask".into()));
    }
    Ok(snr_from_mean(sum / count as f64, gain, readout_noise))
}

pub(crate) fn snr_from_mean(mean: f64, gain: f64, readout_noise: f64) -> f64 {
    let photons = (mean / gain).max(0.0);
    let denom = (photons + (readout_noise / gain).powi(2)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        photons / denom
    }
}
