use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fftfreq, Fft2};

/// Percentile `q ∈ [0, 100]` of sorted data, linearly interpolated at
/// rank `q/100 · (n − 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Ratio of the 99th to the 1st percentile pixel value.
pub fn image_contrast(image: &Array2<f64>) -> Result<f64> {
    if image.is_empty() {
        return Err(Error::Input("empty image".into()));
    }
    let mut v: Vec<f64> = image.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    let p1 = percentile(&v, 1.0);
    if !(p1 > 0.0) {
        return Err(Error::Domain(format!("1st percentile is {p1}; add an offset before measuring contrast")));
    }
    Ok(percentile(&v, 99.0) / p1)
}

/// Radially averaged power spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPsd {
    /// Annulus centers, cycles/µm.
    pub frequencies: Vec<f64>,
    /// Mean of `|F|² / N` per annulus.
    pub power: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `|FFT2|²` normalized by the pixel count (so the count-weighted sum of
/// `power` equals the image energy), averaged over annuli of width `1/(n·pitch)`.
pub fn radial_psd(image: &Array2<f64>, pitch: f64) -> RadialPsd {
    let (ny, nx) = image.dim();
    let spectrum: Vec<Complex64> = Fft2::new(ny, nx).forward_real(image);
    let fy = fftfreq(ny);
    let fx = fftfreq(nx);
    let df = 1.0 / (ny.min(nx) as f64 * pitch);
    let n = (ny * nx) as f64;
    let mut sums = Vec::new();
    let mut counts = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            let f = ((fy[y] / pitch).powi(2) + (fx[x] / pitch).powi(2)).sqrt();
            let bin = (f / df).round() as usize;
            if bin >= sums.len() {
                sums.resize(bin + 1, 0.0);
                counts.resize(bin + 1, 0);
            }
            sums[bin] += spectrum[y * nx + x].norm_sqr() / n;
            counts[bin] += 1;
        }
    }
    let power = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let frequencies = (0..sums.len()).map(|k| k as f64 * df).collect();
    RadialPsd { frequencies, power, counts }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrast_examples() {
        assert!((image_contrast(&Array2::from_elem((4, 4), 3.0)).unwrap() - 1.0).abs() < 1e-15);
        let ramp = Array2::from_shape_fn((1, 100), |(_, x)| (x + 1) as f64);
        assert!((image_contrast(&ramp).unwrap() - 99.01 / 1.99).abs() < 1e-12);
        let k = ramp.mapv(|v| 3.5 * v);
        assert!((image_contrast(&k).unwrap() - image_contrast(&ramp).unwrap()).abs() < 1e-12);
        assert!(image_contrast(&Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn sinusoid_peaks_at_its_frequency() {
        let n = 64;
        let pitch = 0.1;
        let f0 = 8.0 / (n as f64 * pitch);
        let img = Array2::from_shape_fn((n, n), |(_, x)| (2.0 * std::f64::consts::PI * f0 * x as f64 * pitch).cos());
        let psd = radial_psd(&img, pitch);
        let peak = psd.power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((psd.frequencies[peak] - f0).abs() < 1e-9);
    }

    #[test]
    fn delta_is_flat() {
        let mut img = Array2::zeros((32, 32));
        img[[5, 7]] = 1.0;
        let psd = radial_psd(&img, 0.2);
        for (p, &c) in psd.power.iter().zip(&psd.counts) {
            if c > 0 {
                assert!((p - 1.0 / 1024.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn parseval() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let img = Array2::from_shape_fn((48, 48), |_| rng.random::<f64>());
        let psd = radial_psd(&img, 0.12);
        let binned: f64 = psd.power.iter().zip(&psd.counts).map(|(p, &c)| p * c as f64).sum();
        let energy: f64 = img.iter().map(|v| v * v).sum();
        assert!((binned / energy - 1.0).abs() < 0.02);
    }
}
