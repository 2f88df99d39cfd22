//! Training objective: `1 − SSIM` plus total-variation and ℓ1 priors.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::solver::ssim::ssim_with_grad;
use crate::volume::{check_same_shape, ImageStack, Structure3D};

/// Components of the training objective at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `1 − SSIM`, in `[0, 2]`.
    pub ssim_term: f64,
    /// Weighted total variation.
    pub tv_term: f64,
    /// Weighted value-distribution (ℓ1) term.
    pub l1_term: f64,
}

impl LossBreakdown {
    pub fn new(ssim: f64, tv: f64, l1: f64, weights: LossWeights) -> Self {
        let ssim_term = 1.0 - ssim;
        let tv_term = weights.tv * tv;
        let l1_term = weights.l1 * l1;
        Self { total: ssim_term + tv_term + l1_term, ssim_term, tv_term, l1_term }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.ssim_term.is_finite() && self.tv_term.is_finite() && self.l1_term.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub tv: f64,
    pub l1: f64,
    /// SSIM dynamic range `L`.
    pub range: f64,
}

/// Unweighted `(tv, l1)`: anisotropic TV as the mean over axes (of length
/// > 1) of the mean absolute forward difference, and the mean absolute value.
pub fn regularizer(values: &Array3<f64>) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let l1 = values.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mut tv = 0.0;
    let mut axes = 0;
    for a in 0..3 {
        let len = values.len_of(Axis(a));
        if len < 2 {
            continue;
        }
        axes += 1;
        let hi = values.slice_axis(Axis(a), (1..).into());
        let lo = values.slice_axis(Axis(a), (..len - 1).into());
        let count = hi.len() as f64;
        tv += ndarray::Zip::from(&hi).and(&lo).fold(0.0, |acc, h, l| acc + (h - l).abs()) / count;
    }
    if axes > 0 {
        tv /= axes as f64;
    }
    (tv, l1)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Subgradient of `tv_w · tv + l1_w · l1`, with `sign(0) = 0`.
pub(crate) fn regularizer_grad(values: &Array3<f64>, tv_w: f64, l1_w: f64) -> Array3<f64> {
    let n = values.len().max(1) as f64;
    let mut grad = values.mapv(|v| l1_w * sign(v) / n);
    if tv_w == 0.0 {
        return grad;
    }
    let axes = (0..3).filter(|&a| values.len_of(Axis(a)) > 1).count();
    for a in 0..3 {
        let len = values.len_of(Axis(a));
        if len < 2 {
            continue;
        }
        let count = (values.len() / len * (len - 1)) as f64;
        let w = tv_w / (count * axes as f64);
        let s = {
            let hi = values.slice_axis(Axis(a), (1..).into());
            let lo = values.slice_axis(Axis(a), (..len - 1).into());
            ndarray::Zip::from(&hi).and(&lo).map_collect(|h, l| w * sign(h - l))
        };
        {
            let mut hi = grad.slice_axis_mut(Axis(a), (1..).into());
            hi += &s;
        }
        let mut lo = grad.slice_axis_mut(Axis(a), (..len - 1).into());
        lo -= &s;
    }
    grad
}

/// Loss of a predicted stack against the measurement, with the regularizer
/// evaluated on the structure.
pub fn loss(estimate: &ImageStack, measured: &ImageStack, structure: &Structure3D, weights: LossWeights) -> Result<LossBreakdown> {
    check_same_shape(&estimate.values, &measured.values, "loss operands")?;
    let (ssim, _) = ssim_with_grad(&estimate.values, &measured.values, weights.range, false);
    let (tv, l1) = regularizer(&structure.values);
    Ok(LossBreakdown::new(ssim, tv, l1, weights))
}
