//! Voxel grids shared by every module: structures, image stacks and helpers.
//!
//! Arrays are indexed `(z, y, x)`; x and y share the lateral pitch.

use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelPitch {
    /// Lateral (x and y) pitch in µm.
    pub lateral: f64,
    /// Axial step in µm.
    pub axial: f64,
}

impl VoxelPitch {
    pub fn new(lateral: f64, axial: f64) -> Self {
        Self { lateral, axial }
    }

    pub fn voxel_volume(&self) -> f64 {
        self.lateral * self.lateral * self.axial
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lateral > 0.0 && self.axial > 0.0) || !self.lateral.is_finite() || !self.axial.is_finite() {
            return Err(Error::Config(format!("voxel pitches must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Latent fluorescent structure on the voxel grid, non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure3D {
    pub values: Array3<f64>,
    pub pitch: VoxelPitch,
}

impl Structure3D {
    pub fn new(values: Array3<f64>, pitch: VoxelPitch) -> Result<Self> {
        pitch.validate()?;
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("structure values must be finite and non-negative, found {v}")));
        }
        Ok(Self { values, pitch })
    }

    pub fn zeros(dims: (usize, usize, usize), pitch: VoxelPitch) -> Self {
        Self { values: Array3::zeros(dims), pitch }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Acquisition metadata carried alongside a stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    /// Camera gain β in pixel value per photon.
    pub gain: f64,
    /// Readout noise standard deviation in pixel values.
    pub readout_noise: f64,
    /// Illumination/exposure multiplier applied to the expected photon counts.
    pub exposure_scale: f64,
}

impl Default for AcquisitionMeta {
    fn default() -> Self {
        Self { gain: 1.0, readout_noise: 0.0, exposure_scale: 1.0 }
    }
}

/// Measured or simulated image stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub values: Array3<f64>,
    pub pitch: VoxelPitch,
    pub meta: AcquisitionMeta,
}

impl ImageStack {
    pub fn new(values: Array3<f64>, pitch: VoxelPitch) -> Result<Self> {
        pitch.validate()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("image stack contains non-finite values".into()));
        }
        Ok(Self { values, pitch, meta: AcquisitionMeta::default() })
    }

    pub fn with_meta(mut self, meta: AcquisitionMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

pub(crate) fn dims3(a: &Array3<f64>) -> [usize; 3] {
    let (z, y, x) = a.dim();
    [z, y, x]
}

pub(crate) fn check_same_shape(a: &Array3<f64>, b: &Array3<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Min-max normalization to [0, 1]. A constant array maps to zeros.
pub fn normalize_min_max(a: &Array3<f64>) -> Array3<f64> {
    let (lo, hi) = min_max(a.iter().copied());
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return Array3::zeros(a.dim());
    }
    a.mapv(|v| (v - lo) / span)
}

pub fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Maximum intensity projection along z.
pub fn mip(a: &Array3<f64>) -> Array2<f64> {
    a.fold_axis(Axis(0), f64::NEG_INFINITY, |acc, &v| acc.max(v))
}

pub fn inner(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

/// Voxel-center coordinates normalized to [-1, 1] along an axis of length `n`.
pub fn normalized_centers(n: usize) -> Vec<f64> {
    (0..n).map(|i| -1.0 + (2 * i + 1) as f64 / n as f64).collect()
}

/// Pads a structure with `margin` zero voxels on every side of every axis.
pub fn pad_zeros(a: &Array3<f64>, margin: [usize; 3]) -> Array3<f64> {
    let (nz, ny, nx) = a.dim();
    let mut out = Array3::zeros((nz + 2 * margin[0], ny + 2 * margin[1], nx + 2 * margin[2]));
    out.slice_mut(ndarray::s![
        margin[0]..margin[0] + nz,
        margin[1]..margin[1] + ny,
        margin[2]..margin[2] + nx
    ])
    .assign(a);
    out
}

/// Inverse of [`pad_zeros`].
pub fn crop_margin(a: &Array3<f64>, margin: [usize; 3]) -> Array3<f64> {
    let (nz, ny, nx) = a.dim();
    a.slice(ndarray::s![
        margin[0]..nz - margin[0],
        margin[1]..ny - margin[1],
        margin[2]..nx - margin[2]
    ])
    .to_owned()
}
