//! Optical configuration and pupil-plane sampling.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::fftfreq;
use crate::volume::VoxelPitch;

/// Microscope parameters and the voxel grid they are sampled on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalConfig {
    pub numerical_aperture: f64,
    /// Emission wavelength in µm.
    pub wavelength: f64,
    pub refractive_index: f64,
    /// Lateral pixel size in µm.
    pub lateral_pixel: f64,
    /// Axial plane spacing in µm.
    pub axial_step: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Default for OpticalConfig {
    /// Water-immersion objective imaging GFP onto a 64×64×32 grid.
    fn default() -> Self {
        Self {
            numerical_aperture: 1.0,
            wavelength: 0.51,
            refractive_index: 1.33,
            lateral_pixel: 0.12,
            axial_step: 0.3,
            nx: 64,
            ny: 64,
            nz: 32,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("numerical_aperture", self.numerical_aperture),
            ("wavelength", self.wavelength),
            ("refractive_index", self.refractive_index),
            ("lateral_pixel", self.lateral_pixel),
            ("axial_step", self.axial_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.numerical_aperture >= self.refractive_index {
            return Err(Error::Config(format!(
                "numerical aperture {} must be below the refractive index {}",
                self.numerical_aperture, self.refractive_index
            )));
        }
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        Ok(())
    }

    /// Aperture radius NA/λ in cycles/µm.
    pub fn pupil_cutoff(&self) -> f64 {
        self.numerical_aperture / self.wavelength
    }

    /// Lateral cutoff of the incoherent OTF, 2NA/λ.
    pub fn otf_cutoff(&self) -> f64 {
        2.0 * self.pupil_cutoff()
    }

    /// Returns a warning when the lateral pixel undersamples the OTF
    /// (pixel > λ / (4 NA)).
    pub fn nyquist_warning(&self) -> Option<String> {
        let limit = self.wavelength / (4.0 * self.numerical_aperture);
        (self.lateral_pixel > limit).then(|| {
            format!("lateral pixel {:.4} µm exceeds the Nyquist limit {:.4} µm", self.lateral_pixel, limit)
        })
    }

    pub fn pitch(&self) -> VoxelPitch {
        VoxelPitch::new(self.lateral_pixel, self.axial_step)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nz, self.ny, self.nx)
    }

    /// Same optics on a different grid.
    pub fn with_dims(&self, nz: usize, ny: usize, nx: usize) -> Self {
        Self { nx, ny, nz, ..*self }
    }

    /// Index of the focal plane: the stack midpoint.
    pub fn focal_plane_index(&self) -> usize {
        self.nz / 2
    }

    /// Axial positions of the planes in µm, zero at the focal plane.
    pub fn z_positions(&self) -> Vec<f64> {
        let c = self.focal_plane_index() as f64;
        (0..self.nz).map(|k| (k as f64 - c) * self.axial_step).collect()
    }
}

/// Sampled pupil plane.
///
/// `xi`/`eta` hold spatial frequencies (cycles/µm for a physical grid, or
/// normalized units for [`PupilGrid::unit_disk`]). `rho`/`theta` are polar
/// coordinates normalized by the aperture radius.
#[derive(Debug, Clone)]
pub struct PupilGrid {
    pub xi: Array2<f64>,
    pub eta: Array2<f64>,
    pub rho: Array2<f64>,
    pub theta: Array2<f64>,
    pub mask: Array2<bool>,
    /// Aperture radius in the units of `xi`/`eta`.
    pub cutoff: f64,
    /// Frequency sample spacing along x and y.
    pub spacing: (f64, f64),
}

impl PupilGrid {
    /// Pupil grid paired with the lateral image grid: same size, frequency
    /// spacing `1/(n · pixel)`, natural FFT ordering (DC at index 0).
    pub fn from_config(config: &OpticalConfig) -> Result<Self> {
        config.validate()?;
        let cutoff = config.pupil_cutoff();
        let nyquist = 1.0 / (2.0 * config.lateral_pixel);
        if cutoff >= nyquist {
            return Err(Error::Config(format!(
                "pupil radius {cutoff:.3} cycles/µm does not fit the lateral grid (Nyquist {nyquist:.3}); \
                 use a smaller lateral pixel"
            )));
        }
        let fx: Vec<f64> = fftfreq(config.nx).iter().map(|f| f / config.lateral_pixel).collect();
        let fy: Vec<f64> = fftfreq(config.ny).iter().map(|f| f / config.lateral_pixel).collect();
        let xi = Array2::from_shape_fn((config.ny, config.nx), |(_, x)| fx[x]);
        let eta = Array2::from_shape_fn((config.ny, config.nx), |(y, _)| fy[y]);
        let spacing = (1.0 / (config.nx as f64 * config.lateral_pixel), 1.0 / (config.ny as f64 * config.lateral_pixel));
        let grid = Self::build(xi, eta, cutoff, spacing);
        if !grid.mask.iter().any(|&m| m) {
            return Err(Error::Config("aperture mask is empty on this grid".into()));
        }
        Ok(grid)
    }

    /// Pixel-centered `n × n` samples of [-1, 1]² with the unit disk as aperture.
    pub fn unit_disk(n: usize) -> Self {
        let c = crate::volume::normalized_centers(n);
        let xi = Array2::from_shape_fn((n, n), |(_, x)| c[x]);
        let eta = Array2::from_shape_fn((n, n), |(y, _)| c[y]);
        let d = 2.0 / n as f64;
        Self::build(xi, eta, 1.0, (d, d))
    }

    fn build(xi: Array2<f64>, eta: Array2<f64>, cutoff: f64, spacing: (f64, f64)) -> Self {
        let rho = ndarray::Zip::from(&xi).and(&eta).map_collect(|&a, &b| (a * a + b * b).sqrt() / cutoff);
        let theta = ndarray::Zip::from(&xi).and(&eta).map_collect(|&a, &b| b.atan2(a));
        let mask = rho.mapv(|r| r <= 1.0);
        Self { xi, eta, rho, theta, mask, cutoff, spacing }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.xi.dim()
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean of `a·b` over the aperture.
    pub fn masked_inner(&self, a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let mut acc = 0.0;
        for ((m, x), y) in self.mask.iter().zip(a.iter()).zip(b.iter()) {
            if *m {
                acc += x * y;
            }
        }
        acc / self.mask_count() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_nyquist_sampled() {
        let c = OpticalConfig::default();
        c.validate().unwrap();
        assert!(c.nyquist_warning().is_none());
    }

    #[test]
    fn na_above_index_rejected() {
        let c = OpticalConfig { numerical_aperture: 1.4, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn undersampling_is_a_warning_only() {
        let c = OpticalConfig { lateral_pixel: 0.2, ..Default::default() };
        c.validate().unwrap();
        assert!(c.nyquist_warning().is_some());
    }

    #[test]
    fn aperture_that_overflows_grid_is_config_error() {
        let c = OpticalConfig { lateral_pixel: 0.3, ..Default::default() };
        assert!(matches!(PupilGrid::from_config(&c), Err(Error::Config(_))));
    }

    #[test]
    fn mask_radius_in_samples() {
        let c = OpticalConfig::default();
        let g = PupilGrid::from_config(&c).unwrap();
        let radius_samples = c.pupil_cutoff() / g.spacing.0;
        // extent of the mask along the ξ axis (η = 0 row)
        let extent = (0..c.nx).filter(|&x| g.mask[[0, x]] && g.xi[[0, x]] >= 0.0).count() as f64 - 1.0;
        assert!((extent - radius_samples).abs() <= 1.0, "{extent} vs {radius_samples}");
    }

    #[test]
    fn focal_plane_midpoint() {
        let c = OpticalConfig { nz: 9, ..Default::default() };
        assert_eq!(c.focal_plane_index(), 4);
        let z = c.z_positions();
        assert_eq!(z[4], 0.0);
        assert!((z[0] + z[8]).abs() < 1e-15);
        let c = OpticalConfig { nz: 8, ..Default::default() };
        assert_eq!(c.focal_plane_index(), 4);
    }
}
