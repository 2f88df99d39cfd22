//! Scalar widefield PSF: `h(z) = |F[P·exp(iφ)·exp(−2πi z kz)]|²`, with
//! `kz = √((n₀/λ)² − ξ² − η²)` clamped at zero, normalized to unit 3D sum.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::Result;
use crate::fft::Fft2;
use crate::optics::pupil::{OpticalConfig, PupilGrid};
use crate::optics::zernike::{WavefrontAberration, ZernikeBasis};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Non-negative PSF on the stack grid, `(z, y, x)`, centered laterally at
/// `(ny/2, nx/2)` and axially at `focal_plane_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf3D {
    pub values: Array3<f64>,
    pub focal_plane_index: usize,
}

impl Psf3D {
    /// Wraps arbitrary non-negative values, rescaling to unit sum.
    pub fn from_values(values: Array3<f64>) -> Result<Self> {
        let sum: f64 = values.sum();
        if !(sum > 0.0) || values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(crate::Error::Domain("PSF must be non-negative with positive sum".into()));
        }
        let focal_plane_index = values.dim().0 / 2;
        Ok(Self { values: values / sum, focal_plane_index })
    }

    /// Discrete delta at the kernel center.
    pub fn delta(dims: (usize, usize, usize)) -> Self {
        let mut values = Array3::zeros(dims);
        values[[dims.0 / 2, dims.1 / 2, dims.2 / 2]] = 1.0;
        Self { values, focal_plane_index: dims.0 / 2 }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Intermediate values retained for [`PsfModel::backward`].
#[derive(Debug, Clone)]
pub struct PsfTape {
    pupil: Vec<Complex64>,
    fields: Vec<Vec<Complex64>>,
    total: f64,
    psf: Array3<f64>,
    /// Per-plane intensity sums before normalization.
    pub plane_sums: Vec<f64>,
}

/// PSF generator with precomputed pupil quantities for a fixed optical
/// configuration and Zernike basis.
#[derive(Debug)]
pub struct PsfModel {
    config: OpticalConfig,
    basis: ZernikeBasis,
    grid: PupilGrid,
    inside: Vec<usize>,
    mode_values: Vec<Vec<f64>>,
    defocus: Vec<Vec<Complex64>>,
    z_positions: Vec<f64>,
    fft: Fft2,
}

impl PsfModel {
    pub fn new(config: &OpticalConfig, basis: ZernikeBasis) -> Result<Self> {
        Self::with_z_positions(config, basis, config.z_positions())
    }

    /// Model evaluated at explicit axial positions (µm from focus).
    pub fn with_z_positions(config: &OpticalConfig, basis: ZernikeBasis, z_positions: Vec<f64>) -> Result<Self> {
        let grid = PupilGrid::from_config(config)?;
        let inside: Vec<usize> = grid.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        let maps = basis.sample(&grid);
        let mode_values = maps.iter().map(|m| inside.iter().map(|&i| m.as_slice().unwrap()[i]).collect()).collect();
        let k0 = config.refractive_index / config.wavelength;
        let kz: Vec<f64> = inside
            .iter()
            .map(|&i| {
                let (xi, eta) = (grid.xi.as_slice().unwrap()[i], grid.eta.as_slice().unwrap()[i]);
                (k0 * k0 - xi * xi - eta * eta).max(0.0).sqrt()
            })
            .collect();
        let defocus = z_positions
            .iter()
            .map(|&z| kz.iter().map(|&k| Complex64::from_polar(1.0, -TWO_PI * z * k)).collect())
            .collect();
        let fft = Fft2::new(config.ny, config.nx);
        Ok(Self { config: *config, basis, grid, inside, mode_values, defocus, z_positions, fft })
    }

    pub fn config(&self) -> &OpticalConfig {
        &self.config
    }

    pub fn basis(&self) -> &ZernikeBasis {
        &self.basis
    }

    pub fn grid(&self) -> &PupilGrid {
        &self.grid
    }

    pub fn z_positions(&self) -> &[f64] {
        &self.z_positions
    }

    /// Flat indices of the pupil samples inside the aperture.
    pub(crate) fn inside(&self) -> &[usize] {
        &self.inside
    }

    /// Per-plane defocus phasors over [`Self::inside`].
    pub(crate) fn defocus(&self) -> &[Vec<Complex64>] {
        &self.defocus
    }

    /// Pupil phase in radians for basis-aligned coefficients (λ units).
    pub fn phase(&self, coeffs: &[f64]) -> Array2<f64> {
        let mut phase = Array2::zeros(self.grid.dim());
        let flat = phase.as_slice_mut().unwrap();
        for (p, &i) in self.inside.iter().enumerate() {
            flat[i] = self.phase_at(coeffs, p);
        }
        phase
    }

    fn phase_at(&self, coeffs: &[f64], p: usize) -> f64 {
        TWO_PI * coeffs.iter().zip(&self.mode_values).map(|(c, m)| c * m[p]).sum::<f64>()
    }

    pub fn evaluate(&self, coeffs: &[f64]) -> Psf3D {
        self.evaluate_with_tape(coeffs).0
    }

    pub fn evaluate_with_tape(&self, coeffs: &[f64]) -> (Psf3D, PsfTape) {
        assert_eq!(coeffs.len(), self.basis.len(), "coefficient count must match the basis");
        let (ny, nx) = self.grid.dim();
        let nz = self.z_positions.len();
        let pupil: Vec<Complex64> =
            (0..self.inside.len()).map(|p| Complex64::from_polar(1.0, self.phase_at(coeffs, p))).collect();
        let mut fields = Vec::with_capacity(nz);
        let mut intensity = Array3::<f64>::zeros((nz, ny, nx));
        let mut plane_sums = Vec::with_capacity(nz);
        for (z, kernel) in self.defocus.iter().enumerate() {
            let mut buf = vec![Complex64::new(0.0, 0.0); ny * nx];
            for ((&i, g), d) in self.inside.iter().zip(&pupil).zip(kernel) {
                buf[i] = g * d;
            }
            self.fft.process(&mut buf, false);
            let mut sum = 0.0;
            for y in 0..ny {
                let sy = (y + ny / 2) % ny;
                for x in 0..nx {
                    let sx = (x + nx / 2) % nx;
                    let v = buf[y * nx + x].norm_sqr();
                    intensity[[z, sy, sx]] = v;
                    sum += v;
                }
            }
            plane_sums.push(sum);
            fields.push(buf);
        }
        let total: f64 = plane_sums.iter().sum();
        intensity.mapv_inplace(|v| v / total);
        let psf = Psf3D { values: intensity, focal_plane_index: self.config.focal_plane_index() };
        let tape = PsfTape { pupil, fields, total, psf: psf.values.clone(), plane_sums };
        (psf, tape)
    }

    /// Gradient of a scalar loss with respect to the basis coefficients,
    /// given `∂L/∂h` on the (shifted, normalized) PSF grid.
    pub fn backward(&self, tape: &PsfTape, psf_grad: &Array3<f64>) -> Vec<f64> {
        let (ny, nx) = self.grid.dim();
        let dot: f64 = psf_grad.iter().zip(tape.psf.iter()).map(|(g, h)| g * h).sum();
        let mut pupil_grad = vec![Complex64::new(0.0, 0.0); self.inside.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); ny * nx];
        for (z, kernel) in self.defocus.iter().enumerate() {
            let field = &tape.fields[z];
            for y in 0..ny {
                let sy = (y + ny / 2) % ny;
                for x in 0..nx {
                    let sx = (x + nx / 2) % nx;
                    let intensity_grad = (psf_grad[[z, sy, sx]] - dot) / tape.total;
                    buf[y * nx + x] = field[y * nx + x] * (2.0 * intensity_grad);
                }
            }
            // adjoint of the unnormalized forward DFT
            self.fft.process(&mut buf, true);
            for ((pg, &i), d) in pupil_grad.iter_mut().zip(&self.inside).zip(kernel) {
                *pg += d.conj() * buf[i];
            }
        }
        let i = Complex64::new(0.0, 1.0);
        let phase_grad: Vec<f64> = pupil_grad.iter().zip(&tape.pupil).map(|(gb, g)| (gb.conj() * i * g).re).collect();
        self.mode_values
            .iter()
            .map(|m| TWO_PI * m.iter().zip(&phase_grad).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

/// PSF for `aberration` on the grid of `config`.
pub fn psf_3d(config: &OpticalConfig, aberration: &WavefrontAberration) -> Result<Psf3D> {
    let basis = ZernikeBasis::from_ansi(aberration.coefficients.keys().copied());
    let model = PsfModel::new(config, basis)?;
    Ok(model.evaluate(&aberration.to_vector(model.basis())))
}
