//! Richardson–Lucy deconvolution with the linear convolution of the forward
//! model. Updates are divided by the sensitivity `h† ∗ 1` so flux is kept
//! near the borders as well.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{Convolver, Spectrum};
use crate::optics::Psf3D;
use crate::volume::{dims3, ImageStack, Structure3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RldConfig {
    pub iterations: usize,
    /// Alternating PSF/image rounds of the blind variant.
    pub psf_iterations: usize,
    /// Division floor relative to the stack maximum.
    pub epsilon: f64,
}

impl Default for RldConfig {
    fn default() -> Self {
        Self { iterations: 500, psf_iterations: 100, epsilon: 1e-12 }
    }
}

impl RldConfig {
    pub fn in_vivo() -> Self {
        Self { iterations: 2000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("RLD iterations must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("RLD epsilon must be positive".into()));
        }
        Ok(())
    }
}

struct Rl<'a> {
    conv: Convolver,
    g: &'a Array3<f64>,
    floor: f64,
}

impl<'a> Rl<'a> {
    fn new(g: &'a Array3<f64>, kernel: [usize; 3], epsilon: f64) -> Self {
        let peak = g.iter().fold(0.0f64, |m, &v| m.max(v));
        let floor = epsilon * if peak > 0.0 { peak } else { 1.0 };
        Self { conv: Convolver::same(dims3(g), kernel), g, floor }
    }

    /// `g / max(h ∗ s, floor)`.
    fn ratio(&self, ss: &Spectrum, hs: &Spectrum) -> Array3<f64> {
        let mut blurred = self.conv.forward_spectra(ss, hs);
        ndarray::Zip::from(&mut blurred).and(self.g).for_each(|b, &g| *b = g / b.max(self.floor));
        blurred
    }

    fn image_step(&self, s: &mut Array3<f64>, hs: &Spectrum, sensitivity: &Array3<f64>) {
        let ratio = self.ratio(&self.conv.spectrum_of_structure(s), hs);
        let corr = self.conv.adjoint_structure(&ratio, hs);
        ndarray::Zip::from(s).and(&corr).and(sensitivity).for_each(|s, &c, &w| {
            *s = if w > self.floor { (*s * c / w).max(0.0) } else { 0.0 };
        });
    }

    fn psf_step(&self, s: &Array3<f64>, h: &mut Array3<f64>) {
        let ss = self.conv.spectrum_of_structure(s);
        let ratio = self.ratio(&ss, &self.conv.spectrum_of_kernel(h));
        let corr = self.conv.adjoint_kernel(&ratio, &ss);
        ndarray::Zip::from(&mut *h).and(&corr).for_each(|h, &c| *h = (*h * c).max(0.0));
        let sum = h.sum();
        if sum > 0.0 {
            h.mapv_inplace(|v| v / sum);
        }
    }

    fn sensitivity(&self, hs: &Spectrum) -> Array3<f64> {
        let [z, y, x] = self.conv.output_dims();
        self.conv.adjoint_structure(&Array3::ones((z, y, x)), hs)
    }
}

fn check_finite(s: &Array3<f64>, iteration: usize) -> Result<()> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { iteration, message: "non-finite Richardson–Lucy iterate".into() });
    }
    Ok(())
}

fn check_stack(stack: &ImageStack) -> Result<()> {
    if stack.values.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("Richardson–Lucy needs a non-negative stack".into()));
    }
    Ok(())
}

/// Runs `iterations` multiplicative updates from `initial`.
pub fn richardson_lucy(g: &Array3<f64>, psf: &Array3<f64>, initial: &Array3<f64>, iterations: usize, epsilon: f64) -> Result<Array3<f64>> {
    if initial.dim() != g.dim() {
        return Err(Error::Shape(format!("initial estimate {:?} vs stack {:?}", initial.dim(), g.dim())));
    }
    let rl = Rl::new(g, dims3(psf), epsilon);
    let hs = rl.conv.spectrum_of_kernel(psf);
    let sensitivity = rl.sensitivity(&hs);
    let mut s = initial.clone();
    for it in 0..iterations {
        rl.image_step(&mut s, &hs, &sensitivity);
        check_finite(&s, it)?;
    }
    Ok(s)
}

fn flat_start(g: &Array3<f64>) -> Array3<f64> {
    let mean = g.mean().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    Array3::from_elem(g.dim(), mean)
}

/// Non-blind deconvolution with a known PSF, starting from a flat estimate.
pub fn rld_nonblind(stack: &ImageStack, psf: &Psf3D, config: &RldConfig) -> Result<Structure3D> {
    config.validate()?;
    check_stack(stack)?;
    let s = richardson_lucy(&stack.values, &psf.values, &flat_start(&stack.values), config.iterations, config.epsilon)?;
    Structure3D::new(s, stack.pitch)
}

/// Blind deconvolution: `psf_iterations` alternating maximum-likelihood
/// updates of PSF and image from `initial_psf`, then non-blind RL with the
/// frozen PSF. The PSF shape is that of `initial_psf`.
pub fn rld_blind(stack: &ImageStack, initial_psf: &Psf3D, config: &RldConfig) -> Result<(Structure3D, Psf3D)> {
    config.validate()?;
    check_stack(stack)?;
    let (kz, ky, kx) = initial_psf.dims();
    if kz % 2 == 0 || ky % 2 == 0 || kx % 2 == 0 {
        return Err(Error::Shape(format!("blind PSF shape must be odd, got {:?}", (kz, ky, kx))));
    }
    let g = &stack.values;
    let rl = Rl::new(g, [kz, ky, kx], config.epsilon);
    let mut h = &initial_psf.values / initial_psf.values.sum();
    let mut s = flat_start(g);
    for it in 0..config.psf_iterations {
        rl.psf_step(&s, &mut h);
        check_finite(&h, it)?;
        let hs = rl.conv.spectrum_of_kernel(&h);
        rl.image_step(&mut s, &hs, &rl.sensitivity(&hs));
        check_finite(&s, it)?;
    }
    let psf = Psf3D::from_values(h)?;
    let s = richardson_lucy(g, &psf.values, &flat_start(g), config.iterations, config.epsilon)?;
    Ok((Structure3D::new(s, stack.pitch)?, psf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VoxelPitch;

    fn stack(values: Array3<f64>) -> ImageStack {
        ImageStack::new(values, VoxelPitch::new(0.1, 0.3)).unwrap()
    }

    fn blur(s: &Array3<f64>, h: &Array3<f64>) -> Array3<f64> {
        Convolver::same(dims3(s), dims3(h)).forward(s, h).mapv(|v| v.max(0.0))
    }

    fn gaussian_psf() -> Array3<f64> {
        let h = Array3::from_shape_fn((5, 7, 7), |(z, y, x)| {
            let (dz, dy, dx) = (z as f64 - 2.0, y as f64 - 3.0, x as f64 - 3.0);
            (-(dz * dz / 1.5 + (dy * dy + dx * dx) / 2.0)).exp()
        });
        &h / h.sum()
    }

    fn beads() -> Array3<f64> {
        let mut s = Array3::zeros((12, 24, 24));
        for &(z, y, x, v) in &[(5, 8, 8, 3.0), (6, 15, 12, 2.0), (4, 10, 17, 1.0), (7, 17, 6, 2.5)] {
            s[[z, y, x]] = v;
        }
        s
    }

    #[test]
    fn delta_psf_returns_input() {
        let g = Array3::from_shape_fn((4, 6, 6), |(z, y, x)| 1.0 + ((z * 7 + y * 3 + x) % 5) as f64);
        for iterations in [1, 7] {
            let cfg = RldConfig { iterations, ..Default::default() };
            let out = rld_nonblind(&stack(g.clone()), &Psf3D::delta((3, 3, 3)), &cfg).unwrap();
            for (a, b) in out.values.iter().zip(g.iter()) {
                assert!((a - b).abs() < 1e-12 * b.max(1.0));
            }
        }
    }

    #[test]
    fn exact_solution_is_a_fixed_point() {
        let s = Array3::from_shape_fn((6, 10, 10), |(z, y, x)| 1.0 + 0.5 * ((z + 2 * y + 3 * x) as f64).sin());
        let h = gaussian_psf();
        let g = blur(&s, &h);
        let one = richardson_lucy(&g, &h, &s, 1, 1e-12).unwrap();
        for (a, b) in one.iter().zip(s.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn flux_is_conserved_for_interior_sources() {
        let s = beads();
        let g = blur(&s, &gaussian_psf());
        let out = richardson_lucy(&g, &gaussian_psf(), &flat_start(&g), 50, 1e-12).unwrap();
        assert!((out.sum() - g.sum()).abs() < 0.01 * g.sum());
        assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_bad_config_and_negative_input() {
        let g = Array3::from_elem((3, 4, 4), 1.0);
        let psf = Psf3D::delta((3, 3, 3));
        assert!(rld_nonblind(&stack(g.clone()), &psf, &RldConfig { iterations: 0, ..Default::default() }).is_err());
        assert!(rld_nonblind(&stack(g.clone()), &psf, &RldConfig { epsilon: 0.0, ..Default::default() }).is_err());
        let mut neg = g.clone();
        neg[[0, 0, 0]] = -1.0;
        assert!(rld_nonblind(&stack(neg), &psf, &RldConfig::default()).is_err());
        let even = Psf3D::from_values(Array3::ones((2, 3, 3))).unwrap();
        assert!(rld_blind(&stack(g), &even, &RldConfig::default()).is_err());
    }

    #[test]
    fn blind_psf_is_unit_sum() {
        let s = beads();
        let g = blur(&s, &gaussian_psf());
        let init = Psf3D::from_values(Array3::ones((5, 7, 7))).unwrap();
        let cfg = RldConfig { iterations: 5, psf_iterations: 5, ..Default::default() };
        let (out, psf) = rld_blind(&stack(g), &init, &cfg).unwrap();
        assert!((psf.values.sum() - 1.0).abs() < 1e-12);
        assert!(out.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn blind_psf_collapses_on_sharp_input() {
        let g = beads();
        let init = Psf3D::from_values(gaussian_psf()).unwrap();
        let cfg = RldConfig { iterations: 1, psf_iterations: 100, ..Default::default() };
        let (_, psf) = rld_blind(&stack(g), &init, &cfg).unwrap();
        let center = psf.values[[2, 3, 3]];
        assert!(center >= 0.8, "{center}");
    }
}
