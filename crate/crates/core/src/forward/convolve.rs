//! Linear (non-circular) 3D convolution through zero-padded FFTs, with the
//! exact adjoints needed for gradients.

use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fast_len, Fft3};
use crate::optics::Psf3D;
use crate::volume::{dims3, ImageStack, Structure3D};

/// Spectrum of a zero-padded operand, reusable across calls.
#[derive(Debug, Clone)]
pub struct Spectrum(Vec<Complex64>);

/// Planned linear convolution of a structure of fixed shape with a kernel of
/// fixed shape, cropped to an output window.
///
/// The full convolution `f[q] = Σ_i s[i] k[q − i]` is cropped to
/// `out[o] = f[o + offset]` with `offset = kernel_center + margin`, so a
/// kernel centered at `dims/2` maps a voxel onto itself.
#[derive(Debug)]
pub struct Convolver {
    structure: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    offset: [usize; 3],
    fft: Fft3,
}

impl Convolver {
    /// Output covers the structure's field of view.
    pub fn same(structure: [usize; 3], kernel: [usize; 3]) -> Self {
        Self::with_margin(structure, kernel, [0, 0, 0])
    }

    /// The structure extends `margin` voxels past the output on every side.
    pub fn with_margin(structure: [usize; 3], kernel: [usize; 3], margin: [usize; 3]) -> Self {
        let mut output = [0; 3];
        let mut offset = [0; 3];
        let mut padded = [0; 3];
        for a in 0..3 {
            assert!(structure[a] > 2 * margin[a], "margin leaves no output");
            output[a] = structure[a] - 2 * margin[a];
            offset[a] = kernel[a] / 2 + margin[a];
            padded[a] = fast_len(structure[a] + kernel[a] - 1);
        }
        Self { structure, kernel, output, offset, fft: Fft3::new(padded) }
    }

    pub fn output_dims(&self) -> [usize; 3] {
        self.output
    }

    pub fn structure_dims(&self) -> [usize; 3] {
        self.structure
    }

    pub fn kernel_dims(&self) -> [usize; 3] {
        self.kernel
    }

    pub fn spectrum_of_structure(&self, s: &Array3<f64>) -> Spectrum {
        assert_eq!(dims3(s), self.structure, "structure shape");
        Spectrum(self.fft.forward_padded(s))
    }

    pub fn spectrum_of_kernel(&self, k: &Array3<f64>) -> Spectrum {
        assert_eq!(dims3(k), self.kernel, "kernel shape");
        Spectrum(self.fft.forward_padded(k))
    }

    pub fn forward(&self, s: &Array3<f64>, k: &Array3<f64>) -> Array3<f64> {
        let ss = self.spectrum_of_structure(s);
        let ks = self.spectrum_of_kernel(k);
        self.forward_spectra(&ss, &ks)
    }

    pub fn forward_spectra(&self, s: &Spectrum, k: &Spectrum) -> Array3<f64> {
        let prod: Vec<Complex64> = s.0.iter().zip(&k.0).map(|(a, b)| a * b).collect();
        self.fft.inverse_cropped(prod, self.offset, self.output)
    }

    fn output_grad_spectrum(&self, grad: &Array3<f64>) -> Vec<Complex64> {
        assert_eq!(dims3(grad), self.output, "output gradient shape");
        self.fft.forward_padded_at(grad, self.offset)
    }

    /// Adjoint with respect to the structure: correlation of the output
    /// gradient with the kernel.
    pub fn adjoint_structure(&self, grad: &Array3<f64>, kernel: &Spectrum) -> Array3<f64> {
        let g = self.output_grad_spectrum(grad);
        self.adjoint_structure_spectrum(&g, kernel)
    }

    /// Adjoint with respect to the kernel: correlation of the output
    /// gradient with the structure.
    pub fn adjoint_kernel(&self, grad: &Array3<f64>, structure: &Spectrum) -> Array3<f64> {
        let g = self.output_grad_spectrum(grad);
        self.adjoint_kernel_spectrum(&g, structure)
    }

    /// Both adjoints sharing one transform of the output gradient.
    pub fn adjoint_both(&self, grad: &Array3<f64>, structure: &Spectrum, kernel: &Spectrum) -> (Array3<f64>, Array3<f64>) {
        let g = self.output_grad_spectrum(grad);
        (self.adjoint_structure_spectrum(&g, kernel), self.adjoint_kernel_spectrum(&g, structure))
    }

    fn adjoint_structure_spectrum(&self, g: &[Complex64], kernel: &Spectrum) -> Array3<f64> {
        let prod: Vec<Complex64> = g.iter().zip(&kernel.0).map(|(a, b)| a * b.conj()).collect();
        self.fft.inverse_cropped(prod, [0, 0, 0], self.structure)
    }

    fn adjoint_kernel_spectrum(&self, g: &[Complex64], structure: &Spectrum) -> Array3<f64> {
        let prod: Vec<Complex64> = g.iter().zip(&structure.0).map(|(a, b)| a * b.conj()).collect();
        self.fft.inverse_cropped(prod, [0, 0, 0], self.kernel)
    }
}

/// Image formation: linear convolution of the structure with the PSF,
/// cropped to the structure's field of view.
pub fn convolve_3d(structure: &Structure3D, psf: &Psf3D) -> Result<ImageStack> {
    let s = dims3(&structure.values);
    let k = dims3(&psf.values);
    if s.iter().any(|&v| v == 0) || k.iter().any(|&v| v == 0) {
        return Err(Error::Shape("empty structure or PSF".into()));
    }
    let conv = Convolver::same(s, k);
    let values = conv.forward(&structure.values, &psf.values);
    ImageStack::new(values, structure.pitch)
}

/// Direct-sum reference implementation of the cropped linear convolution.
pub fn convolve_direct(s: &Array3<f64>, k: &Array3<f64>) -> Array3<f64> {
    let (nz, ny, nx) = s.dim();
    let (kz, ky, kx) = k.dim();
    let (cz, cy, cx) = (kz / 2, ky / 2, kx / 2);
    let mut out = Array3::zeros((nz, ny, nx));
    for oz in 0..nz {
        for oy in 0..ny {
            for ox in 0..nx {
                let mut acc = 0.0;
                for iz in 0..kz {
                    for iy in 0..ky {
                        for ix in 0..kx {
                            let (sz, sy, sx) = (
                                oz as isize + cz as isize - iz as isize,
                                oy as isize + cy as isize - iy as isize,
                                ox as isize + cx as isize - ix as isize,
                            );
                            if sz >= 0 && sy >= 0 && sx >= 0 && (sz as usize) < nz && (sy as usize) < ny && (sx as usize) < nx {
                                acc += s[[sz as usize, sy as usize, sx as usize]] * k[[iz, iy, ix]];
                            }
                        }
                    }
                }
                out[[oz, oy, ox]] = acc;
            }
        }
    }
    out
}
