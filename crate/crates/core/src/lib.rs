//! Joint estimation of optical wavefront aberration and 3D fluorescent
//! structure from a single widefield image stack.
//!
//! The structure is represented by a coordinate-based neural field, the
//! aberration by orthonormal Zernike coefficients (ANSI indexing, units of
//! the emission wavelength). Both are fitted self-supervised by pushing the
//! field through a scalar widefield PSF model and comparing the synthetic
//! stack against the measurement with an SSIM loss.
//!
//! Modules:
//! - [`optics`]: Zernike algebra, pupil grids and the 3D PSF model
//! - [`forward`]: linear convolution, sensor noise, phantoms, correction arithmetic
//! - [`neural`]: radial Fourier encoding and the skip-connected perceptron
//! - [`solver`]: loss, gradients, pretrain/train schedule, correction loop
//! - [`baselines`]: Richardson–Lucy (blind and non-blind), Gerchberg–Saxton
//! - [`metrics`]: SNR, SBR, PCC, sliced Wasserstein, contrast, PSD, cutoff fits
//! - [`io`]: TIFF stacks, JSON sidecars, aberration JSON, weight blobs

pub mod baselines;
pub mod error;
pub mod fft;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod optics;
pub mod solver;
pub mod volume;

pub use error::{Error, Result};
