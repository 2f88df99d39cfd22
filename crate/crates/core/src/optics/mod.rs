//! Zernike algebra, pupil sampling and widefield PSF generation.

pub mod psf;
pub mod pupil;
pub mod zernike;

pub use psf::{psf_3d, Psf3D, PsfModel, PsfTape};
pub use pupil::{OpticalConfig, PupilGrid};
pub use zernike::{
    ansi_index, wavefront_phase, wavefront_rms, zernike_eval, WavefrontAberration, ZernikeBasis, ZernikeIndex,
};
