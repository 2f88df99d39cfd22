//! Image formation, sensor noise, phantom generation and correction
//! arithmetic.

pub mod convolve;
pub mod correction;
pub mod noise;
pub mod phantom;
pub mod simulate;

pub use convolve::{convolve_3d, convolve_direct, Convolver, Spectrum};
pub use correction::{compose_correction, random_mixed_aberration, ModeSet};
pub use noise::{apply_noise, NoiseModel};
pub use phantom::{achieved_fraction, make_phantom, PhantomKind, PhantomSpec};
pub use simulate::{simulate_stack, Illumination, SimulatedStack};
