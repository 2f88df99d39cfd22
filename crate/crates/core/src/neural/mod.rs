//! Coordinate-based neural representation of the 3D structure.

pub mod encoding;
pub mod field;

pub use encoding::{encode, grid_coordinates, Encoder, EncodingSpec, FrequencySpacing};
pub use field::{Architecture, FieldTape, NeuralField, OutputMap};

/// Floating-point type used for batched field evaluation.
pub trait Real: ndarray::LinalgScalar + num_traits::Float + num_traits::NumAssign + Send + Sync + std::fmt::Debug + 'static {
    fn cast(v: f64) -> Self;
    fn widen(self) -> f64;
}

impl Real for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
}
