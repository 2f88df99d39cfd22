//! Joint estimation of structure and wavefront.

pub mod adam;
mod correction;
mod loss;
mod ssim;
mod train;

pub use adam::{cosine_lr, Adam, AdamConfig};
pub use correction::{iterative_correction, CorrectionRound, LoopConfig};
pub use loss::{loss, regularizer, LossBreakdown, LossWeights};
pub use ssim::ssim_3d;
pub use train::{
    estimate, evaluate_loss, full_gradients, predict_stack, pretrain, structure_gain, EstimationResult, Gradients, Precision,
    PretrainLoss, TrainConfig,
};
