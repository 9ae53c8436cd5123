//! MM-Align at desk scale: windowed entropic optimal transport for parallel
//! sequence alignment, an alignment-dynamics learner that imitates transport
//! plans to impute a missing modality, and the denoising training schedule
//! that couples both with a cross-attention backbone.

pub mod adl;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod ot_align;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{GradPair, Matrix, Parameterized};
pub use ot_align::{AlignmentPlan, BandedCost};
pub use encoder::{ModalitySequence, SharedRepr};
pub use adl::WindowPredictions;
pub use model::{ModelConfig, ModelParams, Prediction};
pub use training::TrainConfig;
