//! Multi-stage temporal convolutional networks for frame-wise action
//! segmentation.
//!
//! A model is a stack of stages. The first maps per-frame features to class
//! probabilities with a column of dilated residual layers; every later stage
//! takes only the previous stage's probabilities and refines them. Training
//! minimises per-stage cross-entropy plus a truncated smoothing penalty on
//! consecutive log-probabilities, with hand-written backward passes
//! throughout.
//!
//! ```
//! use rand::SeedableRng;
//! use tempseg::model::{build_model, ModelConfig, Variant};
//!
//! let cfg = ModelConfig::new(Variant::MsTcn, 2048, 19);
//! let model: tempseg::Model = build_model(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
//! assert_eq!(model.count_parameters(), 800_396);
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use data::{DatasetBundle, VideoSample};
pub use error::{Error, Result};
pub use loss::{LossConfig, Smoothing};
pub use metrics::{EvalReport, Segment};
pub use model::{Model, ModelConfig, Variant};
pub use tensor::{ConvParams, Tensor};
pub use trainer::{Checkpoint, TrainConfig};
