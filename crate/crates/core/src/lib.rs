//! Audio-driven performance video generation.
//!
//! Music audio is turned into constant-Q clips; a recurrent predictor maps
//! them to body and hand keypoints, which are rendered into differentiable
//! landmark heatmaps. A coarse generator produces low-detail frames from the
//! audio, and a structured temporal UNet refines them using the heatmaps, a
//! graph convolution over keypoint-anchored feature blocks and a
//! convolutional GRU, trained against an audio-video pair discriminator.
//!
//! Everything is generic over the scalar type; the `*32` and `*64` aliases
//! below fix it.

pub mod adversarial;
pub mod audiodata;
pub mod checkpoint;
pub mod config;
pub mod cvg;
pub mod dlt;
pub mod error;
pub mod khp;
pub mod metrics;
pub mod nets;
pub mod pipeline;
pub mod rng;
pub mod skeleton;
pub mod stu;
pub mod train;
pub mod types;

pub use apvg_tensor as tensor;
pub use config::{load_config, PipelineConfig, Stage};
pub use error::{Error, Result};

pub type KeypointSet32 = types::KeypointSet<f32>;
pub type KeypointSet64 = types::KeypointSet<f64>;
pub type Heatmap32 = types::Heatmap<f32>;
pub type Heatmap64 = types::Heatmap<f64>;
pub type Frame32 = types::Frame<f32>;
pub type Frame64 = types::Frame<f64>;
pub type AudioClip32 = types::AudioClip<f32>;
pub type AudioClip64 = types::AudioClip<f64>;
pub type PairedSequence32 = audiodata::PairedSequence<f32>;
pub type PairedSequence64 = audiodata::PairedSequence<f64>;
pub type KeypointPredictor32 = khp::KeypointPredictor<f32>;
pub type KeypointPredictor64 = khp::KeypointPredictor<f64>;
pub type CoarseGenerator32 = cvg::CoarseGenerator<f32>;
pub type CoarseGenerator64 = cvg::CoarseGenerator<f64>;
pub type Stu32 = stu::Stu<f32>;
pub type Stu64 = stu::Stu<f64>;
pub type FhvgModel32 = adversarial::FhvgModel<f32>;
pub type FhvgModel64 = adversarial::FhvgModel<f64>;
