//! Adaptive control of a spectral noise suppressor with a recurrent
//! policy trained by REINFORCE.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dsp;
pub mod enhancer;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use checkpoint::{Checkpoint, ParamsDocument};
pub use config::Config;
pub use data::{Manifest, Utterance};
pub use dsp::{AudioSignal, FeatureVector, Spectrogram};
pub use enhancer::{Enhancer, EnhancerState, ParameterSet, ParameterSpace};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use policy::{Action, AdamState, PolicyParameters};
pub use trainer::{BaselineEstimator, RewardNormalizer, Trajectory};
