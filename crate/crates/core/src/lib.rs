//! Pedestrian trajectory prediction with pedestrian-vehicle interaction
//! features on LSTM and temporal-convolution backbones.

pub mod backbones;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod tensor;
pub mod training;
pub mod trajdata;

pub use backbones::{BackboneConfig, BackboneKind, GaussianParams, Model, ModelConfig, PredictionSet};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use evaluation::{EvalOptions, EvalReport};
pub use features::{Aggregation, FeatureConfig};
pub use tensor::{Graph, NodeId, ParamStore, Tensor};
pub use training::{OptimizerConfig, OptimizerKind};
pub use trajdata::{Scene, SequenceSample, SynthConfig};
