//! Stacked-autoencoder anomaly detection for rotary-machine sensor streams.
//!
//! Healthy windows of a single channel train a greedy layer-wise stacked
//! autoencoder. Its reconstruction error on new windows is graded against
//! percentile thresholds into green, amber and red bands, and an edge-style
//! [`stream::Detector`] forwards only the raw data surrounding sustained
//! anomalies.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix the common choices.

pub mod error;
pub mod io;
pub mod neural;
pub mod pipeline;
pub mod sae;
pub mod scalar;
pub mod signal;
pub mod stream;
pub mod synth;
pub mod threshold;

pub use error::{Error, Result};
pub use neural::{Activation, LayerParams, TrainConfig, TrainState};
pub use sae::{default_spec, reconstruction_error, StackSpec, StackedModel};
pub use scalar::Scalar;
pub use signal::{ChannelSeries, NormStats, RestParams, Window};
pub use stream::{AlarmPolicy, Detector, DetectorConfig, TransmissionSegment};
pub use threshold::{classify, fit_thresholds, ThresholdSet, TrafficLight, RESTING_SENTINEL};

pub type StackedModelF64 = StackedModel<f64>;
pub type StackedModelF32 = StackedModel<f32>;
pub type LayerParamsF64 = LayerParams<f64>;
pub type LayerParamsF32 = LayerParams<f32>;
pub type DetectorF64 = Detector<f64>;
pub type DetectorF32 = Detector<f32>;
pub type ChannelSeriesF64 = ChannelSeries<f64>;
pub type ChannelSeriesF32 = ChannelSeries<f32>;
