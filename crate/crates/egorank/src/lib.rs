//! Relational important-object identification for egocentric driving scenes.
//!
//! The math core (tensors, tape autodiff, encoders, relation graph, heads) is
//! generic over the scalar type via [`scalar::Scalar`]; the concrete f64
//! aliases below are what the data pipeline, trainer and CLI use.

pub mod autodiff;
pub mod config;
pub mod encoders;
pub mod graph;
pub mod heads;
pub mod ablate;
pub mod baselines;
pub mod icc;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pseudo;
pub mod report;
pub mod sweep;
pub mod checkpoint;
pub mod error;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod scene;
pub mod synth;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64 tensor used throughout the pipeline.
pub type Tensor = tensor::Tensor<f64>;
/// f64 recording tape.
pub type Tape = autodiff::Tape<f64>;
/// f64 gradient map.
pub type Gradients = autodiff::Gradients<f64>;
/// f64 Adam state.
pub type Adam = optim::Adam<f64>;
/// f64 MLP.
pub type Mlp = nn::Mlp<f64>;
/// f64 LSTM.
pub type Lstm = nn::Lstm<f64>;
/// f64 sequence encoder (LSTM plus MLP head).
pub type SeqEncoder = nn::SeqEncoder<f64>;
