//! Non-maximum suppression laboratory: greedy suppression, benchmark-style
//! matching and AP evaluation, a synthetic crowded-scene generator, and a
//! learned pairwise rescoring network trained through a small reverse-mode
//! differentiation engine.
//!
//! The network and the engine are generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below fix the double precision default.

pub mod autodiff;
pub mod detections;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gnet;
pub mod nms;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use detections::{BBox, Dataset, Detection, GroundTruthObject, ImageRecord};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type AdamState = autodiff::AdamState<f64>;
pub type GnetModel = gnet::GnetModel<f64>;
pub type Trainer = trainer::Trainer<f64>;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type GnetModel32 = gnet::GnetModel<f32>;
