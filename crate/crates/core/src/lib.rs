//! Wavelet-domain attribution for black-box image classifiers.
//!
//! The pipeline perturbs regions of an image's discrete wavelet transform with
//! quasi-Monte Carlo masks, scores the reconstructions with a black-box model
//! and estimates the total Sobol index of every region with Jansen's
//! estimator. The resulting map ([`WCAMap`]) feeds the downstream analyses
//! (spatial projection, scale embeddings, minimal images) and the
//! faithfulness metrics (deletion, insertion, μ-fidelity).
//!
//! The numeric kernels ([`wavelet`], [`sensitivity`]) are generic over the
//! scalar type; the aliases below pin the `f64` instantiations the pipeline
//! uses.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub mod analysis;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod qmc;
pub mod scorer;
pub mod sensitivity;
pub mod wavelet;

pub use error::{Error, Result};
pub use pipeline::{compute_wcam, WCAMap, WcamConfig};
pub use scorer::{Scorer, ScorerError, ScorerHandle};

/// Floating point scalar accepted by the transform and estimator kernels.
pub trait Real: Float + FromPrimitive + Sum + Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + Sum + Debug + Send + Sync + 'static {}

/// Image stored channel-first: axes are (channel, row, column).
pub type Image<T = f64> = ndarray::Array3<T>;

pub type Pyramid = wavelet::WaveletPyramid<f64>;
pub type Pyramid32 = wavelet::WaveletPyramid<f32>;
pub type Indices = sensitivity::SobolIndices<f64>;
pub type Indices32 = sensitivity::SobolIndices<f32>;
pub type Scores = sensitivity::ScoredDesign<f64>;
