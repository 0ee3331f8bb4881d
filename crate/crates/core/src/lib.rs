//! Item-centric benchmark subset selection.
//!
//! Items are described by 16 cognitive-demand levels (0–5). The crate reduces
//! those annotations to a low-dimensional space, clusters it, picks one
//! representative item per cluster and predicts a model's full-benchmark score
//! from its results on the representatives alone. Model-centric baselines
//! (score-vector clustering, a multidimensional 2PL IRT model) and a graph
//! convolutional predictor for the annotations live alongside, together with
//! the evaluation harness used to compare them.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, HTTP and the
//! command line live in the `itemsel` companion crate.

#![no_std]

extern crate alloc;

pub mod datamodel;
pub mod embedding;
pub mod error;
pub mod estimators;
pub mod gnn;
pub mod harness;
pub mod irt;
pub mod math;
pub mod rng;
pub mod selection;

pub use datamodel::{
    compute_cost, true_score, BenchmarkItem, CostModel, PerformanceMatrix, ScaleVector,
    DIMENSION_NAMES, MAX_LEVEL, N_DIMS,
};
pub use error::{Error, Result};
pub use math::Matrix;
