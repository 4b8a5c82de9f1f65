//! Reduced-rank network autoregression for matrix-valued network time series:
//! simulation, scaled gradient descent with block preconditioners, ALS
//! initialization, rank selection, baselines and Monte Carlo harnesses.

pub mod dgp;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod eval;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod objective;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{AdjacencyMatrix, WeightMatrix};
pub use linalg::Mat;
pub use model::{LagParams, ModelDims, PanelSeries, ParamSet};
