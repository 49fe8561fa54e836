//! Streaming sliced optimal transport.
//!
//! Distances between two distributions observed only as sample streams,
//! computed under a fixed memory budget: every random projection of the
//! data feeds a mergeable KLL quantile sketch, and the one-dimensional
//! Wasserstein distances between sketches are averaged over projections.
//!
//! Modules:
//! - [`kll`]: the quantile sketch (insert, merge, CDF/quantile queries, bytes).
//! - [`dist1d`]: exact and streaming 1D Wasserstein, sketched transport maps.
//! - [`slicedsw`]: projections, the Stream-SW estimator, gradients.
//! - [`gradflow`]: Euler gradient flows toward a streamed target.
//! - [`changepoint`]: bootstrap-calibrated change-point detectors.
//! - [`io`]: point formats, synthetic generators, reservoir sampling.
//! - [`bench`]: one cell of the approximation-error study.

pub mod bench;
pub mod changepoint;
pub mod dist1d;
pub mod error;
pub mod gradflow;
pub mod io;
pub mod kll;
pub mod points;
pub mod rng;
pub mod slicedsw;

pub use dist1d::{
    one_sided_stream_w1d, stream_w1d, wasserstein1d, wasserstein1d_pp, TransportMap1D,
    WeightedDiscrete1D,
};
pub use error::{Error, Result};
pub use kll::{Sketch, SketchConfig};
pub use points::PointCloud;
pub use slicedsw::{ProjectionSet, SideStore, StreamSwEstimator};
