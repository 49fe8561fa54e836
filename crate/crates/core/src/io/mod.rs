//! Data in and out: point formats, synthetic generators, and the reservoir
//! sampling baseline.

pub mod formats;
pub mod reservoir;
pub mod synthetic;

pub use formats::{
    read_points, read_points_from, read_weighted_csv, write_points_csv, write_points_sotp,
    PointReader,
};
pub use reservoir::{budget_capacity, ReservoirSummary};
pub use synthetic::{
    gen_mixture_pair, GaussianComponent, GaussianMixture, SyntheticKind, SyntheticSpec,
};
