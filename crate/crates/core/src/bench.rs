//! One cell of the approximation-error study: Stream-SW and the reservoir
//! baseline against the exact full-sample Monte Carlo SW on shared
//! projections.

use crate::error::Result;
use crate::io::reservoir::ReservoirSummary;
use crate::io::synthetic::{gen_mixture_pair, SyntheticSpec};
use crate::points::PointCloud;
use crate::rng::derive_seed;
use crate::slicedsw::{exact_sw_mc, ProjectionSet, Side, StreamSwEstimator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchCell {
    /// Exact `SW_p^p` of the full samples.
    pub exact: f64,
    pub stream: f64,
    pub reservoir: f64,
    /// Largest per-projection item count over both sides' sketches.
    pub stream_retained: usize,
    /// Points kept per side by the reservoir.
    pub reservoir_retained: usize,
}

impl BenchCell {
    pub fn stream_rel_error(&self) -> f64 {
        (self.stream - self.exact).abs() / self.exact
    }

    pub fn reservoir_rel_error(&self) -> f64 {
        (self.reservoir - self.exact).abs() / self.exact
    }
}

/// Runs one `(k, seed)` cell. Both clouds have `spec.n` points; the reservoir
/// keeps `ceil(3k + 2 ln(n / (2k/3)))` points of each.
pub fn bench_cell(spec: &SyntheticSpec, k: u32, projections: usize, p: f64) -> Result<BenchCell> {
    let (x, y) = gen_mixture_pair(spec)?;
    let seed = spec.seed;
    let proj = ProjectionSet::sample(x.dim(), projections, derive_seed(seed, 10))?;
    let exact = exact_sw_mc(&x, &y, &proj, p)?;

    let mut est = StreamSwEstimator::two_sided(proj.clone(), k, k, p, derive_seed(seed, 11))?;
    est.ingest_cloud(&x, Side::A)?;
    est.ingest_cloud(&y, Side::B)?;
    let stream = est.estimate()?;
    let stream_retained = est
        .side(Side::A)
        .retained_per_projection()
        .max(est.side(Side::B).retained_per_projection());

    let rx = reservoir(&x, k, derive_seed(seed, 12))?;
    let ry = reservoir(&y, k, derive_seed(seed, 13))?;
    let reservoir_sw = exact_sw_mc(&rx, &ry, &proj, p)?;
    Ok(BenchCell {
        exact,
        stream,
        reservoir: reservoir_sw,
        stream_retained,
        reservoir_retained: rx.len().max(ry.len()),
    })
}

fn reservoir(c: &PointCloud, k: u32, seed: u64) -> Result<PointCloud> {
    let mut r = ReservoirSummary::with_budget(k, c.len() as u64, seed);
    for row in c.rows() {
        r.update(row);
    }
    PointCloud::from_rows(c.dim(), r.into_items())
}
