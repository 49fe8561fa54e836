//! Euler-scheme gradient flow of a point cloud toward a streamed target
//! under the one-sided sliced objective.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;

use crate::dist1d::QuantileTable;
use crate::error::{Error, Result};
use crate::io::reservoir::{budget_capacity, ReservoirSummary};
use crate::points::PointCloud;
use crate::rng::{derive_seed, rng_from_seed};
use crate::slicedsw::{OneSidedWorkspace, ProjectionSet, Side, SideSpec, StreamSwEstimator};

/// How the target is summarized before the flow starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// One KLL sketch per projection.
    StreamSw,
    /// Every projected target value is kept.
    FullSw,
    /// A uniform reservoir of `ceil(3k + 2 ln(m / (2k/3)))` target points.
    RandomSampling,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::StreamSw => "stream_sw",
            Baseline::FullSw => "full_sw",
            Baseline::RandomSampling => "random_sampling",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stream_sw" | "stream-sw" => Ok(Baseline::StreamSw),
            "full_sw" | "full-sw" => Ok(Baseline::FullSw),
            "random_sampling" | "random-sampling" => Ok(Baseline::RandomSampling),
            other => Err(Error::InvalidConfig(format!("unknown baseline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Number of projections `L`.
    pub projections: usize,
    pub k: u32,
    pub p: f64,
    /// Trace checkpoint interval; step 0 and the final step are always recorded.
    pub eval_every: usize,
    pub seed: u64,
    pub baseline: Baseline,
    /// Draw this many of the `L` projections afresh at every step instead of
    /// using all of them.
    pub resample: Option<usize>,
    /// Number of target points, needed up front to size the reservoir of the
    /// random-sampling baseline.
    pub target_len: Option<u64>,
    /// Record wall-clock seconds in the trace. Off gives a trace that is
    /// reproducible bit for bit.
    pub record_time: bool,
}

impl FlowConfig {
    pub fn new(projections: usize, k: u32, seed: u64) -> Self {
        Self {
            steps: 5000,
            step_size: 0.001,
            projections,
            k,
            p: 2.0,
            eval_every: 100,
            seed,
            baseline: Baseline::StreamSw,
            resample: None,
            target_len: None,
            record_time: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.projections == 0 {
            return Err(Error::InvalidConfig("need at least one projection".into()));
        }
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!(
                "k must be >= 2, got {}",
                self.k
            )));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidP(self.p));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        if let Some(r) = self.resample {
            if r == 0 || r > self.projections {
                return Err(Error::InvalidConfig(format!(
                    "resample size {r} must be in 1..={}",
                    self.projections
                )));
            }
        }
        if self.baseline == Baseline::RandomSampling && self.target_len.is_none() {
            return Err(Error::InvalidConfig(
                "random_sampling needs the target length to size its reservoir".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowRecord {
    pub step: usize,
    /// Sliced objective `SW_p^p` against the summarized target.
    pub loss: f64,
    /// Squared exact Wasserstein-2 cost against the scoring reference.
    pub w2: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTrace {
    pub records: Vec<FlowRecord>,
}

impl FlowTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "step,loss,w2,seconds")?;
        for r in &self.records {
            let w2 = r.w2.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", r.step, r.loss, w2, r.seconds)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub points: PointCloud,
    pub trace: FlowTrace,
    /// Largest number of target values held for any single projection.
    pub retained: usize,
    /// Points seen on the target stream.
    pub target_seen: u64,
}

/// Runs the flow. The target stream is consumed once, before the first step.
/// When `reference` is given, the exact squared W2 cost against it is added
/// at every checkpoint; it is never used by the flow itself.
///
/// `on_checkpoint` is called with the step index and current points at each
/// checkpoint (for snapshots).
pub fn run_flow<I>(
    source: &PointCloud,
    target: I,
    cfg: &FlowConfig,
    reference: Option<&PointCloud>,
    mut on_checkpoint: impl FnMut(usize, &PointCloud) -> Result<()>,
) -> Result<FlowOutcome>
where
    I: IntoIterator<Item = Result<Vec<f64>>>,
{
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyInput("source point cloud"));
    }
    let start = Instant::now();
    let projections =
        ProjectionSet::sample(source.dim(), cfg.projections, derive_seed(cfg.seed, 0))?;
    let sketch_seed = derive_seed(cfg.seed, 1);

    let (tables, retained, seen) = match cfg.baseline {
        Baseline::StreamSw | Baseline::FullSw => {
            let spec = match cfg.baseline {
                Baseline::StreamSw => SideSpec::Sketch { k: cfg.k },
                _ => SideSpec::Exact,
            };
            let mut est = StreamSwEstimator::new(
                projections.clone(),
                SideSpec::Exact,
                spec,
                cfg.p,
                sketch_seed,
            )?;
            for point in target {
                est.ingest(&point?, Side::B)?;
            }
            let seen = est.n(Side::B);
            if seen == 0 {
                return Err(Error::EmptyInput("target stream"));
            }
            let retained = est.side(Side::B).retained_per_projection();
            (est.freeze(Side::B)?, retained, seen)
        }
        Baseline::RandomSampling => {
            let m = cfg.target_len.expect("checked by validate");
            let mut reservoir =
                ReservoirSummary::new(budget_capacity(cfg.k, m), derive_seed(cfg.seed, 2));
            for point in target {
                let point = point?;
                if point.len() != source.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: source.dim(),
                        found: point.len(),
                    });
                }
                reservoir.update(point);
            }
            let seen = reservoir.seen();
            if seen == 0 {
                return Err(Error::EmptyInput("target stream"));
            }
            let kept = PointCloud::from_rows(source.dim(), reservoir.items())?;
            let tables = (0..projections.len())
                .map(|l| {
                    let mut v = projections.project_cloud(l, &kept);
                    v.sort_unstable_by(f64::total_cmp);
                    QuantileTable::from_sorted_samples(&v)
                })
                .collect::<Result<Vec<_>>>()?;
            (tables, kept.len(), seen)
        }
    };

    let all: Vec<usize> = (0..projections.len()).collect();
    let mut x = source.clone();
    let mut trace = FlowTrace::default();
    let mut workspace = OneSidedWorkspace::new(projections.len());
    for step in 0..=cfg.steps {
        let indices = match cfg.resample {
            Some(r) => {
                let mut rng = rng_from_seed(derive_seed(cfg.seed, 3 + step as u64));
                let mut idx = sample_indices(&mut rng, projections.len(), r).into_vec();
                idx.sort_unstable();
                idx
            }
            None => all.clone(),
        };
        let eval = workspace.step(&x, &projections, &tables, &indices, cfg.p)?;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let w2 = match reference {
                Some(y) => Some(exact_w2_squared(&x, y)?),
                None => None,
            };
            trace.records.push(FlowRecord {
                step,
                loss: eval.loss,
                w2,
                seconds: if cfg.record_time {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            });
            on_checkpoint(step, &x)?;
        }
        if step == cfg.steps {
            break;
        }
        for (xv, gv) in x.as_mut_slice().iter_mut().zip(eval.grad.as_slice()) {
            *xv -= cfg.step_size * gv;
        }
    }
    Ok(FlowOutcome {
        points: x,
        trace,
        retained,
        target_seen: seen,
    })
}

/// Largest balanced-assignment size [`exact_w2_squared`] will solve.
pub const MAX_ASSIGNMENT: usize = 4096;

/// Exact squared Wasserstein-2 cost between two uniform point clouds.
///
/// Uniform measures with `n` and `m` atoms are replicated up to `lcm(n, m)`
/// atoms each, after which an optimal plan is an assignment; this is solved
/// exactly with the Hungarian method in `O(lcm^3)`. Sizes whose lcm exceeds
/// [`MAX_ASSIGNMENT`] are rejected.
pub fn exact_w2_squared(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("point cloud"));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    let (n, m) = (x.len(), y.len());
    let size = n / gcd(n, m) * m;
    if size > MAX_ASSIGNMENT {
        return Err(Error::InvalidConfig(format!(
            "exact W2 between {n} and {m} points needs a {size}-assignment (limit {MAX_ASSIGNMENT})"
        )));
    }
    let (rx, ry) = (size / n, size / m);
    let cost = |i: usize, j: usize| -> f64 {
        x.row(i / rx)
            .iter()
            .zip(y.row(j / ry))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let assignment = hungarian(size, cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost(i, j))
        .sum();
    Ok(total / size as f64)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Minimum-cost perfect matching on a dense `n x n` cost, returning the
/// column assigned to each row (shortest augmenting paths with potentials).
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}
