//! Sliced Wasserstein from sample streams.
//!
//! A [`StreamSwEstimator`] owns `L` random unit directions and, for each of
//! the two compared distributions, one summary per direction: a KLL sketch of
//! the projected stream, or (one-sided use) the exact projected samples.
//! Every ingested point is projected onto all `L` directions. The estimate is
//! the average over directions of the 1D `W_p^p` between the two summaries.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dist1d::{pp_from_cumulative, QuantileTable, WeightedDiscrete1D};
use crate::error::{Error, Result};
use crate::kll::{ByteReader, Sketch, SketchConfig};
use crate::points::{check_point, dot, PointCloud};
use crate::rng::{derive_seed, rng_from_seed};

const PROJECTION_MAGIC: &[u8; 4] = b"SOPJ";
const ESTIMATOR_MAGIC: &[u8; 4] = b"SOSW";
const CHECKPOINT_VERSION: u16 = 1;

/// Number of projections handled per parallel work item. Fixed so that
/// floating-point reductions do not depend on the thread count.
const PROJECTION_CHUNK: usize = 16;

/// `L` unit directions in `R^d` drawn uniformly from the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    dim: usize,
    seed: u64,
    directions: Vec<f64>,
}

impl ProjectionSet {
    /// Normalized standard Gaussian draws; deterministic in `(dim, count, seed)`.
    pub fn sample(dim: usize, count: usize, seed: u64) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(Error::InvalidConfig(format!(
                "projection set needs d >= 1 and L >= 1, got d = {dim}, L = {count}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut directions = Vec::with_capacity(dim * count);
        let mut draw = vec![0.0; dim];
        for _ in 0..count {
            loop {
                draw.iter_mut()
                    .for_each(|v| *v = StandardNormal.sample(&mut rng));
                let norm = dot(&draw, &draw).sqrt();
                if norm > 1e-12 {
                    directions.extend(draw.iter().map(|v| v / norm));
                    break;
                }
            }
        }
        Ok(Self {
            dim,
            seed,
            directions,
        })
    }

    /// Wraps caller-supplied directions, normalizing each.
    pub fn from_directions(dim: usize, dirs: &[Vec<f64>], seed: u64) -> Result<Self> {
        if dim == 0 || dirs.is_empty() {
            return Err(Error::InvalidConfig("empty projection set".into()));
        }
        let mut directions = Vec::with_capacity(dim * dirs.len());
        for d in dirs {
            check_point(dim, d)?;
            let norm = dot(d, d).sqrt();
            if norm <= 1e-12 {
                return Err(Error::InvalidConfig("zero direction".into()));
            }
            directions.extend(d.iter().map(|v| v / norm));
        }
        Ok(Self {
            dim,
            seed,
            directions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn direction(&self, l: usize) -> &[f64] {
        &self.directions[l * self.dim..(l + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.directions.chunks_exact(self.dim)
    }

    /// `theta_l . point`.
    #[inline]
    pub fn project(&self, l: usize, point: &[f64]) -> f64 {
        dot(self.direction(l), point)
    }

    /// Projections of every row of `cloud` onto direction `l`.
    pub fn project_cloud(&self, l: usize, cloud: &PointCloud) -> Vec<f64> {
        let theta = self.direction(l);
        cloud.rows().map(|r| dot(theta, r)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + 8 * self.directions.len());
        self.write_to(&mut out);
        out
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(PROJECTION_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.directions {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let s = Self::read_from(&mut r)?;
        expect_end(&r)?;
        Ok(s)
    }

    fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        if r.take(4)? != PROJECTION_MAGIC {
            return Err(Error::MalformedBytes("bad magic, expected SOPJ".into()));
        }
        check_version(r.u16()?)?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let seed = r.u64()?;
        if dim == 0 || count == 0 || dim.saturating_mul(count) > r.remaining() / 8 {
            return Err(Error::MalformedBytes("invalid projection set shape".into()));
        }
        let mut directions = Vec::with_capacity(dim * count);
        for _ in 0..dim * count {
            directions.push(r.f64()?);
        }
        if directions.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedBytes("non-finite direction".into()));
        }
        Ok(Self {
            dim,
            seed,
            directions,
        })
    }
}

/// Free-function form of [`ProjectionSet::sample`].
pub fn sample_projections(dim: usize, count: usize, seed: u64) -> Result<ProjectionSet> {
    ProjectionSet::sample(dim, count, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::A => "A",
            Side::B => "B",
        }
    }
}

/// How one side of the estimator summarizes its stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideSpec {
    /// One KLL sketch per projection with this `k`.
    Sketch { k: u32 },
    /// Exact projected samples (the non-streamed side of one-sided use).
    Exact,
}

/// Per-projection summaries of one side.
#[derive(Debug, Clone, PartialEq)]
pub enum SideStore {
    Sketched(Vec<Sketch>),
    Exact(Vec<Vec<f64>>),
}

impl SideStore {
    fn build(spec: SideSpec, count: usize, seed: u64) -> Result<Self> {
        Ok(match spec {
            SideSpec::Sketch { k } => {
                let base = SketchConfig::new(k, seed)?;
                SideStore::Sketched(
                    (0..count)
                        .map(|l| Sketch::new(base.with_seed(derive_seed(seed, l as u64))))
                        .collect(),
                )
            }
            SideSpec::Exact => SideStore::Exact(vec![Vec::new(); count]),
        })
    }

    pub fn n(&self) -> u64 {
        match self {
            SideStore::Sketched(s) => s.first().map_or(0, Sketch::n),
            SideStore::Exact(v) => v.first().map_or(0, |b| b.len() as u64),
        }
    }

    pub fn is_sketched(&self) -> bool {
        matches!(self, SideStore::Sketched(_))
    }

    /// Largest number of scalars held for any single projection.
    pub fn retained_per_projection(&self) -> usize {
        match self {
            SideStore::Sketched(s) => s.iter().map(Sketch::size).max().unwrap_or(0),
            SideStore::Exact(v) => v.iter().map(Vec::len).max().unwrap_or(0),
        }
    }

    pub fn sketches(&self) -> Option<&[Sketch]> {
        match self {
            SideStore::Sketched(s) => Some(s),
            SideStore::Exact(_) => None,
        }
    }

    /// Discrete measure of projection `l`.
    pub fn measure(&self, l: usize) -> Result<WeightedDiscrete1D> {
        match self {
            SideStore::Sketched(s) => s[l].to_weighted(),
            SideStore::Exact(v) => WeightedDiscrete1D::empirical(&v[l]),
        }
    }

    /// Quantile step function of projection `l`.
    pub fn table(&self, l: usize) -> Result<QuantileTable> {
        match self {
            SideStore::Sketched(s) => QuantileTable::from_sketch(&s[l]),
            SideStore::Exact(v) => {
                let mut sorted = v[l].clone();
                sorted.sort_unstable_by(f64::total_cmp);
                QuantileTable::from_sorted_samples(&sorted)
            }
        }
    }

    fn insert_projected(&mut self, l: usize, x: f64) {
        match self {
            SideStore::Sketched(s) => s[l].insert(x).expect("caller checks finiteness"),
            SideStore::Exact(v) => v[l].push(x),
        }
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        match self {
            SideStore::Sketched(s) => {
                out.push(0);
                for sk in s {
                    out.extend_from_slice(&sk.to_bytes());
                }
            }
            SideStore::Exact(v) => {
                out.push(1);
                for buf in v {
                    out.extend_from_slice(&(buf.len() as u64).to_le_bytes());
                    for x in buf {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
    }

    fn read_from(r: &mut ByteReader<'_>, count: usize) -> Result<Self> {
        match r.u8()? {
            0 => {
                let sketches = (0..count)
                    .map(|_| Sketch::read_from(r))
                    .collect::<Result<Vec<_>>>()?;
                let k = sketches[0].config().k();
                let n = sketches[0].n();
                if sketches.iter().any(|s| s.config().k() != k || s.n() != n) {
                    return Err(Error::MalformedBytes(
                        "side sketches disagree on k or n".into(),
                    ));
                }
                Ok(SideStore::Sketched(sketches))
            }
            1 => {
                let mut bufs = Vec::with_capacity(count);
                for _ in 0..count {
                    let len = r.u64()? as usize;
                    if len > r.remaining() / 8 {
                        return Err(Error::MalformedBytes(
                            "buffer length exceeds payload".into(),
                        ));
                    }
                    let buf = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    bufs.push(buf);
                }
                if bufs.iter().any(|b| b.len() != bufs[0].len()) {
                    return Err(Error::MalformedBytes("exact buffers disagree on n".into()));
                }
                Ok(SideStore::Exact(bufs))
            }
            t => Err(Error::MalformedBytes(format!("unknown side tag {t}"))),
        }
    }
}

/// Stream-SW estimator over two sides `A` and `B`.
///
/// Sketch seeds are derived from `(seed, l)` only, so the `l`-th sketches of
/// both sides share their coin sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSwEstimator {
    projections: ProjectionSet,
    p: f64,
    a: SideStore,
    b: SideStore,
}

impl StreamSwEstimator {
    pub fn new(
        projections: ProjectionSet,
        a: SideSpec,
        b: SideSpec,
        p: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidP(p));
        }
        let count = projections.len();
        Ok(Self {
            a: SideStore::build(a, count, seed)?,
            b: SideStore::build(b, count, seed)?,
            projections,
            p,
        })
    }

    /// Both sides sketched, with `k1` for `A` and `k2` for `B`.
    pub fn two_sided(
        projections: ProjectionSet,
        k1: u32,
        k2: u32,
        p: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            projections,
            SideSpec::Sketch { k: k1 },
            SideSpec::Sketch { k: k2 },
            p,
            seed,
        )
    }

    /// Side `A` held exactly, side `B` (the stream) sketched with `k`.
    pub fn one_sided(projections: ProjectionSet, k: u32, p: f64, seed: u64) -> Result<Self> {
        Self::new(
            projections,
            SideSpec::Exact,
            SideSpec::Sketch { k },
            p,
            seed,
        )
    }

    pub fn projections(&self) -> &ProjectionSet {
        &self.projections
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn side(&self, side: Side) -> &SideStore {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn n(&self, side: Side) -> u64 {
        self.side(side).n()
    }

    /// Projects `point` onto every direction and updates the side's summaries.
    pub fn ingest(&mut self, point: &[f64], side: Side) -> Result<()> {
        check_point(self.projections.dim(), point)?;
        let ys: Vec<f64> = (0..self.projections.len())
            .map(|l| self.projections.project(l, point))
            .collect();
        if let Some(&y) = ys.iter().find(|y| !y.is_finite()) {
            return Err(Error::NonFiniteInput(y));
        }
        let store = match side {
            Side::A => &mut self.a,
            Side::B => &mut self.b,
        };
        for (l, y) in ys.into_iter().enumerate() {
            store.insert_projected(l, y);
        }
        Ok(())
    }

    /// Ingests all rows of `cloud` in order. Projections are processed in
    /// parallel; the result equals row-by-row [`StreamSwEstimator::ingest`].
    pub fn ingest_cloud(&mut self, cloud: &PointCloud, side: Side) -> Result<()> {
        if cloud.dim() != self.projections.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.projections.dim(),
                found: cloud.dim(),
            });
        }
        let projections = &self.projections;
        let store = match side {
            Side::A => &mut self.a,
            Side::B => &mut self.b,
        };
        match store {
            SideStore::Sketched(sketches) => {
                sketches
                    .par_iter_mut()
                    .enumerate()
                    .try_for_each(|(l, sk)| {
                        let theta = projections.direction(l);
                        cloud.rows().try_for_each(|row| sk.insert(dot(theta, row)))
                    })?
            }
            SideStore::Exact(bufs) => {
                bufs.par_iter_mut().enumerate().try_for_each(|(l, buf)| {
                    let theta = projections.direction(l);
                    for row in cloud.rows() {
                        let y = dot(theta, row);
                        if !y.is_finite() {
                            return Err(Error::NonFiniteInput(y));
                        }
                        buf.push(y);
                    }
                    Ok(())
                })?
            }
        }
        Ok(())
    }

    /// `W_p^p` between the two sides, one entry per projection.
    pub fn per_projection(&self) -> Result<Vec<f64>> {
        if self.a.n() == 0 {
            return Err(Error::EmptySide(Side::A.name()));
        }
        if self.b.n() == 0 {
            return Err(Error::EmptySide(Side::B.name()));
        }
        (0..self.projections.len())
            .into_par_iter()
            .map(|l| {
                let ta = self.a.table(l)?;
                let tb = self.b.table(l)?;
                Ok(pp_from_cumulative(
                    ta.values(),
                    ta.cumulative(),
                    tb.values(),
                    tb.cumulative(),
                    self.p,
                ))
            })
            .collect()
    }

    /// Monte Carlo Stream-SW estimate of `SW_p^p` (not its p-th root).
    pub fn estimate(&self) -> Result<f64> {
        let per = self.per_projection()?;
        Ok(per.iter().sum::<f64>() / per.len() as f64)
    }

    /// One-sided Stream-SW: requires exactly one side sketched.
    pub fn estimate_one_sided(&self) -> Result<f64> {
        if self.a.is_sketched() == self.b.is_sketched() {
            return Err(Error::InvalidConfig(
                "one-sided estimate needs exactly one sketched side".into(),
            ));
        }
        self.estimate()
    }

    /// Per-projection quantile tables of one side, for repeated queries
    /// against frozen summaries.
    pub fn freeze(&self, side: Side) -> Result<Vec<QuantileTable>> {
        let store = self.side(side);
        if store.n() == 0 {
            return Err(Error::EmptySide(side.name()));
        }
        (0..self.projections.len())
            .into_par_iter()
            .map(|l| store.table(l))
            .collect()
    }

    /// Checkpoint: projection set, `p`, then both sides.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ESTIMATOR_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        self.projections.write_to(&mut out);
        out.extend_from_slice(&self.p.to_le_bytes());
        self.a.write_to(&mut out);
        self.b.write_to(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != ESTIMATOR_MAGIC {
            return Err(Error::MalformedBytes("bad magic, expected SOSW".into()));
        }
        check_version(r.u16()?)?;
        let projections = ProjectionSet::read_from(&mut r)?;
        let p = r.f64()?;
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::MalformedBytes(format!("invalid p {p}")));
        }
        let a = SideStore::read_from(&mut r, projections.len())?;
        let b = SideStore::read_from(&mut r, projections.len())?;
        expect_end(&r)?;
        Ok(Self {
            projections,
            p,
            a,
            b,
        })
    }
}

fn check_version(v: u16) -> Result<()> {
    if v == CHECKPOINT_VERSION {
        Ok(())
    } else {
        Err(Error::VersionMismatch {
            found: v,
            expected: CHECKPOINT_VERSION,
        })
    }
}

fn expect_end(r: &ByteReader<'_>) -> Result<()> {
    match r.remaining() {
        0 => Ok(()),
        n => Err(Error::MalformedBytes(format!("{n} trailing bytes"))),
    }
}

/// Exact Monte Carlo SW: sorts the full projected samples of both clouds.
/// Returns `SW_p^p`.
pub fn exact_sw_mc(x: &PointCloud, y: &PointCloud, proj: &ProjectionSet, p: f64) -> Result<f64> {
    let per = exact_sw_per_projection(x, y, proj, p)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

pub fn exact_sw_per_projection(
    x: &PointCloud,
    y: &PointCloud,
    proj: &ProjectionSet,
    p: f64,
) -> Result<Vec<f64>> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidP(p));
    }
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("exact SW needs non-empty point sets"));
    }
    for c in [x, y] {
        if c.dim() != proj.dim() {
            return Err(Error::DimensionMismatch {
                expected: proj.dim(),
                found: c.dim(),
            });
        }
    }
    (0..proj.len())
        .into_par_iter()
        .map(|l| {
            let tx = sorted_table(proj.project_cloud(l, x))?;
            let ty = sorted_table(proj.project_cloud(l, y))?;
            Ok(pp_from_cumulative(
                tx.values(),
                tx.cumulative(),
                ty.values(),
                ty.cumulative(),
                p,
            ))
        })
        .collect()
}

fn sorted_table(mut v: Vec<f64>) -> Result<QuantileTable> {
    v.sort_unstable_by(f64::total_cmp);
    QuantileTable::from_sorted_samples(&v)
}

/// Loss and gradient of the one-sided objective for a fixed set of
/// projections `indices` and frozen target tables.
#[derive(Debug, Clone)]
pub struct OneSidedStep {
    /// `(1/L') sum_l W_p^p(theta_l # source, target_l)`.
    pub loss: f64,
    /// `n x d` gradient.
    pub grad: PointCloud,
}

/// Gradient of the one-sided objective with the source as the free side and
/// side `B` of `est` as the (frozen) target.
///
/// For each projection and source point `x_i` with rank `r_i` (1-based) among
/// the projected source, the target value is `y_i = F_target^-1((r_i - 0.5)/n)`
/// and the contribution is `p |theta.x_i - y_i|^(p-1) sign(theta.x_i - y_i) theta`.
/// Contributions are averaged over the selected projections.
pub fn grad_one_sided_sw(
    source: &PointCloud,
    est: &StreamSwEstimator,
    indices: &[usize],
) -> Result<PointCloud> {
    let target = est.freeze(Side::B)?;
    one_sided_step(source, est.projections(), &target, indices, est.p()).map(|s| s.grad)
}

/// Loss and gradient against precomputed target tables (see
/// [`StreamSwEstimator::freeze`]).
pub fn one_sided_step(
    source: &PointCloud,
    projections: &ProjectionSet,
    target: &[QuantileTable],
    indices: &[usize],
    p: f64,
) -> Result<OneSidedStep> {
    OneSidedWorkspace::new(projections.len()).step(source, projections, target, indices, p)
}

/// Reusable state for repeated [`one_sided_step`] calls on a slowly moving
/// source: the previous sort order of every projection is kept, so that a
/// nearly sorted order is repaired by insertion instead of a full sort.
/// Results are identical to the stateless function.
#[derive(Debug, Default)]
pub struct OneSidedWorkspace {
    orders: Vec<std::sync::Mutex<Vec<usize>>>,
}

impl OneSidedWorkspace {
    pub fn new(projections: usize) -> Self {
        Self {
            orders: (0..projections).map(|_| Default::default()).collect(),
        }
    }

    pub fn step(
        &mut self,
        source: &PointCloud,
        projections: &ProjectionSet,
        target: &[QuantileTable],
        indices: &[usize],
        p: f64,
    ) -> Result<OneSidedStep> {
        if source.is_empty() {
            return Err(Error::EmptyInput("source point cloud"));
        }
        if source.dim() != projections.dim() {
            return Err(Error::DimensionMismatch {
                expected: projections.dim(),
                found: source.dim(),
            });
        }
        if indices.is_empty() {
            return Err(Error::InvalidConfig("no projections selected".into()));
        }
        if let Some(&l) = indices
            .iter()
            .find(|&&l| l >= projections.len() || l >= target.len())
        {
            return Err(Error::InvalidConfig(format!(
                "projection index {l} out of range"
            )));
        }
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidP(p));
        }
        if self.orders.len() < projections.len() {
            self.orders.resize_with(projections.len(), Default::default);
        }
        let n = source.len();
        let d = source.dim();
        let orders = &self.orders;
        let src_cum: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let partials: Vec<(f64, Vec<f64>)> = indices
            .par_chunks(PROJECTION_CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; n * d];
                let mut loss = 0.0;
                let mut proj: Vec<f64> = Vec::with_capacity(n);
                let mut sorted_vals = Vec::with_capacity(n);
                for &l in chunk {
                    let theta = projections.direction(l);
                    let table = &target[l];
                    proj.clear();
                    proj.extend(source.rows().map(|r| dot(theta, r)));
                    let mut order = orders[l].lock().expect("workspace lock poisoned");
                    sort_order(&mut order, &proj);

                    sorted_vals.clear();
                    sorted_vals.extend(order.iter().map(|&i| proj[i]));
                    loss += pp_from_cumulative(
                        &sorted_vals,
                        &src_cum,
                        table.values(),
                        table.cumulative(),
                        p,
                    );

                    let values = table.values();
                    let cum = table.cumulative();
                    let mut t = 0;
                    for (rank, &i) in order.iter().enumerate() {
                        let q = (rank as f64 + 0.5) / n as f64;
                        while t + 1 < values.len() && cum[t] < q {
                            t += 1;
                        }
                        let coef = slope(proj[i] - values[t], p);
                        if coef != 0.0 {
                            let g = &mut grad[i * d..(i + 1) * d];
                            g.iter_mut()
                                .zip(theta)
                                .for_each(|(gv, th)| *gv += coef * th);
                        }
                    }
                }
                (loss, grad)
            })
            .collect();

        let scale = 1.0 / indices.len() as f64;
        let mut grad = vec![0.0; n * d];
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(OneSidedStep {
            loss: loss * scale,
            grad: PointCloud::from_flat(d, grad)?,
        })
    }
}

/// Puts `order` into ascending `(key, index)` order. A previous order of the
/// right length is repaired by insertion sort, giving up and sorting from
/// scratch once the repair exceeds a linear budget of moves.
fn sort_order(order: &mut Vec<usize>, keys: &[f64]) {
    let less = |a: usize, b: usize| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)).is_lt();
    let n = keys.len();
    if order.len() == n {
        let mut budget = 8 * n + 64;
        let mut done = true;
        for i in 1..n {
            let cur = order[i];
            let mut j = i;
            while j > 0 && less(cur, order[j - 1]) {
                order[j] = order[j - 1];
                j -= 1;
                budget = budget.saturating_sub(1);
            }
            order[j] = cur;
            if budget == 0 {
                done = false;
                break;
            }
        }
        if done {
            return;
        }
    } else {
        order.clear();
        order.extend(0..n);
    }
    order.sort_unstable_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
}

/// Derivative of `|t|^p` with respect to `t`.
#[inline]
fn slope(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else if p == 2.0 {
        2.0 * t
    } else if p == 1.0 {
        t.signum()
    } else {
        p * t.abs().powf(p - 1.0) * t.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian_cloud(n: usize, d: usize, shift: f64, seed: u64) -> PointCloud {
        let mut rng = rng_from_seed(seed);
        let data = (0..n * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + shift)
            .collect();
        PointCloud::from_flat(d, data).unwrap()
    }

    #[test]
    fn directions_are_unit_and_reproducible() {
        let p = sample_projections(5, 200, 3).unwrap();
        for th in p.iter() {
            assert!((dot(th, th).sqrt() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(p, sample_projections(5, 200, 3).unwrap());
        assert_ne!(p, sample_projections(5, 200, 4).unwrap());
        let one = sample_projections(1, 50, 0).unwrap();
        assert!(one.iter().all(|th| th[0] == 1.0 || th[0] == -1.0));
        assert!(sample_projections(0, 5, 0).is_err());
        assert!(sample_projections(3, 0, 0).is_err());
    }

    #[test]
    fn directions_are_isotropic() {
        let p = sample_projections(3, 100_000, 9).unwrap();
        let mut m = [[0.0; 3]; 3];
        for th in p.iter() {
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += th[i] * th[j];
                }
            }
        }
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expected = if i == j { 1.0 / 3.0 } else { 0.0 };
                assert!((v / 100_000.0 - expected).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn ingest_updates_every_projection() {
        let proj = sample_projections(2, 8, 1).unwrap();
        let mut est = StreamSwEstimator::two_sided(proj, 16, 16, 2.0, 5).unwrap();
        est.ingest(&[0.0, 0.0], Side::A).unwrap();
        for sk in est.side(Side::A).sketches().unwrap() {
            assert_eq!(sk.level(1).unwrap(), &[0.0]);
        }
        let cloud = gaussian_cloud(500, 2, 0.0, 1);
        est.ingest_cloud(&cloud, Side::A).unwrap();
        for sk in est.side(Side::A).sketches().unwrap() {
            assert_eq!(sk.total_weight(), 501);
        }
        assert_eq!(est.n(Side::B), 0);
        assert!(matches!(
            est.ingest(&[1.0, 2.0, 3.0], Side::A),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
        assert!(matches!(
            est.ingest(&[f64::NAN, 1.0], Side::B),
            Err(Error::NonFiniteInput(_))
        ));
        assert_eq!(est.estimate(), Err(Error::EmptySide("B")));
    }

    #[test]
    fn batch_ingest_equals_pointwise() {
        let proj = sample_projections(3, 20, 2).unwrap();
        let cloud = gaussian_cloud(3000, 3, 0.0, 2);
        let mut a = StreamSwEstimator::two_sided(proj.clone(), 12, 12, 2.0, 1).unwrap();
        let mut b = a.clone();
        a.ingest_cloud(&cloud, Side::A).unwrap();
        for r in cloud.rows() {
            b.ingest(r, Side::A).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn identical_streams_give_zero() {
        let proj = sample_projections(4, 50, 3).unwrap();
        let cloud = gaussian_cloud(5000, 4, 0.0, 3);
        let mut est = StreamSwEstimator::two_sided(proj, 32, 32, 2.0, 8).unwrap();
        est.ingest_cloud(&cloud, Side::A).unwrap();
        est.ingest_cloud(&cloud, Side::B).unwrap();
        assert_eq!(est.estimate().unwrap(), 0.0);
    }

    #[test]
    fn uncompacted_estimate_equals_exact_mc() {
        let proj = sample_projections(3, 64, 4).unwrap();
        let x = gaussian_cloud(300, 3, 0.0, 4);
        let y = gaussian_cloud(200, 3, 1.0, 5);
        let mut est = StreamSwEstimator::two_sided(proj.clone(), 512, 512, 2.0, 0).unwrap();
        est.ingest_cloud(&x, Side::A).unwrap();
        est.ingest_cloud(&y, Side::B).unwrap();
        let exact = exact_sw_mc(&x, &y, &proj, 2.0).unwrap();
        assert!((est.estimate().unwrap() - exact).abs() <= 1e-10);

        let mut one = StreamSwEstimator::one_sided(proj, 512, 2.0, 0).unwrap();
        one.ingest_cloud(&x, Side::A).unwrap();
        one.ingest_cloud(&y, Side::B).unwrap();
        assert!((one.estimate_one_sided().unwrap() - exact).abs() <= 1e-10);
        assert!(est.estimate_one_sided().is_err());
    }

    #[test]
    fn one_sided_zero_on_own_sample() {
        let proj = sample_projections(2, 30, 6).unwrap();
        let x = gaussian_cloud(400, 2, 0.0, 6);
        let mut est = StreamSwEstimator::one_sided(proj, 1000, 2.0, 0).unwrap();
        est.ingest_cloud(&x, Side::A).unwrap();
        est.ingest_cloud(&x, Side::B).unwrap();
        assert_eq!(est.estimate_one_sided().unwrap(), 0.0);
    }

    #[test]
    fn exact_mc_special_cases() {
        let proj = sample_projections(3, 40, 7).unwrap();
        let x = gaussian_cloud(50, 3, 0.0, 7);
        assert_eq!(exact_sw_mc(&x, &x, &proj, 2.0).unwrap(), 0.0);
        let a = PointCloud::from_rows(3, [[1.0, 2.0, 3.0]]).unwrap();
        let b = PointCloud::from_rows(3, [[0.0, -1.0, 0.5]]).unwrap();
        let diff = [1.0, 3.0, 2.5];
        let by_hand = proj
            .iter()
            .map(|th| dot(th, &diff).abs().powi(3))
            .sum::<f64>()
            / 40.0;
        assert!((exact_sw_mc(&a, &b, &proj, 3.0).unwrap() - by_hand).abs() <= 1e-12);
        let empty = PointCloud::new(3).unwrap();
        assert!(matches!(
            exact_sw_mc(&empty, &b, &proj, 2.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn single_point_gradient_by_hand() {
        let proj = ProjectionSet::from_directions(2, &[vec![0.6, 0.8]], 0).unwrap();
        let mut est = StreamSwEstimator::one_sided(proj, 64, 2.0, 0).unwrap();
        for y in [[0.0, 0.0], [1.0, 1.0], [3.0, 2.0]] {
            est.ingest(&y, Side::B).unwrap();
        }
        // Projected target {0, 1.4, 3.4}; the q = 0.5 quantile is 1.4.
        let x = PointCloud::from_rows(2, [[2.0, -1.0]]).unwrap();
        let g = grad_one_sided_sw(&x, &est, &[0]).unwrap();
        let t = 0.6 * 2.0 - 0.8 - 1.4;
        assert!((g.row(0)[0] - 2.0 * t * 0.6).abs() < 1e-12);
        assert!((g.row(0)[1] - 2.0 * t * 0.8).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let proj = sample_projections(2, 25, 1).unwrap();
        let target = gaussian_cloud(64, 2, 0.0, 10);
        let mut est = StreamSwEstimator::one_sided(proj, 256, 2.0, 3).unwrap();
        est.ingest_cloud(&target, Side::B).unwrap();
        let idx: Vec<usize> = (0..25).collect();
        let g = grad_one_sided_sw(&target, &est, &idx).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
        let empty =
            StreamSwEstimator::one_sided(sample_projections(2, 5, 0).unwrap(), 8, 2.0, 0).unwrap();
        assert_eq!(
            grad_one_sided_sw(&target, &empty, &[0]).unwrap_err(),
            Error::EmptySide("B")
        );
    }

    #[test]
    fn workspace_matches_stateless_step() {
        let proj = sample_projections(3, 40, 2).unwrap();
        let mut est = StreamSwEstimator::one_sided(proj.clone(), 32, 2.0, 1).unwrap();
        est.ingest_cloud(&gaussian_cloud(500, 3, 1.0, 3), Side::B)
            .unwrap();
        let target = est.freeze(Side::B).unwrap();
        let idx: Vec<usize> = (0..40).collect();
        let mut ws = OneSidedWorkspace::new(40);
        let mut x = gaussian_cloud(60, 3, 0.0, 4);
        let mut rng = rng_from_seed(5);
        for round in 0..6 {
            // small moves keep orders nearly sorted, the last one scrambles them
            let scale = if round == 5 { 10.0 } else { 1e-3 };
            x.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v += scale * rng.sample::<f64, _>(StandardNormal));
            let a = ws.step(&x, &proj, &target, &idx, 2.0).unwrap();
            let b = one_sided_step(&x, &proj, &target, &idx, 2.0).unwrap();
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.grad, b.grad);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let proj = sample_projections(3, 10, 12).unwrap();
        let mut est = StreamSwEstimator::one_sided(proj, 16, 1.5, 12).unwrap();
        est.ingest_cloud(&gaussian_cloud(700, 3, 0.0, 1), Side::B)
            .unwrap();
        est.ingest_cloud(&gaussian_cloud(30, 3, 1.0, 2), Side::A)
            .unwrap();
        let back = StreamSwEstimator::from_bytes(&est.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), est.to_bytes());
        assert_eq!(back.estimate().unwrap(), est.estimate().unwrap());
        let bytes = est.to_bytes();
        assert!(StreamSwEstimator::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let pbytes = est.projections().to_bytes();
        assert_eq!(
            &ProjectionSet::from_bytes(&pbytes).unwrap(),
            est.projections()
        );
    }
}
