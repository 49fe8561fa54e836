//! Seeded Gaussian and Gaussian-mixture generators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::points::PointCloud;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `d x d` covariance.
    pub cov: Vec<Vec<f64>>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Self {
        Self { weight, mean, cov }
    }

    /// `N(mean, I)`.
    pub fn isotropic(weight: f64, mean: Vec<f64>) -> Self {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { weight, mean, cov }
    }
}

/// A finite Gaussian mixture with Cholesky factors precomputed.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
    factors: Vec<DMatrix<f64>>,
    cumulative: Vec<f64>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidConfig("mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::InvalidConfig("zero-dimensional mixture".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components
            .iter()
            .any(|c| c.weight.is_nan() || c.weight <= 0.0)
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(format!(
                "component weights must be positive and sum to 1, got {total}"
            )));
        }
        let mut factors = Vec::with_capacity(components.len());
        for c in &components {
            if c.mean.len() != dim || c.cov.len() != dim || c.cov.iter().any(|r| r.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.mean.len(),
                });
            }
            let m = DMatrix::from_fn(dim, dim, |i, j| c.cov[i][j]);
            if m.iter().any(|v| !v.is_finite()) || (&m - m.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidCovariance(
                    "covariance must be finite and symmetric".into(),
                ));
            }
            let chol = m.cholesky().ok_or_else(|| {
                Error::InvalidCovariance("covariance is not positive definite".into())
            })?;
            factors.push(chol.l());
        }
        let mut acc = 0.0;
        let cumulative = components
            .iter()
            .map(|c| {
                acc += c.weight / total;
                acc
            })
            .collect();
        Ok(Self {
            components,
            factors,
            cumulative,
            dim,
        })
    }

    pub fn gaussian(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![GaussianComponent::new(1.0, mean, cov)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Population mean `sum_i w_i mu_i`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            m.iter_mut()
                .zip(&c.mean)
                .for_each(|(a, b)| *a += c.weight * b);
        }
        m
    }

    /// Endless seeded sample stream.
    pub fn sampler(&self, seed: u64) -> MixtureSampler<'_> {
        MixtureSampler {
            mixture: self,
            rng: rng_from_seed(seed),
        }
    }

    pub fn sample_cloud(&self, n: usize, seed: u64) -> PointCloud {
        let mut cloud = PointCloud::with_capacity(self.dim, n).expect("dim >= 1");
        for p in self.sampler(seed).take(n) {
            cloud.push(&p).expect("generated points are finite");
        }
        cloud
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let idx = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.components.len() - 1);
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.factors[idx] * z;
        x.iter()
            .zip(&self.components[idx].mean)
            .map(|(a, b)| a + b)
            .collect()
    }
}

pub struct MixtureSampler<'a> {
    mixture: &'a GaussianMixture,
    rng: ChaCha8Rng,
}

impl Iterator for MixtureSampler<'_> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        Some(self.mixture.draw(&mut self.rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    GaussianPair,
    MixturePair,
}

/// Two distributions plus sample counts and a seed.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub a: GaussianMixture,
    pub b: GaussianMixture,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `N((-1,-1), I)` versus `N((2,2), I)`; population `SW_2^2 = 9`.
    pub fn gaussian_pair(n: usize, m: usize, seed: u64) -> Self {
        let a = GaussianMixture::new(vec![GaussianComponent::isotropic(1.0, vec![-1.0, -1.0])])
            .unwrap();
        let b =
            GaussianMixture::new(vec![GaussianComponent::isotropic(1.0, vec![2.0, 2.0])]).unwrap();
        Self {
            kind: SyntheticKind::GaussianPair,
            a,
            b,
            n,
            m,
            seed,
        }
    }

    /// The two three-component planar mixtures used for the error study.
    pub fn mixture_pair(n: usize, m: usize, seed: u64) -> Self {
        let comp = |w: f64, mean: [f64; 2], cov: [[f64; 2]; 2]| {
            GaussianComponent::new(w, mean.to_vec(), cov.iter().map(|r| r.to_vec()).collect())
        };
        let a = GaussianMixture::new(vec![
            comp(0.3, [0.0, 0.0], [[0.5, 0.2], [0.2, 0.5]]),
            comp(0.4, [3.0, 3.0], [[0.8, -0.3], [-0.3, 0.5]]),
            comp(0.3, [-3.0, 3.0], [[0.6, 0.1], [0.1, 0.6]]),
        ])
        .unwrap();
        let b = GaussianMixture::new(vec![
            comp(0.4, [-3.0, -3.0], [[0.7, 0.1], [0.1, 0.7]]),
            comp(0.3, [3.0, -3.0], [[0.5, -0.2], [-0.2, 0.5]]),
            comp(0.3, [0.0, 3.0], [[0.6, 0.2], [0.2, 0.6]]),
        ])
        .unwrap();
        Self {
            kind: SyntheticKind::MixturePair,
            a,
            b,
            n,
            m,
            seed,
        }
    }

    pub fn seed_a(&self) -> u64 {
        derive_seed(self.seed, 0)
    }

    pub fn seed_b(&self) -> u64 {
        derive_seed(self.seed, 1)
    }
}

/// Samples `n` points from `a` and `m` points from `b`.
pub fn gen_mixture_pair(spec: &SyntheticSpec) -> Result<(PointCloud, PointCloud)> {
    if spec.a.dim() != spec.b.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.a.dim(),
            found: spec.b.dim(),
        });
    }
    Ok((
        spec.a.sample_cloud(spec.n, spec.seed_a()),
        spec.b.sample_cloud(spec.m, spec.seed_b()),
    ))
}

/// `len` i.i.d. `N(0, I_dim)` points; from index `change_at` on every
/// coordinate is shifted by `shift`.
pub fn mean_shift_stream(
    dim: usize,
    len: usize,
    change_at: usize,
    shift: f64,
    seed: u64,
) -> PointCloud {
    let mut rng = rng_from_seed(seed);
    let mut cloud = PointCloud::with_capacity(dim, len).expect("dim >= 1");
    let mut row = vec![0.0; dim];
    for t in 0..len {
        let offset = if t >= change_at { shift } else { 0.0 };
        row.iter_mut()
            .for_each(|v| *v = rng.sample::<f64, _>(StandardNormal) + offset);
        cloud.push(&row).expect("finite");
    }
    cloud
}
