//! Optimal transport on the real line.
//!
//! Everything here reduces to quantile functions: for two discrete measures
//! the cumulative-weight breakpoints of both sides are merged and the cost
//! `|F_mu^-1(q) - F_nu^-1(q)|^p` is integrated exactly, one constant segment
//! at a time (the northwest-corner coupling).

use crate::error::{Error, Result};
use crate::kll::Sketch;

/// Tolerance used when comparing cumulative weights.
pub const CUMULATIVE_TOL: f64 = 1e-15;
/// Allowed deviation of the total mass from one.
pub const MASS_TOL: f64 = 1e-12;

/// A finite probability measure on the line, stored as strictly increasing
/// support points with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDiscrete1D {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedDiscrete1D {
    /// Validating constructor for already-normalized `(value, weight)` pairs.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let mut total = 0.0;
        for (i, &(x, w)) in points.iter().enumerate() {
            if !x.is_finite() || !w.is_finite() {
                return Err(Error::InvalidMeasure(format!("non-finite atom ({x}, {w})")));
            }
            if w <= 0.0 {
                return Err(Error::InvalidMeasure(format!("non-positive weight {w}")));
            }
            if i > 0 && points[i - 1].0 >= x {
                return Err(Error::InvalidMeasure(
                    "values must be strictly increasing".into(),
                ));
            }
            total += w;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        let (values, weights) = points.into_iter().unzip();
        Ok(Self { values, weights })
    }

    /// Sorts, merges duplicate values and normalizes arbitrary positive
    /// weights. Zero-weight atoms are dropped.
    pub fn from_unnormalized(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points
            .iter()
            .any(|&(x, w)| !x.is_finite() || !w.is_finite() || w < 0.0)
        {
            return Err(Error::InvalidMeasure(
                "atoms must be finite with non-negative weight".into(),
            ));
        }
        points.retain(|&(_, w)| w > 0.0);
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = points.iter().map(|p| p.1).sum();
        if points.is_empty() || !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "total weight {total} is not positive"
            )));
        }
        let mut values: Vec<f64> = Vec::with_capacity(points.len());
        let mut weights: Vec<f64> = Vec::with_capacity(points.len());
        for (x, w) in points {
            if values.last() == Some(&x) {
                *weights.last_mut().unwrap() += w;
            } else {
                values.push(x);
                weights.push(w);
            }
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { values, weights })
    }

    /// Uniform empirical measure of `samples`.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidMeasure("no samples".into()));
        }
        if let Some(&x) = samples.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput(x));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(Self::from_sorted_samples(&sorted))
    }

    /// Empirical measure of finite samples that are already sorted ascending.
    pub(crate) fn from_sorted_samples(sorted: &[f64]) -> Self {
        let n = sorted.len() as f64;
        let mut values = Vec::with_capacity(sorted.len());
        let mut counts: Vec<u64> = Vec::with_capacity(sorted.len());
        for &x in sorted {
            if values.last() == Some(&x) {
                *counts.last_mut().unwrap() += 1;
            } else {
                values.push(x);
                counts.push(1);
            }
        }
        let weights = counts.into_iter().map(|c| c as f64 / n).collect();
        Self { values, weights }
    }

    pub(crate) fn from_sorted_unchecked(values: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), weights.len());
        debug_assert!(values.windows(2).all(|w| w[0] < w[1]));
        Self { values, weights }
    }

    pub fn point_mass(x: f64) -> Result<Self> {
        Self::new(vec![(x, 1.0)])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }

    /// Running sums of the weights with the last entry pinned to exactly 1.
    /// Sums are compensated so that equal weights `1/n` give fractions within
    /// an ulp or two of `i/n`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut cum = compensated_prefix_sums(&self.weights);
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        cum
    }

    /// Smallest support value whose cumulative weight reaches `q`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::OutOfRangeQuantile(q));
        }
        let cum = self.cumulative();
        let i = cum.partition_point(|&c| c < q - CUMULATIVE_TOL);
        Ok(self.values[i.min(self.len() - 1)])
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, w)| x * w).sum()
    }
}

/// Free-function form of [`WeightedDiscrete1D::quantile`].
pub fn quantile_of(m: &WeightedDiscrete1D, q: f64) -> Result<f64> {
    m.quantile(q)
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidP(p))
    }
}

#[inline]
pub(crate) fn ground_cost(diff: f64, p: f64) -> f64 {
    if p == 2.0 {
        diff * diff
    } else if p == 1.0 {
        diff.abs()
    } else {
        diff.abs().powf(p)
    }
}

/// Exact `W_p^p(mu, nu)`.
pub fn wasserstein1d_pp(mu: &WeightedDiscrete1D, nu: &WeightedDiscrete1D, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(pp_from_cumulative(
        mu.values(),
        &mu.cumulative(),
        nu.values(),
        &nu.cumulative(),
        p,
    ))
}

/// `W_p(mu, nu)`, the p-th root of [`wasserstein1d_pp`].
pub fn wasserstein1d(mu: &WeightedDiscrete1D, nu: &WeightedDiscrete1D, p: f64) -> Result<f64> {
    wasserstein1d_pp(mu, nu, p).map(|v| v.powf(1.0 / p))
}

/// Integrates `|F_a^-1 - F_b^-1|^p` over `[0, 1]` given both step functions
/// as (sorted support, cumulative weights ending in exactly 1).
pub(crate) fn pp_from_cumulative(va: &[f64], ca: &[f64], vb: &[f64], cb: &[f64], p: f64) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    let mut acc = 0.0;
    while i < va.len() && j < vb.len() {
        let next = ca[i].min(cb[j]);
        if next > prev {
            acc += (next - prev) * ground_cost(va[i] - vb[j], p);
            prev = next;
        }
        let step_a = ca[i] <= next + CUMULATIVE_TOL;
        let step_b = cb[j] <= next + CUMULATIVE_TOL;
        i += step_a as usize;
        j += step_b as usize;
    }
    acc
}

/// Streaming 1D Wasserstein: exact `W_p^p` between the discrete measures
/// carried by two sketches.
pub fn stream_w1d(sa: &Sketch, sb: &Sketch, p: f64) -> Result<f64> {
    check_p(p)?;
    wasserstein1d_pp(&sa.to_weighted()?, &sb.to_weighted()?, p)
}

/// One-sided variant: the sketch against the exact quantile function of `nu`.
pub fn one_sided_stream_w1d(sa: &Sketch, nu: &WeightedDiscrete1D, p: f64) -> Result<f64> {
    check_p(p)?;
    wasserstein1d_pp(&sa.to_weighted()?, nu, p)
}

/// Neumaier-compensated running sums.
fn compensated_prefix_sums(xs: &[f64]) -> Vec<f64> {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    xs.iter()
        .map(|&x| {
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
            sum + comp
        })
        .collect()
}

/// A discrete CDF/quantile step function: sorted support with the
/// cumulative fraction of mass at or below each point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    values: Vec<f64>,
    cum: Vec<f64>,
    tol: f64,
}

impl QuantileTable {
    /// Fractions are computed exactly as [`Sketch::cdf`] does, so sketch
    /// queries and table lookups agree bit for bit.
    pub fn from_sketch(s: &Sketch) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::EmptySketch);
        }
        let n = s.n() as f64;
        let mut values: Vec<f64> = Vec::new();
        let mut cum: Vec<f64> = Vec::new();
        let mut running = 0u64;
        for (x, w) in s.weighted_items() {
            running += w;
            let frac = running as f64 / n;
            if values.last() == Some(&x) {
                *cum.last_mut().unwrap() = frac;
            } else {
                values.push(x);
                cum.push(frac);
            }
        }
        Ok(Self {
            values,
            cum,
            tol: 0.0,
        })
    }

    pub fn from_measure(m: &WeightedDiscrete1D) -> Self {
        Self {
            values: m.values().to_vec(),
            cum: m.cumulative(),
            tol: CUMULATIVE_TOL,
        }
    }

    /// Empirical step function of ascending-sorted samples, with fractions
    /// `count / n` computed from integer counts.
    pub fn from_sorted_samples(sorted: &[f64]) -> Result<Self> {
        if sorted.is_empty() {
            return Err(Error::EmptyInput("no samples"));
        }
        let n = sorted.len() as f64;
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut cum: Vec<f64> = Vec::with_capacity(sorted.len());
        for (i, &x) in sorted.iter().enumerate() {
            let frac = (i + 1) as f64 / n;
            if values.last() == Some(&x) {
                *cum.last_mut().unwrap() = frac;
            } else {
                values.push(x);
                cum.push(frac);
            }
        }
        Ok(Self {
            values,
            cum,
            tol: 0.0,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cumulative fractions; the last entry is exactly 1.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.values.partition_point(|&v| v <= x) {
            0 => 0.0,
            i => self.cum[i - 1],
        }
    }

    /// Quantile with `q <= 0` mapped to the smallest support point.
    pub fn quantile(&self, q: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c < q - self.tol);
        self.values[i.min(self.values.len() - 1)]
    }
}

/// Sketched monotone transport map `x -> F_target^-1(F_source(x))`.
#[derive(Debug, Clone)]
pub struct TransportMap1D {
    source: QuantileTable,
    target: QuantileTable,
}

impl TransportMap1D {
    pub fn between_sketches(source: &Sketch, target: &Sketch) -> Result<Self> {
        Ok(Self {
            source: QuantileTable::from_sketch(source)?,
            target: QuantileTable::from_sketch(target)?,
        })
    }

    /// One-sided map onto an exactly known target measure.
    pub fn to_measure(source: &Sketch, target: &WeightedDiscrete1D) -> Result<Self> {
        Ok(Self {
            source: QuantileTable::from_sketch(source)?,
            target: QuantileTable::from_measure(target),
        })
    }

    /// Exact map between two discrete measures; used as a reference.
    pub fn between_measures(source: &WeightedDiscrete1D, target: &WeightedDiscrete1D) -> Self {
        Self {
            source: QuantileTable::from_measure(source),
            target: QuantileTable::from_measure(target),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.target.quantile(self.source.cdf(x))
    }
}

/// Free-function form of [`TransportMap1D::eval`].
pub fn transport_eval(t: &TransportMap1D, x: f64) -> f64 {
    t.eval(x)
}
