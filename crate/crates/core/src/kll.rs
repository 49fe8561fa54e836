//! KLL quantile sketch.
//!
//! A hierarchy of compactors `C_1..C_H`. Items at height `h` carry weight
//! `2^(h-1)`; the compactor at height `h` holds fewer than
//! `ceil(k * (2/3)^(H-h)) + 1` items once an operation returns. When a
//! compactor reaches its capacity its items are sorted and a fair coin
//! selects either the even- or odd-indexed half, which moves up one level
//! with doubled weight. Odd-sized compactors keep their largest item back so
//! that the total weight stays equal to the number of inserted items.

use crate::dist1d::WeightedDiscrete1D;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Binary format version written by [`Sketch::to_bytes`].
pub const FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"KLLS";

/// Deepest level distance for which the capacity is computed exactly; past
/// it `k * (2/3)^depth < 1` for every `u32` k.
const MAX_EXACT_DEPTH: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SketchConfig {
    k: u32,
    seed: u64,
}

impl SketchConfig {
    pub fn new(k: u32, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("k must be >= 2, got {k}")));
        }
        Ok(Self { k, seed })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Capacity of a compactor sitting `depth = H - h` levels below the top:
/// `ceil(k * (2/3)^depth) + 1`, computed in exact integer arithmetic.
pub fn compactor_capacity(k: u32, depth: usize) -> usize {
    if depth > MAX_EXACT_DEPTH {
        return 2;
    }
    let num = (k as u128) << depth;
    let den = 3u128.pow(depth as u32);
    num.div_ceil(den) as usize + 1
}

/// Upper bound on the number of stored items after `n > k` inserts:
/// `3k + 2 (log2(3n / 2k) + 2)`.
pub fn space_bound(k: u32, n: u64) -> f64 {
    let k = k as f64;
    3.0 * k + 2.0 * ((3.0 * n as f64 / (2.0 * k)).log2() + 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    config: SketchConfig,
    /// `levels[i]` is the compactor at height `i + 1`, weight `2^i`.
    levels: Vec<Vec<f64>>,
    capacities: Vec<usize>,
    n: u64,
    min: f64,
    max: f64,
}

impl Sketch {
    pub fn new(config: SketchConfig) -> Self {
        let mut s = Self {
            config,
            levels: vec![Vec::new()],
            capacities: Vec::new(),
            n: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        s.recompute_capacities();
        s
    }

    /// Builds a sketch over `values` in iteration order.
    pub fn from_values<I>(config: SketchConfig, values: I) -> Result<Self>
    where
        I: IntoIterator<Item = f64>,
    {
        let mut s = Self::new(config);
        for x in values {
            s.insert(x)?;
        }
        Ok(s)
    }

    pub fn config(&self) -> SketchConfig {
        self.config
    }

    /// Number of items ingested (directly or through merges).
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of compactor levels `H`.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Number of stored items across all levels.
    pub fn size(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Sum of item weights; equals [`Sketch::n`] at all times.
    pub fn total_weight(&self) -> u64 {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, lvl)| (lvl.len() as u64) << i)
            .sum()
    }

    /// Stored items of the compactor at height `h` (1-based).
    pub fn level(&self, h: usize) -> Option<&[f64]> {
        h.checked_sub(1)
            .and_then(|i| self.levels.get(i))
            .map(Vec::as_slice)
    }

    /// Current capacity of the compactor at height `h` (1-based).
    pub fn capacity(&self, h: usize) -> Option<usize> {
        h.checked_sub(1)
            .and_then(|i| self.capacities.get(i))
            .copied()
    }

    pub fn min(&self) -> Option<f64> {
        (self.n > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<f64> {
        (self.n > 0).then_some(self.max)
    }

    pub fn insert(&mut self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput(x));
        }
        self.n += 1;
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        self.levels[0].push(x);
        if self.levels[0].len() >= self.capacities[0] {
            self.settle();
        }
        Ok(())
    }

    /// Merges `other` into `self`. Levels are concatenated height by height,
    /// then compaction runs bottom-up until every capacity holds again.
    pub fn merge(&mut self, other: &Sketch) -> Result<()> {
        if self.config.k != other.config.k {
            return Err(Error::ConfigMismatch(format!(
                "cannot merge sketches with k = {} and k = {}",
                self.config.k, other.config.k
            )));
        }
        if other.n == 0 {
            return Ok(());
        }
        if other.levels.len() > self.levels.len() {
            self.levels.resize_with(other.levels.len(), Vec::new);
        }
        for (dst, src) in self.levels.iter_mut().zip(&other.levels) {
            dst.extend_from_slice(src);
        }
        self.n += other.n;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.recompute_capacities();
        self.settle();
        Ok(())
    }

    /// Returns the merge of `a` and `b`; the result keeps `a`'s config.
    pub fn merged(a: &Sketch, b: &Sketch) -> Result<Sketch> {
        let mut out = a.clone();
        out.merge(b)?;
        Ok(out)
    }

    fn recompute_capacities(&mut self) {
        let k = self.config.k;
        let top = self.levels.len();
        self.capacities = (0..top)
            .map(|i| compactor_capacity(k, top - 1 - i))
            .collect();
    }

    /// Compacts the lowest over-capacity level until none remains.
    fn settle(&mut self) {
        let mut event = 0u64;
        while let Some(i) =
            (0..self.levels.len()).find(|&i| self.levels[i].len() >= self.capacities[i])
        {
            self.compact(i, event);
            event += 1;
        }
    }

    /// One coin per compaction event, keyed by `(seed, n, event)` so that a
    /// sketch restored from bytes continues exactly like the original.
    fn coin(&self, event: u64) -> usize {
        (derive_seed(derive_seed(self.config.seed, self.n), event) & 1) as usize
    }

    fn compact(&mut self, i: usize, event: u64) {
        if i + 1 == self.levels.len() {
            self.levels.push(Vec::new());
            self.recompute_capacities();
        }
        let offset = self.coin(event);
        let mut items = std::mem::take(&mut self.levels[i]);
        items.sort_unstable_by(f64::total_cmp);
        let held_back = if items.len() % 2 == 1 {
            items.pop()
        } else {
            None
        };
        self.levels[i + 1].extend(items.iter().skip(offset).step_by(2));
        items.clear();
        items.extend(held_back);
        self.levels[i] = items;
    }

    /// All stored `(value, weight)` pairs sorted by value. Equal values are
    /// not merged.
    pub fn weighted_items(&self) -> Vec<(f64, u64)> {
        let mut out: Vec<(f64, u64)> = Vec::with_capacity(self.size());
        for (i, lvl) in self.levels.iter().enumerate() {
            out.extend(lvl.iter().map(|&x| (x, 1u64 << i)));
        }
        out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Weighted fraction of stored mass at or below `y`.
    pub fn cdf(&self, y: f64) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::EmptySketch);
        }
        let below: u64 = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, lvl)| (lvl.iter().filter(|&&x| x <= y).count() as u64) << i)
            .sum();
        Ok(self.fraction(below))
    }

    #[inline]
    fn fraction(&self, cumulative: u64) -> f64 {
        cumulative as f64 / self.n as f64
    }

    /// `inf { x : cdf(x) >= q }` over the stored items.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::EmptySketch);
        }
        check_level(q)?;
        let items = self.weighted_items();
        Ok(quantile_sorted(&items, self.n, q))
    }

    /// Answers many quantile queries with a single sort.
    pub fn quantiles(&self, qs: &[f64]) -> Result<Vec<f64>> {
        if self.n == 0 {
            return Err(Error::EmptySketch);
        }
        qs.iter().try_for_each(|&q| check_level(q))?;
        let items = self.weighted_items();
        Ok(qs
            .iter()
            .map(|&q| quantile_sorted(&items, self.n, q))
            .collect())
    }

    /// The discrete measure `(1/n) sum_h sum_{x in C_h} 2^(h-1) delta_x`.
    pub fn to_weighted(&self) -> Result<WeightedDiscrete1D> {
        if self.n == 0 {
            return Err(Error::EmptySketch);
        }
        let items = self.weighted_items();
        let mut merged: Vec<(f64, u64)> = Vec::with_capacity(items.len());
        for (x, w) in items {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => merged.push((x, w)),
            }
        }
        let n = self.n as f64;
        let (values, weights) = merged.into_iter().map(|(x, w)| (x, w as f64 / n)).unzip();
        Ok(WeightedDiscrete1D::from_sorted_unchecked(values, weights))
    }

    /// Encodes the sketch in the little-endian `KLLS` format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.size() + 6 * self.levels.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config.k.to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&(self.levels.len() as u16).to_le_bytes());
        for (i, lvl) in self.levels.iter().enumerate() {
            out.extend_from_slice(&((i + 1) as u16).to_le_bytes());
            out.extend_from_slice(&(lvl.len() as u32).to_le_bytes());
            for x in lvl {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a sketch written by [`Sketch::to_bytes`]. Trailing bytes are
    /// rejected. The running extrema are restored from the stored items.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        Self::read_from(&mut r).and_then(|s| {
            if r.remaining() != 0 {
                Err(malformed(format!("{} trailing bytes", r.remaining())))
            } else {
                Ok(s)
            }
        })
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        if r.take(4)? != MAGIC {
            return Err(malformed("bad magic, expected KLLS"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let k = r.u32()?;
        let seed = r.u64()?;
        let config = SketchConfig::new(k, seed).map_err(|e| malformed(e.to_string()))?;
        let n = r.u64()?;
        let height = r.u16()? as usize;
        if height == 0 || height > 64 {
            return Err(malformed(format!("invalid level count {height}")));
        }
        let mut levels = Vec::with_capacity(height);
        for expected in 1..=height {
            let h = r.u16()? as usize;
            if h != expected {
                return Err(malformed(format!(
                    "level {h} out of order, expected {expected}"
                )));
            }
            let count = r.u32()? as usize;
            if count > r.remaining() / 8 {
                return Err(malformed("level item count exceeds payload"));
            }
            let mut items = Vec::with_capacity(count);
            for _ in 0..count {
                let x = r.f64()?;
                if !x.is_finite() {
                    return Err(malformed("non-finite stored item"));
                }
                items.push(x);
            }
            levels.push(items);
        }
        let mut s = Self {
            config,
            levels,
            capacities: Vec::new(),
            n,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        s.recompute_capacities();
        let mut weight: u64 = 0;
        for (i, lvl) in s.levels.iter().enumerate() {
            if lvl.len() >= s.capacities[i] {
                return Err(malformed(format!("level {} exceeds its capacity", i + 1)));
            }
            weight = (lvl.len() as u64)
                .checked_shl(i as u32)
                .and_then(|w| weight.checked_add(w))
                .ok_or_else(|| malformed("weight overflow"))?;
        }
        if weight != n {
            return Err(malformed(format!(
                "stored weight {weight} does not match n = {n}"
            )));
        }
        for x in s.levels.iter().flatten() {
            s.min = s.min.min(*x);
            s.max = s.max.max(*x);
        }
        Ok(s)
    }
}

fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRangeQuantile(q))
    }
}

fn quantile_sorted(items: &[(f64, u64)], n: u64, q: f64) -> f64 {
    let n = n as f64;
    let mut cumulative = 0u64;
    for &(x, w) in items {
        cumulative += w;
        if cumulative as f64 / n >= q {
            return x;
        }
    }
    items.last().map(|p| p.0).unwrap_or(f64::NAN)
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedBytes(msg.into())
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(malformed(format!(
                "truncated input: needed {len} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
