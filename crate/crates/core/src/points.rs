use crate::error::{Error, Result};

/// Row-major `n x d` array of finite points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("point dimension must be >= 1".into()));
        }
        Ok(Self {
            dim,
            data: Vec::new(),
        })
    }

    pub fn with_capacity(dim: usize, points: usize) -> Result<Self> {
        let mut c = Self::new(dim)?;
        c.data.reserve(dim * points);
        Ok(c)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidConfig(format!(
                "{} values cannot be split into rows of {dim}",
                data.len()
            )));
        }
        if let Some(&x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput(x));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(
        dim: usize,
        rows: impl IntoIterator<Item = R>,
    ) -> Result<Self> {
        let mut c = Self::new(dim)?;
        for r in rows {
            c.push(r.as_ref())?;
        }
        Ok(c)
    }

    pub fn push(&mut self, point: &[f64]) -> Result<()> {
        check_point(self.dim, point)?;
        self.data.extend_from_slice(point);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Rows `start..end` as a new cloud.
    pub fn slice(&self, start: usize, end: usize) -> PointCloud {
        PointCloud {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        PointCloud {
            dim: self.dim,
            data,
        }
    }
}

pub(crate) fn check_point(dim: usize, point: &[f64]) -> Result<()> {
    if point.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: point.len(),
        });
    }
    if let Some(&x) = point.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(x));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
