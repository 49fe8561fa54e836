//! Point-stream file formats.
//!
//! - CSV: one point per row, `d` numeric columns, optional header row.
//! - SOTP: little-endian binary; a 16-byte header (`"SOTP"`, `u32` d,
//!   `u64` count) followed by `count * d` `f64` values, row-major.
//! - Weighted CSV: `value,weight` rows, header optional, weights normalized.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::dist1d::WeightedDiscrete1D;
use crate::error::{Error, Result};
use crate::points::PointCloud;

pub const SOTP_MAGIC: &[u8; 4] = b"SOTP";

enum Inner {
    Csv {
        records: csv::StringRecordsIntoIter<Box<dyn Read>>,
        first: bool,
    },
    Sotp {
        reader: Box<dyn Read>,
        remaining: u64,
    },
}

/// Incremental reader over a CSV or SOTP point stream. The format is
/// detected from the leading magic bytes.
pub struct PointReader {
    inner: Inner,
    dim: Option<usize>,
    row: u64,
}

impl PointReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl Read + 'static) -> Result<Self> {
        let mut buf = BufReader::new(reader);
        let head = buf.fill_buf()?;
        if head.len() >= 4 && &head[..4] == SOTP_MAGIC {
            let mut header = [0u8; 16];
            buf.read_exact(&mut header)
                .map_err(|_| Error::InputFormat("truncated SOTP header".into()))?;
            let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
            let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
            if dim == 0 {
                return Err(Error::InputFormat("SOTP dimension is zero".into()));
            }
            Ok(Self {
                inner: Inner::Sotp {
                    reader: Box::new(buf),
                    remaining: count,
                },
                dim: Some(dim),
                row: 0,
            })
        } else {
            let boxed: Box<dyn Read> = Box::new(buf);
            let records = csv::ReaderBuilder::new()
                .has_headers(false)
                .trim(csv::Trim::All)
                .comment(Some(b'#'))
                .from_reader(boxed)
                .into_records();
            Ok(Self {
                inner: Inner::Csv {
                    records,
                    first: true,
                },
                dim: None,
                row: 0,
            })
        }
    }

    /// Point dimension; known up front for SOTP, after the first point for CSV.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn next_point(&mut self) -> Result<Option<Vec<f64>>> {
        let point = match &mut self.inner {
            Inner::Sotp { reader, remaining } => {
                if *remaining == 0 {
                    return Ok(None);
                }
                let d = self.dim.expect("SOTP header sets dim");
                let mut bytes = vec![0u8; 8 * d];
                reader.read_exact(&mut bytes).map_err(|_| {
                    Error::InputFormat(format!("SOTP payload truncated at point {}", self.row))
                })?;
                *remaining -= 1;
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<f64>>()
            }
            Inner::Csv { records, first } => loop {
                let Some(rec) = records.next() else {
                    return Ok(None);
                };
                let rec = rec.map_err(|e| Error::InputFormat(e.to_string()))?;
                let line = rec.position().map_or(0, |p| p.line());
                if rec.iter().all(str::is_empty) {
                    continue;
                }
                let parsed: std::result::Result<Vec<f64>, _> =
                    rec.iter().map(str::parse::<f64>).collect();
                let was_first = std::mem::replace(first, false);
                match parsed {
                    Ok(v) => break v,
                    Err(_) if was_first => continue,
                    Err(e) => {
                        return Err(Error::InputFormat(format!("line {line}: {e}")));
                    }
                }
            },
        };
        if let Some(&x) = point.iter().find(|x| !x.is_finite()) {
            return Err(Error::InputFormat(format!(
                "non-finite value {x} in point {}",
                self.row
            )));
        }
        match self.dim {
            Some(d) if d != point.len() => {
                return Err(Error::InputFormat(format!(
                    "point {} has {} columns, expected {d}",
                    self.row,
                    point.len()
                )));
            }
            None => self.dim = Some(point.len()),
            _ => {}
        }
        self.row += 1;
        Ok(Some(point))
    }
}

impl Iterator for PointReader {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_point().transpose()
    }
}

/// Reads a whole CSV or SOTP file into memory.
pub fn read_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    collect_points(PointReader::open(path)?)
}

pub fn read_points_from(reader: impl Read + 'static) -> Result<PointCloud> {
    collect_points(PointReader::from_reader(reader)?)
}

fn collect_points(mut reader: PointReader) -> Result<PointCloud> {
    let mut data = Vec::new();
    while let Some(p) = reader.next_point()? {
        data.extend(p);
    }
    let dim = reader
        .dim()
        .ok_or_else(|| Error::InputFormat("input contains no points".into()))?;
    PointCloud::from_flat(dim, data)
}

pub fn write_points_csv(mut w: impl Write, cloud: &PointCloud) -> Result<()> {
    let mut line = String::new();
    for row in cloud.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points_sotp(mut w: impl Write, cloud: &PointCloud) -> Result<()> {
    w.write_all(SOTP_MAGIC)?;
    w.write_all(&(cloud.dim() as u32).to_le_bytes())?;
    w.write_all(&(cloud.len() as u64).to_le_bytes())?;
    for v in cloud.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `value,weight` CSV into a normalized measure.
pub fn read_weighted_csv(reader: impl Read + 'static) -> Result<WeightedDiscrete1D> {
    let cloud = read_points_from(reader)?;
    if cloud.dim() != 2 {
        return Err(Error::InputFormat(format!(
            "weighted CSV needs 2 columns (value,weight), found {}",
            cloud.dim()
        )));
    }
    let pairs = cloud.rows().map(|r| (r[0], r[1])).collect();
    WeightedDiscrete1D::from_unnormalized(pairs).map_err(|e| Error::InputFormat(e.to_string()))
}
