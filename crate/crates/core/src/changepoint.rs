//! Streaming change-point detection with a bootstrap-calibrated threshold.
//!
//! Two detectors share the calibration machinery:
//! - Stream-SW: a frozen sketch summary of the calibration prefix is compared
//!   against sketches of everything seen since, every `stride` points.
//! - Sliding window: exact SW between the two most recent consecutive
//!   windows of `W` points.
//!
//! Both statistics are `SW_p^p` averaged over the same random projections.

use std::collections::VecDeque;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::dist1d::{stream_w1d, wasserstein1d_pp, WeightedDiscrete1D};
use crate::error::{Error, Result};
use crate::kll::{Sketch, SketchConfig};
use crate::points::{check_point, PointCloud};
use crate::rng::{derive_seed, rng_from_seed};
use crate::slicedsw::{ProjectionSet, Side, StreamSwEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorMethod {
    StreamSw,
    SlidingWindow,
}

impl std::str::FromStr for DetectorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stream_sw" | "stream-sw" => Ok(DetectorMethod::StreamSw),
            "sliding_window" | "sliding-window" => Ok(DetectorMethod::SlidingWindow),
            other => Err(Error::InvalidConfig(format!("unknown detector {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Sliding-window length `W`.
    pub window: usize,
    pub alpha: f64,
    pub bootstrap_reps: usize,
    /// Points `0..calibration_end` form the calibration prefix.
    pub calibration_end: usize,
    /// Size of each random subset drawn during Stream-SW calibration.
    pub subset: usize,
    /// Statistic is evaluated every `stride` points.
    pub stride: usize,
    pub projections: usize,
    pub k: u32,
    pub p: f64,
    pub seed: u64,
    pub method: DetectorMethod,
}

impl DetectorConfig {
    pub fn new(projections: usize, k: u32, seed: u64) -> Self {
        Self {
            window: 100,
            alpha: 0.05,
            bootstrap_reps: 1000,
            calibration_end: 300,
            subset: 100,
            stride: 10,
            projections,
            k,
            p: 2.0,
            seed,
            method: DetectorMethod::StreamSw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if self.window == 0 || self.subset == 0 || self.stride == 0 || self.bootstrap_reps == 0 {
            return Err(Error::InvalidConfig(
                "window, subset, stride and bootstrap_reps must be >= 1".into(),
            ));
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
        let needed = match self.method {
            DetectorMethod::StreamSw => 2 * self.subset,
            DetectorMethod::SlidingWindow => 2 * self.window,
        };
        if self.calibration_end < needed {
            return Err(Error::InvalidConfig(format!(
                "calibration_end {} must be >= {needed}",
                self.calibration_end
            )));
        }
        Ok(())
    }

    fn projection_seed(&self) -> u64 {
        derive_seed(self.seed, 0)
    }

    fn sketch_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    fn bootstrap_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }
}

/// Inf-rule empirical quantile: the smallest `s_(i)` (ascending) with
/// `i / R >= 1 - alpha`. For `R = 1000`, `alpha = 0.05` this is `s_(950)`.
pub fn null_quantile(stats: &[f64], alpha: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::EmptyInput("null statistics"));
    }
    let mut sorted = stats.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let r = sorted.len();
    let level = 1.0 - alpha;
    let i = (1..=r).find(|&i| i as f64 / r as f64 >= level).unwrap_or(r);
    Ok(sorted[i - 1])
}

/// Bootstrap null statistics from the first `calibration_end` rows of
/// `prefix`. Each replicate is independent and seeded by its index, so the
/// result does not depend on the thread count.
pub fn null_statistics(prefix: &PointCloud, cfg: &DetectorConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if prefix.len() < cfg.calibration_end {
        return Err(Error::InsufficientCalibrationData {
            needed: cfg.calibration_end,
            available: prefix.len(),
        });
    }
    let projections = ProjectionSet::sample(prefix.dim(), cfg.projections, cfg.projection_seed())?;
    let calib = prefix.slice(0, cfg.calibration_end);
    // projected[l][i]
    let projected: Vec<Vec<f64>> = (0..projections.len())
        .map(|l| projections.project_cloud(l, &calib))
        .collect();
    let sketch_seed = cfg.sketch_seed();
    (0..cfg.bootstrap_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng_from_seed(derive_seed(cfg.bootstrap_seed(), rep as u64));
            match cfg.method {
                DetectorMethod::StreamSw => {
                    let idx =
                        sample_indices(&mut rng, cfg.calibration_end, 2 * cfg.subset).into_vec();
                    let (a, b) = idx.split_at(cfg.subset);
                    let mut total = 0.0;
                    for (l, vals) in projected.iter().enumerate() {
                        let conf = SketchConfig::new(cfg.k, derive_seed(sketch_seed, l as u64))?;
                        let sa = Sketch::from_values(conf, a.iter().map(|&i| vals[i]))?;
                        let sb = Sketch::from_values(conf, b.iter().map(|&i| vals[i]))?;
                        total += stream_w1d(&sa, &sb, cfg.p)?;
                    }
                    Ok(total / projected.len() as f64)
                }
                DetectorMethod::SlidingWindow => {
                    let w = cfg.window;
                    let start = rng.random_range(0..=cfg.calibration_end - 2 * w);
                    window_statistic(&projected, start, w, cfg.p)
                }
            }
        })
        .collect()
}

/// Exact sliced statistic between `start..start+w` and `start+w..start+2w`.
fn window_statistic(projected: &[Vec<f64>], start: usize, w: usize, p: f64) -> Result<f64> {
    let mut total = 0.0;
    for vals in projected {
        let a = WeightedDiscrete1D::empirical(&vals[start..start + w])?;
        let b = WeightedDiscrete1D::empirical(&vals[start + w..start + 2 * w])?;
        total += wasserstein1d_pp(&a, &b, p)?;
    }
    Ok(total / projected.len() as f64)
}

/// Threshold from the bootstrap null distribution.
pub fn calibrate(prefix: &PointCloud, cfg: &DetectorConfig) -> Result<f64> {
    null_quantile(&null_statistics(prefix, cfg)?, cfg.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    /// Latched: carries the first time index at which the statistic crossed.
    Trigger(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Set when the statistic was evaluated at this step.
    pub statistic: Option<f64>,
    pub decision: Decision,
}

#[derive(Debug, Clone)]
enum Summary {
    /// Side A holds the calibration prefix, side B everything after it.
    Stream(StreamSwEstimator),
    /// Projections of the last `2W` points, oldest first.
    Window {
        projections: ProjectionSet,
        recent: VecDeque<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct DetectorState {
    cfg: DetectorConfig,
    dim: usize,
    threshold: Option<f64>,
    summary: Option<Summary>,
    since_calibration: u64,
    trigger_index: Option<u64>,
}

impl DetectorState {
    pub fn new(cfg: DetectorConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Err(Error::InvalidConfig("point dimension must be >= 1".into()));
        }
        Ok(Self {
            cfg,
            dim,
            threshold: None,
            summary: None,
            since_calibration: 0,
            trigger_index: None,
        })
    }

    /// Calibrates from the prefix and builds the pre-change summary.
    pub fn calibrate(&mut self, prefix: &PointCloud) -> Result<f64> {
        if prefix.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: prefix.dim(),
            });
        }
        let threshold = calibrate(prefix, &self.cfg)?;
        self.install(prefix, threshold)?;
        Ok(threshold)
    }

    /// Uses a known threshold instead of bootstrapping one.
    pub fn calibrate_with_threshold(&mut self, prefix: &PointCloud, threshold: f64) -> Result<()> {
        if !threshold.is_finite() {
            return Err(Error::NonFiniteInput(threshold));
        }
        if prefix.len() < self.cfg.calibration_end {
            return Err(Error::InsufficientCalibrationData {
                needed: self.cfg.calibration_end,
                available: prefix.len(),
            });
        }
        self.install(prefix, threshold)
    }

    fn install(&mut self, prefix: &PointCloud, threshold: f64) -> Result<()> {
        let cfg = &self.cfg;
        let projections = ProjectionSet::sample(self.dim, cfg.projections, cfg.projection_seed())?;
        let calib = prefix.slice(0, cfg.calibration_end);
        let summary = match cfg.method {
            DetectorMethod::StreamSw => {
                let mut est = StreamSwEstimator::two_sided(
                    projections,
                    cfg.k,
                    cfg.k,
                    cfg.p,
                    cfg.sketch_seed(),
                )?;
                est.ingest_cloud(&calib, Side::A)?;
                Summary::Stream(est)
            }
            DetectorMethod::SlidingWindow => {
                let w2 = 2 * cfg.window;
                let recent = calib
                    .rows()
                    .skip(calib.len() - w2)
                    .map(|r| {
                        (0..projections.len())
                            .map(|l| projections.project(l, r))
                            .collect()
                    })
                    .collect();
                Summary::Window {
                    projections,
                    recent,
                }
            }
        };
        self.threshold = Some(threshold);
        self.summary = Some(summary);
        self.since_calibration = 0;
        self.trigger_index = None;
        Ok(())
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn trigger_index(&self) -> Option<u64> {
        self.trigger_index
    }

    /// Feeds the point observed at time `t`.
    pub fn step(&mut self, point: &[f64], t: u64) -> Result<StepOutcome> {
        let (Some(threshold), Some(summary)) = (self.threshold, self.summary.as_mut()) else {
            return Err(Error::NotCalibrated);
        };
        check_point(self.dim, point)?;
        self.since_calibration += 1;
        let due = self
            .since_calibration
            .is_multiple_of(self.cfg.stride as u64);
        let statistic = match summary {
            Summary::Stream(est) => {
                est.ingest(point, Side::B)?;
                if due && est.n(Side::B) >= self.cfg.subset as u64 {
                    Some(est.estimate()?)
                } else {
                    None
                }
            }
            Summary::Window {
                projections,
                recent,
            } => {
                recent.pop_front();
                recent.push_back(
                    (0..projections.len())
                        .map(|l| projections.project(l, point))
                        .collect(),
                );
                if due {
                    let l_count = projections.len();
                    let per_l: Vec<Vec<f64>> = (0..l_count)
                        .map(|l| recent.iter().map(|row| row[l]).collect())
                        .collect();
                    Some(window_statistic(&per_l, 0, self.cfg.window, self.cfg.p)?)
                } else {
                    None
                }
            }
        };
        if let Some(s) = statistic {
            if s > threshold && self.trigger_index.is_none() {
                self.trigger_index = Some(t);
            }
        }
        Ok(StepOutcome {
            statistic,
            decision: match self.trigger_index {
                Some(t0) => Decision::Trigger(t0),
                None => Decision::Continue,
            },
        })
    }
}

/// Calibrates on the first `calibration_end` points of `stream` and runs the
/// detector over the rest. Returns the threshold and the trigger index.
pub fn detect(stream: &PointCloud, cfg: &DetectorConfig) -> Result<(f64, Option<u64>)> {
    let mut state = DetectorState::new(cfg.clone(), stream.dim())?;
    let threshold = state.calibrate(stream)?;
    for t in cfg.calibration_end..stream.len() {
        if let Decision::Trigger(_) = state.step(stream.row(t), t as u64)?.decision {
            break;
        }
    }
    Ok((threshold, state.trigger_index()))
}
