use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use stream_ot_core::bench::bench_cell;
use stream_ot_core::changepoint::{DetectorConfig, DetectorMethod, DetectorState};
use stream_ot_core::gradflow::{run_flow, Baseline, FlowConfig};
use stream_ot_core::io::synthetic::SyntheticSpec;
use stream_ot_core::io::{read_points, write_points_csv, PointReader};
use stream_ot_core::kll::space_bound;
use stream_ot_core::rng::derive_seed;
use stream_ot_core::slicedsw::{Side, SideSpec};
use stream_ot_core::{
    stream_w1d, Error, PointCloud, ProjectionSet, Sketch, SketchConfig, StreamSwEstimator,
};

use crate::error::{output_err, CliError, CliResult};
use crate::manifest::ManifestClock;
use crate::{
    BaselineArg, BenchArgs, DetectArgs, DistArgs, FlowArgs, MethodArg, PairwiseArgs, SketchArgs,
    Sweep, Task,
};

const BATCH: usize = 4096;

/// Where a command writes its main result.
enum Sink {
    Stdout(std::io::Stdout),
    File(PathBuf, BufWriter<File>),
}

impl Sink {
    fn open(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Sink::Stdout(std::io::stdout())),
            Some(p) => {
                let f = File::create(p).map_err(|e| output_err(p, e))?;
                Ok(Sink::File(p.to_path_buf(), BufWriter::new(f)))
            }
        }
    }

    fn line(&mut self, s: &str) -> CliResult<()> {
        let r = match self {
            Sink::Stdout(o) => writeln!(o, "{s}"),
            Sink::File(_, w) => writeln!(w, "{s}"),
        };
        r.map_err(|e| CliError::Output(e.to_string()))
    }

    /// Flushes and returns the output path, if any.
    fn finish(self) -> CliResult<Option<PathBuf>> {
        match self {
            Sink::Stdout(mut o) => {
                o.flush().map_err(|e| CliError::Output(e.to_string()))?;
                Ok(None)
            }
            Sink::File(p, mut w) => {
                w.flush().map_err(|e| output_err(&p, e))?;
                Ok(Some(p))
            }
        }
    }
}

/// Streams a point file in batches. The first batch fixes the dimension.
fn for_each_batch(
    path: &Path,
    mut f: impl FnMut(&PointCloud) -> CliResult<()>,
) -> CliResult<usize> {
    let mut reader = PointReader::open(path)?;
    let mut buf: Vec<f64> = Vec::new();
    let mut rows = 0;
    let mut total = 0;
    while let Some(p) = reader.next_point()? {
        buf.extend(p);
        rows += 1;
        if rows == BATCH {
            let dim = reader.dim().expect("known after a point");
            f(&PointCloud::from_flat(dim, std::mem::take(&mut buf))?)?;
            total += rows;
            rows = 0;
        }
    }
    if rows > 0 {
        let dim = reader.dim().expect("known after a point");
        f(&PointCloud::from_flat(dim, buf)?)?;
        total += rows;
    }
    if total == 0 {
        return Err(Error::InputFormat(format!("{}: no points", path.display())).into());
    }
    Ok(total)
}

/// Dimension of the first point in a file.
fn peek_dim(path: &Path) -> CliResult<usize> {
    let mut reader = PointReader::open(path)?;
    if let Some(d) = reader.dim() {
        return Ok(d);
    }
    match reader.next_point()? {
        Some(p) => Ok(p.len()),
        None => Err(Error::InputFormat(format!("{}: no points", path.display())).into()),
    }
}

fn count_points(path: &Path) -> CliResult<u64> {
    let mut reader = PointReader::open(path)?;
    let mut n = 0u64;
    while reader.next_point()?.is_some() {
        n += 1;
    }
    Ok(n)
}

fn ingest_file(est: &mut StreamSwEstimator, path: &Path, side: Side) -> CliResult<()> {
    let dim = est.projections().dim();
    for_each_batch(path, |batch| {
        if batch.dim() != dim {
            return Err(CliError::Input(format!(
                "{}: dimension {} does not match {dim}",
                path.display(),
                batch.dim()
            )));
        }
        est.ingest_cloud(batch, side)?;
        Ok(())
    })?;
    Ok(())
}

pub fn sketch(args: &SketchArgs) -> CliResult<()> {
    let clock = ManifestClock::start();
    let mut sk = Sketch::new(SketchConfig::new(args.k, args.seed)?);
    for_each_batch(&args.input, |batch| {
        if batch.dim() != 1 {
            return Err(CliError::Input(format!(
                "{}: expected one column, found {}",
                args.input.display(),
                batch.dim()
            )));
        }
        batch.as_slice().iter().try_for_each(|&x| sk.insert(x))?;
        Ok(())
    })?;
    let mut sink = Sink::open(args.out.as_deref())?;
    if let Some(q) = args.query_q {
        sink.line(&sk.quantile(q)?.to_string())?;
    } else if let Some(y) = args.query_cdf {
        sink.line(&sk.cdf(y)?.to_string())?;
    } else {
        sink.line("value,weight")?;
        let mut items = sk.weighted_items();
        // merge equal values into one support point
        items.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        for (x, w) in items {
            sink.line(&format!("{x},{w}"))?;
        }
    }
    let mut outputs: Vec<PathBuf> = sink.finish()?.into_iter().collect();
    if let Some(path) = &args.save {
        std::fs::write(path, sk.to_bytes()).map_err(|e| output_err(path, e))?;
        outputs.push(path.clone());
    }
    clock.write("sketch", args, vec![args.seed], &outputs)
}

pub fn dist(args: &DistArgs) -> CliResult<()> {
    let clock = ManifestClock::start();
    let start = Instant::now();
    let dim = peek_dim(&args.a)?;
    let dim_b = peek_dim(&args.b)?;
    if dim != dim_b {
        return Err(CliError::Input(format!(
            "dimension mismatch: a has {dim}, b has {dim_b}"
        )));
    }
    let proj = ProjectionSet::sample(dim, args.projections, derive_seed(args.seed, 0))?;
    let side_a = if args.one_sided {
        SideSpec::Exact
    } else {
        SideSpec::Sketch { k: args.k1 }
    };
    let mut est = StreamSwEstimator::new(
        proj,
        side_a,
        SideSpec::Sketch { k: args.k2 },
        args.p,
        derive_seed(args.seed, 1),
    )?;
    ingest_file(&mut est, &args.a, Side::A)?;
    ingest_file(&mut est, &args.b, Side::B)?;
    let swpp = est.estimate()?;
    let seconds = if args.no_timing {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    let mut sink = Sink::open(args.out.as_deref())?;
    sink.line("swpp,swp,seconds,retained_a,retained_b")?;
    sink.line(&format!(
        "{swpp},{},{seconds},{},{}",
        swpp.powf(1.0 / args.p),
        est.side(Side::A).retained_per_projection(),
        est.side(Side::B).retained_per_projection()
    ))?;
    let outputs: Vec<PathBuf> = sink.finish()?.into_iter().collect();
    clock.write("dist", args, vec![args.seed], &outputs)
}

/// Rough peak bytes of one bench cell: both samples, both sides' sketches,
/// and per-thread projected copies for the exact reference.
pub fn bench_cell_bytes(n: usize, dim: usize, k: u32, projections: usize, threads: usize) -> u64 {
    let samples = 2 * n * dim * 8;
    let sketches = 2 * projections * (space_bound(k, n as u64).ceil() as usize + 16) * 8;
    let reference = threads * 4 * n * 16;
    (samples + sketches + reference + projections * dim * 8) as u64
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    let clock = ManifestClock::start();
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be >= 1".into()));
    }
    let cells: Vec<(u32, usize)> = match args.sweep {
        Sweep::K => args
            .ks
            .clone()
            .unwrap_or_else(|| vec![2, 5, 10, 20, 50, 100, 200, 500, 1000])
            .into_iter()
            .map(|k| (k, args.n))
            .collect(),
        Sweep::N => args
            .ns
            .clone()
            .unwrap_or_else(|| vec![500, 2000, 5000, 10_000, 20_000, 50_000])
            .into_iter()
            .map(|n| (args.k, n))
            .collect(),
    };
    let ceiling = args.max_memory_mb.saturating_mul(1 << 20);
    for &(k, n) in &cells {
        let need = bench_cell_bytes(n, 2, k, args.projections, rayon::current_num_threads());
        if need > ceiling {
            return Err(CliError::Resource(format!(
                "sweep point k={k}, n={n} needs about {} MiB (limit {} MiB)",
                need >> 20,
                args.max_memory_mb
            )));
        }
    }
    std::fs::create_dir_all(&args.out).map_err(|e| output_err(&args.out, e))?;
    let task = match args.task {
        Task::Gaussian => "gaussian",
        Task::Mixture => "mixture",
    };
    let sweep = match args.sweep {
        Sweep::K => "k",
        Sweep::N => "n",
    };
    let path = args.out.join(format!("bench_{task}_{sweep}.csv"));
    let mut sink = Sink::open(Some(&path))?;
    sink.line("sweep_value,seed,method,rel_error,retained")?;
    let seeds: Vec<u64> = (0..args.seeds).map(|s| derive_seed(args.seed, s)).collect();
    for &(k, n) in &cells {
        let value = match args.sweep {
            Sweep::K => k as usize,
            Sweep::N => n,
        };
        for (s, &seed) in seeds.iter().enumerate() {
            let spec = match args.task {
                Task::Gaussian => SyntheticSpec::gaussian_pair(n, n, seed),
                Task::Mixture => SyntheticSpec::mixture_pair(n, n, seed),
            };
            let cell = bench_cell(&spec, k, args.projections, args.p)?;
            sink.line(&format!(
                "{value},{s},stream_sw,{},{}",
                cell.stream_rel_error(),
                cell.stream_retained
            ))?;
            sink.line(&format!(
                "{value},{s},random_sampling,{},{}",
                cell.reservoir_rel_error(),
                cell.reservoir_retained
            ))?;
        }
    }
    let outputs: Vec<PathBuf> = sink.finish()?.into_iter().collect();
    println!("wrote {}", path.display());
    clock.write("bench", args, seeds, &outputs)
}

pub fn flow(args: &FlowArgs) -> CliResult<()> {
    let clock = ManifestClock::start();
    let source = read_points(&args.source)?;
    let target_dim = peek_dim(&args.target)?;
    if target_dim != source.dim() {
        return Err(CliError::Input(format!(
            "dimension mismatch: source has {}, target has {target_dim}",
            source.dim()
        )));
    }
    let mut cfg = FlowConfig::new(args.projections, args.k, args.seed);
    cfg.steps = args.steps;
    cfg.step_size = args.step_size;
    cfg.p = args.p;
    cfg.eval_every = args.eval_every;
    cfg.resample = args.resample;
    cfg.record_time = !args.no_timing;
    cfg.baseline = match args.baseline {
        BaselineArg::StreamSw => Baseline::StreamSw,
        BaselineArg::FullSw => Baseline::FullSw,
        BaselineArg::RandomSampling => Baseline::RandomSampling,
    };
    if cfg.baseline == Baseline::RandomSampling {
        cfg.target_len = Some(count_points(&args.target)?);
    }
    let reference = if args.score {
        Some(read_points(&args.target)?)
    } else {
        None
    };
    if let Some(dir) = &args.snapshots {
        std::fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
    }
    let mut outputs = vec![args.out.clone()];
    let mut snapshot_paths = Vec::new();
    let target = PointReader::open(&args.target)?;
    let outcome = run_flow(&source, target, &cfg, reference.as_ref(), |step, pts| {
        if let Some(dir) = &args.snapshots {
            let path = dir.join(format!("points_{step:06}.csv"));
            let f =
                File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            write_points_csv(BufWriter::new(f), pts)?;
            snapshot_paths.push(path);
        }
        Ok(())
    })?;
    let f = File::create(&args.out).map_err(|e| output_err(&args.out, e))?;
    outcome.trace.write_csv(BufWriter::new(f))?;
    if let Some(path) = &args.final_points {
        let f = File::create(path).map_err(|e| output_err(path, e))?;
        write_points_csv(BufWriter::new(f), &outcome.points)?;
        outputs.push(path.clone());
    }
    outputs.extend(snapshot_paths);
    let last = outcome
        .trace
        .records
        .last()
        .expect("final step is recorded");
    println!(
        "steps={} final_loss={} retained={} target_points={}",
        last.step, last.loss, outcome.retained, outcome.target_seen
    );
    clock.write("flow", args, vec![args.seed], &outputs)
}

pub fn detect(args: &DetectArgs) -> CliResult<()> {
    let clock = ManifestClock::start();
    let mut cfg = DetectorConfig::new(args.projections, args.k, args.seed);
    cfg.window = args.window;
    cfg.alpha = args.alpha;
    cfg.bootstrap_reps = args.reps;
    cfg.calibration_end = args.calibration_end;
    cfg.subset = args.subset;
    cfg.stride = args.stride;
    cfg.p = args.p;
    cfg.method = match args.method {
        MethodArg::StreamSw => DetectorMethod::StreamSw,
        MethodArg::SlidingWindow => DetectorMethod::SlidingWindow,
    };
    cfg.validate()?;

    let mut reader = PointReader::open(&args.input)?;
    let mut prefix_data = Vec::new();
    let mut prefix_len = 0;
    while prefix_len < cfg.calibration_end {
        match reader.next_point()? {
            Some(p) => {
                prefix_data.extend(p);
                prefix_len += 1;
            }
            None => break,
        }
    }
    if prefix_len < cfg.calibration_end {
        return Err(Error::InsufficientCalibrationData {
            needed: cfg.calibration_end,
            available: prefix_len,
        }
        .into());
    }
    let dim = reader.dim().expect("known after a point");
    let prefix = PointCloud::from_flat(dim, prefix_data)?;
    let mut state = DetectorState::new(cfg.clone(), dim)?;
    let threshold = state.calibrate(&prefix)?;

    let mut sink = match &args.out {
        Some(p) => Some(Sink::open(Some(p))?),
        None => None,
    };
    if let Some(s) = sink.as_mut() {
        s.line("t,statistic,threshold,triggered")?;
    }
    let mut t = cfg.calibration_end as u64;
    while let Some(point) = reader.next_point()? {
        let out = state.step(&point, t)?;
        if let (Some(stat), Some(s)) = (out.statistic, sink.as_mut()) {
            let triggered = u8::from(state.trigger_index().is_some());
            s.line(&format!("{t},{stat},{threshold},{triggered}"))?;
        }
        t += 1;
    }
    let outputs: Vec<PathBuf> = match sink {
        Some(s) => s.finish()?.into_iter().collect(),
        None => Vec::new(),
    };
    println!("threshold={threshold}");
    match state.trigger_index() {
        Some(t0) => println!("trigger={t0}"),
        None => println!("trigger=none"),
    }
    clock.write("detect", args, vec![args.seed], &outputs)
}

pub fn pairwise(args: &PairwiseArgs) -> CliResult<()> {
    let clock = ManifestClock::start();
    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv" || e == "sotp"))
        .collect();
    files.sort();
    let Some(first) = files.first() else {
        return Err(CliError::Input(format!(
            "{}: no .csv or .sotp files",
            args.dir.display()
        )));
    };
    let dim = peek_dim(first)?;
    let proj = ProjectionSet::sample(dim, args.projections, derive_seed(args.seed, 0))?;
    let mut summaries: Vec<Vec<Sketch>> = Vec::with_capacity(files.len());
    for path in &files {
        let mut est = StreamSwEstimator::new(
            proj.clone(),
            SideSpec::Sketch { k: args.k },
            SideSpec::Exact,
            args.p,
            derive_seed(args.seed, 1),
        )?;
        ingest_file(&mut est, path, Side::A)?;
        summaries.push(
            est.side(Side::A)
                .sketches()
                .expect("side A is sketched")
                .to_vec(),
        );
    }
    let m = files.len();
    let mut dist = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let mut total = 0.0;
            for (a, b) in summaries[i].iter().zip(&summaries[j]) {
                total += stream_w1d(a, b, args.p)?;
            }
            let d = (total / proj.len() as f64).powf(1.0 / args.p);
            dist[i * m + j] = d;
            dist[j * m + i] = d;
        }
    }
    let names: Vec<String> = files
        .iter()
        .map(|p| {
            p.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    let mut sink = Sink::open(args.out.as_deref())?;
    sink.line(&format!("name,{}", names.join(",")))?;
    for i in 0..m {
        let row: Vec<String> = (0..m).map(|j| dist[i * m + j].to_string()).collect();
        sink.line(&format!("{},{}", names[i], row.join(",")))?;
    }
    let outputs: Vec<PathBuf> = sink.finish()?.into_iter().collect();
    clock.write("pairwise", args, vec![args.seed], &outputs)
}
