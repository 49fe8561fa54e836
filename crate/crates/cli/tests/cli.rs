use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stream-ot"));
    c.env("STREAM_OT_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic scattered points without pulling in an RNG.
fn cloud(n: usize, dim: usize, phase: f64) -> String {
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..dim)
            .map(|j| {
                format!(
                    "{}",
                    ((i * (j + 3)) as f64 * 0.7311 + phase).sin() * 2.0 + j as f64
                )
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn sketch_queries_small_stream() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "x.csv", "1\n2\n3\n4\n");
    let o = run(&["sketch", "--input", s(&input), "--query-q", "0.5"]);
    assert_ok(&o);
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 2.0);

    let o = run(&["sketch", "--input", s(&input), "--query-cdf", "4"]);
    assert_ok(&o);
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 1.0);

    let o = run(&["sketch", "--input", s(&input), "--dump"]);
    assert_ok(&o);
    assert_eq!(stdout(&o), "value,weight\n1,1\n2,1\n3,1\n4,1\n");
}

#[test]
fn sketch_save_and_manifest() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "x.csv", &cloud(500, 1, 0.0));
    let out = dir.path().join("dump.csv");
    let save = dir.path().join("x.klls");
    let o = run(&[
        "sketch",
        "--input",
        s(&input),
        "--k",
        "20",
        "--dump",
        "--out",
        s(&out),
        "--save",
        s(&save),
    ]);
    assert_ok(&o);
    let bytes = fs::read(&save).unwrap();
    assert_eq!(&bytes[..4], b"KLLS");
    let manifest = fs::read_to_string(dir.path().join("dump.csv.manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(v["command"], "sketch");
    assert_eq!(v["flags"]["k"], 20);
    // weights sum to the stream length
    let total: u64 = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 500);
}

#[test]
fn usage_and_input_errors_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["sketch", "--query-q", "0.5"]).status.code(), Some(2));
    let two_col = write(&dir, "two.csv", "1,2\n3,4\n");
    assert_eq!(
        run(&["sketch", "--input", s(&two_col), "--dump"])
            .status
            .code(),
        Some(3)
    );
    let missing = dir.path().join("nope.csv");
    assert_eq!(
        run(&["sketch", "--input", s(&missing), "--dump"])
            .status
            .code(),
        Some(3)
    );
    let one = write(&dir, "one.csv", "1\n");
    assert_eq!(
        run(&["sketch", "--input", s(&one), "--query-q", "1.5"])
            .status
            .code(),
        Some(2)
    );
    let bad = bin()
        .env("STREAM_OT_THREADS", "zero")
        .args(["sketch", "--input", s(&one), "--dump"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn dist_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.csv", &cloud(300, 3, 0.0));
    let o = run(&[
        "dist",
        "--a",
        s(&a),
        "--b",
        s(&a),
        "--L",
        "20",
        "--k1",
        "50",
        "--k2",
        "50",
        "--no-timing",
    ]);
    assert_ok(&o);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("swpp,swp,seconds,retained_a,retained_b"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[2], "0");
}

#[test]
fn dist_detects_shift_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.csv", &cloud(400, 2, 0.0));
    let shifted: String = cloud(400, 2, 0.0)
        .lines()
        .map(|l| {
            let v: Vec<String> = l
                .split(',')
                .map(|x| (x.parse::<f64>().unwrap() + 1.0).to_string())
                .collect();
            v.join(",") + "\n"
        })
        .collect();
    let b = write(&dir, "b.csv", &shifted);
    let args = [
        "dist",
        "--a",
        s(&a),
        "--b",
        s(&b),
        "--L",
        "50",
        "--no-timing",
        "--seed",
        "7",
    ];
    let o1 = run(&args);
    let o2 = run(&args);
    assert_ok(&o1);
    assert_eq!(o1.stdout, o2.stdout);
    let row = stdout(&o1).lines().nth(1).unwrap().to_string();
    let swpp: f64 = row.split(',').next().unwrap().parse().unwrap();
    // a unit shift along (1,1) projects to theta_1 + theta_2; E[(t1+t2)^2] = 1 on the circle
    assert!((swpp - 1.0).abs() < 0.35, "swpp {swpp}");

    let o = run(&[
        "dist",
        "--a",
        s(&a),
        "--b",
        s(&b),
        "--one-sided",
        "--L",
        "10",
        "--no-timing",
    ]);
    assert_ok(&o);
}

#[test]
fn dist_dimension_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.csv", &cloud(10, 2, 0.0));
    let b = write(&dir, "b.csv", &cloud(10, 3, 0.0));
    assert_eq!(
        run(&["dist", "--a", s(&a), "--b", s(&b)]).status.code(),
        Some(3)
    );
}

#[test]
fn flow_identical_clouds_stays_at_zero_loss() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.csv", &cloud(50, 2, 0.0));
    let trace = dir.path().join("trace.csv");
    let fin = dir.path().join("final.csv");
    let snaps = dir.path().join("snaps");
    let o = run(&[
        "flow",
        "--source",
        s(&a),
        "--target",
        s(&a),
        "--L",
        "10",
        "--k",
        "100",
        "--steps",
        "20",
        "--eval-every",
        "10",
        "--score",
        "--out",
        s(&trace),
        "--final",
        s(&fin),
        "--snapshots",
        s(&snaps),
        "--no-timing",
    ]);
    assert_ok(&o);
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,loss,w2,seconds"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert!(cols[1].parse::<f64>().unwrap().abs() < 1e-20, "{line}");
        assert!(cols[2].parse::<f64>().unwrap().abs() < 1e-20, "{line}");
    }
    assert!(snaps.join("points_000010.csv").exists());
    assert!(snaps.join("points_000020.csv").exists());
    assert_eq!(fs::read_to_string(&fin).unwrap().lines().count(), 50);
    assert!(dir.path().join("trace.csv.manifest.json").exists());
}

#[test]
fn flow_baselines_run_and_reduce_loss() {
    let dir = TempDir::new().unwrap();
    let src = write(&dir, "src.csv", &cloud(40, 2, 0.0));
    let tgt_body: String = cloud(200, 2, 1.0)
        .lines()
        .map(|l| {
            let v: Vec<String> = l
                .split(',')
                .map(|x| (x.parse::<f64>().unwrap() + 3.0).to_string())
                .collect();
            v.join(",") + "\n"
        })
        .collect();
    let tgt = write(&dir, "tgt.csv", &tgt_body);
    for baseline in ["stream-sw", "full-sw", "random-sampling"] {
        let trace = dir.path().join(format!("{baseline}.csv"));
        let o = run(&[
            "flow",
            "--source",
            s(&src),
            "--target",
            s(&tgt),
            "--L",
            "20",
            "--k",
            "50",
            "--steps",
            "200",
            "--step-size",
            "0.05",
            "--eval-every",
            "200",
            "--baseline",
            baseline,
            "--out",
            s(&trace),
        ]);
        assert_ok(&o);
        let text = fs::read_to_string(&trace).unwrap();
        let losses: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(losses.len(), 2, "{baseline}");
        assert!(losses[1] < 0.1 * losses[0], "{baseline}: {losses:?}");
    }
}

fn constant_stream(n: usize) -> String {
    "0.5,0.5\n".repeat(n)
}

#[test]
fn detect_constant_stream_never_triggers() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "stream.csv", &constant_stream(600));
    let out = dir.path().join("det.csv");
    let o = run(&[
        "detect",
        "--input",
        s(&input),
        "--L",
        "10",
        "--k",
        "50",
        "--reps",
        "50",
        "--out",
        s(&out),
    ]);
    assert_ok(&o);
    assert!(stdout(&o).contains("trigger=none"), "{}", stdout(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("t,statistic,threshold,triggered\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
    assert!(dir.path().join("det.csv.manifest.json").exists());
}

#[test]
fn detect_finds_a_large_shift() {
    let dir = TempDir::new().unwrap();
    let mut body = cloud(500, 2, 0.0);
    body.push_str(
        &cloud(300, 2, 0.5)
            .lines()
            .map(|l| {
                let v: Vec<String> = l
                    .split(',')
                    .map(|x| (x.parse::<f64>().unwrap() + 10.0).to_string())
                    .collect();
                v.join(",") + "\n"
            })
            .collect::<String>(),
    );
    let input = write(&dir, "stream.csv", &body);
    for method in ["stream-sw", "sliding-window"] {
        let o = run(&[
            "detect",
            "--input",
            s(&input),
            "--L",
            "10",
            "--k",
            "50",
            "--reps",
            "50",
            "--method",
            method,
        ]);
        assert_ok(&o);
        let text = stdout(&o);
        let t: u64 = text
            .lines()
            .find_map(|l| l.strip_prefix("trigger="))
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("{method}: {text}"));
        assert!((500..700).contains(&t), "{method}: trigger at {t}");
    }
}

#[test]
fn detect_short_stream_exits_3() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "stream.csv", &constant_stream(100));
    assert_eq!(
        run(&["detect", "--input", s(&input)]).status.code(),
        Some(3)
    );
}

#[test]
fn pairwise_identical_clouds_give_zero_matrix() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("clouds");
    fs::create_dir(&data).unwrap();
    for name in ["c.csv", "a.csv", "b.csv"] {
        fs::write(data.join(name), cloud(200, 2, 0.0)).unwrap();
    }
    fs::write(data.join("ignored.txt"), "x").unwrap();
    let out = dir.path().join("m.csv");
    let o = run(&[
        "pairwise",
        "--dir",
        s(&data),
        "--L",
        "10",
        "--k",
        "50",
        "--out",
        s(&out),
    ]);
    assert_ok(&o);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("name,a.csv,b.csv,c.csv"));
    for line in lines {
        assert!(
            line.split(',')
                .skip(1)
                .all(|v| v.parse::<f64>().unwrap() == 0.0),
            "{line}"
        );
    }
}

#[test]
fn pairwise_is_symmetric_with_distinct_clouds() {
    let dir = TempDir::new().unwrap();
    for (i, name) in ["a.csv", "b.csv", "c.csv"].iter().enumerate() {
        fs::write(dir.path().join(name), cloud(150, 2, i as f64)).unwrap();
    }
    let o = run(&["pairwise", "--dir", s(dir.path()), "--L", "10", "--k", "50"]);
    assert_ok(&o);
    let rows: Vec<Vec<f64>> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[i], 0.0);
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, rows[j][i]);
        }
    }
    assert!(rows[0][1] > 0.0);
}

#[test]
fn bench_refuses_over_ceiling() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "bench",
        "--task",
        "gaussian",
        "--sweep",
        "n",
        "--ns",
        "100000000",
        "--out",
        s(dir.path()),
        "--max-memory-mb",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!dir.path().join("bench_gaussian_n.csv").exists());
}

#[test]
fn bench_small_sweep_writes_rows() {
    let dir = TempDir::new().unwrap();
    let args = [
        "bench",
        "--task",
        "mixture",
        "--sweep",
        "k",
        "--ks",
        "5,20",
        "--n",
        "300",
        "--L",
        "10",
        "--seeds",
        "2",
        "--out",
        s(dir.path()),
    ];
    assert_ok(&run(&args));
    let path = dir.path().join("bench_mixture_k.csv");
    let first = fs::read_to_string(&path).unwrap();
    let mut lines = first.lines();
    assert_eq!(
        lines.next(),
        Some("sweep_value,seed,method,rel_error,retained")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert_eq!(rows[0][2], "stream_sw");
    assert_eq!(rows[1][2], "random_sampling");
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() >= 0.0));
    assert!(dir
        .path()
        .join("bench_mixture_k.csv.manifest.json")
        .exists());

    assert_ok(&run(&args));
    assert_eq!(fs::read_to_string(&path).unwrap(), first);
}

fn write_cloud(path: &Path, c: &stream_ot_core::PointCloud) {
    let f = fs::File::create(path).unwrap();
    stream_ot_core::io::write_points_csv(std::io::BufWriter::new(f), c).unwrap();
}

#[test]
fn dist_gaussian_pair_near_nine() {
    use stream_ot_core::io::{gen_mixture_pair, SyntheticSpec};
    let dir = TempDir::new().unwrap();
    let (x, y) = gen_mixture_pair(&SyntheticSpec::gaussian_pair(10_000, 10_000, 3)).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_cloud(&a, &x);
    write_cloud(&b, &y);
    let o = run(&[
        "dist",
        "--a",
        s(&a),
        "--b",
        s(&b),
        "--L",
        "1000",
        "--k1",
        "500",
        "--k2",
        "500",
        "--seed",
        "1",
    ]);
    assert_ok(&o);
    let row: Vec<f64> = stdout(&o)
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[0] - 9.0).abs() < 0.05 * 9.0, "swpp {}", row[0]);
    assert!((row[1] - 3.0).abs() < 0.1, "swp {}", row[1]);
    let bound = stream_ot_core::kll::space_bound(500, 10_000);
    assert!(
        row[3] <= bound && row[4] <= bound,
        "retained {} {} bound {bound}",
        row[3],
        row[4]
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn bench_rows(path: &Path) -> Vec<(u64, String, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (
                c[0].parse().unwrap(),
                c[2].to_string(),
                c[3].parse().unwrap(),
            )
        })
        .collect()
}

fn median_for(rows: &[(u64, String, f64)], value: u64, method: &str) -> f64 {
    median(
        rows.iter()
            .filter(|r| r.0 == value && r.1 == method)
            .map(|r| r.2)
            .collect(),
    )
}

#[test]
fn bench_k_sweep_orderings() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "bench",
        "--task",
        "mixture",
        "--sweep",
        "k",
        "--ks",
        "10,100,1000",
        "--n",
        "10000",
        "--L",
        "100",
        "--seeds",
        "5",
        "--out",
        s(dir.path()),
    ]);
    assert_ok(&o);
    let rows = bench_rows(&dir.path().join("bench_mixture_k.csv"));
    assert_eq!(rows.len(), 3 * 5 * 2);
    let k10 = median_for(&rows, 10, "stream_sw");
    let k1000 = median_for(&rows, 1000, "stream_sw");
    assert!(k1000 < k10, "k=1000 {k1000} vs k=10 {k10}");
    let ours = median_for(&rows, 100, "stream_sw");
    let base = median_for(&rows, 100, "random_sampling");
    assert!(ours < base, "k=100: stream {ours} vs reservoir {base}");
}
