use proptest::prelude::*;
use stream_ot_core::io::{read_points_from, write_points_csv, write_points_sotp};
use stream_ot_core::slicedsw::{exact_sw_mc, Side};
use stream_ot_core::{PointCloud, ProjectionSet, Sketch, SketchConfig, StreamSwEstimator};

fn cloud_strategy(dim: usize, max_n: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, dim), 1..max_n)
        .prop_map(move |rows| PointCloud::from_rows(dim, rows).unwrap())
}

fn estimate(
    x: &PointCloud,
    y: &PointCloud,
    proj: &ProjectionSet,
    k: u32,
    p: f64,
    seed: u64,
) -> f64 {
    let mut est = StreamSwEstimator::two_sided(proj.clone(), k, k, p, seed).unwrap();
    est.ingest_cloud(x, Side::A).unwrap();
    est.ingest_cloud(y, Side::B).unwrap();
    est.estimate().unwrap()
}

fn shifted(c: &PointCloud, by: &[f64]) -> PointCloud {
    let mut out = c.clone();
    for i in 0..out.len() {
        for (v, s) in out.row_mut(i).iter_mut().zip(by) {
            *v += s;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn large_k_matches_exact(x in cloud_strategy(3, 60), y in cloud_strategy(3, 60), seed in any::<u64>()) {
        let proj = ProjectionSet::sample(3, 8, seed).unwrap();
        let est = estimate(&x, &y, &proj, 200, 2.0, seed);
        let exact = exact_sw_mc(&x, &y, &proj, 2.0).unwrap();
        prop_assert!((est - exact).abs() <= 1e-9 * exact.max(1.0), "{est} vs {exact}");
    }

    #[test]
    fn symmetric_in_sides(x in cloud_strategy(2, 400), y in cloud_strategy(2, 400), seed in any::<u64>()) {
        let proj = ProjectionSet::sample(2, 5, seed).unwrap();
        let xy = estimate(&x, &y, &proj, 16, 1.5, seed);
        let yx = estimate(&y, &x, &proj, 16, 1.5, seed);
        prop_assert!((xy - yx).abs() <= 1e-9 * xy.max(1.0), "{xy} vs {yx}");
    }

    #[test]
    fn common_shift_invariance(
        x in cloud_strategy(2, 400),
        y in cloud_strategy(2, 400),
        s0 in -5.0f64..5.0,
        s1 in -5.0f64..5.0,
        seed in any::<u64>(),
    ) {
        // compaction coins ignore the values, so both sketches shift rigidly
        let proj = ProjectionSet::sample(2, 5, seed).unwrap();
        let base = estimate(&x, &y, &proj, 16, 2.0, seed);
        let moved = estimate(&shifted(&x, &[s0, s1]), &shifted(&y, &[s0, s1]), &proj, 16, 2.0, seed);
        prop_assert!((base - moved).abs() <= 1e-6 * base.max(1.0), "{base} vs {moved}");
    }

    #[test]
    fn point_formats_round_trip(c in cloud_strategy(4, 50)) {
        let mut csv = Vec::new();
        write_points_csv(&mut csv, &c).unwrap();
        prop_assert_eq!(read_points_from(std::io::Cursor::new(csv)).unwrap(), c.clone());
        let mut bin = Vec::new();
        write_points_sotp(&mut bin, &c).unwrap();
        prop_assert_eq!(read_points_from(std::io::Cursor::new(bin)).unwrap(), c);
    }

    #[test]
    fn sketch_bytes_round_trip(xs in prop::collection::vec(-1e6f64..1e6, 0..3000), k in 8u32..64, seed in any::<u64>()) {
        let sk = Sketch::from_values(SketchConfig::new(k, seed).unwrap(), xs).unwrap();
        let back = Sketch::from_bytes(&sk.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), sk.to_bytes());
        prop_assert_eq!(back.weighted_items(), sk.weighted_items());
    }
}

#[test]
fn error_shrinks_with_k() {
    // averaged over seeds, a larger sketch should track the exact value more closely
    let dim = 2;
    let rows = |step: f64, shift: f64| {
        (0..4000).map(move |i| {
            let t = i as f64 * step;
            vec![
                (t.fract() - 0.5) * 4.0 + shift,
                ((t * 7.0).fract() - 0.5) * 2.0,
            ]
        })
    };
    let x = PointCloud::from_rows(dim, rows(0.618_033_988_75, 0.0)).unwrap();
    let y = PointCloud::from_rows(dim, rows(0.414_213_562_37, 0.7)).unwrap();
    let mean_err = |k: u32| {
        (0..10u64)
            .map(|seed| {
                let proj = ProjectionSet::sample(dim, 20, seed).unwrap();
                let exact = exact_sw_mc(&x, &y, &proj, 2.0).unwrap();
                (estimate(&x, &y, &proj, k, 2.0, seed + 100) - exact).abs() / exact
            })
            .sum::<f64>()
            / 10.0
    };
    let small = mean_err(8);
    let large = mean_err(128);
    assert!(large < small, "k=8: {small}, k=128: {large}");
}
