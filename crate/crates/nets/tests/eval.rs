mod common;

use common::{basis, studio_clip};
use egoface_core::capture::Split;
use egoface_core::render::Image;
use egoface_nets::data::tensor_image;
use egoface_nets::eval::{
    geometry_errors, pervertex_distance, published_ms, self_reenactment_mse, timing_bench, BenchComponent,
    GeoErrorStats, Stage,
};
use egoface_nets::exp2vreal::TranslationSet;
use proptest::prelude::*;

fn grid(n: usize) -> Vec<f64> {
    (0..3 * n).map(|i| (i as f64 * 0.37).sin() * 40.0).collect()
}

#[test]
fn identical_meshes_are_zero() {
    let a = grid(500);
    let d = pervertex_distance(&a, &a).unwrap();
    assert_eq!((d.min, d.max, d.mean), (0.0, 0.0, 0.0));
}

#[test]
fn rigid_offset_is_uniform() {
    let a = grid(500);
    let b: Vec<f64> = a.chunks(3).flat_map(|p| [p[0] + 1.2, p[1] - 1.6, p[2]]).collect();
    let d = pervertex_distance(&a, &b).unwrap();
    assert!((d.min - 2.0).abs() < 1e-12 && (d.max - 2.0).abs() < 1e-12 && (d.mean - 2.0).abs() < 1e-12);
}

#[test]
fn single_displaced_vertex() {
    let a = grid(500);
    let mut b = a.clone();
    b[3 * 17 + 2] += 3.0;
    let d = pervertex_distance(&a, &b).unwrap();
    assert_eq!(d.min, 0.0);
    assert!((d.max - 3.0).abs() < 1e-12);
    assert!((d.mean - 0.006).abs() < 1e-12);
}

#[test]
fn vertex_count_mismatch_is_rejected() {
    assert!(pervertex_distance(&grid(10), &grid(11)).is_err());
    assert!(pervertex_distance(&[], &[]).is_err());
}

proptest! {
    #[test]
    fn distance_is_symmetric_and_ordered(s in 0.0..10.0f64, k in 1usize..40) {
        let a = grid(k);
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + s * ((i * 7) as f64).cos()).collect();
        let ab = pervertex_distance(&a, &b).unwrap();
        let ba = pervertex_distance(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab.min <= ab.mean && ab.mean <= ab.max);
        prop_assert_eq!(ab.max == 0.0, a == b);
    }
}

fn expressions(n: usize) -> Vec<Vec<f64>> {
    let sigma = &basis().sigma_delta;
    (0..n)
        .map(|f| sigma.iter().enumerate().map(|(k, s)| s * ((f * 3 + k) as f64 * 0.7).sin()).collect())
        .collect()
}

#[test]
fn oracle_predictions_have_zero_error() {
    let alpha = vec![0.0; basis().dims.alpha];
    let truth = expressions(8);
    let stats = geometry_errors(basis(), &alpha, &truth, &truth).unwrap();
    assert_eq!(stats.frames.len(), 8);
    assert_eq!(stats.average.max, 0.0);
}

#[test]
fn mean_predictor_matches_direct_computation() {
    let alpha: Vec<f64> = basis().sigma_alpha.iter().map(|s| 0.3 * s).collect();
    let truth = expressions(10);
    let dim = truth[0].len();
    let mean: Vec<f64> = (0..dim).map(|k| truth.iter().map(|t| t[k]).sum::<f64>() / 10.0).collect();
    let stats = geometry_errors(basis(), &alpha, &truth, &vec![mean.clone(); 10]).unwrap();
    // Brute force: per-vertex loops over the assembled meshes.
    let mut sums = (0.0, 0.0, 0.0);
    for t in &truth {
        let a = basis().assemble_geometry(&alpha, t).unwrap();
        let b = basis().assemble_geometry(&alpha, &mean).unwrap();
        let d: Vec<f64> = (0..a.len() / 3)
            .map(|v| {
                let dx = a[3 * v] - b[3 * v];
                let dy = a[3 * v + 1] - b[3 * v + 1];
                let dz = a[3 * v + 2] - b[3 * v + 2];
                (dx * dx + dy * dy + dz * dz).sqrt()
            })
            .collect();
        sums.0 += d.iter().cloned().fold(f64::INFINITY, f64::min);
        sums.1 += d.iter().cloned().fold(0.0, f64::max);
        sums.2 += d.iter().sum::<f64>() / d.len() as f64;
    }
    assert!((stats.average.min - sums.0 / 10.0).abs() < 1e-9);
    assert!((stats.average.max - sums.1 / 10.0).abs() < 1e-9);
    assert!((stats.average.mean - sums.2 / 10.0).abs() < 1e-9);
    assert!(stats.average.mean > 0.1);
    for f in &stats.frames {
        assert!(f.min <= f.mean && f.mean <= f.max);
    }
}

#[test]
fn stats_write_json_and_csv() {
    let alpha = vec![0.0; basis().dims.alpha];
    let truth = expressions(3);
    let stats = geometry_errors(basis(), &alpha, &truth, &expressions(4)[1..]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    stats.write_json(&dir.path().join("geo.json")).unwrap();
    stats.write_csv(&dir.path().join("geo.csv")).unwrap();
    let back: GeoErrorStats = serde_json::from_str(&std::fs::read_to_string(dir.path().join("geo.json")).unwrap()).unwrap();
    assert_eq!(back, stats);
    let csv = std::fs::read_to_string(dir.path().join("geo.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(stats.table().contains("mean"));
}

fn clip_set() -> TranslationSet {
    let clip = studio_clip(6, 60);
    TranslationSet::from_frames(&clip.albedo, &clip.front, &[Split::Test; 6], 32).unwrap()
}

#[test]
fn copier_has_zero_reenactment_error() {
    let set = clip_set();
    let entries = set.indices(Split::Test);
    let r = self_reenactment_mse(&set, &entries, 32, |e| tensor_image(&set.front(e))).unwrap();
    assert_eq!(r.mean, 0.0);
    assert!(r.per_frame.iter().all(|&m| m == 0.0));
    let half = self_reenactment_mse(&set, &entries, 16, |e| tensor_image(&set.front(e))).unwrap();
    assert_eq!(half.mean, 0.0);
}

#[test]
fn gray_output_error_is_the_spread_around_gray() {
    let set = clip_set();
    let entries = set.indices(Split::Test);
    let r = self_reenactment_mse(&set, &entries, 32, |_| Ok(Image::filled(32, 32, [0.5; 3]))).unwrap();
    let mut total = 0.0;
    let mut count = 0.0;
    for &e in &entries {
        for &v in set.front(e).data() {
            total += (v as f64 - 0.5).powi(2);
            count += 1.0;
        }
    }
    assert!((r.mean - total / count).abs() < 1e-12, "{} vs {}", r.mean, total / count);
    assert!(r.mean > 0.0);
}

#[test]
fn reenactment_rejects_upsampled_comparison() {
    let set = clip_set();
    assert!(self_reenactment_mse(&set, &[0], 64, |e| tensor_image(&set.front(e))).is_err());
    assert!(self_reenactment_mse(&set, &[], 32, |e| tensor_image(&set.front(e))).is_err());
}

fn spin(iterations: u64) -> impl Fn(usize) -> egoface_nets::Result<()> + Sync {
    move |f| {
        let mut x = f as u64;
        for i in 0..iterations {
            x = std::hint::black_box(x.wrapping_mul(6364136223846793005).wrapping_add(i));
        }
        std::hint::black_box(x);
        Ok(())
    }
}

#[test]
fn timing_report_follows_component_order_and_sums() {
    let components = vec![
        BenchComponent {
            stage: Stage::Ego2Exp,
            name: "resnet-analog".into(),
            reference_ms: published_ms("resnet-analog"),
            run: Box::new(spin(20_000)),
        },
        BenchComponent {
            stage: Stage::Rendering,
            name: "albedo".into(),
            reference_ms: published_ms("albedo"),
            run: Box::new(spin(5_000)),
        },
        BenchComponent {
            stage: Stage::Exp2VRealFace,
            name: "optimized".into(),
            reference_ms: published_ms("optimized"),
            run: Box::new(spin(40_000)),
        },
    ];
    let report = timing_bench(&components, 20, 2).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.component.as_str()).collect();
    assert_eq!(names, ["resnet-analog", "albedo", "optimized"]);
    let sum: f64 = report.rows.iter().map(|r| r.mean_ms).sum();
    assert_eq!(report.end_to_end_ms, sum);
    assert!(report.rows.iter().all(|r| r.mean_ms >= 0.0));
    let reference = report.reference_end_to_end_ms.unwrap();
    assert!((reference - 36.2).abs() < 1e-9);
    assert_eq!((report.frames, report.repetitions), (20, 2));
    let table = report.table();
    assert!(table.contains("Synthetic rendering") && table.contains("End-to-end"));
    let dir = tempfile::tempdir().unwrap();
    report.write_csv(&dir.path().join("t.csv")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(timing_bench(&[], 10, 2).is_err());
}

#[test]
fn published_timings_are_annotations() {
    assert_eq!(published_ms("vgg-analog"), Some(26.4));
    assert_eq!(published_ms("alexnet-analog"), Some(5.5));
    assert_eq!(published_ms("full"), Some(39.4));
    assert_eq!(published_ms("unknown"), None);
}
