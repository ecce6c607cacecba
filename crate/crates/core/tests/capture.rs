use egoface_core::capture::{
    align_streams, export_dataset, gen_performance, inject_sync_events, read_params, render_pair, split_of,
    CaptureRig, DatasetKind, DatasetManifest, ExportOptions, FrameStream, PerformanceScript, Scenario, Split,
    StreamSource, SYNC_PATCH,
};
use egoface_core::face::{synth_basis, FaceBasis};
use egoface_core::render::Rgb8Image;
use proptest::prelude::*;
use std::path::Path;
use std::sync::OnceLock;

fn basis() -> &'static FaceBasis {
    static B: OnceLock<FaceBasis> = OnceLock::new();
    B.get_or_init(|| synth_basis(500, 16, 16, 12, 3).unwrap())
}

#[test]
fn performances_are_deterministic_bounded_and_one_sided() {
    let b = basis();
    let s1 = gen_performance(b, 11, 400, &Scenario::roaming(1)).unwrap();
    let s2 = gen_performance(b, 11, 400, &Scenario::roaming(1)).unwrap();
    assert_eq!(s1, s2);
    assert_ne!(s1, gen_performance(b, 12, 400, &Scenario::roaming(1)).unwrap());
    for d in &s1.delta {
        for (v, s) in d.iter().zip(&b.sigma_delta) {
            assert!(v.abs() <= 2.0 * s);
        }
    }
    let (l, r) = b.expression_pairs[0];
    let one_sided = s1
        .delta
        .iter()
        .any(|d| d[l] > b.sigma_delta[l] && d[r].abs() < 0.2 * b.sigma_delta[r]);
    assert!(one_sided);
    assert!(gen_performance(b, 1, 0, &Scenario::roaming(0)).is_err());

    let studio = gen_performance(b, 3, 50, &Scenario::studio(2)).unwrap();
    assert!(studio.is_static());
    assert!(!s1.is_static());
}

fn two_frame_script(b: &FaceBasis) -> PerformanceScript {
    let mut s = gen_performance(b, 5, 2, &Scenario::roaming(0)).unwrap();
    s.delta[1] = s.delta[0].clone();
    s.gamma[1] = s.gamma[0].clone();
    s.rotation[1] = [0.1, -0.15, 0.05];
    s.translation[1] = [12.0, -7.0, 640.0];
    s
}

#[test]
fn ego_view_ignores_the_frontal_head_pose() {
    let b = basis();
    let rig = CaptureRig::default();
    let s = two_frame_script(b);
    let p0 = render_pair(b, &s, 0, &rig).unwrap();
    let p1 = render_pair(b, &s, 1, &rig).unwrap();
    assert_eq!(p0.ego, p1.ego);
    assert_ne!(p0.front, p1.front);
    assert_eq!(p0.params, s.params(0).unwrap());

    let mut moved = s.clone();
    moved.delta[1][0] += b.sigma_delta[0];
    moved.rotation[1] = moved.rotation[0];
    moved.translation[1] = moved.translation[0];
    let q = render_pair(b, &moved, 1, &rig).unwrap();
    assert_ne!(q.ego, p0.ego);
    assert_ne!(q.front, p0.front);
    assert!(render_pair(b, &s, 2, &rig).is_err());
}

fn dark_stream(source: StreamSource, n: usize) -> FrameStream {
    let frame = Rgb8Image {
        width: 16,
        height: 16,
        data: vec![30; 16 * 16 * 3],
    };
    FrameStream::new(source, 25.0, 0.0, vec![frame; n]).unwrap()
}

fn synced_pair(offset: i64, n: usize) -> (FrameStream, FrameStream) {
    let ego = inject_sync_events(dark_stream(StreamSource::Ego, n), 10.0, 2, offset).unwrap();
    let front = inject_sync_events(dark_stream(StreamSource::Front, n), 10.0, 2, 0).unwrap();
    (ego, front)
}

#[test]
fn recovers_a_seven_frame_offset() {
    let (ego, front) = synced_pair(7, 800);
    let report = align_streams(&ego, &front).unwrap();
    assert_eq!(report.offset, 7);
    assert!(report.verified);
    assert_eq!(report.period_frames, 250);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(101))]

    #[test]
    fn recovers_any_offset_within_fifty_frames(offset in -50i64..=50) {
        let (ego, front) = synced_pair(offset, 820);
        let report = align_streams(&ego, &front).unwrap();
        prop_assert_eq!(report.offset, offset);
        prop_assert!(report.verified);
    }
}

#[test]
fn drifting_streams_fail_verification() {
    let front = inject_sync_events(dark_stream(StreamSource::Front, 800), 10.0, 2, 0).unwrap();
    let mut frames = dark_stream(StreamSource::Ego, 800).into_frames();
    for (j, f) in frames.iter_mut().enumerate() {
        let lit = [253, 254, 503, 504, 755, 756].contains(&j);
        f.fill_rect(0, 0, SYNC_PATCH, SYNC_PATCH, [if lit { 255 } else { 0 }; 3]);
    }
    let ego = FrameStream::new(StreamSource::Ego, 25.0, 0.0, frames).unwrap();
    let report = align_streams(&ego, &front).unwrap();
    assert_eq!((report.first_offset, report.last_offset), (3, 5));
    assert!(!report.verified);
    assert!(report.ensure_verified().is_err());
}

#[test]
fn split_is_deterministic_and_roughly_ten_percent() {
    let test = (0..4000).filter(|&i| split_of(i / 1000, i % 1000, 0.1) == Split::Test).count();
    assert!((200..=700).contains(&test), "{test}");
    assert_eq!(split_of(2, 17, 0.1), split_of(2, 17, 0.1));
    assert!((0..1000).all(|f| split_of(0, f, 0.0) == Split::Train));
}

fn fast_sync() -> ExportOptions {
    ExportOptions {
        sync_period_s: 2.0,
        sync_offsets: vec![5, -4],
        ..ExportOptions::default()
    }
}

fn read(dir: &Path, rel: &str) -> Rgb8Image {
    Rgb8Image::read_ppm(&dir.join(rel)).unwrap()
}

#[test]
fn ego_dataset_pairs_are_aligned_and_reproducible() {
    let b = basis();
    let rig = CaptureRig::default();
    let scripts: Vec<_> = (0..2)
        .map(|k| gen_performance(b, 40 + k, 130, &Scenario::roaming(k as usize)).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let manifest = export_dataset(DatasetKind::Ego2Exp, b, &scripts, &rig, &fast_sync(), &out).unwrap();
    assert_eq!(manifest.entries.len(), 260);
    assert_eq!(DatasetManifest::load(&out).unwrap(), manifest);
    manifest.check_files(&out).unwrap();
    for (seq, offset) in manifest.sequences.iter().zip([5, -4]) {
        assert_eq!(seq.injected_offset, Some(offset));
        assert_eq!(seq.sync.as_ref().unwrap().offset, offset);
    }

    let params = read_params(&out).unwrap();
    assert_eq!(params.len(), manifest.entries.len());
    for (entry, record) in manifest.entries.iter().zip(&params) {
        assert_eq!((entry.sequence, entry.frame), (record.sequence, record.frame));
        let script = &scripts[entry.sequence];
        assert_eq!(record.params, script.params(entry.frame).unwrap());
        let pair = render_pair(b, script, entry.frame, &rig).unwrap();
        assert_eq!(read(&out, &entry.front), pair.front.to_rgb8());
        assert_eq!(read(&out, entry.ego.as_ref().unwrap()), pair.ego.to_rgb8());
    }

    let again = dir.path().join("b");
    export_dataset(DatasetKind::Ego2Exp, b, &scripts, &rig, &fast_sync(), &again).unwrap();
    for file in ["manifest.json", "params.jsonl"] {
        assert_eq!(std::fs::read(out.join(file)).unwrap(), std::fs::read(again.join(file)).unwrap());
    }
}

#[test]
fn translation_dataset_pairs_shaded_and_albedo_frames() {
    let b = basis();
    let rig = CaptureRig::default();
    let scripts = vec![gen_performance(b, 7, 20, &Scenario::studio(1)).unwrap()];
    let dir = tempfile::tempdir().unwrap();
    let manifest =
        export_dataset(DatasetKind::Exp2VRealFace, b, &scripts, &rig, &ExportOptions::default(), dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 20);
    manifest.check_files(dir.path()).unwrap();
    let e = &manifest.entries[3];
    assert!(e.ego.is_none());
    let front = read(dir.path(), &e.front);
    let albedo = read(dir.path(), e.albedo.as_ref().unwrap());
    assert_eq!(front, render_pair(b, &scripts[0], 3, &rig).unwrap().front.to_rgb8());
    assert_ne!(front, albedo);

    let moving = vec![gen_performance(b, 7, 20, &Scenario::roaming(1)).unwrap()];
    assert!(export_dataset(DatasetKind::Exp2VRealFace, b, &moving, &rig, &ExportOptions::default(), dir.path()).is_err());
}
