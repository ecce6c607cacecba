#![allow(dead_code)]

use std::sync::OnceLock;

use egoface_core::camera::Pose;
use egoface_core::capture::{gen_performance, render_pair, CaptureRig, Scenario};
use egoface_core::face::{synth_basis, FaceBasis, ParamVector};
use egoface_core::render::{rasterize_albedo, Image};

pub fn basis() -> &'static FaceBasis {
    static B: OnceLock<FaceBasis> = OnceLock::new();
    B.get_or_init(|| synth_basis(500, 16, 16, 12, 3).unwrap())
}

pub fn pose_of(p: &ParamVector) -> Pose {
    Pose {
        rotation: p.rotation,
        translation: p.translation,
    }
}

/// Head-mounted frames and their parameters, every `stride`-th frame of a
/// roaming performance.
pub fn ego_frames(count: usize, stride: usize, seed: u64) -> (Vec<Image>, Vec<ParamVector>) {
    let script = gen_performance(basis(), seed, count * stride, &Scenario::roaming(1)).unwrap();
    let rig = CaptureRig::default();
    (0..count)
        .map(|i| {
            let pair = render_pair(basis(), &script, i * stride, &rig).unwrap();
            (pair.ego, pair.params)
        })
        .unzip()
}

/// Albedo and shaded frontal frames of consecutive studio frames.
pub struct StudioClip {
    pub albedo: Vec<Image>,
    pub front: Vec<Image>,
    pub params: Vec<ParamVector>,
    pub background: [f64; 3],
}

pub fn studio_clip(count: usize, seed: u64) -> StudioClip {
    let scenario = Scenario::studio(0);
    let script = gen_performance(basis(), seed, count, &scenario).unwrap();
    let rig = CaptureRig::default();
    let mut clip = StudioClip {
        albedo: Vec::new(),
        front: Vec::new(),
        params: Vec::new(),
        background: scenario.background,
    };
    for f in 0..count {
        let pair = render_pair(basis(), &script, f, &rig).unwrap();
        let albedo = rasterize_albedo(basis(), &pair.params, &rig.front, &pose_of(&pair.params), scenario.background).unwrap();
        clip.albedo.push(albedo.to_rgb8().to_image());
        clip.front.push(pair.front.to_rgb8().to_image());
        clip.params.push(pair.params);
    }
    clip
}
