use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, CoreError, Result};
use crate::face::{lighting, FaceBasis, ParamVector, GAMMA_LEN};

pub const FRAME_RATE: f64 = 25.0;
/// Head distance from the frontal camera (mm).
pub const FRONTAL_DISTANCE: f64 = 600.0;
/// Expression amplitudes are clamped to this many prior sigmas.
pub const MAX_EXPRESSION_SIGMAS: f64 = 2.0;

/// Background and lighting of one recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: usize,
    pub background: [f64; 3],
    /// Direction toward the key light, model frame.
    pub light_direction: [f64; 3],
    pub tint: [f64; 3],
    pub ambient: f64,
    pub key: f64,
    /// Relative amplitude of slow per-channel light drift; 0 holds the light fixed.
    pub light_drift: f64,
    /// Whether the head moves in front of the frontal camera.
    pub head_motion: bool,
}

struct Room {
    background: [f64; 3],
    direction: [f64; 3],
    tint: [f64; 3],
    ambient: f64,
    key: f64,
}

const ROOMS: [Room; 4] = [
    Room {
        background: [0.1, 0.15, 0.2],
        direction: [0.3, -0.5, -0.8],
        tint: [1.0, 1.0, 1.0],
        ambient: 0.65,
        key: 0.3,
    },
    Room {
        background: [0.3, 0.25, 0.2],
        direction: [-0.6, -0.3, -0.7],
        tint: [1.0, 0.92, 0.8],
        ambient: 0.6,
        key: 0.32,
    },
    Room {
        background: [0.05, 0.06, 0.05],
        direction: [0.7, -0.2, -0.6],
        tint: [0.85, 0.92, 1.0],
        ambient: 0.62,
        key: 0.3,
    },
    Room {
        background: [0.35, 0.35, 0.38],
        direction: [0.0, -0.4, -0.9],
        tint: [1.0, 0.97, 0.95],
        ambient: 0.7,
        key: 0.22,
    },
];

impl Scenario {
    /// A walk-around recording: varied room, drifting light, moving head.
    pub fn roaming(id: usize) -> Scenario {
        Scenario {
            light_drift: 0.08,
            head_motion: true,
            ..Scenario::studio(id)
        }
    }

    /// A tripod recording in a static environment: fixed light and pose.
    pub fn studio(id: usize) -> Scenario {
        let room = &ROOMS[id % ROOMS.len()];
        Scenario {
            id,
            background: room.background,
            light_direction: room.direction,
            tint: room.tint,
            ambient: room.ambient,
            key: room.key,
            light_drift: 0.0,
            head_motion: false,
        }
    }

    pub fn gamma(&self) -> Vec<f64> {
        lighting(Vector3::from(self.light_direction), self.tint, self.ambient, self.key)
    }
}

/// Per-frame ground truth of a synthetic performance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceScript {
    pub seed: u64,
    pub frame_rate: f64,
    pub scenario: Scenario,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub rotation: Vec<[f64; 3]>,
    pub translation: Vec<[f64; 3]>,
    pub delta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
}

impl PerformanceScript {
    pub fn frame_count(&self) -> usize {
        self.delta.len()
    }

    pub fn params(&self, frame: usize) -> Result<ParamVector> {
        if frame >= self.frame_count() {
            return Err(CoreError::Config(format!(
                "frame {frame} out of range for a {}-frame script",
                self.frame_count()
            )));
        }
        Ok(ParamVector {
            rotation: self.rotation[frame],
            translation: self.translation[frame],
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            delta: self.delta[frame].clone(),
            gamma: self.gamma[frame].clone(),
        })
    }

    /// True when pose and lighting are identical in every frame.
    pub fn is_static(&self) -> bool {
        self.rotation.iter().all(|r| r == &self.rotation[0])
            && self.translation.iter().all(|t| t == &self.translation[0])
            && self.gamma.iter().all(|g| g == &self.gamma[0])
    }

    pub fn validate(&self, basis: &FaceBasis) -> Result<()> {
        let n = self.frame_count();
        if n == 0 {
            return Err(CoreError::Config("script has no frames".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(CoreError::Config("frame rate must be positive".into()));
        }
        check_len("script rotations", n, self.rotation.len())?;
        check_len("script translations", n, self.translation.len())?;
        check_len("script lighting", n, self.gamma.len())?;
        check_len("script alpha", basis.dims.alpha, self.alpha.len())?;
        check_len("script beta", basis.dims.beta, self.beta.len())?;
        for (d, g) in self.delta.iter().zip(&self.gamma) {
            check_len("script delta", basis.dims.delta, d.len())?;
            check_len("script gamma", GAMMA_LEN, g.len())?;
        }
        Ok(())
    }
}

/// Drives one coefficient toward a target while optionally silencing another.
struct Event {
    start: f64,
    length: f64,
    coefficient: usize,
    silenced: Option<usize>,
    target: f64,
}

impl Event {
    /// Raised-sine envelope, 1 at the middle of the event.
    fn envelope(&self, frame: f64) -> f64 {
        let t = (frame - self.start) / self.length;
        if (0.0..=1.0).contains(&t) {
            (PI * t).sin().powi(2)
        } else {
            0.0
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Wave {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amplitude: f64, min_hz: f64, max_hz: f64) -> Wave {
        Wave {
            amplitude,
            frequency: rng.random_range(min_hz..max_hz),
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, seconds: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * seconds + self.phase).sin()
    }
}

fn schedule_events(basis: &FaceBasis, frames: usize, rng: &mut ChaCha8Rng) -> Vec<Event> {
    let sigma = &basis.sigma_delta;
    let pairs = &basis.expression_pairs;
    // Jaw drop and smile lead the symmetric columns.
    let symmetric = basis.dims.delta - 2 * pairs.len();
    let mut events = Vec::new();
    // A one-sided activation early on, so every script of a second or more
    // contains an asymmetric expression.
    if let Some(&(left, right)) = pairs.first() {
        events.push(Event {
            start: 5.0,
            length: 30.0,
            coefficient: left,
            silenced: Some(right),
            target: 1.5 * sigma[left],
        });
    }
    let mut cursor = events.last().map_or(0.0, |e| e.start + e.length);
    loop {
        cursor += rng.random_range(20.0..60.0);
        let length = rng.random_range(20.0..45.0);
        if cursor + length > frames as f64 {
            break;
        }
        let choice = rng.random_range(0..3);
        let (coefficient, silenced) = if choice < 2 && choice < symmetric {
            (choice, None)
        } else if let Some(&(l, r)) = pairs.get(rng.random_range(0..pairs.len().max(1))) {
            if rng.random::<bool>() {
                (l, Some(r))
            } else {
                (r, Some(l))
            }
        } else {
            (0, None)
        };
        events.push(Event {
            start: cursor,
            length,
            coefficient,
            silenced,
            target: rng.random_range(1.2..1.8) * sigma[coefficient],
        });
        cursor += length;
    }
    events
}

/// Generates a deterministic performance: slow random expression motion with
/// jaw, smile and one-sided events, gentle head sway and drifting light as the
/// scenario allows.
pub fn gen_performance(basis: &FaceBasis, seed: u64, frames: usize, scenario: &Scenario) -> Result<PerformanceScript> {
    if frames == 0 {
        return Err(CoreError::Config("a performance needs at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: Vec<f64> = basis.sigma_alpha.iter().map(|s| 0.5 * s * normal(&mut rng)).collect();
    let beta: Vec<f64> = basis.sigma_beta.iter().map(|s| 0.5 * s * normal(&mut rng)).collect();

    let expression_waves: Vec<Vec<Wave>> = basis
        .sigma_delta
        .iter()
        .map(|s| {
            (0..3)
                .map(|_| {
                    let amplitude = 0.4 * s * rng.random_range(0.3..1.0);
                    Wave::random(&mut rng, amplitude, 0.05, 0.5)
                })
                .collect()
        })
        .collect();
    let rotation_waves: Vec<Wave> = [0.06, 0.1, 0.03]
        .iter()
        .map(|&a| Wave::random(&mut rng, a, 0.05, 0.2))
        .collect();
    let translation_waves: Vec<Wave> = [8.0, 6.0, 15.0]
        .iter()
        .map(|&a| Wave::random(&mut rng, a, 0.03, 0.15))
        .collect();
    let light_waves: Vec<Wave> = (0..3)
        .map(|_| Wave::random(&mut rng, scenario.light_drift, 0.02, 0.1))
        .collect();
    let events = schedule_events(basis, frames, &mut rng);
    let base_gamma = scenario.gamma();

    let mut script = PerformanceScript {
        seed,
        frame_rate: FRAME_RATE,
        scenario: scenario.clone(),
        alpha,
        beta,
        rotation: Vec::with_capacity(frames),
        translation: Vec::with_capacity(frames),
        delta: Vec::with_capacity(frames),
        gamma: Vec::with_capacity(frames),
    };
    for frame in 0..frames {
        let t = frame as f64 / FRAME_RATE;
        let mut delta: Vec<f64> = expression_waves.iter().map(|w| w.iter().map(|w| w.at(t)).sum()).collect();
        for event in &events {
            let e = event.envelope(frame as f64);
            if e == 0.0 {
                continue;
            }
            let k = event.coefficient;
            delta[k] = (1.0 - e) * delta[k] + e * event.target;
            if let Some(off) = event.silenced {
                delta[off] *= 1.0 - e;
            }
        }
        for (d, s) in delta.iter_mut().zip(&basis.sigma_delta) {
            *d = d.clamp(-MAX_EXPRESSION_SIGMAS * s, MAX_EXPRESSION_SIGMAS * s);
        }
        let (rotation, translation) = if scenario.head_motion {
            (
                [0, 1, 2].map(|k| rotation_waves[k].at(t)),
                [
                    translation_waves[0].at(t),
                    translation_waves[1].at(t),
                    FRONTAL_DISTANCE + translation_waves[2].at(t),
                ],
            )
        } else {
            ([0.0; 3], [0.0, 0.0, FRONTAL_DISTANCE])
        };
        let gamma: Vec<f64> = (0..GAMMA_LEN)
            .map(|i| base_gamma[i] * (1.0 + light_waves[i / 9].at(t)))
            .collect();
        script.rotation.push(rotation);
        script.translation.push(translation);
        script.delta.push(delta);
        script.gamma.push(gamma);
    }
    Ok(script)
}
