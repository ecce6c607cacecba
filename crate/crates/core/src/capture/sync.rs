use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::render::Rgb8Image;

/// Side (pixels) of the square sync patch in the top-left corner.
pub const SYNC_PATCH: usize = 12;
/// Patch mean above which a frame counts as lit.
pub const SYNC_THRESHOLD: f64 = 0.5;
pub const SYNC_PERIOD_S: f64 = 10.0;
pub const SYNC_EVENT_FRAMES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamSource {
    Ego,
    Front,
}

impl StreamSource {
    fn name(self) -> &'static str {
        match self {
            StreamSource::Ego => "ego",
            StreamSource::Front => "front",
        }
    }
}

/// Recorded frames of one camera with their capture times (seconds).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStream {
    pub source: StreamSource,
    pub frame_rate: f64,
    timestamps: Vec<f64>,
    frames: Vec<Rgb8Image>,
}

impl FrameStream {
    pub fn new(source: StreamSource, frame_rate: f64, start_time: f64, frames: Vec<Rgb8Image>) -> Result<Self> {
        if !(frame_rate > 0.0) {
            return Err(CoreError::Config("frame rate must be positive".into()));
        }
        let timestamps = (0..frames.len()).map(|k| start_time + k as f64 / frame_rate).collect();
        Ok(FrameStream {
            source,
            frame_rate,
            timestamps,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Rgb8Image] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn into_frames(self) -> Vec<Rgb8Image> {
        self.frames
    }
}

/// Whether stream frame `frame` shows a flash for the given schedule.
pub fn is_sync_frame(frame: usize, period_frames: usize, event_frames: usize, offset_frames: i64) -> bool {
    ((frame as i64 - offset_frames).rem_euclid(period_frames as i64) as usize) < event_frames
}

/// Paints the sync patch on every frame: white during events, black otherwise.
pub fn inject_sync_events(
    mut stream: FrameStream,
    period_s: f64,
    event_frames: usize,
    offset_frames: i64,
) -> Result<FrameStream> {
    if stream.is_empty() {
        return Err(CoreError::Config("cannot inject sync events into an empty stream".into()));
    }
    let period = (period_s * stream.frame_rate).round() as usize;
    if event_frames == 0 || period <= event_frames {
        return Err(CoreError::Config(format!(
            "sync period of {period} frames must exceed the event length of {event_frames} frames"
        )));
    }
    for (j, frame) in stream.frames.iter_mut().enumerate() {
        if frame.width < SYNC_PATCH || frame.height < SYNC_PATCH {
            return Err(CoreError::ImageSize(format!(
                "{}x{} frame cannot hold the {SYNC_PATCH}-pixel sync patch",
                frame.width, frame.height
            )));
        }
        let level = if is_sync_frame(j, period, event_frames, offset_frames) { 255 } else { 0 };
        frame.fill_rect(0, 0, SYNC_PATCH, SYNC_PATCH, [level; 3]);
    }
    Ok(stream)
}

/// Mean intensity of the sync patch in [0, 1].
pub fn sync_level(frame: &Rgb8Image) -> f64 {
    frame.region_mean(0, 0, SYNC_PATCH, SYNC_PATCH)
}

/// Frames where the patch turns on after a dark frame.
pub fn detect_onsets(stream: &FrameStream) -> Vec<usize> {
    let lit: Vec<bool> = stream.frames.iter().map(|f| sync_level(f) > SYNC_THRESHOLD).collect();
    (1..lit.len()).filter(|&j| lit[j] && !lit[j - 1]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncReport {
    /// Ego frame index minus front frame index of the same instant.
    pub offset: i64,
    pub period_frames: usize,
    pub first_offset: i64,
    pub last_offset: i64,
    pub verified: bool,
    pub ego_onsets: Vec<usize>,
    pub front_onsets: Vec<usize>,
}

impl SyncReport {
    pub fn ensure_verified(&self) -> Result<()> {
        if self.verified {
            Ok(())
        } else {
            Err(CoreError::SyncVerification {
                first: self.first_offset,
                last: self.last_offset,
            })
        }
    }
}

fn wrap(d: i64, period: i64) -> i64 {
    let w = d.rem_euclid(period);
    if w > period / 2 {
        w - period
    } else {
        w
    }
}

/// Aligns two streams from their flash onsets. The period is taken from the
/// spacing of the first two front onsets; the offset from the first events
/// is checked against the offset from the last events.
pub fn align_streams(ego: &FrameStream, front: &FrameStream) -> Result<SyncReport> {
    let onsets = |s: &FrameStream| {
        let found = detect_onsets(s);
        if found.len() < 2 {
            Err(CoreError::NoSyncEvents(s.source.name()))
        } else {
            Ok(found)
        }
    };
    let ego_onsets = onsets(ego)?;
    let front_onsets = onsets(front)?;
    let period = (front_onsets[1] - front_onsets[0]) as i64;
    let first_offset = wrap(ego_onsets[0] as i64 - front_onsets[0] as i64, period);
    let last_offset = wrap(
        *ego_onsets.last().unwrap() as i64 - *front_onsets.last().unwrap() as i64,
        period,
    );
    Ok(SyncReport {
        offset: first_offset,
        period_frames: period as usize,
        first_offset,
        last_offset,
        verified: (first_offset - last_offset).abs() <= 1,
        ego_onsets,
        front_onsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dark_stream(source: StreamSource, n: usize) -> FrameStream {
        let frames = vec![
            Rgb8Image {
                width: 16,
                height: 16,
                data: vec![40; 16 * 16 * 3],
            };
            n
        ];
        FrameStream::new(source, 25.0, 0.0, frames).unwrap()
    }

    #[test]
    fn events_every_ten_seconds() {
        let s = inject_sync_events(dark_stream(StreamSource::Front, 760), 10.0, 2, 0).unwrap();
        let lit: Vec<usize> = (0..s.len()).filter(|&j| sync_level(&s.frames()[j]) > 0.9).collect();
        assert_eq!(lit, vec![0, 1, 250, 251, 500, 501, 750, 751]);
        assert!((0..s.len()).filter(|j| !lit.contains(j)).all(|j| sync_level(&s.frames()[j]) < 0.1));
        assert!(s.timestamps().windows(2).all(|w| (w[1] - w[0] - 0.04).abs() < 1e-12));
    }

    #[test]
    fn zero_offset_matches_indices() {
        let a = inject_sync_events(dark_stream(StreamSource::Ego, 600), 10.0, 2, 0).unwrap();
        let b = inject_sync_events(dark_stream(StreamSource::Front, 600), 10.0, 2, 0).unwrap();
        assert_eq!(detect_onsets(&a), detect_onsets(&b));
        let report = align_streams(&a, &b).unwrap();
        assert_eq!(report.offset, 0);
        assert!(report.verified);
    }

    #[test]
    fn bad_schedules_are_rejected() {
        assert!(inject_sync_events(dark_stream(StreamSource::Ego, 10), 0.04, 2, 0).is_err());
        assert!(inject_sync_events(dark_stream(StreamSource::Ego, 0), 10.0, 2, 0).is_err());
        let plain = dark_stream(StreamSource::Ego, 300);
        assert!(matches!(
            align_streams(&plain, &plain),
            Err(CoreError::NoSyncEvents("ego"))
        ));
    }
}
