use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{FisheyeCamera, PerspectiveCamera, Pose};
use crate::error::{CoreError, Result};
use crate::face::{FaceBasis, ParamVector};
use crate::render::{rasterize_albedo, rasterize_egocentric, rasterize_shaded, Image, Rgb8Image};

use super::script::PerformanceScript;
use super::sync::{align_streams, inject_sync_events, FrameStream, StreamSource, SyncReport, SYNC_PATCH};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.jsonl";
const MANIFEST_FORMAT: &str = "egoface-dataset-1";
/// Frames are assigned to splits in blocks of this many, so held-out frames
/// are not near-duplicates of their training neighbours.
pub const SPLIT_BLOCK: usize = 25;

/// The frontal and head-mounted cameras of the capture rig.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureRig {
    pub front: PerspectiveCamera,
    pub ego: FisheyeCamera,
}

impl Default for CaptureRig {
    fn default() -> Self {
        CaptureRig {
            front: PerspectiveCamera::frontal_default(),
            ego: FisheyeCamera::ego_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPair {
    pub ego: Image,
    pub front: Image,
    pub params: ParamVector,
}

/// Renders one scripted frame from both cameras. The ego camera is fixed to
/// the face, so its view ignores the frontal head pose.
pub fn render_pair(basis: &FaceBasis, script: &PerformanceScript, frame: usize, rig: &CaptureRig) -> Result<RenderedPair> {
    let params = script.params(frame)?;
    let mesh = basis.shaded_mesh(&params)?;
    let background = script.scenario.background;
    let front = rasterize_shaded(&mesh, &rig.front, &pose_of(&params), background).image;
    let ego = rasterize_egocentric(&mesh, &rig.ego, background).image;
    Ok(RenderedPair { ego, front, params })
}

fn pose_of(p: &ParamVector) -> Pose {
    Pose {
        rotation: p.rotation,
        translation: p.translation,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "ego2exp")]
    Ego2Exp,
    #[serde(rename = "exp2vreal")]
    Exp2VRealFace,
}

impl DatasetKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetKind::Ego2Exp => "ego2exp",
            DatasetKind::Exp2VRealFace => "exp2vreal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic split of a frame, hashed by sequence and frame block.
pub fn split_of(sequence: usize, frame: usize, test_fraction: f64) -> Split {
    let h = splitmix64(((sequence as u64) << 32) ^ (frame / SPLIT_BLOCK) as u64);
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    if unit < test_fraction {
        Split::Test
    } else {
        Split::Train
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportOptions {
    /// Fraction of frame blocks held out for testing.
    pub test_fraction: f64,
    pub sync_period_s: f64,
    pub sync_event_frames: usize,
    /// Start offsets (ego minus front, frames) cycled over the sequences.
    pub sync_offsets: Vec<i64>,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            test_fraction: 0.1,
            sync_period_s: super::sync::SYNC_PERIOD_S,
            sync_event_frames: super::sync::SYNC_EVENT_FRAMES,
            sync_offsets: vec![7, -12, 23, -3],
        }
    }
}

impl ExportOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(CoreError::Config("test_fraction must lie in [0, 1)".into()));
        }
        if !(self.sync_period_s > 0.0) || self.sync_event_frames == 0 {
            return Err(CoreError::Config("sync period and event length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRecord {
    pub index: usize,
    pub seed: u64,
    pub frames: usize,
    pub scenario: super::script::Scenario,
    /// Simulated start offset between the two cameras.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub injected_offset: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sync: Option<SyncReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub sequence: usize,
    pub frame: usize,
    pub split: Split,
    /// Shaded frontal frame.
    pub front: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ego: Option<String>,
    /// Unlit reflectance render of the same frame.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub albedo: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub kind: DatasetKind,
    pub frame_rate: f64,
    pub rig: CaptureRig,
    pub params: String,
    pub sequences: Vec<SequenceRecord>,
    pub entries: Vec<DatasetEntry>,
}

/// One line of `params.jsonl`, in manifest entry order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub sequence: usize,
    pub frame: usize,
    pub params: ParamVector,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<DatasetManifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(CoreError::io(&path))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| CoreError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(CoreError::Format {
                path,
                message: format!("unsupported dataset format {:?}", manifest.format),
            });
        }
        Ok(manifest)
    }

    /// Checks that every referenced frame exists.
    pub fn check_files(&self, dir: &Path) -> Result<()> {
        for e in &self.entries {
            let paths = [Some(&e.front), e.ego.as_ref(), e.albedo.as_ref()];
            for rel in paths.into_iter().flatten() {
                let p = dir.join(rel);
                if !p.is_file() {
                    return Err(CoreError::Io {
                        path: p,
                        source: std::io::Error::from(std::io::ErrorKind::NotFound),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }
}

pub fn read_params(dir: &Path) -> Result<Vec<ParamRecord>> {
    let path = dir.join(PARAMS_FILE);
    let file = fs::File::open(&path).map_err(CoreError::io(&path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(CoreError::io(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CoreError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_frame(dir: &Path, relative: &str) -> Result<Image> {
    Image::read_ppm(&dir.join(relative))
}

fn background_rgb8(background: [f64; 3]) -> [u8; 3] {
    let px = Image::filled(1, 1, background).to_rgb8().data;
    [px[0], px[1], px[2]]
}

struct Writer<'a> {
    root: &'a Path,
    kind: DatasetKind,
    params: BufWriter<fs::File>,
    params_path: PathBuf,
    entries: Vec<DatasetEntry>,
}

impl Writer<'_> {
    fn frame_path(&self, sequence: usize, stream: &str, frame: usize) -> String {
        format!("frames/{}/{sequence:03}/{stream}/{frame:06}.ppm", self.kind.dir_name())
    }

    fn make_dirs(&self, sequence: usize, streams: &[&str]) -> Result<()> {
        for s in streams {
            let dir = self
                .root
                .join(format!("frames/{}/{sequence:03}/{s}", self.kind.dir_name()));
            fs::create_dir_all(&dir).map_err(CoreError::io(&dir))?;
        }
        Ok(())
    }

    fn write_image(&self, rel: &str, image: &Rgb8Image) -> Result<()> {
        image.write_ppm(&self.root.join(rel))
    }

    fn push(&mut self, entry: DatasetEntry, params: ParamVector) -> Result<()> {
        let record = ParamRecord {
            sequence: entry.sequence,
            frame: entry.frame,
            params,
        };
        let line = serde_json::to_string(&record)?;
        writeln!(self.params, "{line}").map_err(CoreError::io(&self.params_path))?;
        self.entries.push(entry);
        Ok(())
    }
}

/// Records both cameras with a start offset, resolves the offset from the
/// flashes and writes the aligned ego/front pairs of every scripted frame.
fn export_ego_sequence(
    w: &mut Writer,
    basis: &FaceBasis,
    index: usize,
    script: &PerformanceScript,
    rig: &CaptureRig,
    offset: i64,
    options: &ExportOptions,
) -> Result<SyncReport> {
    let n = script.frame_count();
    let ego_lead = offset.max(0) as usize;
    let front_lead = (-offset).max(0) as usize;
    // Before the scripted performance starts the subject holds still.
    let still = render_pair(basis, script, 0, rig)?;
    let mut front = vec![still.front.to_rgb8(); front_lead];
    let mut ego = vec![still.ego.to_rgb8(); ego_lead];
    for frame in 0..n {
        let pair = render_pair(basis, script, frame, rig)?;
        front.push(pair.front.to_rgb8());
        ego.push(pair.ego.to_rgb8());
    }
    let rate = script.frame_rate;
    let front = inject_sync_events(
        FrameStream::new(StreamSource::Front, rate, 0.0, front)?,
        options.sync_period_s,
        options.sync_event_frames,
        0,
    )?;
    let ego = inject_sync_events(
        FrameStream::new(StreamSource::Ego, rate, 0.0, ego)?,
        options.sync_period_s,
        options.sync_event_frames,
        offset,
    )?;
    let report = align_streams(&ego, &front)?;
    report.ensure_verified()?;

    let background = background_rgb8(script.scenario.background);
    let mut front = front.into_frames();
    let mut ego = ego.into_frames();
    w.make_dirs(index, &["front", "ego"])?;
    for frame in 0..n {
        let f = frame + front_lead;
        let e = f as i64 + report.offset;
        if e < 0 || e as usize >= ego.len() {
            return Err(CoreError::Config(format!(
                "recovered sync offset {} leaves frame {frame} of sequence {index} without an ego image",
                report.offset
            )));
        }
        let (front_img, ego_img) = (&mut front[f], &mut ego[e as usize]);
        // The flash patch lies outside the face in both views; restore the backdrop.
        front_img.fill_rect(0, 0, SYNC_PATCH, SYNC_PATCH, background);
        ego_img.fill_rect(0, 0, SYNC_PATCH, SYNC_PATCH, background);
        let entry = DatasetEntry {
            sequence: index,
            frame,
            split: split_of(index, frame, options.test_fraction),
            front: w.frame_path(index, "front", frame),
            ego: Some(w.frame_path(index, "ego", frame)),
            albedo: None,
        };
        w.write_image(&entry.front, front_img)?;
        w.write_image(entry.ego.as_ref().unwrap(), ego_img)?;
        w.push(entry, script.params(frame)?)?;
    }
    Ok(report)
}

fn export_studio_sequence(
    w: &mut Writer,
    basis: &FaceBasis,
    index: usize,
    script: &PerformanceScript,
    cam: &PerspectiveCamera,
    options: &ExportOptions,
) -> Result<()> {
    w.make_dirs(index, &["front", "albedo"])?;
    let background = script.scenario.background;
    for frame in 0..script.frame_count() {
        let params = script.params(frame)?;
        let pose = pose_of(&params);
        let mesh = basis.shaded_mesh(&params)?;
        let front = rasterize_shaded(&mesh, cam, &pose, background).image;
        let albedo = rasterize_albedo(basis, &params, cam, &pose, background)?;
        let entry = DatasetEntry {
            sequence: index,
            frame,
            split: split_of(index, frame, options.test_fraction),
            front: w.frame_path(index, "front", frame),
            ego: None,
            albedo: Some(w.frame_path(index, "albedo", frame)),
        };
        w.write_image(&entry.front, &front.to_rgb8())?;
        w.write_image(entry.albedo.as_ref().unwrap(), &albedo.to_rgb8())?;
        w.push(entry, params)?;
    }
    Ok(())
}

/// Renders and writes a dataset under `out_dir`: frames, `params.jsonl` and
/// `manifest.json`, all paths relative to `out_dir`.
pub fn export_dataset(
    kind: DatasetKind,
    basis: &FaceBasis,
    scripts: &[PerformanceScript],
    rig: &CaptureRig,
    options: &ExportOptions,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    options.validate()?;
    if scripts.is_empty() {
        return Err(CoreError::Config("no performances to export".into()));
    }
    let frame_rate = scripts[0].frame_rate;
    for s in scripts {
        s.validate(basis)?;
        if s.frame_rate != frame_rate {
            return Err(CoreError::Config("all performances must share one frame rate".into()));
        }
        if kind == DatasetKind::Exp2VRealFace && !s.is_static() {
            return Err(CoreError::Config(
                "translation datasets need a static head pose and fixed lighting per sequence".into(),
            ));
        }
    }
    fs::create_dir_all(out_dir).map_err(CoreError::io(out_dir))?;
    let params_path = out_dir.join(PARAMS_FILE);
    let file = fs::File::create(&params_path).map_err(CoreError::io(&params_path))?;
    let mut writer = Writer {
        root: out_dir,
        kind,
        params: BufWriter::new(file),
        params_path: params_path.clone(),
        entries: Vec::new(),
    };
    let mut sequences = Vec::with_capacity(scripts.len());
    for (index, script) in scripts.iter().enumerate() {
        let mut record = SequenceRecord {
            index,
            seed: script.seed,
            frames: script.frame_count(),
            scenario: script.scenario.clone(),
            injected_offset: None,
            sync: None,
        };
        match kind {
            DatasetKind::Ego2Exp => {
                let offset = if options.sync_offsets.is_empty() {
                    0
                } else {
                    options.sync_offsets[index % options.sync_offsets.len()]
                };
                let report = export_ego_sequence(&mut writer, basis, index, script, rig, offset, options)?;
                record.injected_offset = Some(offset);
                record.sync = Some(report);
            }
            DatasetKind::Exp2VRealFace => {
                export_studio_sequence(&mut writer, basis, index, script, &rig.front, options)?;
            }
        }
        sequences.push(record);
    }
    writer.params.flush().map_err(CoreError::io(&params_path))?;
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        kind,
        frame_rate,
        rig: *rig,
        params: PARAMS_FILE.to_string(),
        sequences,
        entries: writer.entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(CoreError::io(&path))?;
    Ok(manifest)
}
