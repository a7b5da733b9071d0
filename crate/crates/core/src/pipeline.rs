//! Config-driven batch generation: sample (asset, background, motion, camera)
//! per clip, render every frame and emit the dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{load_asset, AssetError, GaussianAsset};
use crate::camera::{sample_frame_camera, Camera, CameraError, Lens, OrbitSpec};
use crate::composition::{composite, mask_bbox, project_joint_keypoints, BackgroundImage, CompositionError};
use crate::dataset::{
    summarize_dataset, write_coco_wb, AnnotationRecord, ClipEntry, ClipMeta, DatasetError, DatasetManifest,
    DatasetWriter, EmittedFrame, FailedClip, KeypointSource, Split, SplitTable, MANIFEST_FILE,
};
use crate::kinematics::{forward_kinematics, lbs_deform, load_motion, KinematicsError, MotionSequence};
use crate::render::{render_with, RenderError, RenderSettings};
use crate::rng::{tag, CounterRng};

pub const RUN_LOG_FILE: &str = "run_log.json";
/// Coverage threshold and relative padding of the stored bounding box.
pub const BBOX_THRESHOLD: f64 = 0.5;
pub const BBOX_PAD: f64 = 0.05;
/// Image ids are `clip_index * IMAGE_ID_STRIDE + frame_index`.
pub const IMAGE_ID_STRIDE: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{kind} dictionary {path} has no usable files")]
    EmptyDictionary { kind: &'static str, path: PathBuf },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Failure of a single clip; the run continues without it.
#[derive(Debug, Error)]
pub enum ClipError {
    #[error("asset {id}: {source}")]
    Asset {
        id: String,
        #[source]
        source: AssetError,
    },
    #[error("motion {id}: {source}")]
    Motion {
        id: String,
        #[source]
        source: KinematicsError,
    },
    #[error("background {id}: {source}")]
    Background {
        id: String,
        #[source]
        source: CompositionError,
    },
    #[error("frame {frame}: {message}")]
    Frame { frame: usize, message: String },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

fn default_cameras_per_motion() -> usize {
    4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dictionaries {
    /// Directory of `.gsa` avatars.
    pub assets: PathBuf,
    /// Directory of `.png` / `.jpg` backgrounds.
    pub backgrounds: PathBuf,
    /// Directory of `.motion.json` sequences.
    pub motions: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub vertical_fov_deg: f64,
    pub tile_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            vertical_fov_deg: 45.0,
            tile_size: 16,
        }
    }
}

impl RenderConfig {
    pub fn lens(&self) -> Lens {
        Lens {
            width: self.width,
            height: self.height,
            vertical_fov_deg: self.vertical_fov_deg,
        }
    }

    pub fn settings(&self) -> RenderSettings {
        RenderSettings {
            tile_size: self.tile_size,
            ..RenderSettings::default()
        }
    }
}

/// Subject ids assigned to each split. Subjects listed nowhere go to train.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub valid: Vec<String>,
}

impl SplitPlan {
    pub fn split_of(&self, subject: &str) -> Split {
        if self.valid.iter().any(|s| s == subject) {
            Split::Valid
        } else {
            Split::Train
        }
    }
}

/// TOML run configuration. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sport: String,
    pub seed: u64,
    /// Number of clips to generate.
    pub clips: usize,
    /// Consecutive clips sharing one motion draw, each with its own camera.
    #[serde(default = "default_cameras_per_motion")]
    pub cameras_per_motion: usize,
    /// Worker threads; 0 picks the number of CPUs.
    #[serde(default)]
    pub workers: usize,
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub write_masks: bool,
    /// Truncates long motions.
    #[serde(default)]
    pub max_frames_per_clip: Option<usize>,
    pub dictionaries: Dictionaries,
    #[serde(default)]
    pub render: RenderConfig,
    /// The orbit `seed` field is ignored; cameras are keyed on `seed` above.
    #[serde(default)]
    pub orbit: OrbitSpec,
    #[serde(default)]
    pub splits: SplitPlan,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Parses a config file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.output_dir,
            &mut self.dictionaries.assets,
            &mut self.dictionaries.backgrounds,
            &mut self.dictionaries.motions,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Orbit spec with its seed tied to the run seed.
    pub fn orbit_spec(&self) -> OrbitSpec {
        OrbitSpec {
            seed: self.seed,
            ..self.orbit.clone()
        }
    }

    /// Checks scalar fields; [`Catalog::scan`] checks the dictionaries.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.clips == 0 {
            return invalid("clips must be positive".into());
        }
        if self.cameras_per_motion == 0 {
            return invalid("cameras_per_motion must be positive".into());
        }
        if self.max_frames_per_clip == Some(0) {
            return invalid("max_frames_per_clip must be positive".into());
        }
        if self.sport.is_empty()
            || !self
                .sport
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return invalid(format!("sport tag {:?} must be non-empty [A-Za-z0-9_-]", self.sport));
        }
        if self.clips as u64 >= u64::MAX / IMAGE_ID_STRIDE {
            return invalid("too many clips".into());
        }
        let r = &self.render;
        if r.width == 0 || r.height == 0 || r.tile_size == 0 {
            return invalid("render width, height and tile_size must be positive".into());
        }
        if !(r.vertical_fov_deg > 0.0 && r.vertical_fov_deg < 180.0) {
            return invalid(format!("vertical_fov_deg {} must lie in (0, 180)", r.vertical_fov_deg));
        }
        self.orbit_spec().validate()?;
        if let Some(s) = self.splits.valid.iter().find(|s| self.splits.train.contains(s)) {
            return invalid(format!("subject {s:?} is listed in both splits"));
        }
        Ok(())
    }
}

/// One dictionary element: an id (file stem) and its path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictEntry {
    pub id: String,
    pub path: PathBuf,
}

/// The three scanned dictionaries, each sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    pub assets: Vec<DictEntry>,
    pub backgrounds: Vec<DictEntry>,
    pub motions: Vec<DictEntry>,
}

fn scan_dir(kind: &'static str, dir: &Path, suffixes: &[&str]) -> Result<Vec<DictEntry>, ConfigError> {
    let read = fs::read_dir(dir).map_err(|source| ConfigError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::new();
    for entry in read {
        let entry = entry.map_err(|source| ConfigError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let lower = name.to_ascii_lowercase();
        if let Some(suffix) = suffixes.iter().find(|s| lower.ends_with(*s)) {
            let id = name[..name.len() - suffix.len()].to_string();
            if !id.is_empty() {
                entries.push(DictEntry { id, path });
            }
        }
    }
    if entries.is_empty() {
        return Err(ConfigError::EmptyDictionary {
            kind,
            path: dir.to_path_buf(),
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(pair) = entries.windows(2).find(|p| p[0].id == p[1].id) {
        return Err(ConfigError::Invalid(format!(
            "{kind} id {:?} is ambiguous in {}",
            pair[0].id,
            dir.display()
        )));
    }
    Ok(entries)
}

impl Catalog {
    pub fn scan(dicts: &Dictionaries) -> Result<Self, ConfigError> {
        Ok(Self {
            assets: scan_dir("asset", &dicts.assets, &[".gsa"])?,
            backgrounds: scan_dir("background", &dicts.backgrounds, &[".png", ".jpg", ".jpeg"])?,
            motions: scan_dir("motion", &dicts.motions, &[".motion.json"])?,
        })
    }
}

/// The draws behind one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub clip_index: u64,
    pub clip_id: String,
    pub asset: DictEntry,
    pub background: DictEntry,
    pub motion: DictEntry,
    /// Orbit camera for the clip; explicit cameras in the motion file win.
    pub camera: Camera,
}

fn draw(entries: &[DictEntry], seed: u64, tag: u64, index: u64) -> Result<&DictEntry, ConfigError> {
    if entries.is_empty() {
        return Err(ConfigError::Invalid("cannot sample from an empty dictionary".into()));
    }
    let i = CounterRng::keyed(seed, tag, index).below(entries.len() as u64);
    Ok(&entries[i as usize])
}

pub fn clip_id(sport: &str, clip_index: u64) -> String {
    format!("{sport}_{clip_index:06}")
}

/// Independent uniform draws keyed on `(seed, clip_index)`; the motion draw is
/// keyed on `clip_index / cameras_per_motion`.
pub fn sample_scene(config: &RunConfig, catalog: &Catalog, clip_index: u64) -> Result<SceneSpec, ConfigError> {
    let seed = config.seed;
    let motion_slot = clip_index / config.cameras_per_motion.max(1) as u64;
    Ok(SceneSpec {
        clip_index,
        clip_id: clip_id(&config.sport, clip_index),
        asset: draw(&catalog.assets, seed, tag::ASSET, clip_index)?.clone(),
        background: draw(&catalog.backgrounds, seed, tag::BACKGROUND, clip_index)?.clone(),
        motion: draw(&catalog.motions, seed, tag::MOTION, motion_slot)?.clone(),
        camera: sample_frame_camera(&config.orbit_spec(), &config.render.lens(), clip_index, 0)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipTiming {
    pub clip_id: String,
    pub frames: usize,
    pub seconds: f64,
    pub ok: bool,
}

/// Run telemetry; timings vary between runs, unlike everything else written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: RunConfig,
    pub workers: usize,
    pub total_seconds: f64,
    pub frames_per_second: f64,
    pub clips: Vec<ClipTiming>,
    pub failed_clips: Vec<FailedClip>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: DatasetManifest,
    pub summary: SplitTable,
    pub log: RunLog,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        !self.manifest.failed_clips.is_empty()
    }
}

/// Inputs shared read-only by all clips. Loading failures are kept per id so
/// that only the clips using a broken file fail.
struct Inputs {
    assets: BTreeMap<String, Result<GaussianAsset, String>>,
    motions: BTreeMap<String, Result<MotionSequence, String>>,
    backgrounds: BTreeMap<String, Result<BackgroundImage, String>>,
}

fn load_inputs(scenes: &[SceneSpec], config: &RunConfig) -> Inputs {
    fn unique<'a>(it: impl Iterator<Item = &'a DictEntry>) -> Vec<&'a DictEntry> {
        let mut seen = BTreeSet::new();
        it.filter(|e| seen.insert(e.id.clone())).collect()
    }
    let (w, h) = (config.render.width as usize, config.render.height as usize);
    let assets = unique(scenes.iter().map(|s| &s.asset))
        .par_iter()
        .map(|e| (e.id.clone(), load_asset(&e.path).map_err(|err| err.to_string())))
        .collect();
    let motions = unique(scenes.iter().map(|s| &s.motion))
        .par_iter()
        .map(|e| (e.id.clone(), load_motion(&e.path).map_err(|err| err.to_string())))
        .collect();
    let backgrounds = unique(scenes.iter().map(|s| &s.background))
        .par_iter()
        .map(|e| {
            let bg = BackgroundImage::load(&e.path, w, h).map(|mut b| {
                b.source_id = e.id.clone();
                b
            });
            (e.id.clone(), bg.map_err(|err| err.to_string()))
        })
        .collect();
    Inputs {
        assets,
        motions,
        backgrounds,
    }
}

struct ClipResult {
    entry: ClipEntry,
    records: Vec<AnnotationRecord>,
}

fn frame_error(frame: usize) -> impl Fn(String) -> ClipError {
    move |message| ClipError::Frame { frame, message }
}

fn render_clip(
    scene: &SceneSpec,
    config: &RunConfig,
    inputs: &Inputs,
    writer: &DatasetWriter,
) -> Result<ClipResult, ClipError> {
    let lookup_err = |m: &String| m.clone();
    let asset = inputs.assets[&scene.asset.id].as_ref().map_err(|m| ClipError::Asset {
        id: scene.asset.id.clone(),
        source: AssetError::Format(lookup_err(m)),
    })?;
    let motion = inputs.motions[&scene.motion.id]
        .as_ref()
        .map_err(|m| ClipError::Motion {
            id: scene.motion.id.clone(),
            source: KinematicsError::Format(lookup_err(m)),
        })?;
    let background = inputs.backgrounds[&scene.background.id]
        .as_ref()
        .map_err(|m| ClipError::Background {
            id: scene.background.id.clone(),
            source: CompositionError::Image {
                path: scene.background.path.clone(),
                message: lookup_err(m),
            },
        })?;
    motion
        .validate(asset.num_joints())
        .map_err(|source| ClipError::Motion {
            id: scene.motion.id.clone(),
            source,
        })?;

    let subject = scene.asset.id.clone();
    let split = config.splits.split_of(&subject);
    let frame_count = config
        .max_frames_per_clip
        .map_or(motion.frames.len(), |m| m.min(motion.frames.len()));
    let orbit = config.orbit_spec();
    let lens = config.render.lens();
    let settings = config.render.settings();

    let frames: Vec<EmittedFrame> = (0..frame_count)
        .into_par_iter()
        .map(|f| -> Result<EmittedFrame, ClipError> {
            let err = frame_error(f);
            let mframe = &motion.frames[f];
            let camera = match motion.camera_for(f) {
                Some(c) => c.clone(),
                None if orbit.jitter_deg > 0.0 => {
                    sample_frame_camera(&orbit, &lens, scene.clip_index, f as u64).map_err(|e| err(e.to_string()))?
                }
                None => scene.camera.clone(),
            };
            if camera.width != config.render.width || camera.height != config.render.height {
                return Err(err(format!(
                    "explicit camera is {}x{} but the render target is {}x{}",
                    camera.width, camera.height, config.render.width, config.render.height
                )));
            }
            let transforms = forward_kinematics(&asset.skeleton, &mframe.pose).map_err(|e| err(e.to_string()))?;
            let deformed = lbs_deform(asset, &transforms).map_err(|e| err(e.to_string()))?;
            let render = render_with(&deformed, &camera, &settings)?;
            let image = composite(&render, background).map_err(|e| err(e.to_string()))?;
            let joints = project_joint_keypoints(&transforms, &asset.skeleton, &camera);
            let bbox =
                mask_bbox(&render.alpha, render.width, render.height, BBOX_THRESHOLD, BBOX_PAD).unwrap_or([0.0; 4]);
            let record = AnnotationRecord {
                image_id: scene.clip_index * IMAGE_ID_STRIDE + f as u64,
                clip_id: scene.clip_id.clone(),
                frame_index: f,
                file_name: String::new(),
                width: camera.width,
                height: camera.height,
                keypoints: joints.keypoints.to_flat(),
                bbox,
                camera,
                pose: mframe.pose.clone(),
                smplx: mframe.smplx.clone(),
                joints_3d: joints.joints_3d,
                keypoint_source: KeypointSource::ProjectedJoints,
            };
            Ok(EmittedFrame {
                image,
                mask: config.write_masks.then_some(render.alpha),
                record,
            })
        })
        .collect::<Result<_, _>>()?;

    let meta = ClipMeta {
        clip_id: scene.clip_id.clone(),
        sport: config.sport.clone(),
        subject_id: subject,
        asset_id: scene.asset.id.clone(),
        motion_id: scene.motion.id.clone(),
        background_id: scene.background.id.clone(),
        camera: motion
            .camera
            .clone()
            .or_else(|| (orbit.jitter_deg == 0.0).then(|| scene.camera.clone())),
        fps: motion.fps(),
        split,
    };
    let records: Vec<AnnotationRecord> = frames.iter().map(|f| f.record.clone()).collect();
    let entry = writer.emit_clip(frames, &meta)?;
    let records = records
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            r.file_name = format!("images/{}/{}", meta.clip_id, crate::dataset::frame_file_name(i));
            r
        })
        .collect();
    Ok(ClipResult { entry, records })
}

/// Validates the config and scans the dictionaries without rendering.
pub fn prepare(config: &RunConfig) -> Result<(Catalog, Vec<SceneSpec>), ConfigError> {
    config.validate()?;
    let catalog = Catalog::scan(&config.dictionaries)?;
    let scenes = (0..config.clips as u64)
        .map(|i| sample_scene(config, &catalog, i))
        .collect::<Result<_, _>>()?;
    Ok((catalog, scenes))
}

/// Generates the dataset described by `config`.
///
/// Clip failures are recorded in the manifest and do not stop the run. All
/// outputs other than the run log are identical for any worker count.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let (_, scenes) = prepare(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let workers = pool.current_num_threads();
    let writer = DatasetWriter::new(&config.output_dir)?;
    let started = Instant::now();

    let results: Vec<(ClipTiming, Result<ClipResult, String>)> = pool.install(|| {
        let inputs = load_inputs(&scenes, config);
        scenes
            .par_iter()
            .map(|scene| {
                let t0 = Instant::now();
                let result = render_clip(scene, config, &inputs, &writer).map_err(|e| e.to_string());
                let seconds = t0.elapsed().as_secs_f64();
                let frames = result.as_ref().map_or(0, |r| r.entry.frame_count);
                match &result {
                    Ok(_) => eprintln!(
                        "clip {}: {frames} frames in {seconds:.2} s ({:.1} fps)",
                        scene.clip_id,
                        frames as f64 / seconds.max(1e-9)
                    ),
                    Err(e) => log::error!("clip {} failed: {e}", scene.clip_id),
                }
                let timing = ClipTiming {
                    clip_id: scene.clip_id.clone(),
                    frames,
                    seconds,
                    ok: result.is_ok(),
                };
                (timing, result)
            })
            .collect()
    });

    let mut entries = Vec::new();
    let mut failed = Vec::new();
    let mut by_split: BTreeMap<Split, Vec<AnnotationRecord>> = Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
    let mut timings = Vec::new();
    for (timing, result) in results {
        match result {
            Ok(clip) => {
                by_split.get_mut(&clip.entry.meta.split).unwrap().extend(clip.records);
                entries.push(clip.entry);
            }
            Err(error) => failed.push(FailedClip {
                clip_id: timing.clip_id.clone(),
                error,
            }),
        }
        timings.push(timing);
    }

    let manifest = DatasetManifest::assemble(entries, failed)?;
    for (split, records) in &by_split {
        write_coco_wb(records, writer.root().join("annotations").join(format!("{split}.json")))?;
    }
    manifest.save(writer.root().join(MANIFEST_FILE))?;

    let total_seconds = started.elapsed().as_secs_f64();
    let log = RunLog {
        config: config.clone(),
        workers,
        total_seconds,
        frames_per_second: manifest.totals.frames as f64 / total_seconds.max(1e-9),
        clips: timings,
        failed_clips: manifest.failed_clips.clone(),
    };
    let log_path = writer.root().join(RUN_LOG_FILE);
    let text = serde_json::to_string_pretty(&log).expect("run log serializes");
    fs::write(&log_path, text).map_err(|source| DatasetError::Io { path: log_path, source })?;

    Ok(RunOutcome {
        summary: summarize_dataset(&manifest),
        manifest,
        log,
    })
}
