//! Dataset layout, manifests and COCO-WholeBody style annotation files.
//!
//! ```text
//! <out>/manifest.json
//! <out>/annotations/{train,valid}.json      COCO-style, one file per split
//! <out>/annotations/clips/<clip_id>.json    per-clip AnnotationRecord list
//! <out>/images/<clip_id>/frame_000000.png
//! <out>/masks/<clip_id>/frame_000000.png    optional coverage masks
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{KEYPOINT_NAMES, KEYPOINT_SKELETON, NUM_KEYPOINTS};
use crate::camera::Camera;
use crate::composition::{save_gray_png, CompositionError, RgbImage};
use crate::kinematics::PoseFrame;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Image(#[from] CompositionError),
    #[error("clip id {0:?} was already emitted")]
    DuplicateClip(String),
    #[error("clip {0:?} has no frames")]
    EmptyClip(String),
    #[error("subject {0:?} appears in both train and valid splits")]
    SplitLeakage(String),
    #[error("inconsistent annotation records: {0}")]
    Inconsistent(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Valid];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which path produced a record's 2D keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointSource {
    /// Posed skeleton joints projected through the render camera.
    #[default]
    ProjectedJoints,
    /// Externally supplied keypoints re-framed into the render.
    Transformed,
}

/// Everything known about one clip before its frames are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub sport: String,
    pub subject_id: String,
    pub asset_id: String,
    pub motion_id: String,
    pub background_id: String,
    pub camera: Option<Camera>,
    pub fps: f64,
    pub split: Split,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    #[serde(flatten)]
    pub meta: ClipMeta,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedClip {
    pub clip_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub subjects: usize,
    pub clips: usize,
    pub frames: usize,
    pub play_time_min: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub clips: Vec<ClipEntry>,
    #[serde(default)]
    pub failed_clips: Vec<FailedClip>,
    #[serde(default)]
    pub totals: Totals,
}

impl DatasetManifest {
    /// Sorts clips by id and checks ids are unique and splits subject-disjoint.
    pub fn assemble(mut clips: Vec<ClipEntry>, mut failed_clips: Vec<FailedClip>) -> Result<Self, DatasetError> {
        clips.sort_by(|a, b| a.meta.clip_id.cmp(&b.meta.clip_id));
        failed_clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        for pair in clips.windows(2) {
            if pair[0].meta.clip_id == pair[1].meta.clip_id {
                return Err(DatasetError::DuplicateClip(pair[0].meta.clip_id.clone()));
            }
        }
        check_subject_disjoint(&clips)?;
        let mut manifest = Self {
            clips,
            failed_clips,
            totals: Totals::default(),
        };
        manifest.totals = manifest.compute_totals();
        Ok(manifest)
    }

    pub fn compute_totals(&self) -> Totals {
        let subjects: BTreeSet<&str> = self.clips.iter().map(|c| c.meta.subject_id.as_str()).collect();
        Totals {
            subjects: subjects.len(),
            clips: self.clips.len(),
            frames: self.clips.iter().map(|c| c.frame_count).sum(),
            play_time_min: self.clips.iter().map(play_time_min).sum(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        write_json(path.as_ref(), self, true)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        read_json(path.as_ref())
    }
}

fn play_time_min(c: &ClipEntry) -> f64 {
    c.frame_count as f64 / c.meta.fps / 60.0
}

pub fn check_subject_disjoint(clips: &[ClipEntry]) -> Result<(), DatasetError> {
    let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
    for c in clips {
        match seen.insert(&c.meta.subject_id, c.meta.split) {
            Some(prev) if prev != c.meta.split => return Err(DatasetError::SplitLeakage(c.meta.subject_id.clone())),
            _ => {}
        }
    }
    Ok(())
}

/// Per-frame annotation, also the unit written to per-clip record files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: u64,
    pub clip_id: String,
    pub frame_index: usize,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    /// `[x, y, v] x 23`.
    pub keypoints: Vec<f64>,
    /// `[x, y, w, h]`, pixels.
    pub bbox: [f64; 4],
    pub camera: Camera,
    pub pose: PoseFrame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smplx: Option<serde_json::Value>,
    /// World-space joint positions behind each keypoint slot, meters.
    pub joints_3d: Vec<[f64; 3]>,
    #[serde(default)]
    pub keypoint_source: KeypointSource,
}

pub fn frame_file_name(frame_index: usize) -> String {
    format!("frame_{frame_index:06}.png")
}

/// One rendered frame handed to [`DatasetWriter::emit_clip`].
#[derive(Debug, Clone)]
pub struct EmittedFrame {
    pub image: RgbImage,
    pub mask: Option<Vec<f64>>,
    pub record: AnnotationRecord,
}

/// Writes clips under a dataset root. Safe to share across threads.
#[derive(Debug)]
pub struct DatasetWriter {
    root: PathBuf,
    emitted: Mutex<BTreeSet<String>>,
}

impl DatasetWriter {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            emitted: Mutex::new(BTreeSet::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn clip_records_path(&self, clip_id: &str) -> PathBuf {
        self.root
            .join("annotations")
            .join("clips")
            .join(format!("{clip_id}.json"))
    }

    /// Writes a clip's images, optional masks and annotation records.
    ///
    /// Each record's `file_name` is set to the image path relative to the root.
    pub fn emit_clip(&self, frames: Vec<EmittedFrame>, meta: &ClipMeta) -> Result<ClipEntry, DatasetError> {
        if frames.is_empty() {
            return Err(DatasetError::EmptyClip(meta.clip_id.clone()));
        }
        if !self.emitted.lock().unwrap().insert(meta.clip_id.clone()) {
            return Err(DatasetError::DuplicateClip(meta.clip_id.clone()));
        }
        let image_dir = self.root.join("images").join(&meta.clip_id);
        fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
        let mask_dir = self.root.join("masks").join(&meta.clip_id);
        if frames.iter().any(|f| f.mask.is_some()) {
            fs::create_dir_all(&mask_dir).map_err(io_err(&mask_dir))?;
        }

        let frame_count = frames.len();
        let mut records = Vec::with_capacity(frame_count);
        for (i, frame) in frames.into_iter().enumerate() {
            let name = frame_file_name(i);
            frame.image.save_png(image_dir.join(&name))?;
            if let Some(mask) = &frame.mask {
                save_gray_png(mask_dir.join(&name), frame.image.width, frame.image.height, mask)?;
            }
            let mut record = frame.record;
            record.file_name = format!("images/{}/{name}", meta.clip_id);
            records.push(record);
        }
        let path = self.clip_records_path(&meta.clip_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        write_json(&path, &records, false)?;
        Ok(ClipEntry {
            meta: meta.clone(),
            frame_count,
        })
    }

    pub fn load_clip_records(&self, clip_id: &str) -> Result<Vec<AnnotationRecord>, DatasetError> {
        read_json(&self.clip_records_path(clip_id))
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T, pretty: bool) -> Result<(), DatasetError> {
    let mut bytes = if pretty {
        serde_json::to_vec_pretty(value)
    } else {
        serde_json::to_vec(value)
    }
    .map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoInfo {
    pub description: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    #[serde(default = "person_category")]
    pub category_id: u32,
    pub keypoints: Vec<f64>,
    #[serde(default)]
    pub num_keypoints: usize,
    #[serde(default)]
    pub bbox: [f64; 4],
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints_3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smplx: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoint_source: Option<KeypointSource>,
}

fn person_category() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
    pub supercategory: String,
    pub keypoints: Vec<String>,
    /// 1-based keypoint index pairs, as in COCO.
    pub skeleton: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<CocoInfo>,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

pub fn person_category_def() -> CocoCategory {
    CocoCategory {
        id: 1,
        name: "person".into(),
        supercategory: "person".into(),
        keypoints: KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        skeleton: KEYPOINT_SKELETON.iter().map(|[a, b]| [a + 1, b + 1]).collect(),
    }
}

/// Assembles a COCO-style document, ordered by image id.
pub fn build_coco(records: &[AnnotationRecord]) -> Result<CocoFile, DatasetError> {
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.image_id);
    for pair in sorted.windows(2) {
        if pair[0].image_id == pair[1].image_id {
            return Err(DatasetError::Inconsistent(format!(
                "duplicate image id {}",
                pair[0].image_id
            )));
        }
    }
    let mut images = Vec::with_capacity(sorted.len());
    let mut annotations = Vec::with_capacity(sorted.len());
    for r in sorted {
        if r.keypoints.len() != NUM_KEYPOINTS * 3 {
            return Err(DatasetError::Inconsistent(format!(
                "image {} has {} keypoint values",
                r.image_id,
                r.keypoints.len()
            )));
        }
        if r.width == 0 || r.height == 0 || r.camera.width != r.width || r.camera.height != r.height {
            return Err(DatasetError::Inconsistent(format!(
                "image {} is {}x{} but its camera is {}x{}",
                r.image_id, r.width, r.height, r.camera.width, r.camera.height
            )));
        }
        images.push(CocoImage {
            id: r.image_id,
            file_name: r.file_name.clone(),
            width: r.width,
            height: r.height,
            clip_id: Some(r.clip_id.clone()),
            frame_index: Some(r.frame_index),
        });
        annotations.push(CocoAnnotation {
            id: r.image_id,
            image_id: r.image_id,
            category_id: 1,
            keypoints: r.keypoints.clone(),
            num_keypoints: r.keypoints.chunks_exact(3).filter(|k| k[2] > 0.0).count(),
            bbox: r.bbox,
            area: r.bbox[2] * r.bbox[3],
            iscrowd: 0,
            joints_3d: Some(r.joints_3d.clone()),
            camera: Some(r.camera.clone()),
            pose: Some(r.pose.clone()),
            smplx: r.smplx.clone(),
            keypoint_source: Some(r.keypoint_source),
        });
    }
    Ok(CocoFile {
        info: Some(CocoInfo {
            description: "synthetic avatar pose dataset".into(),
            version: "1.0".into(),
        }),
        images,
        annotations,
        categories: vec![person_category_def()],
    })
}

pub fn write_coco_wb(records: &[AnnotationRecord], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let doc = build_coco(records)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_json(path, &doc, false)
}

pub fn read_coco(path: impl AsRef<Path>) -> Result<CocoFile, DatasetError> {
    read_json(path.as_ref())
}

/// One row of a split summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sport: String,
    pub split: Option<Split>,
    pub subjects: usize,
    pub clips: usize,
    pub frames: usize,
    pub play_time_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub rows: Vec<SummaryRow>,
    pub total: SummaryRow,
}

/// Per sport x split counts. Play time is `frames / fps / 60` per clip,
/// summed; the total row is the column-wise sum of the rows.
pub fn summarize_dataset(manifest: &DatasetManifest) -> SplitTable {
    let mut groups: BTreeMap<(&str, Split), (BTreeSet<&str>, usize, usize, f64)> = BTreeMap::new();
    for c in &manifest.clips {
        let g = groups.entry((&c.meta.sport, c.meta.split)).or_default();
        g.0.insert(&c.meta.subject_id);
        g.1 += 1;
        g.2 += c.frame_count;
        g.3 += play_time_min(c);
    }
    let rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((sport, split), (subjects, clips, frames, minutes))| SummaryRow {
            sport: sport.to_string(),
            split: Some(split),
            subjects: subjects.len(),
            clips,
            frames,
            play_time_min: minutes,
        })
        .collect();
    let mut total = SummaryRow {
        sport: "total".into(),
        split: None,
        subjects: 0,
        clips: 0,
        frames: 0,
        play_time_min: 0.0,
    };
    for r in &rows {
        total.subjects += r.subjects;
        total.clips += r.clips;
        total.frames += r.frames;
        total.play_time_min += r.play_time_min;
    }
    SplitTable { rows, total }
}

impl fmt::Display for SplitTable {
    /// Play time is shown in minutes with one decimal.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:<6} {:>9} {:>9} {:>11} {:>11}",
            "sport", "split", "subjects", "clips", "frames", "play (min)"
        )?;
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            writeln!(
                f,
                "{:<14} {:<6} {:>9} {:>9} {:>11} {:>11.1}",
                r.sport,
                r.split.map_or("-", Split::as_str),
                r.subjects,
                r.clips,
                r.frames,
                r.play_time_min
            )?;
        }
        Ok(())
    }
}
