//! Self-contained sample inputs: procedural avatars, gradient backgrounds,
//! a simple swing motion and a matching run config.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::assets::{procedural_test_asset_with_degree, save_asset, AssetError, ProceduralError, Skeleton};
use crate::composition::{CompositionError, RgbImage};
use crate::kinematics::{save_motion, KinematicsError, MotionFrame, MotionSequence, PoseFrame};
use crate::pipeline::{Dictionaries, RenderConfig, RunConfig, SplitPlan};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Procedural(#[from] ProceduralError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error(transparent)]
    Motion(#[from] KinematicsError),
    #[error(transparent)]
    Image(#[from] CompositionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOptions {
    pub subjects: usize,
    pub gaussians_per_subject: usize,
    pub sh_degree: u8,
    pub motions: usize,
    pub frames_per_motion: usize,
    pub backgrounds: usize,
    pub clips: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            subjects: 4,
            gaussians_per_subject: 6000,
            sh_degree: 1,
            motions: 2,
            frames_per_motion: 8,
            backgrounds: 3,
            clips: 8,
            width: 256,
            height: 256,
            seed: 1,
        }
    }
}

fn axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let (s, c) = (0.5 * angle).sin_cos();
    [c, axis[0] * s, axis[1] * s, axis[2] * s]
}

/// A bat-swing-like motion for [`Skeleton::humanoid`]: the torso twists about
/// +y while both arms raise and sweep forward. `variant` shifts the phase.
pub fn swing_motion(frames: usize, variant: usize) -> MotionSequence {
    let skeleton = Skeleton::humanoid();
    let j = |name: &str| skeleton.joint_index(name).expect("humanoid joint");
    let phase = 0.35 * variant as f64;
    let frames = (0..frames)
        .map(|f| {
            let t = if frames > 1 {
                f as f64 / (frames - 1) as f64
            } else {
                0.0
            };
            let mut pose = PoseFrame::identity(skeleton.len());
            let twist = -0.9 + 1.8 * t + phase;
            pose.joint_rotations[j("spine")] = axis_angle([0.0, 1.0, 0.0], twist);
            pose.joint_rotations[j("left_shoulder")] = axis_angle([1.0, 0.0, 0.0], -1.2 - 0.2 * t);
            pose.joint_rotations[j("right_shoulder")] = axis_angle([1.0, 0.0, 0.0], -1.3 - 0.2 * t);
            pose.joint_rotations[j("left_elbow")] = axis_angle([1.0, 0.0, 0.0], -0.4 * (1.0 - t));
            pose.joint_rotations[j("right_elbow")] = axis_angle([1.0, 0.0, 0.0], -0.5 * (1.0 - t));
            pose.joint_rotations[j("left_knee")] = axis_angle([1.0, 0.0, 0.0], 0.25);
            pose.joint_rotations[j("right_knee")] = axis_angle([1.0, 0.0, 0.0], 0.25 + 0.2 * t);
            pose.root_translation = [0.0, -0.03, 0.1 * t];
            pose.root_rotation = axis_angle([0.0, 1.0, 0.0], 0.4 * t);
            MotionFrame {
                pose,
                camera: None,
                smplx: None,
            }
        })
        .collect();
    MotionSequence {
        fps: Some(30.0),
        camera: None,
        frames,
    }
}

fn gradient_background(width: usize, height: usize, index: usize) -> RgbImage {
    let tints = [
        [0.35, 0.55, 0.30],
        [0.55, 0.45, 0.35],
        [0.30, 0.40, 0.60],
        [0.50, 0.50, 0.50],
    ];
    let tint = tints[index % tints.len()];
    let mut img = RgbImage::filled(width, height, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let v = y as f64 / height.max(2) as f64;
            let stripe = if (x / 16 + index).is_multiple_of(2) { 0.05 } else { 0.0 };
            let i = (y * width + x) * 3;
            for c in 0..3 {
                img.data[i + c] = (tint[c] * (0.6 + 0.6 * v) + stripe).clamp(0.0, 1.0);
            }
        }
    }
    img
}

fn create_dir(path: &Path) -> Result<(), DemoError> {
    fs::create_dir_all(path).map_err(|source| DemoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `assets/`, `backgrounds/`, `motions/` and `config.toml` under
/// `dir` and returns the config path. The last subject is assigned to the
/// valid split.
pub fn write_demo_inputs(dir: impl AsRef<Path>, opts: &DemoOptions) -> Result<PathBuf, DemoError> {
    let dir = dir.as_ref();
    let dicts = Dictionaries {
        assets: PathBuf::from("assets"),
        backgrounds: PathBuf::from("backgrounds"),
        motions: PathBuf::from("motions"),
    };
    for sub in [&dicts.assets, &dicts.backgrounds, &dicts.motions] {
        create_dir(&dir.join(sub))?;
    }
    let skeleton = Skeleton::humanoid();
    let mut subjects = Vec::new();
    for s in 0..opts.subjects {
        let asset = procedural_test_asset_with_degree(
            opts.gaussians_per_subject,
            &skeleton,
            opts.seed.wrapping_add(s as u64),
            opts.sh_degree,
        )?;
        let id = format!("subject_{s:02}");
        save_asset(&asset, dir.join(&dicts.assets).join(format!("{id}.gsa")))?;
        subjects.push(id);
    }
    for m in 0..opts.motions {
        let motion = swing_motion(opts.frames_per_motion, m);
        save_motion(
            &motion,
            dir.join(&dicts.motions).join(format!("swing_{m:02}.motion.json")),
        )?;
    }
    for b in 0..opts.backgrounds {
        let img = gradient_background(opts.width as usize, opts.height as usize, b);
        img.save_png(dir.join(&dicts.backgrounds).join(format!("field_{b:02}.png")))?;
    }

    let valid = subjects.len().checked_sub(1).filter(|_| subjects.len() > 1);
    let config = RunConfig {
        sport: "baseball".into(),
        seed: opts.seed,
        clips: opts.clips,
        cameras_per_motion: 4,
        workers: 0,
        output_dir: PathBuf::from("dataset"),
        write_masks: true,
        max_frames_per_clip: None,
        dictionaries: dicts,
        render: RenderConfig {
            width: opts.width,
            height: opts.height,
            ..RenderConfig::default()
        },
        orbit: Default::default(),
        splits: SplitPlan {
            train: subjects[..valid.unwrap_or(subjects.len())].to_vec(),
            valid: valid.map(|v| vec![subjects[v].clone()]).unwrap_or_default(),
        },
    };
    let path = dir.join("config.toml");
    fs::write(&path, config.to_toml_string()).map_err(|source| DemoError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
