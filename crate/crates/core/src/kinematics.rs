//! Forward kinematics and linear blend skinning of Gaussian avatars.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{GaussianAsset, Skeleton, QUATERNION_TOLERANCE};
use crate::camera::Camera;

/// Frames per second assumed when a motion file does not say.
pub const DEFAULT_FPS: f64 = 30.0;

/// Below this many Gaussians, deformation runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 4096;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("pose has {found} joint rotations, skeleton has {expected} joints")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{what} quaternion has norm {norm}, expected 1")]
    NonUnitQuaternion { what: String, norm: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("transform {0} is not affine (bottom row must be 0 0 0 1)")]
    NotAffine(usize),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed motion file: {0}")]
    Format(String),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<KinematicsError>,
    },
}

/// Per-frame skeleton pose: local joint rotations relative to rest plus the
/// root placement. Quaternions are `[w, x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub joint_rotations: Vec<[f64; 4]>,
    pub root_translation: [f64; 3],
    pub root_rotation: [f64; 4],
}

impl PoseFrame {
    pub fn identity(joints: usize) -> Self {
        Self {
            joint_rotations: vec![[1.0, 0.0, 0.0, 0.0]; joints],
            root_translation: [0.0; 3],
            root_rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self, joints: usize) -> Result<(), KinematicsError> {
        if self.joint_rotations.len() != joints {
            return Err(KinematicsError::DimensionMismatch {
                expected: joints,
                found: self.joint_rotations.len(),
            });
        }
        if self.root_translation.iter().any(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFinite("root translation".into()));
        }
        check_quaternion(&self.root_rotation, || "root".into())?;
        for (j, q) in self.joint_rotations.iter().enumerate() {
            check_quaternion(q, || format!("joint {j}"))?;
        }
        Ok(())
    }
}

fn check_quaternion(q: &[f64; 4], what: impl FnOnce() -> String) -> Result<(), KinematicsError> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(KinematicsError::NonFinite(what()));
    }
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(KinematicsError::NonUnitQuaternion { what: what(), norm });
    }
    Ok(())
}

/// Hamilton quaternion `[w, x, y, z]` to a rotation matrix.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

/// An affine map `x -> linear * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    pub fn rotation(q: [f64; 4]) -> Self {
        Self {
            linear: quaternion_to_matrix(q),
            translation: Vector3::zeros(),
        }
    }

    /// `self ∘ other`.
    pub fn then_apply(&self, other: &Affine) -> Affine {
        Affine {
            linear: self.linear * other.linear,
            translation: self.linear * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.linear);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Option<Affine> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        (bottom == [0.0, 0.0, 0.0, 1.0]).then(|| Affine {
            linear: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }
}

/// Per-joint maps from canonical (rest) space to posed space.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransforms {
    pub transforms: Vec<Affine>,
}

impl JointTransforms {
    pub fn identity(joints: usize) -> Self {
        Self {
            transforms: vec![Affine::identity(); joints],
        }
    }

    pub fn from_matrices(matrices: &[Matrix4<f64>]) -> Result<Self, KinematicsError> {
        let transforms = matrices
            .iter()
            .enumerate()
            .map(|(j, m)| Affine::from_matrix(m).ok_or(KinematicsError::NotAffine(j)))
            .collect::<Result<_, _>>()?;
        Ok(Self { transforms })
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn matrices(&self) -> Vec<Matrix4<f64>> {
        self.transforms.iter().map(Affine::to_matrix).collect()
    }

    /// True when every linear block is orthonormal with determinant +1 within `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        self.transforms.iter().all(|t| {
            let gram = t.linear.transpose() * t.linear;
            (gram - Matrix3::identity()).amax() <= tol && (t.linear.determinant() - 1.0).abs() <= tol
        })
    }

    /// Posed joint positions: each transform applied to its rest position.
    pub fn posed_joints(&self, skeleton: &Skeleton) -> Vec<[f64; 3]> {
        skeleton
            .rest_positions()
            .iter()
            .zip(&self.transforms)
            .map(|(r, t)| t.apply(&Vector3::from(*r)).into())
            .collect()
    }

    /// Pre-composes every transform with `g`, i.e. `{g ∘ T_j}`.
    pub fn compose_global(&self, g: &Affine) -> Self {
        Self {
            transforms: self.transforms.iter().map(|t| g.then_apply(t)).collect(),
        }
    }
}

/// Forward kinematics. Joint `j` gets `G_j ∘ B_j⁻¹`, where `G_j` is its posed
/// global frame and `B_j` the translation to its rest position, so the
/// identity pose yields identity transforms.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &PoseFrame) -> Result<JointTransforms, KinematicsError> {
    pose.validate(skeleton.len())?;
    let rest = skeleton.rest_positions();
    let mut global = vec![Affine::identity(); skeleton.len()];
    for j in skeleton.topological_order() {
        let joint = &skeleton.joints[j];
        let local = Affine::translation(joint.offset).then_apply(&Affine::rotation(pose.joint_rotations[j]));
        global[j] = match joint.parent {
            Some(p) => global[p].then_apply(&local),
            None => Affine::translation(pose.root_translation)
                .then_apply(&Affine::rotation(pose.root_rotation))
                .then_apply(&local),
        };
    }
    let transforms = global
        .iter()
        .zip(&rest)
        .map(|(g, r)| g.then_apply(&Affine::translation([-r[0], -r[1], -r[2]])))
        .collect();
    Ok(JointTransforms { transforms })
}

/// One Gaussian after skinning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosedGaussian {
    pub centroid: Vector3<f64>,
    /// Blended linear part `A = Σ_j w_j R_j`.
    pub linear_map: Matrix3<f64>,
    /// `A Σ Aᵀ` where `Σ` is the canonical covariance built from rotation and scale.
    pub covariance: Matrix3<f64>,
}

/// Skinned Gaussians. Opacity and SH features are read from the source asset.
#[derive(Debug, Clone)]
pub struct DeformedGaussians<'a> {
    pub asset: &'a GaussianAsset,
    pub posed: Vec<PosedGaussian>,
}

impl DeformedGaussians<'_> {
    pub fn len(&self) -> usize {
        self.posed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posed.is_empty()
    }

    pub fn opacity(&self, i: usize) -> f32 {
        self.asset.gaussians[i].opacity
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.asset.gaussians[i].features
    }
}

/// Canonical covariance `R S² Rᵀ` of a Gaussian.
pub fn canonical_covariance(rotation: [f32; 4], scale: [f32; 3]) -> Matrix3<f64> {
    let r = quaternion_to_matrix(rotation.map(f64::from));
    let s2 = Matrix3::from_diagonal(&Vector3::from(scale.map(|s| f64::from(s) * f64::from(s))));
    r * s2 * r.transpose()
}

/// Linear blend skinning.
///
/// Centroids are blended as `p + Σ_j w_j (T_j p − p)`, which equals the
/// weighted sum `Σ_j w_j T_j p` whenever the weights sum to one and leaves
/// the centroid bit-for-bit unchanged under identity transforms. The blended
/// linear part is formed the same way and applied to the covariance.
pub fn lbs_deform<'a>(
    asset: &'a GaussianAsset,
    transforms: &JointTransforms,
) -> Result<DeformedGaussians<'a>, KinematicsError> {
    if transforms.len() != asset.num_joints() {
        return Err(KinematicsError::DimensionMismatch {
            expected: asset.num_joints(),
            found: transforms.len(),
        });
    }
    let deform = |i: usize| {
        let g = &asset.gaussians[i];
        let p = Vector3::from(g.position.map(f64::from));
        let mut centroid = p;
        let mut linear = Matrix3::identity();
        for &(j, w) in &asset.skinning[i] {
            let t = &transforms.transforms[j as usize];
            let w = f64::from(w);
            centroid += (t.apply(&p) - p) * w;
            linear += (t.linear - Matrix3::identity()) * w;
        }
        let cov = canonical_covariance(g.rotation, g.scale);
        PosedGaussian {
            centroid,
            linear_map: linear,
            covariance: linear * cov * linear.transpose(),
        }
    };
    let posed = if asset.len() >= PARALLEL_THRESHOLD {
        (0..asset.len()).into_par_iter().map(deform).collect()
    } else {
        (0..asset.len()).map(deform).collect()
    };
    Ok(DeformedGaussians { asset, posed })
}

/// One frame of a motion file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFrame {
    #[serde(flatten)]
    pub pose: PoseFrame,
    /// Explicit camera for this frame; overrides the sequence camera.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    /// Body-model parameters passed through to annotations untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smplx: Option<serde_json::Value>,
}

/// Contents of a `.motion.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    /// Explicit camera for the whole sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    pub frames: Vec<MotionFrame>,
}

impl MotionSequence {
    pub fn fps(&self) -> f64 {
        self.fps.unwrap_or(DEFAULT_FPS)
    }

    /// Explicit camera for `frame`, if the file supplies one.
    pub fn camera_for(&self, frame: usize) -> Option<&Camera> {
        self.frames
            .get(frame)
            .and_then(|f| f.camera.as_ref())
            .or(self.camera.as_ref())
    }

    pub fn validate(&self, joints: usize) -> Result<(), KinematicsError> {
        if self.frames.is_empty() {
            return Err(KinematicsError::Format("motion has no frames".into()));
        }
        if let Some(fps) = self.fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(KinematicsError::Format(format!("fps {fps} must be positive")));
            }
        }
        for (frame, f) in self.frames.iter().enumerate() {
            f.pose.validate(joints).map_err(|e| KinematicsError::Frame {
                frame,
                source: Box::new(e),
            })?;
        }
        Ok(())
    }
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence, KinematicsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| KinematicsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| KinematicsError::Format(format!("{}: {e}", path.display())))
}

pub fn save_motion(motion: &MotionSequence, path: impl AsRef<Path>) -> Result<(), KinematicsError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(motion).map_err(|e| KinematicsError::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| KinematicsError::Io {
        path: path.to_path_buf(),
        source,
    })
}
