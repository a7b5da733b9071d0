//! Canonical Gaussian avatars: the per-Gaussian parameter tuple, sparse
//! skinning weights and the skeleton they are bound to.

mod format;
mod procedural;
mod skeleton;

use std::fmt;
use std::path::PathBuf;

use arrayvec::ArrayVec;
use thiserror::Error;

pub use format::{load_asset, read_asset, save_asset, write_asset, GSA_MAGIC};
pub use procedural::{procedural_test_asset, procedural_test_asset_with_degree, ProceduralError};
pub use skeleton::{Joint, Skeleton, SkeletonError, KEYPOINT_NAMES, KEYPOINT_SKELETON, NUM_KEYPOINTS};

/// Maximum number of joint influences stored per Gaussian.
pub const MAX_INFLUENCES: usize = 4;
/// Highest supported spherical-harmonics degree.
pub const MAX_SH_DEGREE: u8 = 3;

pub const QUATERNION_TOLERANCE: f64 = 1e-6;
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-5;

/// Sparse skinning row: `(joint index, weight)` pairs.
pub type SkinRow = ArrayVec<(u32, f32), MAX_INFLUENCES>;

/// Number of SH coefficients per colour channel for `degree`.
pub const fn sh_coeffs_per_channel(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

/// One 3D Gaussian in canonical space.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    /// Centroid, meters.
    pub position: [f32; 3],
    /// Orientation as a unit quaternion, `[w, x, y, z]` (Hamilton).
    pub rotation: [f32; 4],
    /// Per-axis standard deviation, meters.
    pub scale: [f32; 3],
    pub opacity: f32,
    /// SH coefficients, coefficient-major: `features[k * 3 + channel]`.
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GaussianProblem {
    NonFinite(&'static str),
    NonUnitQuaternion(f64),
    NonPositiveScale,
    OpacityOutOfRange(f32),
    FeatureLength { expected: usize, found: usize },
    NoWeights,
    WeightOutOfRange(f32),
    JointOutOfRange(u32),
    DuplicateJoint(u32),
    WeightSum(f64),
}

impl fmt::Display for GaussianProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonFinite(field) => write!(f, "non-finite value in {field}"),
            Self::NonUnitQuaternion(n) => write!(f, "quaternion norm {n} is not unit"),
            Self::NonPositiveScale => f.write_str("scale components must be strictly positive"),
            Self::OpacityOutOfRange(o) => write!(f, "opacity {o} outside [0, 1]"),
            Self::FeatureLength { expected, found } => {
                write!(f, "feature block has {found} values, expected {expected}")
            }
            Self::NoWeights => f.write_str("skinning row is empty"),
            Self::WeightOutOfRange(w) => write!(f, "skinning weight {w} outside [0, 1]"),
            Self::JointOutOfRange(j) => write!(f, "skinning references joint {j}, which does not exist"),
            Self::DuplicateJoint(j) => write!(f, "skinning row lists joint {j} twice"),
            Self::WeightSum(s) => write!(f, "skinning weights sum to {s}, expected 1"),
        }
    }
}

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed asset: {0}")]
    Format(String),
    #[error("gaussian {index}: {problem}")]
    Gaussian { index: usize, problem: GaussianProblem },
    #[error("invalid skeleton: {0}")]
    Skeleton(#[from] SkeletonError),
    #[error("asset has {gaussians} gaussians but {rows} skinning rows")]
    CountMismatch { gaussians: usize, rows: usize },
    #[error("asset has no gaussians")]
    Empty,
    #[error("SH degree {0} is not supported (max {MAX_SH_DEGREE})")]
    ShDegree(u8),
}

/// A canonical avatar. Immutable once validated; share it freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAsset {
    pub sh_degree: u8,
    pub gaussians: Vec<Gaussian>,
    pub skinning: Vec<SkinRow>,
    pub skeleton: Skeleton,
}

impl GaussianAsset {
    /// Builds and validates an asset.
    pub fn new(
        sh_degree: u8,
        gaussians: Vec<Gaussian>,
        skinning: Vec<SkinRow>,
        skeleton: Skeleton,
    ) -> Result<Self, AssetError> {
        let asset = Self {
            sh_degree,
            gaussians,
            skinning,
            skeleton,
        };
        asset.validate()?;
        Ok(asset)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.len()
    }

    pub fn validate(&self) -> Result<(), AssetError> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(AssetError::ShDegree(self.sh_degree));
        }
        self.skeleton.validate()?;
        if self.gaussians.is_empty() {
            return Err(AssetError::Empty);
        }
        if self.gaussians.len() != self.skinning.len() {
            return Err(AssetError::CountMismatch {
                gaussians: self.gaussians.len(),
                rows: self.skinning.len(),
            });
        }
        let n_features = 3 * sh_coeffs_per_channel(self.sh_degree);
        let joints = self.skeleton.len();
        for (index, (g, row)) in self.gaussians.iter().zip(&self.skinning).enumerate() {
            check_gaussian(g, n_features)
                .and_then(|()| check_skin_row(row, joints))
                .map_err(|problem| AssetError::Gaussian { index, problem })?;
        }
        Ok(())
    }
}

fn check_gaussian(g: &Gaussian, n_features: usize) -> Result<(), GaussianProblem> {
    let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
    if !finite(&g.position) {
        return Err(GaussianProblem::NonFinite("position"));
    }
    if !finite(&g.rotation) {
        return Err(GaussianProblem::NonFinite("rotation"));
    }
    if !finite(&g.scale) {
        return Err(GaussianProblem::NonFinite("scale"));
    }
    if !g.opacity.is_finite() {
        return Err(GaussianProblem::NonFinite("opacity"));
    }
    if !finite(&g.features) {
        return Err(GaussianProblem::NonFinite("features"));
    }
    let norm = g
        .rotation
        .iter()
        .map(|&c| f64::from(c) * f64::from(c))
        .sum::<f64>()
        .sqrt();
    if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(GaussianProblem::NonUnitQuaternion(norm));
    }
    if g.scale.iter().any(|&s| s <= 0.0) {
        return Err(GaussianProblem::NonPositiveScale);
    }
    if !(0.0..=1.0).contains(&g.opacity) {
        return Err(GaussianProblem::OpacityOutOfRange(g.opacity));
    }
    if g.features.len() != n_features {
        return Err(GaussianProblem::FeatureLength {
            expected: n_features,
            found: g.features.len(),
        });
    }
    Ok(())
}

fn check_skin_row(row: &SkinRow, joints: usize) -> Result<(), GaussianProblem> {
    if row.is_empty() {
        return Err(GaussianProblem::NoWeights);
    }
    let mut sum = 0.0f64;
    for (k, &(j, w)) in row.iter().enumerate() {
        if !w.is_finite() {
            return Err(GaussianProblem::NonFinite("skinning"));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(GaussianProblem::WeightOutOfRange(w));
        }
        if j as usize >= joints {
            return Err(GaussianProblem::JointOutOfRange(j));
        }
        if row[..k].iter().any(|&(other, _)| other == j) {
            return Err(GaussianProblem::DuplicateJoint(j));
        }
        sum += f64::from(w);
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(GaussianProblem::WeightSum(sum));
    }
    Ok(())
}

/// Reduces an arbitrary list of influences to the `MAX_INFLUENCES` largest,
/// renormalized to sum to one. Returns the row and whether anything was dropped.
pub fn sparsify_weights(pairs: &[(u32, f32)]) -> (SkinRow, bool) {
    let mut sorted: Vec<(u32, f32)> = pairs.iter().copied().filter(|&(_, w)| w > 0.0).collect();
    let truncated = sorted.len() > MAX_INFLUENCES;
    // Largest weight first; joint index breaks ties deterministically.
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sorted.truncate(MAX_INFLUENCES);
    let total: f64 = sorted.iter().map(|&(_, w)| f64::from(w)).sum();
    let row = sorted
        .into_iter()
        .map(|(j, w)| (j, (f64::from(w) / total) as f32))
        .collect();
    (row, truncated)
}
