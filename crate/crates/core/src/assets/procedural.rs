//! Capsule-per-bone proxy avatars used as fixtures and demo inputs.

use thiserror::Error;

use super::{sh_coeffs_per_channel, AssetError, Gaussian, GaussianAsset, Skeleton, SkinRow, MAX_SH_DEGREE};
use crate::render::sh::SH_C0;
use crate::rng::{tag, CounterRng};

#[derive(Debug, Error)]
pub enum ProceduralError {
    #[error("need at least one gaussian per joint ({joints}), got {requested}")]
    TooFewGaussians { requested: usize, joints: usize },
    #[error("SH degree {0} is not supported")]
    ShDegree(u8),
    #[error(transparent)]
    Asset(#[from] AssetError),
}

/// A bone segment in rest pose and the joint whose transform drives it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Bone {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub joint: u32,
}

pub(crate) fn bones(skeleton: &Skeleton) -> Vec<Bone> {
    let rest = skeleton.rest_positions();
    let mut out: Vec<Bone> = skeleton
        .joints
        .iter()
        .enumerate()
        .filter_map(|(j, joint)| {
            joint.parent.map(|p| Bone {
                a: rest[p],
                b: rest[j],
                joint: p as u32,
            })
        })
        .collect();
    if out.is_empty() {
        let r = skeleton.root();
        out.push(Bone {
            a: rest[r],
            b: rest[r],
            joint: r as u32,
        });
    }
    out
}

pub(crate) fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Degree-0 procedural avatar. See [`procedural_test_asset_with_degree`].
pub fn procedural_test_asset(
    n_gaussians: usize,
    skeleton: &Skeleton,
    seed: u64,
) -> Result<GaussianAsset, ProceduralError> {
    procedural_test_asset_with_degree(n_gaussians, skeleton, seed, 0)
}

/// Scatters `n_gaussians` small Gaussians along the rest-pose bones of
/// `skeleton`, round-robin over bones. Each Gaussian is skinned with weight 1
/// to the joint driving its nearest bone, and its centroid lies within
/// 1.5 x its largest scale of the segment it was sampled on.
pub fn procedural_test_asset_with_degree(
    n_gaussians: usize,
    skeleton: &Skeleton,
    seed: u64,
    sh_degree: u8,
) -> Result<GaussianAsset, ProceduralError> {
    skeleton.validate().map_err(AssetError::from)?;
    if sh_degree > MAX_SH_DEGREE {
        return Err(ProceduralError::ShDegree(sh_degree));
    }
    if n_gaussians < skeleton.len() {
        return Err(ProceduralError::TooFewGaussians {
            requested: n_gaussians,
            joints: skeleton.len(),
        });
    }
    let bones = bones(skeleton);
    let coeffs = sh_coeffs_per_channel(sh_degree);
    let mut gaussians = Vec::with_capacity(n_gaussians);
    let mut skinning = Vec::with_capacity(n_gaussians);

    for i in 0..n_gaussians {
        let bone_index = i % bones.len();
        let bone = bones[bone_index];
        let mut rng = CounterRng::keyed(seed, tag::PROCEDURAL, i as u64);

        let scale = [
            rng.uniform(0.01, 0.025),
            rng.uniform(0.01, 0.025),
            rng.uniform(0.01, 0.025),
        ];
        let max_scale = scale.iter().copied().fold(0.0, f64::max);
        let t = rng.next_f64();
        let dir = unit_vector(&mut rng);
        let radial = 1.5 * max_scale * rng.next_f64();
        let position: [f64; 3] = std::array::from_fn(|k| bone.a[k] + t * (bone.b[k] - bone.a[k]) + radial * dir[k]);

        let q = [rng.normal(), rng.normal(), rng.normal(), rng.normal()];
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rotation = q.map(|v| (v / qn) as f32);

        // Colour varies per bone; higher-order bands get small random values.
        let base = bone_colour(bone_index);
        let mut features = vec![0.0f32; 3 * coeffs];
        for c in 0..3 {
            features[c] = ((base[c] - 0.5) / SH_C0) as f32;
        }
        for f in features.iter_mut().skip(3) {
            *f = (0.1 * rng.normal()) as f32;
        }

        let nearest = bones
            .iter()
            .map(|b| (point_segment_distance(position, b.a, b.b), b.joint))
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, j)| j)
            .unwrap();

        gaussians.push(Gaussian {
            position: position.map(|v| v as f32),
            rotation,
            scale: scale.map(|v| v as f32),
            opacity: rng.uniform(0.7, 1.0) as f32,
            features,
        });
        skinning.push([(nearest, 1.0f32)].into_iter().collect::<SkinRow>());
    }
    Ok(GaussianAsset::new(sh_degree, gaussians, skinning, skeleton.clone())?)
}

fn unit_vector(rng: &mut CounterRng) -> [f64; 3] {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return v.map(|x| x / n);
        }
    }
}

fn bone_colour(i: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 6] = [
        [0.85, 0.35, 0.25],
        [0.25, 0.45, 0.80],
        [0.90, 0.80, 0.55],
        [0.30, 0.70, 0.40],
        [0.75, 0.75, 0.80],
        [0.55, 0.30, 0.60],
    ];
    PALETTE[i % PALETTE.len()]
}
