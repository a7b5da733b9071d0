//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's math; only its data types are used.
#![allow(dead_code)]

use std::f64::consts::PI;

use avatar_synth::assets::{Gaussian, GaussianAsset, Joint, Skeleton, SkinRow, NUM_KEYPOINTS};
use avatar_synth::camera::Camera;
use avatar_synth::dataset::{AnnotationRecord, ClipMeta, Split};
use avatar_synth::demo::{write_demo_inputs, DemoOptions};
use avatar_synth::kinematics::PoseFrame;
use avatar_synth::pipeline::{RunConfig, RUN_LOG_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type M3 = [[f64; 3]; 3];
pub type M4 = [[f64; 4]; 4];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn random_quaternion(r: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q = [normal(r), normal(r), normal(r), normal(r)];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|v| v / n);
        }
    }
}

// ---------- small dense linear algebra ----------

pub fn mat3_mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn transpose3(a: &M3) -> M3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn mat4_mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn mat4_apply(m: &M4, p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3])
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`, written out longhand.
pub fn quat_matrix(q: [f64; 4]) -> M3 {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn homogeneous(linear: &M3, t: [f64; 3]) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = linear[i][j];
        }
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

pub const I3: M3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

// ---------- spherical harmonics ----------

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Associated Legendre `P_l^m(x)`, `m ≥ 0`, including the Condon–Shortley phase,
/// by the standard upward recurrences.
pub fn assoc_legendre(l: u32, m: u32, x: f64) -> f64 {
    let mut pmm = 1.0;
    if m > 0 {
        let s = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * s;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * f64::from(2 * m + 1) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in m + 2..=l {
        pll = (x * f64::from(2 * ll - 1) * pmmp1 - f64::from(ll + m - 1) * pmm) / f64::from(ll - m);
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Real spherical harmonic `Y_l^m` at unit direction `d`.
pub fn real_sh(l: u32, m: i32, d: [f64; 3]) -> f64 {
    let theta = d[2].clamp(-1.0, 1.0).acos();
    let phi = d[1].atan2(d[0]);
    let am = m.unsigned_abs();
    let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let p = assoc_legendre(l, am, theta.cos());
    match m {
        0 => k * p,
        m if m > 0 => 2f64.sqrt() * k * p * (f64::from(m) * phi).cos(),
        _ => 2f64.sqrt() * k * p * (f64::from(am) * phi).sin(),
    }
}

/// `0.5 + Σ_k f_k Y_k(d)` per channel, coefficient `k = l² + l + m`.
pub fn sh_colour_unclamped(features: &[f32], d: [f64; 3]) -> [f64; 3] {
    let coeffs = features.len() / 3;
    let mut rgb = [0.5; 3];
    for l in 0..4u32 {
        for m in -(l as i32)..=(l as i32) {
            let idx = ((l * l + l) as i64 + i64::from(m)) as usize;
            if idx >= coeffs {
                continue;
            }
            let y = real_sh(l, m, d);
            for c in 0..3 {
                rgb[c] += f64::from(features[idx * 3 + c]) * y;
            }
        }
    }
    rgb
}

// ---------- projection and compositing ----------

#[derive(Debug, Clone, Copy)]
pub struct OracleSplat {
    pub mean: [f64; 2],
    pub cov: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

/// 2x2 symmetric eigen-clamp by explicit eigendecomposition.
pub fn clamp_cov(cov: [f64; 3], floor: f64) -> [f64; 3] {
    let [a, b, c] = cov;
    let tr = a + c;
    let det = a * c - b * b;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let l1 = 0.5 * tr + disc;
    let l2 = 0.5 * tr - disc;
    let (v1, v2) = if b.abs() > 1e-300 {
        let v1 = [l1 - c, b];
        let n = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
        let v1 = [v1[0] / n, v1[1] / n];
        (v1, [-v1[1], v1[0]])
    } else if a >= c {
        ([1.0, 0.0], [0.0, 1.0])
    } else {
        ([0.0, 1.0], [1.0, 0.0])
    };
    let (l1, l2) = (l1.max(floor), l2.max(floor));
    [
        l1 * v1[0] * v1[0] + l2 * v2[0] * v2[0],
        l1 * v1[0] * v1[1] + l2 * v2[0] * v2[1],
        l1 * v1[1] * v1[1] + l2 * v2[1] * v2[1],
    ]
}

/// EWA projection: `J W Σ Wᵀ Jᵀ`, clamped, colour from the Legendre SH oracle.
pub fn oracle_project(
    cam: &Camera,
    centroid: [f64; 3],
    cov: &M3,
    opacity: f64,
    features: &[f32],
) -> Option<OracleSplat> {
    let r = &cam.rotation;
    let pc: [f64; 3] = std::array::from_fn(|i| {
        r[i][0] * centroid[0] + r[i][1] * centroid[1] + r[i][2] * centroid[2] + cam.translation[i]
    });
    let [x, y, z] = pc;
    if z <= 1e-3 {
        return None;
    }
    let j = [
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ];
    let wsw = mat3_mul(&mat3_mul(r, cov), &transpose3(r));
    let mut c2 = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            for k in 0..3 {
                for l in 0..3 {
                    c2[a][b] += j[a][k] * wsw[k][l] * j[b][l];
                }
            }
        }
    }
    let cov2 = clamp_cov([c2[0][0], 0.5 * (c2[0][1] + c2[1][0]), c2[1][1]], 0.3);
    // Camera centre is -Rᵀ t.
    let center: [f64; 3] = std::array::from_fn(|i| -(0..3).map(|k| r[k][i] * cam.translation[k]).sum::<f64>());
    let d: [f64; 3] = std::array::from_fn(|i| centroid[i] - center[i]);
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let colour = sh_colour_unclamped(features, d.map(|v| v / n)).map(|v| v.clamp(0.0, 1.0));
    Some(OracleSplat {
        mean: [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy],
        cov: cov2,
        depth: z,
        color: colour,
        opacity,
    })
}

/// Per-pixel, per-splat compositing over the full splat list.
pub fn brute_force_composite(splats: &[OracleSplat], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));
    let mut rgb = vec![0.0; width * height * 3];
    let mut alpha = vec![0.0; width * height];
    for py in 0..height {
        for px in 0..width {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &i in &order {
                let s = &splats[i];
                let det = s.cov[0] * s.cov[2] - s.cov[1] * s.cov[1];
                let inv = [s.cov[2] / det, -s.cov[1] / det, s.cov[0] / det];
                let dx = px as f64 - s.mean[0];
                let dy = py as f64 - s.mean[1];
                let m = inv[0] * dx * dx + 2.0 * inv[1] * dx * dy + inv[2] * dy * dy;
                if m > 9.0 {
                    continue;
                }
                let a = (s.opacity * (-0.5 * m).exp()).min(0.99);
                for k in 0..3 {
                    c[k] += t * a * s.color[k];
                }
                t *= 1.0 - a;
                if t < 1e-4 {
                    break;
                }
            }
            let p = py * width + px;
            rgb[p * 3..p * 3 + 3].copy_from_slice(&c);
            alpha[p] = 1.0 - t;
        }
    }
    (rgb, alpha)
}

// ---------- kinematics ----------

/// Global joint matrices by recursion over parents, then `G_j · T(-rest_j)`.
pub fn oracle_fk(skeleton: &Skeleton, pose: &PoseFrame) -> Vec<M4> {
    fn global(skeleton: &Skeleton, pose: &PoseFrame, j: usize) -> M4 {
        let joint = &skeleton.joints[j];
        let local = homogeneous(&quat_matrix(pose.joint_rotations[j]), joint.offset);
        match joint.parent {
            Some(p) => mat4_mul(&global(skeleton, pose, p), &local),
            None => mat4_mul(
                &homogeneous(&quat_matrix(pose.root_rotation), pose.root_translation),
                &local,
            ),
        }
    }
    fn rest(skeleton: &Skeleton, j: usize) -> [f64; 3] {
        let o = skeleton.joints[j].offset;
        match skeleton.joints[j].parent {
            Some(p) => {
                let r = rest(skeleton, p);
                [r[0] + o[0], r[1] + o[1], r[2] + o[2]]
            }
            None => o,
        }
    }
    (0..skeleton.len())
        .map(|j| {
            let r = rest(skeleton, j);
            mat4_mul(&global(skeleton, pose, j), &homogeneous(&I3, [-r[0], -r[1], -r[2]]))
        })
        .collect()
}

/// Dense skinning: `x' = Σ_j w_j T_j x`, `A = Σ_j w_j L_j`, `Σ' = A R S² Rᵀ Aᵀ`.
pub fn oracle_lbs(asset: &GaussianAsset, transforms: &[M4]) -> Vec<([f64; 3], M3)> {
    let jn = transforms.len();
    asset
        .gaussians
        .iter()
        .zip(&asset.skinning)
        .map(|(g, row)| {
            let mut dense = vec![0.0; jn];
            for &(j, w) in row {
                dense[j as usize] = f64::from(w);
            }
            let p = g.position.map(f64::from);
            let mut x = [0.0; 3];
            let mut a = [[0.0; 3]; 3];
            for (j, t) in transforms.iter().enumerate() {
                let tp = mat4_apply(t, p);
                for k in 0..3 {
                    x[k] += dense[j] * tp[k];
                    for l in 0..3 {
                        a[k][l] += dense[j] * t[k][l];
                    }
                }
            }
            let r = quat_matrix(g.rotation.map(f64::from));
            let s2: M3 = std::array::from_fn(|i| {
                std::array::from_fn(|k| if i == k { f64::from(g.scale[i]).powi(2) } else { 0.0 })
            });
            let sigma = mat3_mul(&mat3_mul(&r, &s2), &transpose3(&r));
            let cov = mat3_mul(&mat3_mul(&a, &sigma), &transpose3(&a));
            (x, cov)
        })
        .collect()
}

// ---------- random fixtures ----------

/// Random single-rooted tree with `n` joints (parent index < child index).
pub fn random_skeleton(r: &mut ChaCha8Rng, n: usize) -> Skeleton {
    let joints = (0..n)
        .map(|i| Joint {
            name: format!("j{i}"),
            parent: (i > 0).then(|| r.random_range(0..i)),
            offset: std::array::from_fn(|_| r.random_range(-0.5..0.5)),
        })
        .collect();
    let map: [usize; NUM_KEYPOINTS] = std::array::from_fn(|_| r.random_range(0..n));
    Skeleton::new(joints, map).unwrap()
}

pub fn random_pose(r: &mut ChaCha8Rng, joints: usize) -> PoseFrame {
    PoseFrame {
        joint_rotations: (0..joints).map(|_| random_quaternion(r)).collect(),
        root_translation: std::array::from_fn(|_| r.random_range(-1.0..1.0)),
        root_rotation: random_quaternion(r),
    }
}

/// Random asset with up to four influences per Gaussian.
pub fn random_asset(r: &mut ChaCha8Rng, skeleton: &Skeleton, n: usize, sh_degree: u8) -> GaussianAsset {
    let coeffs = (sh_degree as usize + 1).pow(2);
    let joints = skeleton.len();
    let gaussians = (0..n)
        .map(|_| Gaussian {
            position: std::array::from_fn(|_| r.random_range(-1.0f32..1.0)),
            rotation: random_quaternion(r).map(|v| v as f32),
            scale: std::array::from_fn(|_| r.random_range(0.01f32..0.2)),
            opacity: r.random_range(0.05f32..1.0),
            features: (0..3 * coeffs).map(|_| r.random_range(-1.0f32..1.0)).collect(),
        })
        .collect();
    let skinning = (0..n)
        .map(|_| {
            let k = r.random_range(1..=joints.min(4));
            let mut chosen: Vec<u32> = Vec::new();
            while chosen.len() < k {
                let j = r.random_range(0..joints as u32);
                if !chosen.contains(&j) {
                    chosen.push(j);
                }
            }
            let raw: Vec<f32> = (0..k).map(|_| r.random_range(0.1f32..1.0)).collect();
            let sum: f32 = raw.iter().sum();
            chosen
                .into_iter()
                .zip(raw.into_iter().map(|w| w / sum))
                .collect::<SkinRow>()
        })
        .collect();
    GaussianAsset::new(sh_degree, gaussians, skinning, skeleton.clone()).unwrap()
}

/// Random scene in front of an identity camera: `n` free Gaussians (no
/// skinning), placed so most project near the image.
pub fn random_scene(r: &mut ChaCha8Rng, n: usize, size: u32) -> (GaussianAsset, Camera) {
    let skeleton = Skeleton::chain(1);
    let degree = r.random_range(0..=3u8);
    let coeffs = (degree as usize + 1).pow(2);
    let gaussians = (0..n)
        .map(|_| {
            let z = r.random_range(1.5f32..6.0);
            Gaussian {
                position: [
                    r.random_range(-0.6f32..0.6) * z / 2.0,
                    r.random_range(-0.6f32..0.6) * z / 2.0,
                    z,
                ],
                rotation: random_quaternion(r).map(|v| v as f32),
                scale: std::array::from_fn(|_| r.random_range(0.005f32..0.12)),
                opacity: r.random_range(0.05f32..1.0),
                features: (0..3 * coeffs).map(|_| r.random_range(-1.2f32..1.2)).collect(),
            }
        })
        .collect();
    let skinning = (0..n).map(|_| [(0u32, 1.0f32)].into_iter().collect()).collect();
    let asset = GaussianAsset::new(degree, gaussians, skinning, skeleton).unwrap();
    let f = f64::from(size) * r.random_range(0.8..1.5);
    let half = f64::from(size) / 2.0;
    let camera = Camera::identity(
        f,
        f,
        half + r.random_range(-2.0..2.0),
        half + r.random_range(-2.0..2.0),
        size,
        size,
    );
    (asset, camera)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Annotation record with random in-frame keypoints, some unlabelled.
pub fn random_record(r: &mut ChaCha8Rng, image_id: u64, clip_id: &str, frame_index: usize) -> AnnotationRecord {
    let (w, h) = (128u32, 96u32);
    let keypoints = (0..NUM_KEYPOINTS)
        .flat_map(|_| {
            if r.random_bool(0.2) {
                [0.0, 0.0, 0.0]
            } else {
                [
                    r.random_range(0.0..f64::from(w)),
                    r.random_range(0.0..f64::from(h)),
                    2.0,
                ]
            }
        })
        .collect();
    let x = r.random_range(0.0..40.0);
    let y = r.random_range(0.0..30.0);
    AnnotationRecord {
        image_id,
        clip_id: clip_id.into(),
        frame_index,
        file_name: String::new(),
        width: w,
        height: h,
        keypoints,
        bbox: [x, y, r.random_range(10.0..80.0), r.random_range(10.0..60.0)],
        camera: Camera::identity(100.0, 100.0, 64.0, 48.0, w, h),
        pose: random_pose(r, 3),
        smplx: None,
        joints_3d: (0..NUM_KEYPOINTS).map(|_| [normal(r), normal(r), normal(r)]).collect(),
        keypoint_source: Default::default(),
    }
}

pub fn clip_meta(clip_id: &str, sport: &str, subject: &str, split: Split, fps: f64) -> ClipMeta {
    ClipMeta {
        clip_id: clip_id.into(),
        sport: sport.into(),
        subject_id: subject.into(),
        asset_id: subject.into(),
        motion_id: "m".into(),
        background_id: "b".into(),
        camera: None,
        fps,
        split,
    }
}

/// Writes small demo inputs under `dir` and loads their config.
pub fn demo_config(dir: &std::path::Path, opts: &DemoOptions) -> RunConfig {
    let path = write_demo_inputs(dir, opts).unwrap();
    RunConfig::load(path).unwrap()
}

/// Every file under `root` except the run log, keyed by relative path.
pub fn tree_bytes(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(
        root: &std::path::Path,
        dir: &std::path::Path,
        out: &mut std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>,
    ) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n != RUN_LOG_FILE) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Brute-force render of an unposed asset: every splat at every pixel.
pub fn oracle_render(asset: &GaussianAsset, camera: &Camera) -> (Vec<f64>, Vec<f64>) {
    let splats: Vec<OracleSplat> = asset
        .gaussians
        .iter()
        .filter_map(|g| {
            let r = quat_matrix(g.rotation.map(f64::from));
            let s2: M3 = std::array::from_fn(|i| {
                std::array::from_fn(|k| if i == k { f64::from(g.scale[i]).powi(2) } else { 0.0 })
            });
            let cov = mat3_mul(&mat3_mul(&r, &s2), &transpose3(&r));
            oracle_project(
                camera,
                g.position.map(f64::from),
                &cov,
                f64::from(g.opacity),
                &g.features,
            )
        })
        .collect();
    brute_force_composite(&splats, camera.width as usize, camera.height as usize)
}
