//! Pinhole cameras and per-sequence orbit sampling.
//!
//! Conventions: right-handed world with +y up; camera space looks down +z
//! with +x right and +y down in the image; pixel `(i, j)` has its centre at
//! continuous coordinate `(i, j)`, origin top-left.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{tag, CounterRng};

/// Points at or closer than this camera-space depth are culled.
pub const Z_NEAR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("invalid orbit spec: {0}")]
    Orbit(String),
    #[error("camera position coincides with its look-at point")]
    DegenerateLookAt,
}

/// Pinhole camera with a rigid world-to-camera extrinsic `x_c = R x_w + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub pixel: [f64; 2],
    pub depth: f64,
}

/// Image size and field of view used to build intrinsics for sampled cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lens {
    pub width: u32,
    pub height: u32,
    pub vertical_fov_deg: f64,
}

impl Lens {
    /// Square pixels, principal point at the image centre.
    pub fn intrinsics(&self) -> [f64; 4] {
        let fy = 0.5 * f64::from(self.height) / (0.5 * self.vertical_fov_deg.to_radians()).tan();
        [fy, fy, 0.5 * f64::from(self.width), 0.5 * f64::from(self.height)]
    }
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Camera {
    /// Camera at the world origin looking down +z.
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation: IDENTITY,
            translation: [0.0; 3],
        }
    }

    /// Camera at `eye` whose optical axis passes through `target`.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        intrinsics: [f64; 4],
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let forward = sub(target, eye);
        let dist = norm(forward);
        if !(dist > 1e-12) {
            return Err(CameraError::DegenerateLookAt);
        }
        let z = forward.map(|v| v / dist);
        // Image "down" is world up projected off the viewing axis, negated.
        let mut up_perp = sub(up, scale(z, dot(up, z)));
        if norm(up_perp) < 1e-9 {
            let alt = [0.0, 0.0, 1.0];
            up_perp = sub(alt, scale(z, dot(alt, z)));
        }
        let y = scale(up_perp, -1.0 / norm(up_perp));
        let x = cross(y, z);
        let rotation = [x, y, z];
        let translation = [-dot(x, eye), -dot(y, eye), -dot(z, eye)];
        let [fx, fy, cx, cy] = intrinsics;
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let ok = |v: f64| v.is_finite();
        if !(self.fx > 0.0 && self.fy > 0.0 && ok(self.fx) && ok(self.fy)) {
            return Err(CameraError::Intrinsics("focal lengths must be positive".into()));
        }
        if !(ok(self.cx) && ok(self.cy)) {
            return Err(CameraError::Intrinsics("principal point must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Intrinsics("image dimensions must be positive".into()));
        }
        if self
            .translation
            .iter()
            .chain(self.rotation.iter().flatten())
            .any(|v| !ok(*v))
        {
            return Err(CameraError::Intrinsics("extrinsic must be finite".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(self.rotation[i], self.rotation[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                if (d - expected).abs() > 1e-6 {
                    return Err(CameraError::Intrinsics("rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            dot(r[0], p) + self.translation[0],
            dot(r[1], p) + self.translation[1],
            dot(r[2], p) + self.translation[2],
        ]
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = self.translation;
        std::array::from_fn(|k| -(r[0][k] * t[0] + r[1][k] * t[1] + r[2][k] * t[2]))
    }

    /// Projects a camera-space point; `None` when it is at or behind the near plane.
    #[inline]
    pub fn project_camera_space(&self, p: [f64; 3]) -> Option<ProjectedPoint> {
        let [x, y, z] = p;
        if !(z > Z_NEAR) {
            return None;
        }
        Some(ProjectedPoint {
            pixel: [self.fx * x / z + self.cx, self.fy * y / z + self.cy],
            depth: z,
        })
    }

    /// Projects a world point; `None` when culled.
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> Option<ProjectedPoint> {
        self.project_camera_space(self.world_to_camera(p))
    }

    /// Whether a pixel coordinate falls on the image (pixel centres span `[0, W-1]`).
    pub fn contains_pixel(&self, px: [f64; 2]) -> bool {
        px[0] >= -0.5 && px[1] >= -0.5 && px[0] < f64::from(self.width) - 0.5 && px[1] < f64::from(self.height) - 0.5
    }
}

fn default_elevation() -> [f64; 2] {
    [-10.0, 30.0]
}
fn default_azimuth() -> [f64; 2] {
    [0.0, 360.0]
}
fn default_radius() -> [f64; 2] {
    [3.0, 5.0]
}
fn default_look_at() -> [f64; 3] {
    [0.0, 0.9, 0.0]
}
fn is_zero(v: &u64) -> bool {
    *v == 0
}

/// Orbit camera distribution. Elevation and radius are closed intervals,
/// azimuth is half-open `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    #[serde(default = "default_elevation")]
    pub elevation_deg: [f64; 2],
    #[serde(default = "default_azimuth")]
    pub azimuth_deg: [f64; 2],
    #[serde(default = "default_radius")]
    pub radius_m: [f64; 2],
    #[serde(default = "default_look_at")]
    pub look_at: [f64; 3],
    #[serde(default, skip_serializing_if = "is_zero")]
    pub seed: u64,
    /// Standard deviation of per-frame elevation/azimuth jitter; 0 disables it.
    #[serde(default)]
    pub jitter_deg: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self {
            elevation_deg: default_elevation(),
            azimuth_deg: default_azimuth(),
            radius_m: default_radius(),
            look_at: default_look_at(),
            seed: 0,
            jitter_deg: 0.0,
        }
    }
}

impl OrbitSpec {
    pub fn validate(&self) -> Result<(), CameraError> {
        let interval = |name: &str, r: [f64; 2]| {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                Err(CameraError::Orbit(format!("{name} range {r:?} is empty or not finite")))
            } else {
                Ok(())
            }
        };
        interval("elevation", self.elevation_deg)?;
        interval("azimuth", self.azimuth_deg)?;
        interval("radius", self.radius_m)?;
        if self.elevation_deg[0] < -90.0 || self.elevation_deg[1] > 90.0 {
            return Err(CameraError::Orbit("elevation must lie within [-90, 90] degrees".into()));
        }
        if self.radius_m[0] <= 0.0 {
            return Err(CameraError::Orbit("radius must be positive".into()));
        }
        if self.look_at.iter().any(|v| !v.is_finite()) || !(self.jitter_deg >= 0.0) {
            return Err(CameraError::Orbit("look-at and jitter must be finite".into()));
        }
        Ok(())
    }
}

/// Drawn orbit coordinates of a sampled camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSample {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub radius_m: f64,
}

/// Orbit coordinates for sequence `sequence_index`, uniform in each interval.
pub fn sample_orbit(spec: &OrbitSpec, sequence_index: u64) -> OrbitSample {
    let mut rng = CounterRng::keyed(spec.seed, tag::CAMERA, sequence_index);
    OrbitSample {
        elevation_deg: rng.uniform(spec.elevation_deg[0], spec.elevation_deg[1]),
        azimuth_deg: rng.uniform(spec.azimuth_deg[0], spec.azimuth_deg[1]),
        radius_m: rng.uniform(spec.radius_m[0], spec.radius_m[1]),
    }
}

/// Camera on the orbit sphere at the given angles, looking at `look_at` with +y up.
pub fn orbit_camera(look_at: [f64; 3], sample: OrbitSample, lens: &Lens) -> Result<Camera, CameraError> {
    let (e, a) = (sample.elevation_deg.to_radians(), sample.azimuth_deg.to_radians());
    let dir = [e.cos() * a.sin(), e.sin(), e.cos() * a.cos()];
    let eye = std::array::from_fn(|k| look_at[k] + sample.radius_m * dir[k]);
    Camera::look_at(
        eye,
        look_at,
        [0.0, 1.0, 0.0],
        lens.intrinsics(),
        lens.width,
        lens.height,
    )
}

/// One camera per sequence, deterministic in `(spec.seed, sequence_index)`.
pub fn sample_camera(spec: &OrbitSpec, lens: &Lens, sequence_index: u64) -> Result<Camera, CameraError> {
    spec.validate()?;
    orbit_camera(spec.look_at, sample_orbit(spec, sequence_index), lens)
}

/// Per-frame camera: the sequence camera, optionally jittered per frame.
pub fn sample_frame_camera(
    spec: &OrbitSpec,
    lens: &Lens,
    sequence_index: u64,
    frame_index: u64,
) -> Result<Camera, CameraError> {
    spec.validate()?;
    let mut sample = sample_orbit(spec, sequence_index);
    if spec.jitter_deg > 0.0 {
        let key = crate::rng::derive_key(spec.seed, tag::CAMERA_JITTER, sequence_index);
        let mut rng = CounterRng::keyed(key, tag::CAMERA_JITTER, frame_index);
        sample.elevation_deg = (sample.elevation_deg + spec.jitter_deg * rng.normal()).clamp(-89.0, 89.0);
        sample.azimuth_deg += spec.jitter_deg * rng.normal();
    }
    orbit_camera(spec.look_at, sample, lens)
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    a.map(|v| v * s)
}
#[inline]
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
