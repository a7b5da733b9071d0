//! EWA projection of posed 3D Gaussians to screen-space splats.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use super::sh::{eval_sh, ShError};
use crate::camera::Camera;
use crate::kinematics::PosedGaussian;

/// Minimum eigenvalue of a splat's screen covariance, px².
pub const MIN_COV_EIGENVALUE: f64 = 0.3;
/// Footprint cutoff in standard deviations (Mahalanobis distance).
pub const FOOTPRINT_SIGMAS: f64 = 3.0;

/// A screen-space Gaussian ready for compositing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Centre in pixels.
    pub mean: [f64; 2],
    /// Symmetric covariance `[xx, xy, yy]`, px².
    pub cov: [f64; 3],
    /// Inverse covariance `[xx, xy, yy]`.
    pub conic: [f64; 3],
    /// Camera-space depth of the centroid, meters.
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Splat2D {
    /// Squared Mahalanobis distance of pixel `(x, y)` from the centre.
    #[inline]
    pub fn mahalanobis2(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }

    /// Half extents of the axis-aligned box enclosing the cutoff ellipse.
    pub fn extent(&self) -> [f64; 2] {
        [
            FOOTPRINT_SIGMAS * self.cov[0].sqrt(),
            FOOTPRINT_SIGMAS * self.cov[2].sqrt(),
        ]
    }
}

/// Raises the eigenvalues of a symmetric 2x2 matrix to at least `floor`.
pub fn clamp_eigenvalues(cov: [f64; 3], floor: f64) -> [f64; 3] {
    let [a, b, c] = cov;
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (lo, hi) = (mid - rad, mid + rad);
    if lo >= floor {
        return cov;
    }
    if hi <= floor {
        return [floor, 0.0, floor];
    }
    // Only the smaller eigenvalue moves: add (floor - lo) v vᵀ.
    let v = if b == 0.0 {
        if a <= c {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    } else if (lo - a).abs() > (lo - c).abs() {
        [b, lo - a]
    } else {
        [lo - c, b]
    };
    let n2 = v[0] * v[0] + v[1] * v[1];
    let k = (floor - lo) / n2;
    [a + k * v[0] * v[0], b + k * v[0] * v[1], c + k * v[1] * v[1]]
}

/// Screen-space mean, covariance and depth of a Gaussian with world centroid
/// `centroid` and world covariance `covariance`, or `None` when its centroid
/// is at or behind the near plane.
pub fn project_covariance(
    camera: &Camera,
    centroid: &Vector3<f64>,
    covariance: &Matrix3<f64>,
) -> Option<([f64; 2], [f64; 3], f64)> {
    let pc = camera.world_to_camera((*centroid).into());
    let proj = camera.project_camera_space(pc)?;
    let [x, y, z] = pc;
    let w = Matrix3::from_row_slice(&camera.rotation.concat());
    let jac = Matrix2x3::new(
        camera.fx / z,
        0.0,
        -camera.fx * x / (z * z),
        0.0,
        camera.fy / z,
        -camera.fy * y / (z * z),
    );
    let m = jac * w;
    let cov = m * covariance * m.transpose();
    let cov = [cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]];
    Some((proj.pixel, clamp_eigenvalues(cov, MIN_COV_EIGENVALUE), proj.depth))
}

/// Projects one posed Gaussian. Returns `Ok(None)` when the Gaussian is
/// culled: behind the near plane, or with a 3σ footprint that misses every
/// pixel centre.
pub fn project_gaussian(
    camera: &Camera,
    g: &PosedGaussian,
    opacity: f32,
    features: &[f32],
) -> Result<Option<Splat2D>, ShError> {
    let Some((mean, cov, depth)) = project_covariance(camera, &g.centroid, &g.covariance) else {
        return Ok(None);
    };
    if !(mean.iter().chain(&cov).all(|v| v.is_finite())) {
        return Ok(None);
    }
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) {
        return Ok(None);
    }
    let ex = FOOTPRINT_SIGMAS * cov[0].sqrt();
    let ey = FOOTPRINT_SIGMAS * cov[2].sqrt();
    let (w, h) = (f64::from(camera.width), f64::from(camera.height));
    if mean[0] + ex < 0.0 || mean[0] - ex > w - 1.0 || mean[1] + ey < 0.0 || mean[1] - ey > h - 1.0 {
        return Ok(None);
    }
    let center = camera.center();
    let d = [
        g.centroid.x - center[0],
        g.centroid.y - center[1],
        g.centroid.z - center[2],
    ];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let color = eval_sh(features, d.map(|v| v / n))?;
    Ok(Some(Splat2D {
        mean,
        cov,
        conic: [cov[2] / det, -cov[1] / det, cov[0] / det],
        depth,
        color,
        opacity: f64::from(opacity),
    }))
}
