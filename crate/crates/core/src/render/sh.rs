//! Real spherical-harmonics colour evaluation, degrees 0 to 3.
//!
//! Basis order and signs follow the usual splatting convention (index
//! `l * l + l + m`, Condon–Shortley phase included). Colours carry a +0.5 DC
//! offset and are clamped to `[0, 1]`.

use thiserror::Error;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShError {
    #[error("{0} SH values is not 3 * (degree + 1)^2 for any degree 0..=3")]
    CoefficientCount(usize),
}

/// Degree implied by a feature block of `len` values (3 channels).
pub fn degree_for_len(len: usize) -> Result<u8, ShError> {
    match len {
        3 => Ok(0),
        12 => Ok(1),
        27 => Ok(2),
        48 => Ok(3),
        n => Err(ShError::CoefficientCount(n)),
    }
}

/// Evaluates the 16 (or fewer) basis functions at unit direction `d`.
pub fn basis(degree: u8, d: [f64; 3]) -> [f64; 16] {
    let [x, y, z] = d;
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Raw SH sum plus the 0.5 offset, without clamping.
pub fn eval_sh_unclamped(features: &[f32], view_dir: [f64; 3]) -> Result<[f64; 3], ShError> {
    let degree = degree_for_len(features.len())?;
    let b = basis(degree, view_dir);
    let mut rgb = [0.5; 3];
    for (k, coeffs) in features.chunks_exact(3).enumerate() {
        for c in 0..3 {
            rgb[c] += b[k] * f64::from(coeffs[c]);
        }
    }
    Ok(rgb)
}

/// Colour seen from `view_dir` (unit vector from the camera toward the Gaussian).
pub fn eval_sh(features: &[f32], view_dir: [f64; 3]) -> Result<[f64; 3], ShError> {
    Ok(eval_sh_unclamped(features, view_dir)?.map(|v| v.clamp(0.0, 1.0)))
}
