//! Foreground/background blending and 2D keypoint ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{Skeleton, NUM_KEYPOINTS};
use crate::camera::Camera;
use crate::kinematics::JointTransforms;
use crate::render::RenderOutput;

#[derive(Debug, Error)]
pub enum CompositionError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("{path}: {message}")]
    Image { path: std::path::PathBuf, message: String },
    #[error("keypoint array has {0} values, expected {expected}", expected = NUM_KEYPOINTS * 3)]
    KeypointLength(usize),
}

/// Row-major `H x W x 3` image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|&v| to_u8(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer sized from dims")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), CompositionError> {
        let path = path.as_ref();
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| CompositionError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single-channel `[0, 1]` buffer as an 8-bit grayscale PNG.
pub fn save_gray_png(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<(), CompositionError> {
    let path = path.as_ref();
    let bytes = values.iter().map(|&v| to_u8(v)).collect();
    image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| CompositionError::Dimensions(format!("{} values for {width}x{height}", values.len())))?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CompositionError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Dumps a render's straight colour and coverage as PNGs for inspection.
pub fn dump_render(
    render: &RenderOutput,
    rgb_path: impl AsRef<Path>,
    alpha_path: impl AsRef<Path>,
) -> Result<(), CompositionError> {
    RgbImage {
        width: render.width,
        height: render.height,
        data: render.unpremultiplied(),
    }
    .save_png(rgb_path)?;
    save_gray_png(alpha_path, render.width, render.height, &render.alpha)
}

/// A static background, already resampled to the render size.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundImage {
    pub image: RgbImage,
    pub source_id: String,
}

impl BackgroundImage {
    /// Loads an image file and resamples it (bilinear) to `width x height`.
    pub fn load(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self, CompositionError> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| CompositionError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb32f();
        let img = if img.width() as usize != width || img.height() as usize != height {
            image::imageops::resize(&img, width as u32, height as u32, image::imageops::FilterType::Triangle)
        } else {
            img
        };
        let source_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            image: RgbImage {
                width,
                height,
                data: img
                    .into_raw()
                    .into_iter()
                    .map(|v| f64::from(v).clamp(0.0, 1.0))
                    .collect(),
            },
            source_id,
        })
    }
}

fn check_dims(render: &RenderOutput, bg: &RgbImage) -> Result<(), CompositionError> {
    if render.width != bg.width || render.height != bg.height {
        return Err(CompositionError::Dimensions(format!(
            "render is {}x{}, background is {}x{}",
            render.width, render.height, bg.width, bg.height
        )));
    }
    Ok(())
}

/// `I = Î ⊙ M̂ + I_bg ⊙ (1 − M̂)` from the renderer's premultiplied buffer,
/// where `Î ⊙ M̂` is exactly the premultiplied colour.
pub fn composite(render: &RenderOutput, bg: &BackgroundImage) -> Result<RgbImage, CompositionError> {
    check_dims(render, &bg.image)?;
    let mut data = Vec::with_capacity(render.rgb.len());
    for (i, &m) in render.alpha.iter().enumerate() {
        for c in 0..3 {
            let k = i * 3 + c;
            data.push((render.rgb[k] + bg.image.data[k] * (1.0 - m)).clamp(0.0, 1.0));
        }
    }
    Ok(RgbImage {
        width: render.width,
        height: render.height,
        data,
    })
}

/// `I = Î ⊙ M̂ + I_bg ⊙ (1 − M̂)` with a straight (unpremultiplied) foreground.
pub fn composite_straight(foreground: &RgbImage, mask: &[f64], bg: &RgbImage) -> Result<RgbImage, CompositionError> {
    let n = foreground.width * foreground.height;
    if foreground.width != bg.width || foreground.height != bg.height || mask.len() != n {
        return Err(CompositionError::Dimensions(format!(
            "foreground {}x{}, mask {} values, background {}x{}",
            foreground.width,
            foreground.height,
            mask.len(),
            bg.width,
            bg.height
        )));
    }
    let mut data = Vec::with_capacity(n * 3);
    for (i, &m) in mask.iter().enumerate() {
        for c in 0..3 {
            let k = i * 3 + c;
            data.push((foreground.data[k] * m + bg.data[k] * (1.0 - m)).clamp(0.0, 1.0));
        }
    }
    Ok(RgbImage {
        width: foreground.width,
        height: foreground.height,
        data,
    })
}

pub const VIS_ABSENT: u8 = 0;
pub const VIS_OCCLUDED: u8 = 1;
pub const VIS_VISIBLE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// 0 absent, 1 occluded, 2 visible.
    pub visibility: u8,
}

impl Keypoint {
    pub const ABSENT: Keypoint = Keypoint {
        x: 0.0,
        y: 0.0,
        visibility: VIS_ABSENT,
    };
}

/// The 23 body + foot keypoints of one person, in COCO-WholeBody slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub points: [Keypoint; NUM_KEYPOINTS],
}

impl KeypointSet {
    /// `[x0, y0, v0, x1, y1, v1, ...]`, 69 values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points
            .iter()
            .flat_map(|k| [k.x, k.y, f64::from(k.visibility)])
            .collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self, CompositionError> {
        if values.len() != NUM_KEYPOINTS * 3 {
            return Err(CompositionError::KeypointLength(values.len()));
        }
        let points = std::array::from_fn(|i| Keypoint {
            x: values[i * 3],
            y: values[i * 3 + 1],
            visibility: values[i * 3 + 2].clamp(0.0, 2.0).round() as u8,
        });
        Ok(Self { points })
    }

    pub fn visible_count(&self) -> usize {
        self.points.iter().filter(|k| k.visibility > 0).count()
    }
}

/// How the y axis is scaled when re-framing keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointScaling {
    /// x scales by `r / w_new`, y by `r / h_new`.
    #[default]
    AsPrinted,
    /// Both axes scale by `r / w_new`.
    Isotropic,
}

/// Re-frames keypoints given in a source image with principal point `old_pp`
/// into a `new_dims` output rendered at canonical resolution `render_res`:
/// centre on the old principal point, scale, and move to the new image centre.
pub fn transform_keypoints(
    kps: &KeypointSet,
    old_pp: [f64; 2],
    render_res: f64,
    new_dims: [f64; 2],
    scaling: KeypointScaling,
) -> Result<KeypointSet, CompositionError> {
    let [w, h] = new_dims;
    if !(w > 0.0 && h > 0.0 && render_res > 0.0) {
        return Err(CompositionError::Dimensions(format!(
            "render resolution {render_res} and target {w}x{h} must be positive"
        )));
    }
    let sx = render_res / w;
    let sy = match scaling {
        KeypointScaling::AsPrinted => render_res / h,
        KeypointScaling::Isotropic => sx,
    };
    let points = kps.points.map(|k| Keypoint {
        x: (k.x - old_pp[0]) * sx + w / 2.0,
        y: (k.y - old_pp[1]) * sy + h / 2.0,
        visibility: k.visibility,
    });
    Ok(KeypointSet { points })
}

/// Ground-truth keypoints from posed joints.
#[derive(Debug, Clone, PartialEq)]
pub struct JointKeypoints {
    pub keypoints: KeypointSet,
    /// World-space positions of the joints behind each slot, meters.
    pub joints_3d: Vec<[f64; 3]>,
}

/// Projects the joints behind each keypoint slot. Joints behind the camera or
/// off the image are marked absent with zeroed coordinates; all others are visible.
pub fn project_joint_keypoints(transforms: &JointTransforms, skeleton: &Skeleton, camera: &Camera) -> JointKeypoints {
    let posed = transforms.posed_joints(skeleton);
    let joints_3d: Vec<[f64; 3]> = skeleton.keypoint_map.iter().map(|&j| posed[j]).collect();
    let points = std::array::from_fn(|slot| match camera.project(joints_3d[slot]) {
        Some(p) if camera.contains_pixel(p.pixel) => Keypoint {
            x: p.pixel[0],
            y: p.pixel[1],
            visibility: VIS_VISIBLE,
        },
        _ => Keypoint::ABSENT,
    });
    JointKeypoints {
        keypoints: KeypointSet { points },
        joints_3d,
    }
}

/// Tight box `[x, y, w, h]` around pixels with coverage above `threshold`,
/// grown by `pad` of its size on every side and clamped to the image.
pub fn mask_bbox(alpha: &[f64], width: usize, height: usize, threshold: f64, pad: f64) -> Option<[f64; 4]> {
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    let mut any = false;
    for y in 0..height {
        for x in 0..width {
            if alpha[y * width + x] > threshold {
                any = true;
                lo = [lo[0].min(x), lo[1].min(y)];
                hi = [hi[0].max(x), hi[1].max(y)];
            }
        }
    }
    if !any {
        return None;
    }
    // Pixel (i, j) covers [i - 0.5, i + 0.5] x [j - 0.5, j + 0.5].
    let (x0, y0) = (lo[0] as f64 - 0.5, lo[1] as f64 - 0.5);
    let (x1, y1) = (hi[0] as f64 + 0.5, hi[1] as f64 + 0.5);
    let (px, py) = (pad * (x1 - x0), pad * (y1 - y0));
    let x0 = (x0 - px).max(-0.5);
    let y0 = (y0 - py).max(-0.5);
    let x1 = (x1 + px).min(width as f64 - 0.5);
    let y1 = (y1 + py).min(height as f64 - 0.5);
    Some([x0, y0, x1 - x0, y1 - y0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, PoseFrame};

    fn render_with(alpha: f64, rgb: f64, w: usize, h: usize) -> RenderOutput {
        RenderOutput {
            width: w,
            height: h,
            rgb: vec![rgb * alpha; w * h * 3],
            alpha: vec![alpha; w * h],
        }
    }

    fn bg(value: f64, w: usize, h: usize) -> BackgroundImage {
        BackgroundImage {
            image: RgbImage::filled(w, h, [value; 3]),
            source_id: "test".into(),
        }
    }

    #[test]
    fn full_foreground_and_background() {
        let out = composite(&render_with(1.0, 0.3, 4, 3), &bg(0.8, 4, 3)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.3));
        let out = composite(&render_with(0.0, 0.3, 4, 3), &bg(0.8, 4, 3)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.8));
    }

    #[test]
    fn midpoint_blend() {
        let out = composite(&render_with(0.5, 1.0, 2, 2), &bg(0.0, 2, 2)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
        let fg = RgbImage::filled(2, 2, [1.0; 3]);
        let out = composite_straight(&fg, &[0.5; 4], &bg(0.0, 2, 2).image).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn composite_dimension_mismatch() {
        assert!(matches!(
            composite(&render_with(1.0, 1.0, 4, 3), &bg(0.0, 3, 4)),
            Err(CompositionError::Dimensions(_))
        ));
    }

    fn set(x: f64, y: f64) -> KeypointSet {
        KeypointSet {
            points: [Keypoint { x, y, visibility: 2 }; NUM_KEYPOINTS],
        }
    }

    #[test]
    fn principal_point_goes_to_centre() {
        let out = transform_keypoints(
            &set(310.0, 200.0),
            [310.0, 200.0],
            512.0,
            [256.0, 192.0],
            KeypointScaling::AsPrinted,
        )
        .unwrap();
        assert_eq!(out.points[0].x, 128.0);
        assert_eq!(out.points[0].y, 96.0);
    }

    #[test]
    fn unit_scale_is_recentering() {
        let out = transform_keypoints(
            &set(40.0, 70.0),
            [30.0, 50.0],
            256.0,
            [256.0, 256.0],
            KeypointScaling::AsPrinted,
        )
        .unwrap();
        assert_eq!(out.points[3].x, 40.0 - 30.0 + 128.0);
        assert_eq!(out.points[3].y, 70.0 - 50.0 + 128.0);
    }

    #[test]
    fn hand_computed_transform() {
        let out = transform_keypoints(
            &set(300.0, 0.0),
            [256.0, 0.0],
            512.0,
            [256.0, 256.0],
            KeypointScaling::AsPrinted,
        )
        .unwrap();
        assert_eq!(out.points[0].x, 216.0);
    }

    #[test]
    fn isotropic_uses_width_scale_for_y() {
        let out = transform_keypoints(
            &set(0.0, 110.0),
            [0.0, 100.0],
            200.0,
            [100.0, 50.0],
            KeypointScaling::Isotropic,
        )
        .unwrap();
        assert_eq!(out.points[0].y, 10.0 * 2.0 + 25.0);
        let printed = transform_keypoints(
            &set(0.0, 110.0),
            [0.0, 100.0],
            200.0,
            [100.0, 50.0],
            KeypointScaling::AsPrinted,
        )
        .unwrap();
        assert_eq!(printed.points[0].y, 10.0 * 4.0 + 25.0);
    }

    #[test]
    fn transform_rejects_bad_dims() {
        assert!(transform_keypoints(
            &set(0.0, 0.0),
            [0.0, 0.0],
            256.0,
            [0.0, 10.0],
            KeypointScaling::AsPrinted
        )
        .is_err());
        assert!(transform_keypoints(
            &set(0.0, 0.0),
            [0.0, 0.0],
            -1.0,
            [10.0, 10.0],
            KeypointScaling::AsPrinted
        )
        .is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut k = set(1.5, -2.0);
        k.points[4] = Keypoint::ABSENT;
        let flat = k.to_flat();
        assert_eq!(flat.len(), 69);
        assert_eq!(KeypointSet::from_flat(&flat).unwrap(), k);
        assert!(KeypointSet::from_flat(&flat[..68]).is_err());
    }

    #[test]
    fn root_look_at_projects_to_centre() {
        let s = Skeleton::humanoid();
        let t = forward_kinematics(&s, &PoseFrame::identity(s.len())).unwrap();
        let root = s.rest_positions()[s.root()];
        let cam = Camera::look_at(
            [root[0], root[1], root[2] + 4.0],
            root,
            [0.0, 1.0, 0.0],
            [200.0, 200.0, 64.0, 64.0],
            128,
            128,
        )
        .unwrap();
        // Point the left_hip slot at the root to exercise the look-at property.
        let mut s2 = s.clone();
        s2.keypoint_map[11] = s.root();
        let kp = project_joint_keypoints(&t, &s2, &cam);
        let p = kp.keypoints.points[11];
        assert!((p.x - 64.0).abs() < 0.5 && (p.y - 64.0).abs() < 0.5);
        assert_eq!(p.visibility, VIS_VISIBLE);
    }

    #[test]
    fn joint_behind_camera_is_absent() {
        let s = Skeleton::chain(2);
        let t = JointTransforms::identity(2);
        let cam = Camera::identity(100.0, 100.0, 32.0, 32.0, 64, 64);
        let kp = project_joint_keypoints(&t, &s, &cam);
        // Joint 1 sits at (0, 1, 0): depth 0, so it is culled.
        assert!(kp.keypoints.points.iter().all(|k| *k == Keypoint::ABSENT));
        assert_eq!(kp.joints_3d[0], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn bbox_pads_and_clamps() {
        let (w, h) = (20, 10);
        let mut alpha = vec![0.0; w * h];
        for y in 2..6 {
            for x in 5..15 {
                alpha[y * w + x] = 0.9;
            }
        }
        let b = mask_bbox(&alpha, w, h, 0.5, 0.05).unwrap();
        // Tight box [4.5, 14.5] x [1.5, 5.5]: 10 x 4, padded 0.5 / 0.2 per side.
        let expected = [4.0, 1.3, 11.0, 4.4];
        for k in 0..4 {
            assert!((b[k] - expected[k]).abs() < 1e-12, "{b:?}");
        }
        assert!(mask_bbox(&vec![0.2; w * h], w, h, 0.5, 0.05).is_none());
        let full = mask_bbox(&vec![1.0; w * h], w, h, 0.5, 0.05).unwrap();
        assert_eq!(full, [-0.5, -0.5, 20.0, 10.0]);
    }
}
