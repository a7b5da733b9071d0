mod common;

use avatar_synth::assets::{Skeleton, NUM_KEYPOINTS};
use avatar_synth::camera::{sample_camera, Camera, Lens, OrbitSpec};
use avatar_synth::composition::{
    composite, composite_straight, mask_bbox, project_joint_keypoints, transform_keypoints, BackgroundImage, Keypoint,
    KeypointScaling, KeypointSet, RgbImage, VIS_ABSENT, VIS_VISIBLE,
};
use avatar_synth::kinematics::{forward_kinematics, PoseFrame};
use avatar_synth::render::RenderOutput;
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn random_image(r: &mut rand_chacha::ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    RgbImage {
        width: w,
        height: h,
        data: (0..w * h * 3).map(|_| r.random::<f64>()).collect(),
    }
}

fn bg(image: RgbImage) -> BackgroundImage {
    BackgroundImage {
        image,
        source_id: "test".into(),
    }
}

/// Premultiplied render built from a straight colour image and a mask.
fn premultiplied(fg: &RgbImage, mask: &[f64]) -> RenderOutput {
    RenderOutput {
        width: fg.width,
        height: fg.height,
        rgb: fg.data.iter().enumerate().map(|(i, c)| c * mask[i / 3]).collect(),
        alpha: mask.to_vec(),
    }
}

#[test]
fn both_compositing_paths_match_direct_evaluation() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (w, h) = (r.random_range(1..40), r.random_range(1..40));
        let fg = random_image(&mut r, w, h);
        let back = random_image(&mut r, w, h);
        let mask: Vec<f64> = (0..w * h).map(|_| r.random::<f64>()).collect();
        let straight = composite_straight(&fg, &mask, &back).unwrap();
        let premul = composite(&premultiplied(&fg, &mask), &bg(back.clone())).unwrap();
        for p in 0..w * h {
            for c in 0..3 {
                let i = p * 3 + c;
                let direct = fg.data[i] * mask[p] + back.data[i] * (1.0 - mask[p]);
                assert!((straight.data[i] - direct).abs() < 1e-7);
                assert!((premul.data[i] - direct).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn binary_masks_are_exact() {
    let mut r = rng(2);
    let fg = random_image(&mut r, 9, 7);
    let back = random_image(&mut r, 9, 7);
    let ones = vec![1.0; 63];
    let zeros = vec![0.0; 63];
    assert_eq!(composite_straight(&fg, &ones, &back).unwrap().data, fg.data);
    assert_eq!(composite_straight(&fg, &zeros, &back).unwrap().data, back.data);
    assert_eq!(
        composite(&premultiplied(&fg, &ones), &bg(back.clone())).unwrap().data,
        fg.data
    );
    assert_eq!(
        composite(&premultiplied(&fg, &zeros), &bg(back.clone())).unwrap().data,
        back.data
    );
    let white = RgbImage::filled(9, 7, [1.0; 3]);
    let black = RgbImage::filled(9, 7, [0.0; 3]);
    let half = composite_straight(&white, &[0.5; 63], &black).unwrap();
    assert!(half.data.iter().all(|&v| v == 0.5));
}

#[test]
fn dimension_mismatch_is_an_error() {
    let a = RgbImage::filled(4, 4, [0.0; 3]);
    let b = RgbImage::filled(4, 5, [0.0; 3]);
    assert!(composite_straight(&a, &[0.0; 16], &b).is_err());
    assert!(composite(&RenderOutput::empty(4, 4), &bg(b)).is_err());
}

fn one_point(x: f64, y: f64) -> KeypointSet {
    let mut k = KeypointSet {
        points: [Keypoint::ABSENT; NUM_KEYPOINTS],
    };
    k.points[0] = Keypoint {
        x,
        y,
        visibility: VIS_VISIBLE,
    };
    k
}

#[test]
fn keypoint_transform_worked_example() {
    let out = transform_keypoints(
        &one_point(300.0, 256.0),
        [256.0, 256.0],
        512.0,
        [256.0, 256.0],
        KeypointScaling::AsPrinted,
    )
    .unwrap();
    assert_eq!(out.points[0].x, 216.0);
    assert_eq!(out.points[0].y, 128.0);
    assert_eq!(out.points[0].visibility, VIS_VISIBLE);
    assert_eq!(out.points[1].visibility, VIS_ABSENT);
}

#[test]
fn keypoint_transform_rejects_bad_dimensions() {
    let k = one_point(1.0, 1.0);
    assert!(transform_keypoints(&k, [0.0, 0.0], 0.0, [10.0, 10.0], KeypointScaling::AsPrinted).is_err());
    assert!(transform_keypoints(&k, [0.0, 0.0], 10.0, [0.0, 10.0], KeypointScaling::AsPrinted).is_err());
}

#[test]
fn unit_scale_is_pure_recentering() {
    let out = transform_keypoints(
        &one_point(40.0, 70.0),
        [50.0, 60.0],
        128.0,
        [128.0, 128.0],
        KeypointScaling::AsPrinted,
    )
    .unwrap();
    assert_eq!(
        (out.points[0].x, out.points[0].y),
        (40.0 - 50.0 + 64.0, 70.0 - 60.0 + 64.0)
    );
}

#[test]
fn principal_point_maps_to_centre() {
    let mut r = rng(3);
    for _ in 0..1000 {
        let pp = [r.random_range(-500.0..1500.0), r.random_range(-500.0..1500.0)];
        let res = r.random_range(1.0..4096.0);
        let dims = [r.random_range(1.0..4096.0), r.random_range(1.0..4096.0)];
        for scaling in [KeypointScaling::AsPrinted, KeypointScaling::Isotropic] {
            let out = transform_keypoints(&one_point(pp[0], pp[1]), pp, res, dims, scaling).unwrap();
            assert_eq!((out.points[0].x, out.points[0].y), (dims[0] / 2.0, dims[1] / 2.0));
        }
    }
}

#[test]
fn root_keypoint_projects_to_principal_point() {
    let skeleton = Skeleton::humanoid();
    let root = skeleton.rest_positions()[skeleton.root()];
    let lens = Lens {
        width: 128,
        height: 128,
        vertical_fov_deg: 45.0,
    };
    let spec = OrbitSpec {
        look_at: root,
        ..OrbitSpec::default()
    };
    let cam = sample_camera(&spec, &lens, 0).unwrap();
    let t = forward_kinematics(&skeleton, &PoseFrame::identity(skeleton.len())).unwrap();
    let kps = project_joint_keypoints(&t, &skeleton, &cam);
    // Slots 11/12 are the hips; their midpoint is not the pelvis, so check the
    // projection of the root joint itself.
    let p = cam.project(t.posed_joints(&skeleton)[skeleton.root()]).unwrap();
    assert!((p.pixel[0] - cam.cx).abs() < 0.5 && (p.pixel[1] - cam.cy).abs() < 0.5);
    assert!(kps.keypoints.points.iter().all(|k| k.visibility == VIS_VISIBLE));
}

#[test]
fn chain_keypoints_compose_fk_and_projection_oracles() {
    // Chain end sits at (-1, 0, 0) after a 90° root turn about +z; seen from
    // an identity camera shifted 4 m back it lands at fx·(-1)/4 + cx.
    let skeleton = Skeleton::chain(2);
    let mut pose = PoseFrame::identity(2);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    pose.joint_rotations[0] = [h, 0.0, 0.0, h];
    let t = forward_kinematics(&skeleton, &pose).unwrap();
    let mut cam = Camera::identity(100.0, 100.0, 64.0, 64.0, 128, 128);
    cam.translation = [0.0, 0.0, 4.0];
    let kps = project_joint_keypoints(&t, &skeleton, &cam);
    for k in kps.keypoints.points {
        assert!((k.x - 39.0).abs() < 1e-9 && (k.y - 64.0).abs() < 1e-9);
        assert_eq!(k.visibility, VIS_VISIBLE);
    }
    assert!(kps.joints_3d.iter().all(|j| (j[0] + 1.0).abs() < 1e-12));
}

#[test]
fn joints_behind_the_camera_are_absent() {
    let skeleton = Skeleton::chain(2);
    let t = forward_kinematics(&skeleton, &PoseFrame::identity(2)).unwrap();
    let mut cam = Camera::identity(100.0, 100.0, 64.0, 64.0, 128, 128);
    cam.translation = [0.0, 0.0, -1.0];
    let kps = project_joint_keypoints(&t, &skeleton, &cam);
    assert!(kps
        .keypoints
        .points
        .iter()
        .all(|k| k.visibility == VIS_ABSENT && k.x == 0.0 && k.y == 0.0));
}

#[test]
fn mask_bbox_is_padded_and_clamped() {
    let (w, h) = (20, 10);
    let mut alpha = vec![0.0; w * h];
    for y in 2..6 {
        for x in 5..15 {
            alpha[y * w + x] = 0.9;
        }
    }
    let [x, y, bw, bh] = mask_bbox(&alpha, w, h, 0.5, 0.05).unwrap();
    // Tight pixel-edge box is x ∈ [4.5, 14.5], y ∈ [1.5, 5.5].
    assert!((x - (4.5 - 0.5)).abs() < 1e-12 && (bw - 11.0).abs() < 1e-12);
    assert!((y - (1.5 - 0.2)).abs() < 1e-12 && (bh - 4.4).abs() < 1e-12);
    assert!(mask_bbox(&vec![0.2; w * h], w, h, 0.5, 0.05).is_none());
    let full = mask_bbox(&vec![1.0; w * h], w, h, 0.5, 0.05).unwrap();
    assert_eq!(full, [-0.5, -0.5, 20.0, 10.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn composite_is_convex(f in 0.0f64..=1.0, b in 0.0f64..=1.0, m in 0.0f64..=1.0) {
        let out = composite_straight(&RgbImage::filled(1, 1, [f; 3]), &[m], &RgbImage::filled(1, 1, [b; 3])).unwrap();
        prop_assert!(out.data[0] >= f.min(b) - 1e-15 && out.data[0] <= f.max(b) + 1e-15);
    }

    #[test]
    fn transform_commutes_with_convex_combinations(
        a in (-1e3f64..1e3, -1e3f64..1e3), b in (-1e3f64..1e3, -1e3f64..1e3), s in 0.0f64..=1.0,
        pp in (0.0f64..1000.0, 0.0f64..1000.0), res in 1.0f64..2048.0, dims in (1.0f64..2048.0, 1.0f64..2048.0),
    ) {
        let t = |x: f64, y: f64| {
            let k = transform_keypoints(&one_point(x, y), [pp.0, pp.1], res, [dims.0, dims.1], KeypointScaling::AsPrinted).unwrap();
            (k.points[0].x, k.points[0].y)
        };
        let mix = t(a.0 * (1.0 - s) + b.0 * s, a.1 * (1.0 - s) + b.1 * s);
        let (ta, tb) = (t(a.0, a.1), t(b.0, b.1));
        let expect = (ta.0 * (1.0 - s) + tb.0 * s, ta.1 * (1.0 - s) + tb.1 * s);
        let tol = 1e-9 * (1.0 + mix.0.abs().max(mix.1.abs()));
        prop_assert!((mix.0 - expect.0).abs() < tol && (mix.1 - expect.1).abs() < tol);
    }
}
