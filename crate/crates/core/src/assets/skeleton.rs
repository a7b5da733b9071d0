use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of COCO-WholeBody body + foot keypoints carried by every annotation.
pub const NUM_KEYPOINTS: usize = 23;

/// COCO-WholeBody keypoint names, body (17) followed by feet (6).
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
    "left_big_toe",
    "left_small_toe",
    "left_heel",
    "right_big_toe",
    "right_small_toe",
    "right_heel",
];

/// Limb connectivity over keypoint slots (0-based), COCO body skeleton plus feet.
pub const KEYPOINT_SKELETON: [[usize; 2]; 25] = [
    [15, 13],
    [13, 11],
    [16, 14],
    [14, 12],
    [11, 12],
    [5, 11],
    [6, 12],
    [5, 6],
    [5, 7],
    [6, 8],
    [7, 9],
    [8, 10],
    [1, 2],
    [0, 1],
    [0, 2],
    [1, 3],
    [2, 4],
    [3, 5],
    [4, 6],
    [15, 17],
    [15, 18],
    [15, 19],
    [16, 20],
    [16, 21],
    [16, 22],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose offset from the parent joint (from the origin for the root), meters.
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkeletonError {
    #[error("skeleton has no joints")]
    Empty,
    #[error("skeleton must have exactly one root, found {0}")]
    RootCount(usize),
    #[error("joint {joint} has parent index {parent} out of range")]
    ParentOutOfRange { joint: usize, parent: usize },
    #[error("joint {0} is part of a cycle")]
    Cycle(usize),
    #[error("keypoint slot {slot} maps to joint {joint}, but the skeleton has {joints} joints")]
    KeypointOutOfRange { slot: usize, joint: usize, joints: usize },
    #[error("joint {0} has a non-finite rest offset")]
    NonFinite(usize),
}

/// Joint hierarchy plus the mapping from the 23 keypoint slots to joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    pub keypoint_map: [usize; NUM_KEYPOINTS],
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, keypoint_map: [usize; NUM_KEYPOINTS]) -> Result<Self, SkeletonError> {
        let skeleton = Self { joints, keypoint_map };
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn root(&self) -> usize {
        self.joints
            .iter()
            .position(|j| j.parent.is_none())
            .expect("validated skeleton has a root")
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        let n = self.joints.len();
        if n == 0 {
            return Err(SkeletonError::Empty);
        }
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 {
            return Err(SkeletonError::RootCount(roots));
        }
        for (i, joint) in self.joints.iter().enumerate() {
            if joint.offset.iter().any(|v| !v.is_finite()) {
                return Err(SkeletonError::NonFinite(i));
            }
            if let Some(p) = joint.parent {
                if p >= n {
                    return Err(SkeletonError::ParentOutOfRange { joint: i, parent: p });
                }
            }
        }
        // With one root and in-range parents, every walk toward the root must
        // terminate within n steps unless it hits a cycle.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.joints[cur].parent {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(SkeletonError::Cycle(start));
                }
            }
        }
        for (slot, &joint) in self.keypoint_map.iter().enumerate() {
            if joint >= n {
                return Err(SkeletonError::KeypointOutOfRange { slot, joint, joints: n });
            }
        }
        Ok(())
    }

    /// Joint indices ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.joints.len();
        let mut children = vec![Vec::new(); n];
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                children[p].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![self.root()];
        while let Some(j) = stack.pop() {
            order.push(j);
            stack.extend(children[j].iter().rev());
        }
        order
    }

    /// Rest-pose joint positions in canonical space.
    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; self.joints.len()];
        for j in self.topological_order() {
            let off = self.joints[j].offset;
            out[j] = match self.joints[j].parent {
                None => off,
                Some(p) => [out[p][0] + off[0], out[p][1] + off[1], out[p][2] + off[2]],
            };
        }
        out
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// A 27-joint standing humanoid, about 1.75 m tall, facing +z with +y up.
    ///
    /// The root is the pelvis; every one of the 23 keypoint slots has a joint
    /// of the same name.
    pub fn humanoid() -> Self {
        let spec: &[(&str, Option<&str>, [f64; 3])] = &[
            ("pelvis", None, [0.0, 0.95, 0.0]),
            ("spine", Some("pelvis"), [0.0, 0.25, 0.0]),
            ("neck", Some("spine"), [0.0, 0.27, 0.0]),
            ("head", Some("neck"), [0.0, 0.12, 0.0]),
            ("nose", Some("head"), [0.0, 0.02, 0.10]),
            ("left_eye", Some("head"), [0.035, 0.05, 0.08]),
            ("right_eye", Some("head"), [-0.035, 0.05, 0.08]),
            ("left_ear", Some("head"), [0.075, 0.03, 0.0]),
            ("right_ear", Some("head"), [-0.075, 0.03, 0.0]),
            ("left_shoulder", Some("neck"), [0.18, -0.03, 0.0]),
            ("left_elbow", Some("left_shoulder"), [0.0, -0.29, 0.0]),
            ("left_wrist", Some("left_elbow"), [0.0, -0.26, 0.0]),
            ("right_shoulder", Some("neck"), [-0.18, -0.03, 0.0]),
            ("right_elbow", Some("right_shoulder"), [0.0, -0.29, 0.0]),
            ("right_wrist", Some("right_elbow"), [0.0, -0.26, 0.0]),
            ("left_hip", Some("pelvis"), [0.1, -0.05, 0.0]),
            ("left_knee", Some("left_hip"), [0.0, -0.42, 0.0]),
            ("left_ankle", Some("left_knee"), [0.0, -0.42, 0.0]),
            ("left_big_toe", Some("left_ankle"), [0.02, -0.06, 0.16]),
            ("left_small_toe", Some("left_ankle"), [0.06, -0.06, 0.14]),
            ("left_heel", Some("left_ankle"), [0.0, -0.06, -0.05]),
            ("right_hip", Some("pelvis"), [-0.1, -0.05, 0.0]),
            ("right_knee", Some("right_hip"), [0.0, -0.42, 0.0]),
            ("right_ankle", Some("right_knee"), [0.0, -0.42, 0.0]),
            ("right_big_toe", Some("right_ankle"), [-0.02, -0.06, 0.16]),
            ("right_small_toe", Some("right_ankle"), [-0.06, -0.06, 0.14]),
            ("right_heel", Some("right_ankle"), [0.0, -0.06, -0.05]),
        ];
        let index_of = |name: &str| spec.iter().position(|(n, _, _)| *n == name).unwrap();
        let joints = spec
            .iter()
            .map(|(name, parent, offset)| Joint {
                name: name.to_string(),
                parent: parent.map(index_of),
                offset: *offset,
            })
            .collect();
        let keypoint_map = KEYPOINT_NAMES.map(index_of);
        Self::new(joints, keypoint_map).expect("built-in humanoid is valid")
    }

    /// A root plus `links - 1` children chained along +y, 1 m apart. All
    /// keypoint slots map to the last joint.
    pub fn chain(links: usize) -> Self {
        assert!(links > 0);
        let joints = (0..links)
            .map(|i| Joint {
                name: format!("joint_{i}"),
                parent: i.checked_sub(1),
                offset: if i == 0 { [0.0; 3] } else { [0.0, 1.0, 0.0] },
            })
            .collect();
        Self::new(joints, [links - 1; NUM_KEYPOINTS]).expect("chain is valid")
    }
}
