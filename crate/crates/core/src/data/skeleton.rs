//! The 16-joint upper-body skeleton and forward kinematics.
//!
//! Poses are lists of per-joint rotations in the exponential map (axis-angle
//! vector, radians). The root carries no translation, and its rotation about
//! the vertical axis is stripped on load, so body orientation is normalized
//! by construction.

use crate::error::{Error, Result};
use crate::math::Mat;
use std::path::Path;

pub const NUM_JOINTS: usize = 16;
pub const DOF_PER_JOINT: usize = 3;
/// Flattened pose dimension d_m.
pub const POSE_DIM: usize = NUM_JOINTS * DOF_PER_JOINT;

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` only for the root at index 0.
    pub parent: Option<usize>,
    /// Rest offset from the parent joint (meters); the root's offset is its
    /// rest position in world space.
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.len() != NUM_JOINTS {
            return Err(Error::Argument(format!(
                "skeleton must have exactly {NUM_JOINTS} joints, got {}",
                joints.len()
            )));
        }
        if joints[0].parent.is_some() {
            return Err(Error::Argument("joint 0 must be the root".into()));
        }
        for (i, j) in joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                Some(p) => {
                    return Err(Error::Argument(format!(
                        "joint {i} ({}) has parent {p} >= its own index",
                        j.name
                    )))
                }
                None => {
                    return Err(Error::Argument(format!(
                        "joint {i} ({}) lacks a parent",
                        j.name
                    )))
                }
            }
        }
        Ok(Skeleton { joints })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    fn hand_index(&self, side_exact: &[&str], side_hints: &[&str]) -> Result<usize> {
        for cand in side_exact {
            if let Some(i) = self
                .joints
                .iter()
                .position(|j| j.name.to_lowercase() == *cand)
            {
                return Ok(i);
            }
        }
        self.joints
            .iter()
            .position(|j| {
                let n = j.name.to_lowercase();
                n.contains("hand") && side_hints.iter().any(|h| n.contains(h))
            })
            .ok_or_else(|| Error::Argument("skeleton has no identifiable hand joint".into()))
    }

    pub fn right_hand(&self) -> Result<usize> {
        self.hand_index(&["hand_r", "right_hand", "righthand", "hand.r"], &["_r", "right"])
    }

    pub fn left_hand(&self) -> Result<usize> {
        self.hand_index(&["hand_l", "left_hand", "lefthand", "hand.l"], &["_l", "left"])
    }

    /// World positions of all joints for one flattened pose (48 values).
    pub fn forward_kinematics(&self, pose: &[f64]) -> Vec<[f64; 3]> {
        assert_eq!(pose.len(), POSE_DIM, "pose must have {POSE_DIM} values");
        let mut rot: Vec<[[f64; 3]; 3]> = Vec::with_capacity(NUM_JOINTS);
        let mut pos: Vec<[f64; 3]> = Vec::with_capacity(NUM_JOINTS);
        for (i, joint) in self.joints.iter().enumerate() {
            let local = rodrigues(&pose[i * 3..i * 3 + 3]);
            match joint.parent {
                None => {
                    rot.push(local);
                    pos.push(joint.offset);
                }
                Some(p) => {
                    let world_r = mat3_mul(&rot[p], &local);
                    let off = mat3_apply(&rot[p], &joint.offset);
                    pos.push([
                        pos[p][0] + off[0],
                        pos[p][1] + off[1],
                        pos[p][2] + off[2],
                    ]);
                    rot.push(world_r);
                }
            }
        }
        pos
    }

    /// FK for every frame of a `K x 48` block: returns per-frame joint
    /// positions.
    pub fn fk_block(&self, block: &Mat) -> Vec<Vec<[f64; 3]>> {
        (0..block.rows())
            .map(|k| self.forward_kinematics(block.row(k)))
            .collect()
    }

    /// Mean per-frame joint speed of a block (m/s): average over frames and
    /// joints of consecutive position differences times `fps`.
    pub fn mean_joint_speed(&self, block: &Mat, fps: f64) -> f64 {
        if block.rows() < 2 {
            return 0.0;
        }
        let frames = self.fk_block(block);
        let mut total = 0.0;
        let mut count = 0usize;
        for k in 1..frames.len() {
            for j in 0..NUM_JOINTS {
                let d = dist3(&frames[k][j], &frames[k - 1][j]);
                total += d * fps;
                count += 1;
            }
        }
        total / count as f64
    }

    /// Load from a text file of lines `name parent_index ox oy oz`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut joints = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected `name parent ox oy oz`, got {} fields", parts.len()),
                ));
            }
            let parent: i64 = parts[1]
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad parent index"))?;
            let mut offset = [0.0; 3];
            for (o, p) in offset.iter_mut().zip(&parts[2..5]) {
                *o = p
                    .parse()
                    .map_err(|_| Error::parse(path, lineno + 1, "bad offset value"))?;
            }
            joints.push(Joint {
                name: parts[0].to_string(),
                parent: if parent < 0 { None } else { Some(parent as usize) },
                offset,
            });
        }
        Skeleton::new(joints).map_err(|e| Error::schema(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for j in &self.joints {
            let parent = j.parent.map(|p| p as i64).unwrap_or(-1);
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                j.name, parent, j.offset[0], j.offset[1], j.offset[2]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// The canonical upper-body rig used by the synthetic datasets: a spine
    /// chain plus two arms, hands at (±0.71, 1.47, 0) in the rest pose.
    pub fn default_upper_body() -> Skeleton {
        let j = |name: &str, parent: i64, x: f64, y: f64, z: f64| Joint {
            name: name.into(),
            parent: if parent < 0 { None } else { Some(parent as usize) },
            offset: [x, y, z],
        };
        Skeleton::new(vec![
            j("root", -1, 0.0, 1.0, 0.0),
            j("spine1", 0, 0.0, 0.15, 0.0),
            j("spine2", 1, 0.0, 0.15, 0.0),
            j("spine3", 2, 0.0, 0.15, 0.0),
            j("neck", 3, 0.0, 0.1, 0.0),
            j("head", 4, 0.0, 0.15, 0.0),
            j("clavicle_l", 3, 0.08, 0.02, 0.0),
            j("shoulder_l", 6, 0.12, 0.0, 0.0),
            j("elbow_l", 7, 0.26, 0.0, 0.0),
            j("hand_l", 8, 0.25, 0.0, 0.0),
            j("clavicle_r", 3, -0.08, 0.02, 0.0),
            j("shoulder_r", 10, -0.12, 0.0, 0.0),
            j("elbow_r", 11, -0.26, 0.0, 0.0),
            j("hand_r", 12, -0.25, 0.0, 0.0),
            j("hand_end_l", 9, 0.08, 0.0, 0.0),
            j("hand_end_r", 13, -0.08, 0.0, 0.0),
        ])
        .expect("canonical skeleton is valid")
    }
}

/// Rotation matrix from an exponential-map vector (Rodrigues).
pub fn rodrigues(v: &[f64]) -> [[f64; 3]; 3] {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta < 1e-12 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let (x, y, z) = (v[0] / theta, v[1] / theta, v[2] / theta);
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat3_apply(r: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

// Quaternion helpers for the yaw strip: (w, x, y, z).

fn expmap_to_quat(v: &[f64]) -> [f64; 4] {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta < 1e-12 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let half = theta / 2.0;
    let s = half.sin() / theta;
    [half.cos(), v[0] * s, v[1] * s, v[2] * s]
}

fn quat_to_expmap(q: &[f64; 4]) -> [f64; 3] {
    let w = q[0].clamp(-1.0, 1.0);
    let sin_half = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if sin_half < 1e-12 {
        return [0.0, 0.0, 0.0];
    }
    let theta = 2.0 * sin_half.atan2(w);
    let scale = theta / sin_half;
    [q[1] * scale, q[2] * scale, q[3] * scale]
}

fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Remove the rotation about the world vertical (+Y) axis from an
/// exponential-map rotation via twist-swing decomposition, keeping the swing.
pub fn strip_yaw(v: &[f64]) -> [f64; 3] {
    let q = expmap_to_quat(v);
    // twist about Y: the (w, y) part renormalized
    let norm = (q[0] * q[0] + q[2] * q[2]).sqrt();
    if norm < 1e-12 {
        // 180-degree rotation about an axis in the XZ plane: no yaw component
        return quat_to_expmap(&q);
    }
    let twist = [q[0] / norm, 0.0, q[2] / norm, 0.0];
    let twist_conj = [twist[0], 0.0, -twist[2], 0.0];
    // swing = q * twist^{-1}
    let swing = quat_mul(&q, &twist_conj);
    quat_to_expmap(&swing)
}
