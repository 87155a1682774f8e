//! Motion clips and the line-oriented motion file format.
//!
//! Format: a header `fps=<int> joints=16 dof=3`, then one frame per line of
//! 48 decimals. Floats are written in Rust's shortest round-trip notation,
//! so `save` followed by `load` is bit-exact.

use super::skeleton::{self, Skeleton, DOF_PER_JOINT, NUM_JOINTS, POSE_DIM};
use crate::error::{Error, Result};
use crate::math::Mat;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    fps: f64,
    /// `n_frames x 48` pose grid.
    frames: Mat,
}

impl MotionClip {
    pub fn new(fps: f64, frames: Mat) -> Result<Self> {
        if frames.rows() < 1 {
            return Err(Error::Argument("motion clip needs at least one frame".into()));
        }
        if frames.cols() != POSE_DIM {
            return Err(Error::Argument(format!(
                "pose dimension must be {POSE_DIM}, got {}",
                frames.cols()
            )));
        }
        if !(fps > 0.0) {
            return Err(Error::Argument("fps must be positive".into()));
        }
        if !frames.is_finite() {
            return Err(Error::Argument("motion clip contains non-finite values".into()));
        }
        Ok(MotionClip { fps, frames })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames() as f64 / self.fps
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        self.frames.row(k)
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    /// Rows `start..start+len` as a `len x 48` block.
    pub fn slice_frames(&self, start: usize, len: usize) -> Mat {
        assert!(start + len <= self.num_frames(), "slice out of range");
        Mat::from_fn(len, POSE_DIM, |r, c| self.frames.get(start + r, c))
    }

    /// Strip the root joint's rotation about the vertical axis on every
    /// frame, normalizing body orientation.
    pub fn strip_root_yaw(&mut self) {
        for k in 0..self.frames.rows() {
            let stripped = skeleton::strip_yaw(&self.frames.row(k)[0..DOF_PER_JOINT]);
            let row = self.frames.row_mut(k);
            row[..DOF_PER_JOINT].copy_from_slice(&stripped);
        }
    }
}

/// Load a motion file and normalize the root orientation. `skeleton` pins
/// the expected joint count.
pub fn load_motion_clip(path: &Path, skeleton: &Skeleton) -> Result<MotionClip> {
    debug_assert_eq!(skeleton.joints().len(), NUM_JOINTS);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let (fps, joints, dof) = parse_header(header)
        .ok_or_else(|| Error::parse(path, 1, "expected header `fps=<int> joints=16 dof=3`"))?;
    if joints != NUM_JOINTS || dof != DOF_PER_JOINT {
        return Err(Error::schema(
            path,
            format!("expected joints={NUM_JOINTS} dof={DOF_PER_JOINT}, found joints={joints} dof={dof}"),
        ));
    }

    let mut data: Vec<f64> = Vec::new();
    let mut n_frames = 0usize;
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::parse(path, lineno + 1, format!("bad float `{tok}`"))
            })?;
            data.push(v);
            count += 1;
        }
        if count != POSE_DIM {
            return Err(Error::schema(
                path,
                format!(
                    "frame record {} has {count} values ({} joints), expected {POSE_DIM}",
                    n_frames + 1,
                    count / DOF_PER_JOINT
                ),
            ));
        }
        n_frames += 1;
    }
    if n_frames == 0 {
        return Err(Error::schema(path, "no frames"));
    }
    let mut clip = MotionClip::new(fps as f64, Mat::from_vec(n_frames, POSE_DIM, data))
        .map_err(|e| Error::schema(path, e.to_string()))?;
    clip.strip_root_yaw();
    Ok(clip)
}

/// Write a motion file. See the module docs for the format.
pub fn save_motion_clip(path: &Path, clip: &MotionClip) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "fps={} joints={NUM_JOINTS} dof={DOF_PER_JOINT}\n",
        clip.fps() as i64
    ));
    for k in 0..clip.num_frames() {
        let row = clip.frame(k);
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_header(line: &str) -> Option<(u32, usize, usize)> {
    let mut fps = None;
    let mut joints = None;
    let mut dof = None;
    for part in line.split_whitespace() {
        let (key, value) = part.split_once('=')?;
        match key {
            "fps" => fps = value.parse().ok(),
            "joints" => joints = value.parse().ok(),
            "dof" => dof = value.parse().ok(),
            _ => return None,
        }
    }
    Some((fps?, joints?, dof?))
}
