//! Motion style features: hand height, hand speed, and hand radius,
//! averaged within a sliding window. These drive style editing and its
//! evaluation.

use super::motion::MotionClip;
use super::skeleton::Skeleton;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleFeature {
    /// World height of the right hand (meters).
    HandHeight,
    /// Average speed of both hands (m/s).
    HandSpeed,
    /// Average horizontal distance from the hands to the vertical axis
    /// through the root (meters).
    HandRadius,
}

impl std::str::FromStr for StyleFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hand_height" => Ok(StyleFeature::HandHeight),
            "hand_speed" => Ok(StyleFeature::HandSpeed),
            "hand_radius" => Ok(StyleFeature::HandRadius),
            other => Err(Error::Argument(format!(
                "unknown style feature `{other}` (expected hand_height, hand_speed, or hand_radius)"
            ))),
        }
    }
}

impl std::fmt::Display for StyleFeature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StyleFeature::HandHeight => "hand_height",
            StyleFeature::HandSpeed => "hand_speed",
            StyleFeature::HandRadius => "hand_radius",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleFeatureSeries {
    pub feature: StyleFeature,
    /// One value per motion frame, window-averaged.
    pub values: Vec<f64>,
}

/// Raw (unwindowed) per-frame values of a feature.
///
/// Speed at frame `k >= 1` is the backward difference of the FK hand
/// positions times fps, averaged over both hands; frame 0 replicates
/// frame 1.
pub fn raw_style_values(
    clip: &MotionClip,
    skeleton: &Skeleton,
    feature: StyleFeature,
) -> Result<Vec<f64>> {
    let right = skeleton.right_hand()?;
    let left = skeleton.left_hand()?;
    let positions = skeleton.fk_block(clip.frames());
    let n = positions.len();
    let values = match feature {
        StyleFeature::HandHeight => positions.iter().map(|f| f[right][1]).collect(),
        StyleFeature::HandRadius => positions
            .iter()
            .map(|f| {
                let root = f[0];
                let r = |p: &[f64; 3]| {
                    ((p[0] - root[0]).powi(2) + (p[2] - root[2]).powi(2)).sqrt()
                };
                (r(&f[right]) + r(&f[left])) / 2.0
            })
            .collect(),
        StyleFeature::HandSpeed => {
            let mut out = Vec::with_capacity(n);
            for k in 0..n {
                if n == 1 {
                    out.push(0.0);
                    break;
                }
                let k1 = k.max(1);
                let d = |j: usize| {
                    let a = positions[k1][j];
                    let b = positions[k1 - 1][j];
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                        .sqrt()
                };
                out.push((d(right) + d(left)) / 2.0 * clip.fps());
            }
            out
        }
    };
    Ok(values)
}

/// Per-frame style feature with a centered moving average of `window_s`
/// seconds (the window shrinks at the clip boundaries).
pub fn compute_style_features(
    clip: &MotionClip,
    skeleton: &Skeleton,
    feature: StyleFeature,
    window_s: f64,
) -> Result<StyleFeatureSeries> {
    if !(window_s > 0.0) {
        return Err(Error::Argument("style window must be positive".into()));
    }
    let raw = raw_style_values(clip, skeleton, feature)?;
    let half = ((window_s * clip.fps()) / 2.0).round() as usize;
    Ok(StyleFeatureSeries {
        feature,
        values: math::moving_average(&raw, half),
    })
}
