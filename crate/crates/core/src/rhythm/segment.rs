//! Block normalization and denormalization.
//!
//! Every beat interval is time-scaled into a canonical block of exactly
//! `K = ceil(D_M * fps)` frames: motion by linear interpolation of the
//! exponential-map coordinates (valid for the small inter-frame rotations of
//! gesture data), text by nearest-neighbor lookup, audio by pitch-preserving
//! WSOLA. Interval `i` owns motion frames `round(b_i * fps) ..
//! round(b_{i+1} * fps)`, so the blocks partition the clip's frames exactly
//! and denormalization restores the original frame count.

use super::beat::BeatGrid;
use super::tsm::time_scale;
use crate::data::audio::AudioClip;
use crate::data::motion::MotionClip;
use crate::data::skeleton::POSE_DIM;
use crate::data::text::WordAlignment;
use crate::error::{Error, Result};
use crate::math::{self, Mat};

/// One beat interval, normalized: all streams at exactly `K` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedBlock {
    /// `K x 48` motion block; absent when normalizing audio-only input.
    pub motion: Option<Mat>,
    /// Time-scaled raw audio for the interval (at the clip's sample rate).
    pub audio: Vec<f64>,
    /// `K x d_t` text features; absent in audio-only mode.
    pub text: Option<Mat>,
    /// Whole interval lies in silence.
    pub silent: bool,
    /// Original interval start (seconds).
    pub start_s: f64,
    /// Original interval duration (seconds).
    pub duration_s: f64,
    /// Motion frames the interval owned before normalization.
    pub native_frames: usize,
}

pub struct SegmentInput<'a> {
    pub motion: Option<&'a MotionClip>,
    pub audio: &'a AudioClip,
    /// Per-frame text features aligned to the motion frame grid.
    pub text_frames: Option<&'a Mat>,
    pub alignment: Option<&'a WordAlignment>,
    /// Fallback silence test when no alignment is available: maximum RMS in
    /// the interval at or below this threshold means silent.
    pub noise_threshold: f64,
}

/// Split all streams at the beat grid and time-scale each interval to `K`
/// frames / `D_M` seconds.
pub fn normalize_segments(
    input: &SegmentInput,
    grid: &BeatGrid,
    fps: f64,
    d_min_s: f64,
    d_max_s: f64,
) -> Result<Vec<NormalizedBlock>> {
    let k = (d_max_s * fps).ceil() as usize;
    let intervals = grid.intervals(d_min_s);
    let mut out = Vec::with_capacity(intervals.len());

    if let Some(m) = input.motion {
        let span_end = intervals.last().map(|iv| iv.1).unwrap_or(0.0);
        let needed = seconds_to_frame(span_end, fps);
        if needed > m.num_frames() {
            return Err(Error::Range(format!(
                "grid spans {needed} motion frames but the clip has {}",
                m.num_frames()
            )));
        }
        if let Some(t) = input.text_frames {
            if t.rows() != m.num_frames() {
                return Err(Error::Argument(format!(
                    "text features cover {} frames, motion has {}",
                    t.rows(),
                    m.num_frames()
                )));
            }
        }
    }
    if let Some(last) = intervals.last() {
        if last.1 > input.audio.duration_s() + 1e-6 {
            return Err(Error::Range(format!(
                "grid ends at {:.3} s but audio lasts {:.3} s",
                last.1,
                input.audio.duration_s()
            )));
        }
    }

    for &(start, end) in &intervals {
        let f0 = seconds_to_frame(start, fps);
        let f1 = seconds_to_frame(end, fps);
        let native_frames = f1.saturating_sub(f0).max(1);
        let duration = end - start;

        let motion = input.motion.map(|m| {
            let f1 = f1.min(m.num_frames());
            let block = m.slice_frames(f0, f1 - f0);
            math::resample_rows_linear(&block, k)
        });
        let text = input.text_frames.map(|t| {
            let rows = Mat::from_fn(native_frames.min(t.rows() - f0), t.cols(), |r, c| {
                t.get(f0 + r, c)
            });
            math::resample_rows_nearest(&rows, k)
        });
        let raw = input.audio.slice_seconds(start, end);
        let factor = d_max_s / duration;
        let audio = time_scale(&raw, input.audio.sample_rate(), factor);
        let silent = match input.alignment {
            Some(a) => a.is_silent_span(start, end),
            None => {
                let env = &raw;
                let rms = (env.iter().map(|s| s * s).sum::<f64>() / env.len().max(1) as f64)
                    .sqrt();
                rms <= input.noise_threshold
            }
        };
        out.push(NormalizedBlock {
            motion,
            audio,
            text,
            silent,
            start_s: start,
            duration_s: duration,
            native_frames,
        });
    }
    Ok(out)
}

/// Resample generated blocks back to their native interval lengths,
/// concatenate, and smooth every joint channel with a Gaussian kernel
/// (`sigma = kernel / 3`, edge-replicated). `kernel = 1` disables smoothing.
pub fn denormalize_and_smooth(
    blocks: &[Mat],
    native_frames: &[usize],
    fps: f64,
    kernel: usize,
) -> Result<MotionClip> {
    if blocks.len() != native_frames.len() {
        return Err(Error::Argument(format!(
            "{} blocks vs {} grid intervals",
            blocks.len(),
            native_frames.len()
        )));
    }
    if blocks.is_empty() {
        return Err(Error::Argument("no blocks to denormalize".into()));
    }
    if kernel % 2 == 0 {
        return Err(Error::Argument("smoothing kernel must be odd".into()));
    }
    let resampled: Vec<Mat> = blocks
        .iter()
        .zip(native_frames.iter())
        .map(|(b, &n)| math::resample_rows_linear(b, n.max(1)))
        .collect();
    let refs: Vec<&Mat> = resampled.iter().collect();
    let mut full = Mat::vcat(&refs);

    if kernel > 1 {
        let kern = math::gaussian_kernel(kernel);
        for c in 0..POSE_DIM {
            let channel: Vec<f64> = (0..full.rows()).map(|r| full.get(r, c)).collect();
            let smooth = math::smooth_replicated(&channel, &kern);
            for (r, v) in smooth.into_iter().enumerate() {
                full.set(r, c, v);
            }
        }
    }
    MotionClip::new(fps, full)
}

/// The frame index owning time `t`: `round(t * fps)`.
pub fn seconds_to_frame(t: f64, fps: f64) -> usize {
    (t * fps).round().max(0.0) as usize
}
