//! Beat identification.
//!
//! Onsets become beats unless they fall closer than `D_m` to the previous
//! beat. Gaps longer than `D_M` are closed with pseudo-beats: each is placed
//! at the first envelope frame at least `D_m` past the previous beat whose
//! volume exceeds the noise threshold, recursively; if no such frame exists
//! within reach, the minimal number of evenly spaced pseudo-beats is placed
//! so every sub-interval is strictly shorter than `D_M`.

use super::onset::OnsetList;
use crate::data::audio::RmsEnvelope;

#[derive(Debug, Clone, PartialEq)]
pub struct BeatConfig {
    /// Minimum onset interval D_m (seconds).
    pub d_min_s: f64,
    /// Maximum interval D_M (seconds).
    pub d_max_s: f64,
    /// Environmental-noise volume threshold (RMS amplitude).
    pub noise_threshold: f64,
    /// Motion frame rate; `K = ceil(D_M * fps)` frames per normalized block.
    pub fps: f64,
}

impl BeatConfig {
    pub fn block_frames(&self) -> usize {
        (self.d_max_s * self.fps).ceil() as usize
    }

    pub fn from_config(cfg: &crate::Config, noise_threshold: f64) -> Self {
        BeatConfig {
            d_min_s: cfg.d_min_s,
            d_max_s: cfg.d_max_s,
            noise_threshold,
            fps: cfg.fps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beat {
    pub time_s: f64,
    pub is_pseudo: bool,
}

/// Ordered beats defining the segmentation intervals `[b_i, b_{i+1})` plus
/// the trailing partial interval `[b_last, clip_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatGrid {
    pub beats: Vec<Beat>,
    pub clip_end_s: f64,
}

impl BeatGrid {
    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    /// Segmentation intervals `(start, end)` between consecutive beats,
    /// including the trailing partial interval when it is at least
    /// `min_duration` long.
    pub fn intervals(&self, min_duration: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for w in self.beats.windows(2) {
            out.push((w[0].time_s, w[1].time_s));
        }
        if let Some(last) = self.beats.last() {
            if self.clip_end_s - last.time_s >= min_duration {
                out.push((last.time_s, self.clip_end_s));
            }
        }
        out
    }

    /// A uniform grid with the same span, spaced `step` apart: the
    /// fixed-interval segmentation used by ablations.
    pub fn fixed(step: f64, clip_end_s: f64) -> BeatGrid {
        assert!(step > 0.0);
        let mut beats = Vec::new();
        let mut t = 0.0;
        while t < clip_end_s {
            beats.push(Beat {
                time_s: t,
                is_pseudo: true,
            });
            t += step;
        }
        BeatGrid { beats, clip_end_s }
    }
}

/// Scan onsets into a beat grid. See the module docs for the rules; the
/// clip start anchors pseudo-beat insertion but does not itself become a
/// beat, and the first onset is never dropped against it.
pub fn identify_beats(
    onsets: &OnsetList,
    volume: &RmsEnvelope,
    cfg: &BeatConfig,
    clip_end_s: f64,
) -> BeatGrid {
    assert!(cfg.d_min_s > 0.0 && cfg.d_min_s < cfg.d_max_s);
    let mut beats: Vec<Beat> = Vec::new();
    // virtual anchor at the clip start
    let mut last = 0.0f64;

    let fill_gap = |beats: &mut Vec<Beat>, last: &mut f64, gap_end: f64| {
        while gap_end - *last > cfg.d_max_s {
            // first loud envelope frame in (last + D_m, last + D_M]
            let mut placed = None;
            let lo = *last + cfg.d_min_s;
            let hi = (*last + cfg.d_max_s).min(gap_end);
            let mut j = (lo / volume.hop_s).floor().max(0.0) as usize;
            while volume.frame_time(j) < lo {
                j += 1;
            }
            while j < volume.values.len() && volume.frame_time(j) <= hi {
                if volume.values[j] > cfg.noise_threshold {
                    placed = Some(volume.frame_time(j));
                    break;
                }
                j += 1;
            }
            match placed {
                Some(t) => {
                    beats.push(Beat {
                        time_s: t,
                        is_pseudo: true,
                    });
                    *last = t;
                }
                None => {
                    // quiet region: minimal even placement over the rest
                    let gap = gap_end - *last;
                    let mut n = (gap / cfg.d_max_s).ceil() as usize;
                    if n >= 1 {
                        n -= 1;
                    }
                    while gap / (n + 1) as f64 >= cfg.d_max_s {
                        n += 1;
                    }
                    let start = *last;
                    for i in 1..=n {
                        let t = start + gap * i as f64 / (n + 1) as f64;
                        beats.push(Beat {
                            time_s: t,
                            is_pseudo: true,
                        });
                        *last = t;
                    }
                    return;
                }
            }
        }
    };

    for (&t, _strength) in onsets.times.iter().zip(onsets.strengths.iter()) {
        let t = t.min(clip_end_s);
        fill_gap(&mut beats, &mut last, t);
        let too_close = !beats.is_empty() && t - last < cfg.d_min_s;
        if !too_close {
            beats.push(Beat {
                time_s: t,
                is_pseudo: false,
            });
            last = t;
        }
    }
    fill_gap(&mut beats, &mut last, clip_end_s);

    BeatGrid {
        beats,
        clip_end_s,
    }
}
