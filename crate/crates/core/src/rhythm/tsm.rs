//! Waveform-similarity overlap-add time-scale modification.
//!
//! Stretches or compresses audio while preserving pitch: 40 ms Hann frames
//! at 50% overlap, each analysis frame chosen within a small tolerance to
//! maximize cross-correlation with the natural continuation of the previous
//! output frame.

/// Frame length in seconds.
const FRAME_S: f64 = 0.040;
/// Search tolerance in seconds around the nominal analysis position.
const TOLERANCE_S: f64 = 0.010;

/// Time-scale `samples` by `factor` (output duration = input duration *
/// factor). Returns exactly `round(len * factor)` samples.
pub fn time_scale(samples: &[f64], sample_rate: u32, factor: f64) -> Vec<f64> {
    assert!(factor > 0.0, "scale factor must be positive");
    let target = ((samples.len() as f64) * factor).round().max(1.0) as usize;
    if samples.is_empty() {
        return vec![0.0; target];
    }
    let n = (((FRAME_S * sample_rate as f64) as usize) / 2 * 2).max(4);
    if samples.len() <= n {
        // too short for overlap-add; fall back to linear resampling
        return resample_to(samples, target);
    }
    let hs = n / 2;
    let ha = hs as f64 / factor;
    let tol = (TOLERANCE_S * sample_rate as f64) as isize;
    let hann: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();

    let frames = target / hs + 2;
    let mut out = vec![0.0; target + n];
    let mut norm = vec![0.0; target + n];
    let max_start = samples.len() - n;
    let mut prev_start = 0usize;
    for m in 0..frames {
        let nominal = ((m as f64 * ha).round() as isize).clamp(0, max_start as isize);
        let start = if m == 0 {
            0
        } else {
            // natural continuation of the previous output frame
            let natural = (prev_start + hs).min(max_start);
            let lo = (nominal - tol).max(0);
            let hi = (nominal + tol).min(max_start as isize);
            let mut best = nominal;
            let mut best_score = f64::NEG_INFINITY;
            let mut s = lo;
            while s <= hi {
                let mut score = 0.0;
                // correlate the overlapping halves
                for i in 0..hs {
                    score += samples[s as usize + i] * samples[natural + i];
                }
                if score > best_score {
                    best_score = score;
                    best = s;
                }
                s += 1;
            }
            best as usize
        };
        let out_at = m * hs;
        for i in 0..n {
            if out_at + i >= out.len() {
                break;
            }
            out[out_at + i] += samples[start + i] * hann[i];
            norm[out_at + i] += hann[i];
        }
        prev_start = start;
    }
    out.truncate(target);
    for (o, w) in out.iter_mut().zip(norm.iter()) {
        if *w > 1e-6 {
            *o /= w;
        }
    }
    out
}

fn resample_to(samples: &[f64], target: usize) -> Vec<f64> {
    if samples.len() == 1 {
        return vec![samples[0]; target];
    }
    (0..target)
        .map(|i| {
            let pos = if target == 1 {
                0.0
            } else {
                i as f64 * (samples.len() - 1) as f64 / (target - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(samples.len() - 1);
            let t = pos - lo as f64;
            samples[lo] * (1.0 - t) + samples[hi] * t
        })
        .collect()
}

/// Dominant frequency of a signal by parabolic-free DFT peak search,
/// used by tests and diagnostics.
pub fn dominant_frequency(samples: &[f64], sample_rate: u32) -> f64 {
    use rustfft::{num_complex::Complex, FftPlanner};
    let n = samples.len();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    fft.process(&mut buf);
    let half = n / 2;
    let peak = (1..half)
        .max_by(|&a, &b| buf[a].norm_sqr().partial_cmp(&buf[b].norm_sqr()).unwrap())
        .unwrap_or(0);
    peak as f64 * sample_rate as f64 / n as f64
}
