//! Spectral-flux onset detection.
//!
//! Onset strength is the half-wave-rectified flux of a log-magnitude
//! short-time spectrum (window 1024, analysis rate 16 kHz), compressed as
//! `ln(1 + 10 |X|)`. Onsets are strict local maxima of the flux exceeding an
//! adaptive median threshold.

use crate::data::audio::{stft_power, AudioClip, STFT_WINDOW};
use crate::math::Mat;

/// Detected onsets: strictly increasing times with their flux strengths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OnsetList {
    pub times: Vec<f64>,
    pub strengths: Vec<f64>,
}

impl OnsetList {
    pub fn new(times: Vec<f64>, strengths: Vec<f64>) -> Self {
        assert_eq!(times.len(), strengths.len());
        assert!(
            times.windows(2).all(|w| w[0] < w[1]),
            "onset times must strictly increase"
        );
        OnsetList { times, strengths }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

const ANALYSIS_RATE: u32 = 16_000;
/// Fraction of the peak flux added to the median threshold.
const PEAK_BIAS: f64 = 0.1;
/// Median window half-width in flux frames.
const MEDIAN_HALF: usize = 8;

/// Half-wave-rectified spectral flux of the log-magnitude spectrum.
/// Returns one value per STFT frame.
pub fn spectral_flux(samples: &[f64], window: usize, hop: usize) -> Vec<f64> {
    let power = stft_power(samples, window, hop);
    let log_mag: Mat = power.map(|p| (1.0 + 10.0 * p.sqrt()).ln());
    let mut flux = vec![0.0; log_mag.rows()];
    for f in 1..log_mag.rows() {
        let mut acc = 0.0;
        for b in 0..log_mag.cols() {
            let d = log_mag.get(f, b) - log_mag.get(f - 1, b);
            if d > 0.0 {
                acc += d;
            }
        }
        flux[f] = acc;
    }
    flux
}

/// Detect onsets with an STFT hop of `frame_hop` seconds.
///
/// Silent (all-zero) audio yields an empty list. The audio is resampled to
/// 16 kHz for analysis regardless of its native rate.
pub fn detect_onsets(audio: &AudioClip, frame_hop: f64) -> OnsetList {
    assert!(frame_hop > 0.0, "frame hop must be positive");
    assert!(
        audio.duration_s() >= 2.0 * frame_hop,
        "audio must span at least two hops"
    );
    let work = audio.resampled(ANALYSIS_RATE);
    let hop = ((frame_hop * ANALYSIS_RATE as f64).round() as usize).max(1);
    let flux = spectral_flux(work.samples(), STFT_WINDOW, hop);

    let peak = flux.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return OnsetList::default();
    }

    let mut times = Vec::new();
    let mut strengths = Vec::new();
    for f in 1..flux.len().saturating_sub(1) {
        if !(flux[f] > flux[f - 1] && flux[f] >= flux[f + 1]) {
            continue;
        }
        let lo = f.saturating_sub(MEDIAN_HALF);
        let hi = (f + MEDIAN_HALF + 1).min(flux.len());
        let median = crate::math::percentile(&flux[lo..hi], 50.0);
        if flux[f] > median + PEAK_BIAS * peak {
            let t = refine_onset_time(work.samples(), f * hop);
            if times.last().map(|&prev| t > prev + 1e-6).unwrap_or(true) {
                times.push(t);
                strengths.push(flux[f]);
            }
        }
    }
    OnsetList::new(times, strengths)
}

/// Locate the energy rise inside the peak frame's window: the first 2 ms
/// hop whose local RMS reaches half the window maximum. Log compression
/// makes the flux peak lead a sharp transient by up to a frame; this pins
/// the reported time to the transient itself.
fn refine_onset_time(samples: &[f64], frame_start: usize) -> f64 {
    const LOCAL_WIN: usize = 64;
    const LOCAL_HOP: usize = 32;
    let end = (frame_start + STFT_WINDOW + LOCAL_WIN).min(samples.len());
    let seg = &samples[frame_start.min(samples.len())..end];
    if seg.len() < LOCAL_WIN {
        return frame_start as f64 / ANALYSIS_RATE as f64;
    }
    let rms: Vec<f64> = (0..(seg.len() - LOCAL_WIN) / LOCAL_HOP + 1)
        .map(|j| {
            let w = &seg[j * LOCAL_HOP..j * LOCAL_HOP + LOCAL_WIN];
            (w.iter().map(|s| s * s).sum::<f64>() / LOCAL_WIN as f64).sqrt()
        })
        .collect();
    let mx = rms.iter().cloned().fold(0.0f64, f64::max);
    let at = rms
        .iter()
        .position(|&v| v >= 0.5 * mx)
        .unwrap_or(0);
    (frame_start + at * LOCAL_HOP + LOCAL_WIN / 2) as f64 / ANALYSIS_RATE as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    pub fn click_train(sr: u32, clicks: &[f64], dur_s: f64) -> AudioClip {
        let n = (sr as f64 * dur_s) as usize;
        let mut samples = vec![0.0; n];
        for &t in clicks {
            let at = (t * sr as f64) as usize;
            for i in 0..64.min(n.saturating_sub(at)) {
                // short decaying burst
                samples[at + i] += 0.9 * (-(i as f64) / 16.0).exp();
            }
        }
        AudioClip::new(sr, samples).unwrap()
    }

    #[test]
    fn pure_silence_yields_no_onsets() {
        let clip = AudioClip::new(16_000, vec![0.0; 32_000]).unwrap();
        let onsets = detect_onsets(&clip, 0.016);
        assert!(onsets.is_empty());
    }

    #[test]
    fn click_train_is_recovered_within_one_hop() {
        let hop = 0.016;
        let clicks: Vec<f64> = (1..6).map(|i| i as f64 * 0.5).collect();
        let clip = click_train(16_000, &clicks, 3.2);
        let onsets = detect_onsets(&clip, hop);
        for &c in &clicks {
            let nearest = onsets
                .times
                .iter()
                .map(|&t| (t - c).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= hop + 1e-9, "click at {c}: nearest onset {nearest} away");
        }
        // and no spurious extras far from any click
        for &t in &onsets.times {
            let nearest = clicks
                .iter()
                .map(|&c| (t - c).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.1, "spurious onset at {t}");
        }
    }

    #[test]
    fn white_noise_stays_below_five_onsets_per_second() {
        let mut rng = rng::stream(5, "onset-noise");
        let dur = 4.0;
        let samples: Vec<f64> = (0..(16_000.0 * dur) as usize)
            .map(|_| rng.random::<f64>() * 0.4 - 0.2)
            .collect();
        let clip = AudioClip::new(16_000, samples).unwrap();
        let onsets = detect_onsets(&clip, 0.016);
        assert!(
            (onsets.len() as f64) <= 5.0 * dur,
            "{} onsets in {dur} s",
            onsets.len()
        );
    }

    #[test]
    fn strengths_are_positive_and_times_increase() {
        let clip = click_train(16_000, &[0.3, 0.9, 1.4], 2.0);
        let onsets = detect_onsets(&clip, 0.016);
        assert!(!onsets.is_empty());
        assert!(onsets.strengths.iter().all(|&s| s > 0.0));
        assert!(onsets.times.windows(2).all(|w| w[0] < w[1]));
    }
}
