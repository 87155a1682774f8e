//! Mono audio clips: WAV I/O, resampling, RMS envelopes, and the mel
//! front-end shared by onset detection and the audio encoder.

use crate::error::{Error, Result};
use crate::math::Mat;
use rustfft::{num_complex::Complex, FftPlanner};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    sample_rate: u32,
    samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Argument("audio clip must not be empty".into()));
        }
        Ok(AudioClip {
            sample_rate,
            samples,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples covering `[start_s, end_s)`, zero-padded past the end.
    pub fn slice_seconds(&self, start_s: f64, end_s: f64) -> Vec<f64> {
        let sr = self.sample_rate as f64;
        let start = (start_s * sr).round().max(0.0) as usize;
        let end = (end_s * sr).round().max(0.0) as usize;
        (start..end)
            .map(|i| self.samples.get(i).copied().unwrap_or(0.0))
            .collect()
    }

    /// Linear-interpolation resample to a new rate.
    pub fn resampled(&self, new_rate: u32) -> AudioClip {
        if new_rate == self.sample_rate {
            return self.clone();
        }
        let ratio = self.sample_rate as f64 / new_rate as f64;
        let new_len = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let samples = (0..new_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(self.samples.len() - 1);
                let t = pos - lo as f64;
                let lo = lo.min(self.samples.len() - 1);
                self.samples[lo] * (1.0 - t) + self.samples[hi] * t
            })
            .collect();
        AudioClip {
            sample_rate: new_rate,
            samples,
        }
    }

    /// RMS over consecutive non-overlapping windows of `window_s` seconds.
    pub fn rms_envelope(&self, window_s: f64) -> RmsEnvelope {
        let win = ((window_s * self.sample_rate as f64).round() as usize).max(1);
        let values = self
            .samples
            .chunks(win)
            .map(|chunk| {
                (chunk.iter().map(|s| s * s).sum::<f64>() / chunk.len() as f64).sqrt()
            })
            .collect();
        RmsEnvelope {
            hop_s: win as f64 / self.sample_rate as f64,
            values,
        }
    }
}

/// RMS volume sampled on a uniform frame grid; frame `j` covers
/// `[j * hop_s, (j+1) * hop_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsEnvelope {
    pub hop_s: f64,
    pub values: Vec<f64>,
}

impl RmsEnvelope {
    /// Time of frame `j` (its left edge).
    pub fn frame_time(&self, j: usize) -> f64 {
        j as f64 * self.hop_s
    }

    pub fn value_at(&self, t: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let idx = ((t / self.hop_s).floor() as usize).min(self.values.len() - 1);
        self.values[idx]
    }
}

// ---- WAV I/O (16-bit PCM mono) ----

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::corrupt(path, msg.to_string());
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fail("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut sample_rate = 0u32;
    let mut channels = 0u16;
    let mut bits = 0u16;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(fail("truncated chunk"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(fail("short fmt chunk"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                if format != 1 {
                    return Err(fail("only PCM wav supported"));
                }
                channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1); // chunks are word-aligned
    }
    let data = data.ok_or_else(|| fail("missing data chunk"))?;
    if channels != 1 {
        return Err(fail("only mono wav supported"));
    }
    if bits != 16 {
        return Err(fail("only 16-bit PCM supported"));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    AudioClip::new(sample_rate, samples).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn save_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---- spectral front-end ----

pub const STFT_WINDOW: usize = 1024;
pub const STFT_HOP: usize = 256;

/// Hann-windowed power spectrogram: `frames x (window/2 + 1)`.
/// Frame `f` covers samples starting at `f * hop`.
pub fn stft_power(samples: &[f64], window: usize, hop: usize) -> Mat {
    assert!(window >= 2 && hop >= 1);
    let n_frames = if samples.len() < window {
        1
    } else {
        (samples.len() - window) / hop + 1
    };
    let bins = window / 2 + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window);
    let hann: Vec<f64> = (0..window)
        .map(|i| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (window - 1) as f64).cos()
        })
        .collect();
    let mut out = Mat::zeros(n_frames, bins);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for f in 0..n_frames {
        for i in 0..window {
            let s = samples.get(f * hop + i).copied().unwrap_or(0.0);
            buf[i] = Complex::new(s * hann[i], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            out.set(f, b, buf[b].norm_sqr());
        }
    }
    out
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over `[0, sr/2]`: `bins x n_bands` weights.
fn mel_filterbank(n_bands: usize, bins: usize, sample_rate: f64, window: usize) -> Mat {
    let f_max = sample_rate / 2.0;
    let mel_points: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(hz_to_mel(f_max) * i as f64 / (n_bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate / window as f64;
    Mat::from_fn(bins, n_bands, |bin, band| {
        let f = bin as f64 * bin_hz;
        let (lo, mid, hi) = (
            mel_points[band],
            mel_points[band + 1],
            mel_points[band + 2],
        );
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

/// Log-mel grid resampled to exactly `frames_out` rows.
///
/// The input is resampled to `analysis_rate` first, so the representation is
/// independent of the source rate. Compression is `ln(1 + 10 * mel_power)`.
pub fn log_mel_grid(
    clip: &AudioClip,
    analysis_rate: u32,
    n_bands: usize,
    frames_out: usize,
) -> Mat {
    let work = clip.resampled(analysis_rate);
    let power = stft_power(work.samples(), STFT_WINDOW, STFT_HOP);
    let fb = mel_filterbank(n_bands, power.cols(), analysis_rate as f64, STFT_WINDOW);
    let mel = power.matmul(&fb).map(|v| (1.0 + 10.0 * v).ln());
    crate::math::resample_rows_linear(&mel, frames_out)
}
