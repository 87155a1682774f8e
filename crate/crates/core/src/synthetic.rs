//! Synthetic benchmark datasets with planted ground truth.
//!
//! Desk-scale stand-ins for mocap corpora: audio with noise-floor plus
//! tonal bursts at known beat times, motion built from per-prototype target
//! poses (ease-out hit into a hold, small continuous sway), and word
//! alignments whose tokens name the prototype. The planted truth (burst
//! times, per-interval prototypes, silent spans) drives the oracle tests.

use crate::config::Config;
use crate::data::audio::{save_wav, AudioClip};
use crate::data::motion::{save_motion_clip, MotionClip};
use crate::data::skeleton::{Skeleton, POSE_DIM};
use crate::data::text::{AlignEntry, WordAlignment, WordEmbeddingTable, EMPTY_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::manifest::{ClipRecord, DatasetManifest, Split};
use crate::math::Mat;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub prototypes: usize,
    pub clips: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub sample_rate: u32,
    /// Probability that a speech run is followed by a silence gap.
    pub silence_prob: f64,
    /// Fraction of clips tagged as the test split (at least one).
    pub test_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            prototypes: 6,
            clips: 6,
            duration_s: 30.0,
            fps: 20.0,
            sample_rate: 16_000,
            silence_prob: 0.25,
            test_fraction: 0.25,
        }
    }
}

/// One planted interval: `[start, end)` seconds, its prototype (None for
/// silence).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub prototype: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct ClipTruth {
    /// Planted burst (audio beat) times.
    pub beats: Vec<f64>,
    pub intervals: Vec<TruthInterval>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct DatasetTruth {
    pub clips: BTreeMap<String, ClipTruth>,
}

/// A fully materialized synthetic clip.
pub struct SyntheticClip {
    pub audio: AudioClip,
    pub motion: MotionClip,
    pub alignment: WordAlignment,
    pub truth: ClipTruth,
}

/// Per-prototype target poses. Arm channels move, the spine stays put.
pub fn prototype_targets(seed: u64, prototypes: usize) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, "synthetic-prototypes");
    (0..prototypes)
        .map(|_| {
            let mut pose = vec![0.0; POSE_DIM];
            // joints 6.. are the arm chains of the canonical skeleton
            for v in pose.iter_mut().skip(6 * 3) {
                *v = (r.random::<f64>() * 2.0 - 1.0) * 0.5;
            }
            pose
        })
        .collect()
}

const BURST_S: f64 = 0.07;
const NOISE_FLOOR: f64 = 0.006;
const TRANSITION_FRAC: f64 = 0.3;
const SWAY_AMP: f64 = 0.012;
const SWAY_HZ: f64 = 0.35;

fn prototype_tone_hz(p: usize) -> f64 {
    500.0 + 350.0 * p as f64
}

/// Generate one clip with planted beats, prototypes, and silences.
pub fn synthesize_clip(spec: &SynthSpec, clip_index: usize) -> SyntheticClip {
    let mut r = rng::stream(spec.seed, &format!("synthetic-clip-{clip_index}"));
    let targets = prototype_targets(spec.seed, spec.prototypes);

    // plan beats and intervals
    let mut truth = ClipTruth::default();
    let mut align = Vec::new();
    let mut t = 0.06;
    while t < spec.duration_s - 0.6 {
        // a speech run
        let run = r.random_range(4..=9usize);
        for _ in 0..run {
            if t >= spec.duration_s - 0.6 {
                break;
            }
            let interval = 0.28 + r.random::<f64>() * 0.17;
            let end = (t + interval).min(spec.duration_s);
            let proto = r.random_range(0..spec.prototypes);
            truth.beats.push(t);
            truth.intervals.push(TruthInterval {
                start_s: t,
                end_s: end,
                prototype: Some(proto),
            });
            align.push(AlignEntry {
                token: format!("w{proto}"),
                start_s: t,
                end_s: end,
            });
            t = end;
        }
        // maybe a silence gap
        if r.random::<f64>() < spec.silence_prob && t < spec.duration_s - 1.5 {
            let gap = 0.8 + r.random::<f64>() * 0.5;
            let end = (t + gap).min(spec.duration_s);
            truth.intervals.push(TruthInterval {
                start_s: t,
                end_s: end,
                prototype: None,
            });
            align.push(AlignEntry {
                token: String::new(),
                start_s: t,
                end_s: end,
            });
            t = end;
        }
    }

    // audio: noise floor + a tonal burst at every beat
    let n_samples = (spec.duration_s * spec.sample_rate as f64) as usize;
    let mut samples: Vec<f64> = (0..n_samples)
        .map(|_| (r.random::<f64>() * 2.0 - 1.0) * NOISE_FLOOR)
        .collect();
    for iv in truth.intervals.iter().filter(|iv| iv.prototype.is_some()) {
        let p = iv.prototype.unwrap();
        let hz = prototype_tone_hz(p);
        let at = (iv.start_s * spec.sample_rate as f64) as usize;
        let len = (BURST_S * spec.sample_rate as f64) as usize;
        for i in 0..len.min(n_samples.saturating_sub(at)) {
            let tau = i as f64 / spec.sample_rate as f64;
            let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * tau / BURST_S).cos();
            let tone = (2.0 * std::f64::consts::PI * hz * tau).sin();
            samples[at + i] += 0.5 * env * tone;
        }
        // sharp transient for the onset detector
        for i in 0..48.min(n_samples.saturating_sub(at)) {
            samples[at + i] += 0.55 * (-(i as f64) / 12.0).exp() * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
    }
    for s in samples.iter_mut() {
        *s = s.clamp(-1.0, 1.0);
    }

    // motion: ease-out hit into each interval's target, then hold + sway
    let n_frames = (spec.duration_s * spec.fps).round() as usize;
    let mut sway_phase = vec![0.0; POSE_DIM];
    for (c, ph) in sway_phase.iter_mut().enumerate() {
        *ph = c as f64 * 0.7;
    }
    let rest = vec![0.0; POSE_DIM];
    let mut frames = Mat::zeros(n_frames, POSE_DIM);
    for k in 0..n_frames {
        let time = k as f64 / spec.fps;
        // previous and current targets
        let mut prev_target: &[f64] = &rest;
        let mut cur_target: &[f64] = &rest;
        let mut u = 1.0;
        for iv in &truth.intervals {
            if time >= iv.end_s {
                if let Some(p) = iv.prototype {
                    prev_target = &targets[p];
                }
                continue;
            }
            if time >= iv.start_s {
                cur_target = match iv.prototype {
                    Some(p) => &targets[p],
                    None => prev_target, // silence holds the pose
                };
                u = (time - iv.start_s) / (iv.end_s - iv.start_s);
                break;
            }
            cur_target = prev_target;
            break;
        }
        let blend = if u < TRANSITION_FRAC {
            let x = u / TRANSITION_FRAC;
            1.0 - (1.0 - x) * (1.0 - x) // ease-out: fast at the beat
        } else {
            1.0
        };
        let row = frames.row_mut(k);
        for c in 0..POSE_DIM {
            let base = prev_target[c] + (cur_target[c] - prev_target[c]) * blend;
            let sway = if c >= 18 {
                SWAY_AMP * (2.0 * std::f64::consts::PI * SWAY_HZ * time + sway_phase[c]).sin()
            } else {
                0.0
            };
            row[c] = base + sway;
        }
    }

    SyntheticClip {
        audio: AudioClip::new(spec.sample_rate, samples).expect("non-empty"),
        motion: MotionClip::new(spec.fps, frames).expect("valid clip"),
        alignment: WordAlignment::new(align).expect("sorted by construction"),
        truth,
    }
}

/// Word-embedding table covering the prototype tokens.
pub fn synthetic_embeddings(seed: u64, prototypes: usize, dim: usize) -> WordEmbeddingTable {
    let mut r = rng::stream(seed, "synthetic-embeddings");
    let mut vectors = HashMap::new();
    for p in 0..prototypes {
        let v: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r) * 0.5).collect();
        vectors.insert(format!("w{p}"), v);
    }
    for tok in [EMPTY_TOKEN, UNK_TOKEN] {
        let v: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r) * 0.5).collect();
        vectors.insert(tok.to_string(), v);
    }
    WordEmbeddingTable::new(dim, vectors).expect("reserved tokens present")
}

/// Write a complete dataset (skeleton, embeddings, clips, manifest, planted
/// truth) under `dir`. Returns the manifest path.
pub fn generate_synthetic_dataset(
    dir: &Path,
    spec: &SynthSpec,
    cfg: &Config,
) -> Result<std::path::PathBuf> {
    if spec.prototypes > cfg.lexicon_size {
        return Err(Error::Argument(format!(
            "{} prototypes exceed the lexicon size {}",
            spec.prototypes, cfg.lexicon_size
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let skeleton = Skeleton::default_upper_body();
    let skel_path = dir.join("rig.skel");
    skeleton.save(&skel_path)?;
    let emb = synthetic_embeddings(spec.seed, spec.prototypes, cfg.d_text);
    let emb_path = dir.join("words.emb");
    emb.save(&emb_path)?;

    let mut clips = Vec::new();
    let mut truth = DatasetTruth::default();
    let n_test = ((spec.clips as f64 * spec.test_fraction).round() as usize)
        .clamp(1, spec.clips.saturating_sub(1).max(1));
    for i in 0..spec.clips {
        let id = format!("clip{i:03}");
        let clip = synthesize_clip(spec, i);
        let motion_path = dir.join(format!("{id}.motion"));
        let audio_path = dir.join(format!("{id}.wav"));
        let align_path = dir.join(format!("{id}.align.json"));
        save_motion_clip(&motion_path, &clip.motion)?;
        save_wav(&audio_path, &clip.audio)?;
        clip.alignment.save(&align_path)?;
        truth.clips.insert(id.clone(), clip.truth);
        let split = if i + n_test >= spec.clips {
            Split::Test
        } else {
            Split::Train
        };
        clips.push(ClipRecord {
            id,
            motion: motion_path,
            audio: audio_path,
            alignment: Some(align_path),
            speaker: 0,
            split,
        });
    }
    let manifest = DatasetManifest {
        skeleton: skel_path,
        embeddings: emb_path,
        clips,
        config_overrides: None,
    };
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    let truth_path = dir.join("truth.json");
    std::fs::write(
        &truth_path,
        serde_json::to_string_pretty(&truth).expect("serializable"),
    )
    .map_err(|e| Error::io(&truth_path, e))?;
    Ok(manifest_path)
}

pub fn load_truth(dir: &Path) -> Result<DatasetTruth> {
    let path = dir.join("truth.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))
}

/// Direct block dataset: `count` noisy copies of each of `prototypes`
/// smooth random `K x d_m` curves. Returns `(blocks, labels)`.
pub fn prototype_blocks(
    seed: u64,
    prototypes: usize,
    count: usize,
    k: usize,
    noise_sigma: f64,
) -> (Vec<Mat>, Vec<usize>) {
    let mut r = rng::stream(seed, "prototype-blocks");
    // two random harmonics per channel per prototype
    let curves: Vec<Mat> = (0..prototypes)
        .map(|_| {
            let amp: Vec<f64> = (0..POSE_DIM).map(|_| r.random::<f64>() * 0.35).collect();
            let phase: Vec<f64> = (0..POSE_DIM)
                .map(|_| r.random::<f64>() * std::f64::consts::TAU)
                .collect();
            let amp2: Vec<f64> = (0..POSE_DIM).map(|_| r.random::<f64>() * 0.2).collect();
            Mat::from_fn(k, POSE_DIM, |frame, c| {
                let u = frame as f64 / (k - 1).max(1) as f64;
                amp[c] * (std::f64::consts::PI * u + phase[c]).sin()
                    + amp2[c] * (2.0 * std::f64::consts::PI * u + phase[c] * 0.5).cos()
            })
        })
        .collect();
    let mut blocks = Vec::with_capacity(prototypes * count);
    let mut labels = Vec::with_capacity(prototypes * count);
    for (p, curve) in curves.iter().enumerate() {
        for _ in 0..count {
            let noisy = Mat::from_fn(curve.rows(), curve.cols(), |row, col| {
                curve.get(row, col) + rng::normal(&mut r) * noise_sigma
            });
            blocks.push(noisy);
            labels.push(p);
        }
    }
    (blocks, labels)
}

/// Synthetic contrastive pairs: the text vector is a fixed linear function
/// of the planted word class; the mel grid mixes a class-specific band bump
/// with strong class-irrelevant nuisance. Returns `(pairs, labels)`.
pub fn contrastive_pairs(
    seed: u64,
    classes: usize,
    pairs: usize,
    k: usize,
    mel_bands: usize,
    d_text: usize,
) -> (Vec<(Mat, Mat)>, Vec<usize>) {
    let mut r = rng::stream(seed, "contrastive-pairs");
    let text_vecs: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d_text).map(|_| rng::normal(&mut r)).collect())
        .collect();
    let class_band = |c: usize| 2.0 + (mel_bands - 5) as f64 * c as f64 / classes.max(1) as f64;
    let mut out = Vec::with_capacity(pairs);
    let mut labels = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let class = i % classes;
        let center = class_band(class);
        let tilt = r.random::<f64>() * 1.2 - 0.6;
        let nuisance_band = r.random::<f64>() * (mel_bands - 1) as f64;
        let nuisance_amp = r.random::<f64>() * 0.8;
        let mel = Mat::from_fn(k, mel_bands, |_, b| {
            let b = b as f64;
            let class_bump = 1.2 * (-(b - center).powi(2) / 2.0).exp();
            let nuisance = nuisance_amp * (-(b - nuisance_band).powi(2) / 8.0).exp();
            let ramp = tilt * b / mel_bands as f64;
            class_bump + nuisance + ramp + rng::normal(&mut r) * 0.15
        });
        let text = Mat::row_vec(text_vecs[class].clone()).repeat_rows(k);
        out.push((mel, text));
        labels.push(class);
    }
    (out, labels)
}
