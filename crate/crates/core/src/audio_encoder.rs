//! Multi-level convolutional audio encoder with contrastive training.
//!
//! Eight stacked stride-1 convolutions over a log-mel grid produce a feature
//! pyramid per frame. Training pulls the projected top-level feature toward
//! the frame's text feature and pushes every other (level, frame) pair away,
//! so after training the last layer carries the content and the second layer
//! keeps content-irrelevant detail: those two become `A_high` and `A_low`.

use crate::autograd::{Tape, Var};
use crate::checkpoint;
use crate::config::Config;
use crate::data::audio::{log_mel_grid, AudioClip};
use crate::error::{Error, Result};
use crate::math::Mat;
use crate::nn::{Adam, Bound, Conv1d, Linear, Params};
use crate::rhythm::{BeatGrid, NormalizedBlock};
use crate::rng;
use std::path::Path;

pub const NUM_LEVELS: usize = 8;
pub const CHECKPOINT_KIND: &str = "audio-encoder";
/// Layer whose output becomes A_low (1-based level 2).
const LOW_LEVEL: usize = 1;

/// Per-block hierarchical audio features.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureBlock {
    /// `K x d_a`, level-2 output.
    pub low: Mat,
    /// `K x d_A`, level-8 output.
    pub high: Mat,
}

pub struct AudioEncoderModel {
    pub params: Params,
    convs: Vec<Conv1d>,
    proj_text: Linear,
    proj_levels: Vec<Linear>,
    pub tau: f64,
    mel_bands: usize,
    trained: bool,
}

impl AudioEncoderModel {
    pub fn new(cfg: &Config) -> Self {
        let mut rng = rng::stream(cfg.seed, "audio-encoder-init");
        let mut params = Params::new();
        // widths: mel -> 64, -> d_a (A_low), -> 64 x5, -> d_A (A_high)
        let mut dims = vec![64usize; NUM_LEVELS];
        dims[LOW_LEVEL] = cfg.d_audio_low;
        dims[NUM_LEVELS - 1] = cfg.d_audio_high;
        let mut convs = Vec::new();
        let mut in_ch = cfg.mel_bands;
        for (l, &out_ch) in dims.iter().enumerate() {
            convs.push(Conv1d::new(
                &mut params,
                &mut rng,
                &format!("conv{l}"),
                in_ch,
                out_ch,
                3,
            ));
            in_ch = out_ch;
        }
        let proj_text = Linear::new(&mut params, &mut rng, "proj_text", cfg.d_text, cfg.d_projection);
        let proj_levels = dims
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                Linear::new(&mut params, &mut rng, &format!("proj_a{l}"), d, cfg.d_projection)
            })
            .collect();
        AudioEncoderModel {
            params,
            convs,
            proj_text,
            proj_levels,
            tau: cfg.tau,
            mel_bands: cfg.mel_bands,
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// Forward pass on a tape: all `L` per-frame feature grids.
    pub fn encode_levels(&self, t: &mut Tape, p: &Bound, mel: Var) -> Vec<Var> {
        assert_eq!(
            t.value(mel).cols(),
            self.mel_bands,
            "mel grid width mismatch"
        );
        let mut levels = Vec::with_capacity(NUM_LEVELS);
        let mut x = mel;
        for conv in &self.convs {
            let y = conv.forward(t, p, x);
            x = t.leaky_relu(y, 0.2);
            levels.push(x);
        }
        levels
    }

    /// Deterministic evaluation of all levels for one mel grid.
    pub fn encode_multilevel(&self, mel: &Mat) -> Vec<Mat> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let input = tape.input(mel.clone());
        let levels = self.encode_levels(&mut tape, &bound, input);
        levels.into_iter().map(|v| tape.value(v).clone()).collect()
    }

    /// The contrastive loss for one block on a tape.
    ///
    /// For each frame `k`, the positive pair is the projected top-level
    /// feature at `k`; the denominator runs over every frame of every level
    /// (including the positive term). Similarities are cosine in a shared
    /// projection space; zero-norm vectors contribute similarity 0.
    pub fn contrastive_loss(
        &self,
        t: &mut Tape,
        p: &Bound,
        text: Var,
        levels: &[Var],
    ) -> Var {
        let k = t.value(text).rows();
        let text_proj = self.proj_text.forward(t, p, text);
        let text_n = t.normalize_rows(text_proj, 1e-12);
        let mut projected = Vec::with_capacity(levels.len());
        for (l, &level) in levels.iter().enumerate() {
            let proj = self.proj_levels[l].forward(t, p, level);
            projected.push(proj);
        }
        let stacked = t.vcat(&projected); // (L*K) x d_proj
        let stacked_n = t.normalize_rows(stacked, 1e-12);
        let stacked_t = t.transpose(stacked_n);
        let sims = t.matmul(text_n, stacked_t); // K x (L*K)
        let logits = t.scale(sims, 1.0 / self.tau);
        let lse = t.logsumexp_rows(logits); // K x 1
        // positive for anchor k: level L (last), frame k
        let pos_cols: Vec<usize> = (0..k).map(|i| (NUM_LEVELS - 1) * k + i).collect();
        let pos = t.select_per_row(logits, pos_cols);
        let diff = t.sub(lse, pos);
        t.mean(diff)
    }

    /// Count of zero-norm projected vectors for diagnostics.
    pub fn zero_norm_count(&self, text: &Mat, levels: &[Mat]) -> usize {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let tv = tape.input(text.clone());
        let tp = self.proj_text.forward(&mut tape, &bound, tv);
        let mut count = count_zero_rows(tape.value(tp));
        for (l, level) in levels.iter().enumerate() {
            let lv = tape.input(level.clone());
            let lp = self.proj_levels[l].forward(&mut tape, &bound, lv);
            count += count_zero_rows(tape.value(lp));
        }
        count
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, CHECKPOINT_KIND, &self.params)
    }

    pub fn load(path: &Path, cfg: &Config) -> Result<Self> {
        let mut model = AudioEncoderModel::new(cfg);
        checkpoint::load_params(path, CHECKPOINT_KIND, &mut model.params)?;
        model.trained = true;
        Ok(model)
    }
}

fn count_zero_rows(m: &Mat) -> usize {
    (0..m.rows())
        .filter(|&r| m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12)
        .count()
}

/// Train on `(mel grid, text features)` block pairs. Returns the loss curve
/// as `(step, loss)` rows.
pub fn train_audio_encoder(
    dataset: &[(Mat, Mat)],
    cfg: &Config,
) -> Result<(AudioEncoderModel, Vec<(usize, f64)>)> {
    if dataset.is_empty() {
        return Err(Error::Argument("audio-encoder dataset is empty".into()));
    }
    let mut model = AudioEncoderModel::new(cfg);
    let mut adam = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut order_rng = rng::stream(cfg.seed, "audio-encoder-batches");
    let mut curve = Vec::new();
    let batch = cfg.batch_size.min(dataset.len());
    for step in 0..cfg.audio_encoder_steps {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let mut losses = Vec::with_capacity(batch);
        for _ in 0..batch {
            let idx = rand::Rng::random_range(&mut order_rng, 0..dataset.len());
            let (mel, text) = &dataset[idx];
            let mel_v = tape.input(mel.clone());
            let text_v = tape.input(text.clone());
            let levels = model.encode_levels(&mut tape, &bound, mel_v);
            losses.push(model.contrastive_loss(&mut tape, &bound, text_v, &levels));
        }
        let total = tape.vcat(&losses);
        let loss = tape.mean(total);
        let loss_val = tape.value(loss).item();
        if !loss_val.is_finite() {
            return Err(Error::Numerical(format!(
                "contrastive loss diverged at step {step}; lower learning_rate (currently {})",
                cfg.learning_rate
            )));
        }
        let grads = tape.backward(loss);
        adam.step(&mut model.params, &bound, &grads);
        if step % 10 == 0 || step + 1 == cfg.audio_encoder_steps {
            curve.push((step, loss_val));
        }
    }
    model.trained = true;
    Ok((model, curve))
}

/// A_low / A_high for already-normalized blocks.
pub fn features_for_blocks(
    blocks: &[NormalizedBlock],
    sample_rate: u32,
    model: &AudioEncoderModel,
    cfg: &Config,
) -> Result<Vec<AudioFeatureBlock>> {
    if !model.trained {
        return Err(Error::Untrained("audio encoder".into()));
    }
    let k = cfg.block_frames();
    blocks
        .iter()
        .map(|b| {
            let clip = AudioClip::new(sample_rate, pad_if_empty(&b.audio))?;
            let mel = log_mel_grid(&clip, cfg.analysis_sample_rate, cfg.mel_bands, k);
            let levels = model.encode_multilevel(&mel);
            Ok(AudioFeatureBlock {
                low: levels[LOW_LEVEL].clone(),
                high: levels[NUM_LEVELS - 1].clone(),
            })
        })
        .collect()
}

/// Segment raw audio by the grid and extract per-block features (audio-only
/// path; motion and text are not required).
pub fn extract_features(
    audio: &AudioClip,
    grid: &BeatGrid,
    model: &AudioEncoderModel,
    cfg: &Config,
    noise_threshold: f64,
) -> Result<Vec<AudioFeatureBlock>> {
    let input = crate::rhythm::segment::SegmentInput {
        motion: None,
        audio,
        text_frames: None,
        alignment: None,
        noise_threshold,
    };
    let blocks =
        crate::rhythm::normalize_segments(&input, grid, cfg.fps, cfg.d_min_s, cfg.d_max_s)?;
    features_for_blocks(&blocks, audio.sample_rate(), model, cfg)
}

fn pad_if_empty(samples: &[f64]) -> Vec<f64> {
    if samples.is_empty() {
        vec![0.0; 64]
    } else {
        samples.to_vec()
    }
}

/// Write a `step,loss` CSV.
pub fn save_loss_curve(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (step, loss) in curve {
        out.push_str(&format!("{step},{loss}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
