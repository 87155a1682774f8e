//! The gesture lexicon: a vector-quantized autoencoder over normalized
//! motion blocks.
//!
//! The encoder (four 1-D convolutions, a temporal mean-pool, and a fully
//! connected head) maps a `K x d_m` block to a latent in `R^{d_s}`; the
//! codebook stores `N_s` lexemes; the decoder mirrors the encoder. Training
//! uses the straight-through estimator: the reconstruction gradient bypasses
//! the quantizer, the `w_alpha` term pulls the encoder toward its lexeme,
//! the `w_beta` term moves only the codebook.

use crate::autograd::{Tape, Var};
use crate::checkpoint::{self, Reader, Writer};
use crate::config::Config;
use crate::data::skeleton::{Skeleton, POSE_DIM};
use crate::error::{Error, Result};
use crate::math::{self, Mat};
use crate::nn::{Adam, Bound, Conv1d, Linear, ParamId, Params};
use crate::rng;
use rand::Rng;
use std::collections::BTreeSet;
use std::path::Path;

pub const CHECKPOINT_KIND: &str = "lexicon";
/// Steps a codebook row may stay unused before it is reseeded.
const DEAD_CODE_STEPS: usize = 200;

pub struct LexiconModel {
    pub params: Params,
    enc_convs: Vec<Conv1d>,
    enc_fc: Linear,
    dec_fc: Linear,
    dec_convs: Vec<Conv1d>,
    codebook: ParamId,
    pub d_lexeme: usize,
    pub w_alpha: f64,
    pub w_beta: f64,
    trained: bool,
}

/// Loss components of one block, mirroring the three terms of the training
/// objective (sums of squares).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexiconLoss {
    pub reconstruction: f64,
    pub commit_encoder: f64,
    pub commit_codebook: f64,
    pub total: f64,
}

/// Per-block lexeme assignment plus the lexicon-wide silent set.
#[derive(Debug, Clone, PartialEq)]
pub struct LexemeAssignment {
    pub lexemes: Vec<usize>,
    pub latents: Vec<Vec<f64>>,
    pub quantized: Vec<Vec<f64>>,
    pub silent: BTreeSet<usize>,
}

impl LexiconModel {
    pub fn new(cfg: &Config) -> Self {
        let mut rng = rng::stream(cfg.seed, "lexicon-init");
        let mut params = Params::new();
        let ch = &cfg.lexicon_channels;
        let mut enc_convs = Vec::new();
        let mut in_ch = POSE_DIM;
        for (i, &out_ch) in ch.iter().enumerate() {
            enc_convs.push(Conv1d::new(&mut params, &mut rng, &format!("enc{i}"), in_ch, out_ch, 3));
            in_ch = out_ch;
        }
        let enc_fc = Linear::new(&mut params, &mut rng, "enc_fc", in_ch, cfg.d_lexeme);
        let dec_fc = Linear::new(&mut params, &mut rng, "dec_fc", cfg.d_lexeme, in_ch);
        let mut dec_convs = Vec::new();
        let mut dims: Vec<usize> = ch.iter().rev().skip(1).copied().collect();
        dims.push(POSE_DIM);
        let mut cur = *ch.last().unwrap();
        for (i, &out_ch) in dims.iter().enumerate() {
            dec_convs.push(Conv1d::new(&mut params, &mut rng, &format!("dec{i}"), cur, out_ch, 3));
            cur = out_ch;
        }
        let codebook = params.add(
            "codebook",
            crate::nn::init_uniform(&mut rng, cfg.lexicon_size, cfg.d_lexeme, cfg.d_lexeme),
        );
        LexiconModel {
            params,
            enc_convs,
            enc_fc,
            dec_fc,
            dec_convs,
            codebook,
            d_lexeme: cfg.d_lexeme,
            w_alpha: cfg.w_alpha,
            w_beta: cfg.w_beta,
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn lexicon_size(&self) -> usize {
        self.params.get(self.codebook).rows()
    }

    pub fn codebook(&self) -> &Mat {
        self.params.get(self.codebook)
    }

    pub fn codebook_row(&self, idx: usize) -> &[f64] {
        self.params.get(self.codebook).row(idx)
    }

    /// Encoder on a tape: `K x d_m` block to `1 x d_s` latent.
    pub fn encode_on(&self, t: &mut Tape, p: &Bound, block: Var) -> Var {
        let mut x = block;
        for conv in &self.enc_convs {
            let y = conv.forward(t, p, x);
            x = t.leaky_relu(y, 0.2);
        }
        let pooled = t.mean_rows(x);
        self.enc_fc.forward(t, p, pooled)
    }

    /// Decoder on a tape: `1 x d_s` latent to `K x d_m` block.
    pub fn decode_on(&self, t: &mut Tape, p: &Bound, latent: Var, k: usize) -> Var {
        let h = self.dec_fc.forward(t, p, latent);
        let h = t.leaky_relu(h, 0.2);
        let mut x = t.repeat_rows(h, k);
        let last = self.dec_convs.len() - 1;
        for (i, conv) in self.dec_convs.iter().enumerate() {
            x = conv.forward(t, p, x);
            if i != last {
                x = t.leaky_relu(x, 0.2);
            }
        }
        x
    }

    /// Deterministic latent of a block.
    pub fn encode(&self, block: &Mat) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let b = tape.input(block.clone());
        let e = self.encode_on(&mut tape, &bound, b);
        tape.value(e).as_slice().to_vec()
    }

    pub fn decode(&self, latent: &[f64], k: usize) -> Mat {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let l = tape.input(Mat::row_vec(latent.to_vec()));
        let d = self.decode_on(&mut tape, &bound, l, k);
        tape.value(d).clone()
    }

    /// The three-term loss on a tape with straight-through gradients.
    /// Returns `(loss_var, chosen_index)`.
    pub fn loss_on(&self, t: &mut Tape, p: &Bound, block: Var) -> (Var, usize) {
        let k = t.value(block).rows();
        let e = self.encode_on(t, p, block);
        let (idx, _) = quantize(t.value(e).row(0), self.params.get(self.codebook));
        let s = t.row(p.var(self.codebook), idx);

        // reconstruction through the straight-through latent e + sg(s - e)
        let gap = t.sub(s, e);
        let gap_const = t.detach(gap);
        let st = t.add(e, gap_const);
        let recon = self.decode_on(t, p, st, k);
        let rec_diff = t.sub(block, recon);
        let l_rec = t.sq_norm(rec_diff);

        // w_alpha ||e - sg(s)||^2: moves only the encoder
        let s_const = t.detach(s);
        let d1 = t.sub(e, s_const);
        let l_alpha = t.sq_norm(d1);

        // w_beta ||sg(e) - s||^2: moves only the codebook
        let e_const = t.detach(e);
        let d2 = t.sub(e_const, s);
        let l_beta = t.sq_norm(d2);

        let a = t.scale(l_alpha, self.w_alpha);
        let b = t.scale(l_beta, self.w_beta);
        let ab = t.add(a, b);
        (t.add(l_rec, ab), idx)
    }

    /// Loss component values for one block (no gradients).
    pub fn lexicon_loss(&self, block: &Mat) -> LexiconLoss {
        let e = self.encode(block);
        let (_idx, s) = quantize(&e, self.params.get(self.codebook));
        let recon = self.decode(s, block.rows());
        let reconstruction = block.sub(&recon).sq_norm();
        let commit = math::sq_dist(&e, s);
        LexiconLoss {
            reconstruction,
            commit_encoder: commit,
            commit_codebook: commit,
            total: reconstruction + self.w_alpha * commit + self.w_beta * commit,
        }
    }

    /// Index and codebook vector nearest to a block's latent.
    pub fn assign(&self, block: &Mat) -> (usize, Vec<f64>) {
        let e = self.encode(block);
        let (idx, s) = quantize(&e, self.params.get(self.codebook));
        (idx, s.to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, CHECKPOINT_KIND, &self.params)
    }

    pub fn load(path: &Path, cfg: &Config) -> Result<Self> {
        let mut model = LexiconModel::new(cfg);
        checkpoint::load_params(path, CHECKPOINT_KIND, &mut model.params)?;
        model.trained = true;
        Ok(model)
    }
}

/// Nearest codebook row by Euclidean distance; ties break to the lowest
/// index.
pub fn quantize<'a>(latent: &[f64], codebook: &'a Mat) -> (usize, &'a [f64]) {
    assert!(codebook.rows() > 0, "empty codebook");
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for r in 0..codebook.rows() {
        let d = math::sq_dist(latent, codebook.row(r));
        if d < best_d {
            best_d = d;
            best = r;
        }
    }
    (best, codebook.row(best))
}

/// Train the lexicon on normalized motion blocks. The codebook is seeded
/// with k-means++ over the initial encoder latents; rows unused for 200
/// steps are re-centered on a random latent from the current batch.
pub fn train_lexicon(blocks: &[Mat], cfg: &Config) -> Result<LexiconModel> {
    if blocks.len() < cfg.lexicon_size {
        return Err(Error::Argument(format!(
            "need at least N_s = {} blocks, got {}",
            cfg.lexicon_size,
            blocks.len()
        )));
    }
    let mut model = LexiconModel::new(cfg);

    // k-means++ seeding over initial latents
    let latents: Vec<Vec<f64>> = blocks.iter().map(|b| model.encode(b)).collect();
    let mut seed_rng = rng::stream(cfg.seed, "lexicon-kmeanspp");
    let seeds = kmeans_pp(&latents, cfg.lexicon_size, &mut seed_rng);
    {
        let cb = model.params.get_mut(model.codebook);
        for (r, seed_idx) in seeds.iter().enumerate() {
            cb.row_mut(r).copy_from_slice(&latents[*seed_idx]);
        }
    }

    let mut adam = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut batch_rng = rng::stream(cfg.seed, "lexicon-batches");
    let mut last_used = vec![0usize; cfg.lexicon_size];
    let batch = cfg.batch_size.min(blocks.len());
    for step in 0..cfg.lexicon_steps {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let mut losses = Vec::with_capacity(batch);
        let mut batch_latents: Vec<Vec<f64>> = Vec::with_capacity(batch);
        for _ in 0..batch {
            let idx = batch_rng.random_range(0..blocks.len());
            let block = tape.input(blocks[idx].clone());
            let (loss, code) = model.loss_on(&mut tape, &bound, block);
            last_used[code] = step;
            losses.push(loss);
            batch_latents.push(model.encode(&blocks[idx]));
        }
        let total = tape.vcat(&losses);
        let loss = tape.mean(total);
        let loss_val = tape.value(loss).item();
        if !loss_val.is_finite() {
            return Err(Error::Numerical(format!(
                "lexicon loss diverged at step {step}; lower learning_rate"
            )));
        }
        let grads = tape.backward(loss);
        adam.step(&mut model.params, &bound, &grads);

        // dead-code reseeding
        for row in 0..cfg.lexicon_size {
            if step >= DEAD_CODE_STEPS && step - last_used[row] >= DEAD_CODE_STEPS {
                let pick = batch_rng.random_range(0..batch_latents.len());
                model
                    .params
                    .get_mut(model.codebook)
                    .row_mut(row)
                    .copy_from_slice(&batch_latents[pick]);
                last_used[row] = step;
            }
        }
    }
    model.trained = true;
    Ok(model)
}

fn kmeans_pp(latents: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut chosen = vec![rng.random_range(0..latents.len())];
    let mut dists: Vec<f64> = latents
        .iter()
        .map(|l| math::sq_dist(l, &latents[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = dists.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..latents.len())
        } else {
            rng::multinomial(rng, &dists)
        };
        chosen.push(next);
        for (d, l) in dists.iter_mut().zip(latents.iter()) {
            *d = d.min(math::sq_dist(l, &latents[next]));
        }
    }
    chosen
}

/// Assign every block to its lexeme and label the silent lexemes: a lexeme
/// is silent iff the majority of its blocks carry the silence flag and its
/// blocks' mean joint speed is below `silent_speed_fraction` of the dataset
/// median.
pub fn assign_and_label_silent(
    blocks: &[Mat],
    silent_flags: &[bool],
    skeleton: &Skeleton,
    fps: f64,
    cfg: &Config,
    model: &LexiconModel,
) -> Result<LexemeAssignment> {
    if !model.trained {
        return Err(Error::Untrained("lexicon".into()));
    }
    assert_eq!(blocks.len(), silent_flags.len());
    let mut lexemes = Vec::with_capacity(blocks.len());
    let mut latents = Vec::with_capacity(blocks.len());
    let mut quantized = Vec::with_capacity(blocks.len());
    let speeds: Vec<f64> = blocks
        .iter()
        .map(|b| skeleton.mean_joint_speed(b, fps))
        .collect();
    for block in blocks {
        let e = model.encode(block);
        let (idx, s) = quantize(&e, model.codebook());
        lexemes.push(idx);
        quantized.push(s.to_vec());
        latents.push(e);
    }
    let median_speed = math::percentile(&speeds, 50.0);
    let threshold = cfg.silent_speed_fraction * median_speed;

    let n_s = model.lexicon_size();
    let mut silent = BTreeSet::new();
    for lex in 0..n_s {
        let members: Vec<usize> = (0..blocks.len()).filter(|&i| lexemes[i] == lex).collect();
        if members.is_empty() {
            continue;
        }
        let silent_count = members.iter().filter(|&&i| silent_flags[i]).count();
        let majority_silent = 2 * silent_count > members.len();
        let mean_speed =
            members.iter().map(|&i| speeds[i]).sum::<f64>() / members.len() as f64;
        if majority_silent && mean_speed < threshold {
            silent.insert(lex);
        }
    }
    Ok(LexemeAssignment {
        lexemes,
        latents,
        quantized,
        silent,
    })
}

/// The silent lexeme whose codebook vector is closest to the current
/// lexeme's vector; ties break to the lowest index. Errors when no silent
/// lexeme is labeled (callers keep the current lexeme).
pub fn nearest_silent_lexeme(
    current: usize,
    silent: &BTreeSet<usize>,
    codebook: &Mat,
) -> Result<usize> {
    if silent.is_empty() {
        return Err(Error::NoSilentLexemes);
    }
    let cur = codebook.row(current);
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for &s in silent {
        let d = math::sq_dist(cur, codebook.row(s));
        if d < best_d {
            best_d = d;
            best = Some(s);
        }
    }
    Ok(best.unwrap())
}

/// Lexicon file: the codebook plus the silent-index set, in the shared
/// checkpoint container.
pub fn save_lexicon_file(
    path: &Path,
    model: &LexiconModel,
    silent: &BTreeSet<usize>,
) -> Result<()> {
    let mut w = Writer::new("lexicon-file");
    w.u32(model.lexicon_size() as u32);
    w.u32(model.d_lexeme as u32);
    w.mat("codebook", model.codebook());
    w.u32(silent.len() as u32);
    for &s in silent {
        w.u32(s as u32);
    }
    w.finish(path)
}

pub fn load_lexicon_file(path: &Path) -> Result<(Mat, BTreeSet<usize>)> {
    let mut r = Reader::open(path, "lexicon-file")?;
    let n_s = r.u32()? as usize;
    let d_s = r.u32()? as usize;
    let (name, codebook) = r.mat()?;
    if name != "codebook" || codebook.shape() != (n_s, d_s) {
        return Err(Error::corrupt(path, "malformed lexicon payload"));
    }
    let count = r.u32()? as usize;
    let mut silent = BTreeSet::new();
    for _ in 0..count {
        silent.insert(r.u32()? as usize);
    }
    Ok((codebook, silent))
}

/// Assignment CSV: `block_id,lexeme,silent_flag`.
pub fn save_assignment_csv(path: &Path, assignment: &LexemeAssignment) -> Result<()> {
    let mut out = String::from("block_id,lexeme,silent_flag\n");
    for (i, &lex) in assignment.lexemes.iter().enumerate() {
        let silent = assignment.silent.contains(&lex) as u8;
        out.push_str(&format!("{i},{lex},{silent}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Latent CSV export for external visualization tools.
pub fn save_latents_csv(path: &Path, assignment: &LexemeAssignment) -> Result<()> {
    let mut out = String::from("block_id,lexeme");
    let d = assignment.latents.first().map(|l| l.len()).unwrap_or(0);
    for j in 0..d {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for (i, latent) in assignment.latents.iter().enumerate() {
        out.push_str(&format!("{i},{}", assignment.lexemes[i]));
        for v in latent {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
