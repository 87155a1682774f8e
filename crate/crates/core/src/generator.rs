//! Autoregressive block-level gesture generator.
//!
//! Each new motion block is synthesized from the previous block's motion
//! features, a three-block window of low-level audio features, the gesture
//! lexeme, a style code, and a positional encoding. A per-frame MLP encoder
//! feeds a grouped categorical latent (H groups of C categories, sampled
//! with Gumbel-softmax during training, argmax at inference) that drives a
//! gated recurrent decoder emitting poses.

use crate::autograd::{Tape, Var};
use crate::checkpoint;
use crate::config::Config;
use crate::data::skeleton::POSE_DIM;
use crate::error::{Error, Result};
use crate::lexicon::LexiconModel;
use crate::math::Mat;
use crate::nn::{Adam, Bound, Conv1d, Gru, Linear, ParamId, Params};
use crate::rng;
use rand::Rng;
use std::collections::BTreeSet;
use std::path::Path;

pub const CHECKPOINT_KIND: &str = "generator";
pub const STYLE_TABLE_KIND: &str = "style-codes";

/// Sinusoidal positional encoding: row `k` holds
/// `sin(k / beta^{2j/d_P})`, `cos(k / beta^{2j/d_P})` pairs over the frame
/// index `k` (0-based).
pub fn positional_encoding(k: usize, d_p: usize, beta: f64) -> Result<Mat> {
    if d_p % 2 != 0 {
        return Err(Error::Argument(format!(
            "positional encoding dimension must be even, got {d_p}"
        )));
    }
    Ok(Mat::from_fn(k, d_p, |frame, col| {
        let j = (col / 2) as f64;
        let rate = beta.powf(2.0 * j / d_p as f64);
        let phase = frame as f64 / rate;
        if col % 2 == 0 {
            phase.sin()
        } else {
            phase.cos()
        }
    }))
}

/// How the categorical latent is materialized.
pub enum LatentMode<'a> {
    /// Gumbel-softmax with the given temperature and one `K x C` noise grid
    /// per group.
    Soft { temp: f64, noise: &'a [Mat] },
    /// Zero-noise argmax (inference): hard one-hot rows.
    Hard,
}

/// Decoder carry between consecutive blocks at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    hidden: Vec<f64>,
    window_elapsed_s: f64,
}

pub struct GeneratorModel {
    pub params: Params,
    motion_convs: Vec<Conv1d>,
    audio_fc: Linear,
    mlp1: Linear,
    mlp2: Linear,
    logits_fc: Linear,
    /// One `C x code_dim` table per group.
    group_tables: Vec<ParamId>,
    dec_init: Linear,
    gru: Gru,
    out_fc: Linear,
    pos: Mat,
    pub k: usize,
    pub d_style: usize,
    pub d_lexeme: usize,
    d_audio_low: usize,
    groups: usize,
    categories: usize,
    style_edit: bool,
    window_s: f64,
    trained: bool,
}

impl GeneratorModel {
    pub fn new(cfg: &Config) -> Self {
        let mut rng = rng::stream(cfg.seed, "generator-init");
        let mut params = Params::new();
        let k = cfg.block_frames();
        let d_c = if cfg.style_edit_feature.is_some() { 1 } else { 0 };

        let mut motion_convs = Vec::new();
        let mut in_ch = POSE_DIM;
        for i in 0..3 {
            motion_convs.push(Conv1d::new(
                &mut params,
                &mut rng,
                &format!("motion{i}"),
                in_ch,
                cfg.d_motion_feat,
                3,
            ));
            in_ch = cfg.d_motion_feat;
        }
        let audio_fc = Linear::new(
            &mut params,
            &mut rng,
            "audio_fc",
            3 * cfg.d_audio_low,
            cfg.d_audio_ctx,
        );
        let frame_dim =
            cfg.d_motion_feat + cfg.d_audio_ctx + cfg.d_lexeme + cfg.d_style + cfg.d_pos + d_c;
        let hidden = cfg.generator_hidden;
        let mlp1 = Linear::new(&mut params, &mut rng, "mlp1", frame_dim, hidden);
        let mlp2 = Linear::new(&mut params, &mut rng, "mlp2", hidden, hidden);
        let logits_fc = Linear::new(
            &mut params,
            &mut rng,
            "logits",
            hidden,
            cfg.latent_groups * cfg.latent_categories,
        );
        let group_tables = (0..cfg.latent_groups)
            .map(|g| {
                params.add(
                    format!("table{g}"),
                    crate::nn::init_uniform(
                        &mut rng,
                        cfg.latent_categories,
                        cfg.latent_code_dim,
                        cfg.latent_code_dim,
                    ),
                )
            })
            .collect();
        let dec_init = Linear::new(&mut params, &mut rng, "dec_init", cfg.d_motion_feat, hidden);
        let gru = Gru::new(
            &mut params,
            &mut rng,
            "gru",
            cfg.latent_groups * cfg.latent_code_dim,
            hidden,
        );
        let out_fc = Linear::new(&mut params, &mut rng, "out", hidden, POSE_DIM);
        GeneratorModel {
            params,
            motion_convs,
            audio_fc,
            mlp1,
            mlp2,
            logits_fc,
            group_tables,
            dec_init,
            gru,
            out_fc,
            pos: positional_encoding(k, cfg.d_pos, cfg.pos_beta).expect("even d_pos"),
            k,
            d_style: cfg.d_style,
            d_lexeme: cfg.d_lexeme,
            d_audio_low: cfg.d_audio_low,
            groups: cfg.latent_groups,
            categories: cfg.latent_categories,
            style_edit: d_c == 1,
            window_s: cfg.decoder_window_s,
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn has_style_edit(&self) -> bool {
        self.style_edit
    }

    /// A rest-pose block (all exponential maps zero).
    pub fn rest_block(&self) -> Mat {
        Mat::zeros(self.k, POSE_DIM)
    }

    fn motion_features(&self, t: &mut Tape, p: &Bound, prev: Var) -> Var {
        let mut x = prev;
        for conv in &self.motion_convs {
            let y = conv.forward(t, p, x);
            x = t.leaky_relu(y, 0.2);
        }
        x
    }

    /// Full forward pass on a tape. `noise` must hold one `K x C` grid per
    /// group in `Soft` mode. Returns the `K x d_m` generated block and the
    /// final hidden state.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_on(
        &self,
        t: &mut Tape,
        p: &Bound,
        prev_motion: Var,
        audio_ctx: [Var; 3],
        lexeme: Var,
        style: Var,
        style_block: Option<Var>,
        mode: &LatentMode,
        carried_hidden: Option<&Mat>,
    ) -> (Var, Var) {
        assert_eq!(
            self.style_edit,
            style_block.is_some(),
            "style-edit input does not match the model configuration"
        );
        let em = self.motion_features(t, p, prev_motion);
        let audio_cat = t.hcat(&[audio_ctx[0], audio_ctx[1], audio_ctx[2]]);
        let ea = self.audio_fc.forward(t, p, audio_cat);
        let s_block = t.repeat_rows(lexeme, self.k);
        let z_block = t.repeat_rows(style, self.k);
        let pos = t.input(self.pos.clone());
        let mut parts = vec![em, ea, s_block, z_block, pos];
        if let Some(c) = style_block {
            parts.push(c);
        }
        let frame_in = t.hcat(&parts);
        let h1 = self.mlp1.forward(t, p, frame_in);
        let h1 = t.leaky_relu(h1, 0.2);
        let h2 = self.mlp2.forward(t, p, h1);
        let h2 = t.leaky_relu(h2, 0.2);
        let logits = self.logits_fc.forward(t, p, h2); // K x (H*C)

        // grouped categorical latent
        let mut latents = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let lo = g * self.categories;
            let group_logits = t.slice_cols(logits, lo, lo + self.categories);
            let weights = match mode {
                LatentMode::Soft { temp, noise } => {
                    let noise_var = t.input(noise[g].clone());
                    let noisy = t.add(group_logits, noise_var);
                    let scaled = t.scale(noisy, 1.0 / *temp);
                    t.softmax_rows(scaled)
                }
                LatentMode::Hard => {
                    let vals = t.value(group_logits).clone();
                    let onehot = Mat::from_fn(vals.rows(), vals.cols(), |r, c| {
                        let row = vals.row(r);
                        let best = argmax(row);
                        if c == best {
                            1.0
                        } else {
                            0.0
                        }
                    });
                    t.input(onehot)
                }
            };
            latents.push(t.matmul(weights, p.var(self.group_tables[g])));
        }
        let latent = t.hcat(&latents); // K x (H * code_dim)

        // decoder: state reset at the block boundary, fed by the previous
        // block's motion features; a carried hidden state (inference within
        // the 4-second window) is averaged in
        let pooled = t.mean_rows(em);
        let init = self.dec_init.forward(t, p, pooled);
        let mut h0 = t.tanh(init);
        if let Some(carry) = carried_hidden {
            let c = t.input(carry.clone());
            let sum = t.add(h0, c);
            h0 = t.scale(sum, 0.5);
        }
        let (states, last) = self.gru.forward_seq(t, p, latent, h0);
        (self.out_fc.forward(t, p, states), last)
    }

    /// Deterministic inference for one block: hard latent path, no noise.
    #[allow(clippy::too_many_arguments)]
    pub fn generate_block(
        &self,
        prev_motion: &Mat,
        audio_ctx: [&Mat; 3],
        lexeme: &[f64],
        style: &[f64],
        style_block: Option<&Mat>,
        state: Option<&GeneratorState>,
        block_duration_s: f64,
    ) -> Result<(Mat, GeneratorState)> {
        self.check_shapes(prev_motion, &audio_ctx, lexeme, style, style_block)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let prev = tape.input(prev_motion.clone());
        let ctx = [
            tape.input(audio_ctx[0].clone()),
            tape.input(audio_ctx[1].clone()),
            tape.input(audio_ctx[2].clone()),
        ];
        let lex = tape.input(Mat::row_vec(lexeme.to_vec()));
        let sty = tape.input(Mat::row_vec(style.to_vec()));
        let c = style_block.map(|m| tape.input(m.clone()));
        let carried = state.and_then(|s| {
            if s.window_elapsed_s + block_duration_s <= self.window_s {
                Some(Mat::row_vec(s.hidden.clone()))
            } else {
                None // window expired: reset
            }
        });
        let (out, last) = self.forward_on(
            &mut tape,
            &bound,
            prev,
            ctx,
            lex,
            sty,
            c,
            &LatentMode::Hard,
            carried.as_ref(),
        );
        let elapsed = match (state, &carried) {
            (Some(s), Some(_)) => s.window_elapsed_s + block_duration_s,
            _ => block_duration_s,
        };
        Ok((
            tape.value(out).clone(),
            GeneratorState {
                hidden: tape.value(last).as_slice().to_vec(),
                window_elapsed_s: elapsed,
            },
        ))
    }

    fn check_shapes(
        &self,
        prev: &Mat,
        ctx: &[&Mat; 3],
        lexeme: &[f64],
        style: &[f64],
        style_block: Option<&Mat>,
    ) -> Result<()> {
        let want = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Argument(msg)) };
        want(
            prev.shape() == (self.k, POSE_DIM),
            format!("prev motion must be {}x{POSE_DIM}", self.k),
        )?;
        for (i, c) in ctx.iter().enumerate() {
            want(
                c.shape() == (self.k, self.d_audio_low),
                format!("audio context {i} must be {}x{}", self.k, self.d_audio_low),
            )?;
        }
        want(
            lexeme.len() == self.d_lexeme,
            format!("lexeme must have {} dims", self.d_lexeme),
        )?;
        want(
            style.len() == self.d_style,
            format!("style must have {} dims", self.d_style),
        )?;
        if let Some(c) = style_block {
            want(
                c.shape() == (self.k, 1),
                format!("style-edit block must be {}x1", self.k),
            )?;
        }
        if self.style_edit && style_block.is_none() {
            return Err(Error::Argument(
                "model was built with style editing; pass a feature block".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, CHECKPOINT_KIND, &self.params)
    }

    pub fn load(path: &Path, cfg: &Config) -> Result<Self> {
        let mut model = GeneratorModel::new(cfg);
        checkpoint::load_params(path, CHECKPOINT_KIND, &mut model.params)?;
        model.trained = true;
        Ok(model)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One training example for the generator.
#[derive(Debug, Clone)]
pub struct TrainingBlock {
    /// Target motion `K x d_m`.
    pub motion: Mat,
    /// Previous block's motion (rest block at clip starts).
    pub prev_motion: Mat,
    /// Low-level audio features of blocks `i-1, i, i+1` (edges clamped).
    pub audio_low: [Mat; 3],
    /// Assigned lexeme index.
    pub lexeme: usize,
    pub silent: bool,
    /// `K x 1` style-feature block when style editing is enabled.
    pub style_block: Option<Mat>,
    /// Row in the learnable style table; `None` for augmented silent blocks
    /// whose style code is pinned to zero.
    pub style_row: Option<usize>,
}

/// Learnable per-block style codes.
pub struct StyleTable {
    pub params: Params,
    table: ParamId,
}

impl StyleTable {
    pub fn new(n_blocks: usize, d_style: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "style-codes-init");
        let mut params = Params::new();
        let table = params.add(
            "styles",
            Mat::from_fn(n_blocks.max(1), d_style, |_, _| rng::normal(&mut rng) * 0.01),
        );
        StyleTable { params, table }
    }

    pub fn len(&self) -> usize {
        self.params.get(self.table).rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.params.get(self.table).row(i)
    }

    pub fn mat(&self) -> &Mat {
        self.params.get(self.table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, STYLE_TABLE_KIND, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = checkpoint::Reader::open(path, STYLE_TABLE_KIND)?;
        let count = r.u32()?;
        if count != 1 {
            return Err(Error::corrupt(path, "style table must hold one tensor"));
        }
        let (name, mat) = r.mat()?;
        if name != "styles" {
            return Err(Error::corrupt(path, "missing styles tensor"));
        }
        let mut params = Params::new();
        let table = params.add("styles", mat);
        Ok(StyleTable { params, table })
    }
}

/// Loss weights (defaults follow the reference settings).
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub rec: f64,
    pub perc: f64,
    pub lexeme: f64,
    pub z: f64,
    pub contexts: usize,
}

impl LossWeights {
    pub fn from_config(cfg: &Config) -> Self {
        LossWeights {
            rec: cfg.w_rec,
            perc: cfg.w_perc,
            lexeme: cfg.w_lexeme,
            z: cfg.w_z,
            contexts: cfg.lexeme_loss_contexts,
        }
    }
}

/// Component values of the generator objective for a batch, computed on the
/// deterministic hard-latent path (no sampling noise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLosses {
    pub rec: f64,
    pub perc: f64,
    pub lexeme: f64,
    pub z: f64,
    pub total: f64,
}

const KL_EPS: f64 = 1e-6;

/// Evaluate the four loss terms plus their weighted sum on a batch of
/// blocks. The lexeme term regenerates the first batch item's lexeme under
/// `weights.contexts` swapped contexts drawn from `dataset`.
pub fn generator_losses(
    batch: &[usize],
    dataset: &[TrainingBlock],
    model: &GeneratorModel,
    lexicon: &LexiconModel,
    styles: &StyleTable,
    weights: &LossWeights,
    seed: u64,
) -> Result<GeneratorLosses> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut rec = 0.0;
    let mut perc = 0.0;
    for &i in batch {
        let b = &dataset[i];
        let z = style_of(b, styles);
        let (out, _) = model.generate_block(
            &b.prev_motion,
            [&b.audio_low[0], &b.audio_low[1], &b.audio_low[2]],
            lexicon.codebook_row(b.lexeme),
            &z,
            b.style_block.as_ref(),
            None,
            0.0,
        )?;
        let diff = b.motion.sub(&out);
        rec += diff.sq_norm() / diff.len() as f64;
        let e_target = lexicon.encode(&b.motion);
        let e_out = lexicon.encode(&out);
        perc += crate::math::sq_dist(&e_target, &e_out);
    }
    rec /= batch.len() as f64;
    perc /= batch.len() as f64;

    // lexeme loss: anchor lexeme under swapped contexts
    let anchor = &dataset[batch[0]];
    let mut ctx_rng = rng::stream(seed, "lexeme-loss-eval");
    let n_j = weights.contexts.min(dataset.len()).max(1);
    let mut lexeme_loss = 0.0;
    for _ in 0..n_j {
        let j = ctx_rng.random_range(0..dataset.len());
        let cb = &dataset[j];
        let zj = style_of(cb, styles);
        let (out, _) = model.generate_block(
            &cb.prev_motion,
            [&cb.audio_low[0], &cb.audio_low[1], &cb.audio_low[2]],
            lexicon.codebook_row(anchor.lexeme),
            &zj,
            cb.style_block.as_ref(),
            None,
            0.0,
        )?;
        let e = lexicon.encode(&out);
        lexeme_loss += crate::math::sq_dist(lexicon.codebook_row(anchor.lexeme), &e);
    }
    lexeme_loss /= n_j as f64;

    // KL of the batch's style codes against the unit Gaussian
    let zs: Vec<Vec<f64>> = batch
        .iter()
        .map(|&i| style_of(&dataset[i], styles))
        .collect();
    let z = kl_to_unit_gaussian(&zs);

    let total =
        weights.rec * rec + weights.perc * perc + weights.lexeme * lexeme_loss + weights.z * z;
    Ok(GeneratorLosses {
        rec,
        perc,
        lexeme: lexeme_loss,
        z,
        total,
    })
}

fn style_of(b: &TrainingBlock, styles: &StyleTable) -> Vec<f64> {
    match b.style_row {
        Some(r) => styles.row(r).to_vec(),
        None => vec![0.0; styles.mat().cols()],
    }
}

/// Diagonal KL(N(mu, sigma^2) || N(0, 1)) summed over dimensions, with the
/// moments taken across the batch.
pub fn kl_to_unit_gaussian(zs: &[Vec<f64>]) -> f64 {
    if zs.len() < 2 {
        return 0.0;
    }
    let d = zs[0].len();
    let n = zs.len() as f64;
    let mut kl = 0.0;
    for dim in 0..d {
        let mean = zs.iter().map(|z| z[dim]).sum::<f64>() / n;
        let var = zs.iter().map(|z| (z[dim] - mean).powi(2)).sum::<f64>() / n;
        kl += 0.5 * (mean * mean + var - (var + KL_EPS).ln() - 1.0);
    }
    kl
}

/// Insert runs of silent blocks after silent-flagged blocks until roughly
/// `ratio` of the dataset is augmented. Returns the augmented dataset and
/// the number of insertions; a dataset without silent lexemes is returned
/// unchanged with a warning flag.
pub fn augment_silence(
    dataset: &[TrainingBlock],
    silent_lexemes: &BTreeSet<usize>,
    codebook: &Mat,
    env_audio: &Mat,
    ratio: f64,
    seed: u64,
) -> (Vec<TrainingBlock>, usize, bool) {
    let sites: Vec<usize> = (0..dataset.len()).filter(|&i| dataset[i].silent).collect();
    if sites.is_empty() {
        return (dataset.to_vec(), 0, false);
    }
    if silent_lexemes.is_empty() {
        return (dataset.to_vec(), 0, true);
    }
    let target = ((dataset.len() as f64) * ratio).round() as usize;
    let mut rng = rng::stream(seed, "silent-augment");
    let mut insert_after: Vec<(usize, usize)> = Vec::new(); // (site, count)
    let mut planned = 0usize;
    'outer: loop {
        for &site in &sites {
            if planned >= target {
                break 'outer;
            }
            let count = rng.random_range(0..=10usize);
            if count > 0 {
                insert_after.push((site, count));
                planned += count;
            }
        }
        if sites.iter().all(|_| false) || target == 0 {
            break;
        }
        if planned >= target {
            break;
        }
    }

    let mut out = Vec::with_capacity(dataset.len() + planned);
    let mut inserted = 0usize;
    for (i, block) in dataset.iter().enumerate() {
        out.push(block.clone());
        let runs: usize = insert_after
            .iter()
            .filter(|&&(site, _)| site == i)
            .map(|&(_, c)| c)
            .sum();
        if runs == 0 {
            continue;
        }
        let mut prev = block.motion.clone();
        let mut prev_lexeme = block.lexeme;
        for _ in 0..runs {
            let held = prev.row_mat(prev.rows() - 1).repeat_rows(prev.rows());
            let lexeme =
                crate::lexicon::nearest_silent_lexeme(prev_lexeme, silent_lexemes, codebook)
                    .expect("silent set checked non-empty");
            out.push(TrainingBlock {
                motion: held.clone(),
                prev_motion: prev.clone(),
                audio_low: [env_audio.clone(), env_audio.clone(), env_audio.clone()],
                lexeme,
                silent: true,
                style_block: block.style_block.as_ref().map(|c| Mat::zeros(c.rows(), 1)),
                style_row: None,
            });
            prev = held;
            prev_lexeme = lexeme;
            inserted += 1;
        }
    }
    (out, inserted, false)
}

/// Exponential Gumbel-temperature anneal from `start` to `end`.
pub fn gumbel_temperature(step: usize, total_steps: usize, start: f64, end: f64) -> f64 {
    if total_steps <= 1 {
        return end;
    }
    let t = step as f64 / (total_steps - 1) as f64;
    start * (end / start).powf(t)
}

/// Train the generator and the per-block style codes jointly. The lexicon
/// stays frozen. Returns the model, the learned style table, and a loss
/// curve.
pub fn train_generator(
    dataset: &[TrainingBlock],
    lexicon: &LexiconModel,
    cfg: &Config,
) -> Result<(GeneratorModel, StyleTable, Vec<(usize, f64)>)> {
    if dataset.is_empty() {
        return Err(Error::Argument("generator dataset is empty".into()));
    }
    if !lexicon.is_trained() {
        return Err(Error::Untrained("lexicon must be trained first".into()));
    }
    let n_styles = dataset.iter().filter_map(|b| b.style_row).max().map(|m| m + 1).unwrap_or(1);
    let mut model = GeneratorModel::new(cfg);
    let mut styles = StyleTable::new(n_styles, cfg.d_style, cfg.seed);
    let weights = LossWeights::from_config(cfg);

    let mut adam_model = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut adam_styles = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut batch_rng = rng::stream(cfg.seed, "generator-batches");
    let mut noise_rng = rng::stream(cfg.seed, "generator-gumbel");
    let batch_size = cfg.batch_size.min(dataset.len());
    let k = cfg.block_frames();

    // precompute frozen-lexicon latents of every target block
    let target_latents: Vec<Vec<f64>> = dataset.iter().map(|b| lexicon.encode(&b.motion)).collect();

    let mut curve = Vec::new();
    for step in 0..cfg.generator_steps {
        let temp = gumbel_temperature(step, cfg.generator_steps, cfg.gumbel_temp_start, cfg.gumbel_temp_end);
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let style_bound = styles.params.bind(&mut tape);
        let lex_bound = lexicon.params.bind(&mut tape); // frozen: grads unused
        let style_var = style_bound.var(styles.table);

        let mut term_rec = Vec::with_capacity(batch_size);
        let mut term_perc = Vec::with_capacity(batch_size);
        let mut batch_styles = Vec::with_capacity(batch_size);
        let mut anchor: Option<(usize, Var)> = None;
        for bi in 0..batch_size {
            let idx = batch_rng.random_range(0..dataset.len());
            let b = &dataset[idx];
            let z = match b.style_row {
                Some(rw) => tape.row(style_var, rw),
                None => tape.input(Mat::zeros(1, cfg.d_style)),
            };
            if b.style_row.is_some() {
                batch_styles.push(z);
            }
            let noise: Vec<Mat> = (0..cfg.latent_groups)
                .map(|_| {
                    Mat::from_fn(k, cfg.latent_categories, |_, _| rng::gumbel(&mut noise_rng))
                })
                .collect();
            let prev = tape.input(b.prev_motion.clone());
            let ctx = [
                tape.input(b.audio_low[0].clone()),
                tape.input(b.audio_low[1].clone()),
                tape.input(b.audio_low[2].clone()),
            ];
            let lex = tape.input(Mat::row_vec(lexicon.codebook_row(b.lexeme).to_vec()));
            let c = b.style_block.as_ref().map(|m| tape.input(m.clone()));
            let (out, _) = model.forward_on(
                &mut tape,
                &bound,
                prev,
                ctx,
                lex,
                z,
                c,
                &LatentMode::Soft { temp, noise: &noise },
                None,
            );
            let target = tape.input(b.motion.clone());
            term_rec.push(tape.mse(target, out));
            // perceptual loss through the frozen lexicon encoder
            let e_out = lexicon.encode_on(&mut tape, &lex_bound, out);
            let e_target = tape.input(Mat::row_vec(target_latents[idx].clone()));
            let pd = tape.sub(e_target, e_out);
            term_perc.push(tape.sq_norm(pd));
            if bi == 0 {
                anchor = Some((idx, lex));
            }
        }
        let (anchor_idx, anchor_lex) = anchor.unwrap();

        // lexeme loss: regenerate the anchor's lexeme under swapped contexts
        let n_j = weights.contexts.min(dataset.len()).max(1);
        let mut term_lexeme = Vec::with_capacity(n_j);
        for _ in 0..n_j {
            let j = batch_rng.random_range(0..dataset.len());
            let cb = &dataset[j];
            let zj = match cb.style_row {
                Some(rw) => tape.row(style_var, rw),
                None => tape.input(Mat::zeros(1, cfg.d_style)),
            };
            let noise: Vec<Mat> = (0..cfg.latent_groups)
                .map(|_| {
                    Mat::from_fn(k, cfg.latent_categories, |_, _| rng::gumbel(&mut noise_rng))
                })
                .collect();
            let prev = tape.input(cb.prev_motion.clone());
            let ctx = [
                tape.input(cb.audio_low[0].clone()),
                tape.input(cb.audio_low[1].clone()),
                tape.input(cb.audio_low[2].clone()),
            ];
            let c = cb.style_block.as_ref().map(|m| tape.input(m.clone()));
            let (out, _) = model.forward_on(
                &mut tape,
                &bound,
                prev,
                ctx,
                anchor_lex,
                zj,
                c,
                &LatentMode::Soft { temp, noise: &noise },
                None,
            );
            let e_out = lexicon.encode_on(&mut tape, &lex_bound, out);
            let s_i = tape.input(Mat::row_vec(lexicon.codebook_row(dataset[anchor_idx].lexeme).to_vec()));
            let d = tape.sub(s_i, e_out);
            term_lexeme.push(tape.sq_norm(d));
        }

        // assemble L_gen
        let rec_stack = tape.vcat(&term_rec);
        let l_rec = tape.mean(rec_stack);
        let perc_stack = tape.vcat(&term_perc);
        let l_perc = tape.mean(perc_stack);
        let lex_stack = tape.vcat(&term_lexeme);
        let l_lexeme = tape.mean(lex_stack);
        let l_z = if batch_styles.len() >= 2 {
            let zs = tape.vcat(&batch_styles);
            kl_on_tape(&mut tape, zs)
        } else {
            tape.input(Mat::scalar(0.0))
        };
        let mut total = tape.scale(l_rec, weights.rec);
        let p = tape.scale(l_perc, weights.perc);
        total = tape.add(total, p);
        let lx = tape.scale(l_lexeme, weights.lexeme);
        total = tape.add(total, lx);
        let zz = tape.scale(l_z, weights.z);
        total = tape.add(total, zz);

        let loss_val = tape.value(total).item();
        if !loss_val.is_finite() {
            return Err(Error::Numerical(format!(
                "generator loss diverged at step {step}"
            )));
        }
        let grads = tape.backward(total);
        adam_model.step(&mut model.params, &bound, &grads);
        adam_styles.step(&mut styles.params, &style_bound, &grads);
        if step % 20 == 0 || step + 1 == cfg.generator_steps {
            curve.push((step, loss_val));
        }
    }
    model.trained = true;
    Ok((model, styles, curve))
}

/// KL(N(mu, sigma^2) || N(0,1)) of the rows of `zs`, on the tape.
fn kl_on_tape(t: &mut Tape, zs: Var) -> Var {
    let n = t.value(zs).rows();
    let mu = t.mean_rows(zs); // 1 x d
    let mu_rep = t.repeat_rows(mu, n);
    let centered = t.sub(zs, mu_rep);
    let sq = t.mul(centered, centered);
    let var = t.mean_rows(sq); // 1 x d
    let mu_sq = t.mul(mu, mu);
    let var_eps = t.add_scalar(var, KL_EPS);
    let log_var = t.ln(var_eps);
    let a = t.add(mu_sq, var);
    let b = t.sub(a, log_var);
    let c = t.add_scalar(b, -1.0);
    let s = t.sum(c);
    t.scale(s, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;

    fn tiny_cfg() -> Config {
        let mut cfg = Config::desk_scale(21);
        cfg.d_motion_feat = 8;
        cfg.d_audio_ctx = 8;
        cfg.d_audio_low = 4;
        cfg.d_lexeme = 6;
        cfg.lexicon_channels = vec![4, 4, 4, 4];
        cfg.d_style = 3;
        cfg.d_pos = 4;
        cfg.latent_groups = 2;
        cfg.latent_categories = 3;
        cfg.latent_code_dim = 3;
        cfg.generator_hidden = 10;
        cfg.lexicon_size = 4;
        cfg
    }

    fn dummy_block(cfg: &Config, seed: u64) -> TrainingBlock {
        let mut r = rng::stream(seed, "gen-dummy");
        let k = cfg.block_frames();
        let rand_mat = |r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
            Mat::from_fn(rows, cols, |_, _| r.random::<f64>() - 0.5)
        };
        TrainingBlock {
            motion: rand_mat(&mut r, k, POSE_DIM),
            prev_motion: rand_mat(&mut r, k, POSE_DIM),
            audio_low: [
                rand_mat(&mut r, k, cfg.d_audio_low),
                rand_mat(&mut r, k, cfg.d_audio_low),
                rand_mat(&mut r, k, cfg.d_audio_low),
            ],
            lexeme: 0,
            silent: false,
            style_block: None,
            style_row: Some(0),
        }
    }

    #[test]
    fn positional_encoding_matches_the_formula() {
        let p = positional_encoding(6, 4, 10_000.0).unwrap();
        // k = 0: sin -> 0, cos -> 1
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        // column 0 is sin(k) exactly (rate 1)
        for k in 0..6 {
            assert!((p.get(k, 0) - (k as f64).sin()).abs() < 1e-15);
        }
        // brute-force re-evaluation
        for k in 0..6 {
            for col in 0..4 {
                let j = (col / 2) as f64;
                let rate = 10_000f64.powf(2.0 * j / 4.0);
                let expect = if col % 2 == 0 {
                    (k as f64 / rate).sin()
                } else {
                    (k as f64 / rate).cos()
                };
                assert!((p.get(k, col) - expect).abs() < 1e-12);
            }
        }
        // values bounded
        assert!(p.as_slice().iter().all(|v| v.abs() <= 1.0));
        assert!(positional_encoding(6, 5, 10_000.0).is_err());
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = tiny_cfg();
        let model = GeneratorModel::new(&cfg);
        let b = dummy_block(&cfg, 1);
        let lex = vec![0.1; cfg.d_lexeme];
        let z = vec![0.0; cfg.d_style];
        let run = || {
            model
                .generate_block(
                    &b.prev_motion,
                    [&b.audio_low[0], &b.audio_low[1], &b.audio_low[2]],
                    &lex,
                    &z,
                    None,
                    None,
                    0.4,
                )
                .unwrap()
                .0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_initialized_model_emits_the_output_bias() {
        let cfg = tiny_cfg();
        let mut model = GeneratorModel::new(&cfg);
        // zero every parameter, then plant a recognizable output bias
        let zeroed: Vec<Mat> = model
            .params
            .values()
            .iter()
            .map(|m| Mat::zeros(m.rows(), m.cols()))
            .collect();
        model.params.set_values(&zeroed);
        let bias = Mat::from_fn(1, POSE_DIM, |_, c| c as f64 * 0.01);
        *model.params.get_mut(model.out_fc.b) = bias.clone();
        let b = dummy_block(&cfg, 2);
        let (out, _) = model
            .generate_block(
                &b.prev_motion,
                [&b.audio_low[0], &b.audio_low[1], &b.audio_low[2]],
                &vec![0.3; cfg.d_lexeme],
                &vec![0.1; cfg.d_style],
                None,
                None,
                0.4,
            )
            .unwrap();
        for r in 0..out.rows() {
            for c in 0..POSE_DIM {
                assert!((out.get(r, c) - bias.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_argument_error() {
        let cfg = tiny_cfg();
        let model = GeneratorModel::new(&cfg);
        let b = dummy_block(&cfg, 3);
        let bad_prev = Mat::zeros(3, POSE_DIM);
        let err = model
            .generate_block(
                &bad_prev,
                [&b.audio_low[0], &b.audio_low[1], &b.audio_low[2]],
                &vec![0.0; cfg.d_lexeme],
                &vec![0.0; cfg.d_style],
                None,
                None,
                0.4,
            )
            .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn gumbel_softmax_approaches_one_hot_as_temperature_drops() {
        // logits with margin >= 1: at T = 0.01 the softmax is one-hot
        let logits = [2.0, 1.0, -0.5];
        let temp = 0.01;
        let scaled: Vec<f64> = logits.iter().map(|&l| l / temp).collect();
        let probs = math::softmax(&scaled);
        assert!(probs[0] > 0.99);
        // schedule endpoints
        assert!((gumbel_temperature(0, 100, 2.0, 0.1) - 2.0).abs() < 1e-12);
        assert!((gumbel_temperature(99, 100, 2.0, 0.1) - 0.1).abs() < 1e-12);
        let mid = gumbel_temperature(50, 100, 2.0, 0.1);
        assert!(mid < 2.0 && mid > 0.1);
    }

    #[test]
    fn kl_of_exact_standard_normal_moments_is_zero() {
        // batch with mean 0 and variance 1 per dimension (population)
        let zs = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let kl = kl_to_unit_gaussian(&zs);
        assert!(kl.abs() < 1e-6, "kl = {kl}");
        // degenerate batch is heavily penalized through the epsilon guard
        let zs = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(kl_to_unit_gaussian(&zs) > 1.0);
    }

    #[test]
    fn losses_match_brute_force_recomputation() {
        let cfg = tiny_cfg();
        let blocks: Vec<Mat> = (0..4).map(|i| dummy_block(&cfg, 40 + i).motion).collect();
        let mut lex_cfg = cfg.clone();
        lex_cfg.lexicon_steps = 0;
        lex_cfg.lexicon_size = 4;
        let lexicon = crate::lexicon::train_lexicon(&blocks, &lex_cfg).unwrap();

        let dataset: Vec<TrainingBlock> = (0..3)
            .map(|i| {
                let mut b = dummy_block(&cfg, 50 + i);
                b.lexeme = i as usize % 4;
                b.style_row = Some(i as usize);
                b
            })
            .collect();
        let model = GeneratorModel::new(&cfg);
        let styles = StyleTable::new(3, cfg.d_style, cfg.seed);
        let weights = LossWeights::from_config(&cfg);
        let got = generator_losses(&[0, 1, 2], &dataset, &model, &lexicon, &styles, &weights, 99)
            .unwrap();

        // brute force: reconstruction + perceptual via direct evaluation
        let mut rec = 0.0;
        let mut perc = 0.0;
        for b in &dataset {
            let z = styles.row(b.style_row.unwrap()).to_vec();
            let (out, _) = model
                .generate_block(
                    &b.prev_motion,
                    [&b.audio_low[0], &b.audio_low[1], &b.audio_low[2]],
                    lexicon.codebook_row(b.lexeme),
                    &z,
                    None,
                    None,
                    0.0,
                )
                .unwrap();
            let d = b.motion.sub(&out);
            rec += d.sq_norm() / d.len() as f64;
            perc += math::sq_dist(&lexicon.encode(&b.motion), &lexicon.encode(&out));
        }
        rec /= 3.0;
        perc /= 3.0;
        assert!((got.rec - rec).abs() < 1e-10);
        assert!((got.perc - perc).abs() < 1e-10);
        let zs: Vec<Vec<f64>> = (0..3).map(|i| styles.row(i).to_vec()).collect();
        assert!((got.z - kl_to_unit_gaussian(&zs)).abs() < 1e-12);
        let expect_total = weights.rec * got.rec
            + weights.perc * got.perc
            + weights.lexeme * got.lexeme
            + weights.z * got.z;
        assert!((got.total - expect_total).abs() < 1e-10);
    }

    #[test]
    fn augment_inserts_held_poses_with_zero_velocity() {
        let cfg = tiny_cfg();
        let mut dataset: Vec<TrainingBlock> = (0..40)
            .map(|i| {
                let mut b = dummy_block(&cfg, 100 + i);
                b.style_row = Some(i as usize);
                b
            })
            .collect();
        for b in dataset.iter_mut().take(20) {
            b.silent = true;
        }
        let mut silent = BTreeSet::new();
        silent.insert(1usize);
        let codebook = Mat::from_fn(4, cfg.d_lexeme, |r, c| (r + c) as f64 * 0.1);
        let env = Mat::zeros(cfg.block_frames(), cfg.d_audio_low);
        let (augmented, inserted, warn) =
            augment_silence(&dataset, &silent, &codebook, &env, 0.05, 7);
        assert!(!warn);
        assert!(inserted >= 1);
        assert_eq!(augmented.len(), dataset.len() + inserted);
        for b in augmented.iter().filter(|b| b.style_row.is_none()) {
            // held pose: all rows identical
            for r in 1..b.motion.rows() {
                assert_eq!(b.motion.row(r), b.motion.row(0));
            }
            assert_eq!(b.lexeme, 1);
        }
    }

    #[test]
    fn augment_hits_the_five_percent_target() {
        let cfg = tiny_cfg();
        let mut dataset: Vec<TrainingBlock> = (0..1000)
            .map(|i| {
                let mut b = dummy_block(&cfg, 200 + i);
                b.style_row = Some(i as usize);
                b.silent = i % 3 == 0;
                b
            })
            .collect();
        dataset[0].silent = true;
        let mut silent = BTreeSet::new();
        silent.insert(0usize);
        let codebook = Mat::from_fn(4, cfg.d_lexeme, |r, c| (r * c) as f64 * 0.01);
        let env = Mat::zeros(cfg.block_frames(), cfg.d_audio_low);
        let (_, inserted, _) = augment_silence(&dataset, &silent, &codebook, &env, 0.05, 3);
        assert!(
            (40..=60).contains(&inserted),
            "expected 50 +- 10 insertions, got {inserted}"
        );
    }

    #[test]
    fn dataset_without_silence_is_unchanged() {
        let cfg = tiny_cfg();
        let dataset: Vec<TrainingBlock> = (0..10)
            .map(|i| {
                let mut b = dummy_block(&cfg, 300 + i);
                b.style_row = Some(i as usize);
                b
            })
            .collect();
        let mut silent = BTreeSet::new();
        silent.insert(0usize);
        let codebook = Mat::zeros(4, cfg.d_lexeme);
        let env = Mat::zeros(cfg.block_frames(), cfg.d_audio_low);
        let (out, inserted, warn) = augment_silence(&dataset, &silent, &codebook, &env, 0.05, 3);
        assert_eq!(out.len(), dataset.len());
        assert_eq!(inserted, 0);
        assert!(!warn);
    }

    #[test]
    fn zero_training_steps_returns_initialization() {
        let mut cfg = tiny_cfg();
        cfg.generator_steps = 0;
        let blocks: Vec<Mat> = (0..4).map(|i| dummy_block(&cfg, 60 + i).motion).collect();
        let mut lex_cfg = cfg.clone();
        lex_cfg.lexicon_steps = 0;
        let lexicon = crate::lexicon::train_lexicon(&blocks, &lex_cfg).unwrap();
        let dataset = vec![dummy_block(&cfg, 70)];
        let (model, _, curve) = train_generator(&dataset, &lexicon, &cfg).unwrap();
        let fresh = GeneratorModel::new(&cfg);
        for (a, b) in model.params.values().iter().zip(fresh.params.values()) {
            assert_eq!(a, &b);
        }
        assert!(curve.is_empty());
    }

    #[test]
    fn training_is_deterministic_under_a_fixed_seed() {
        let mut cfg = tiny_cfg();
        cfg.generator_steps = 4;
        cfg.batch_size = 2;
        let blocks: Vec<Mat> = (0..4).map(|i| dummy_block(&cfg, 80 + i).motion).collect();
        let mut lex_cfg = cfg.clone();
        lex_cfg.lexicon_steps = 2;
        let lexicon = crate::lexicon::train_lexicon(&blocks, &lex_cfg).unwrap();
        let dataset: Vec<TrainingBlock> = (0..3)
            .map(|i| {
                let mut b = dummy_block(&cfg, 90 + i);
                b.style_row = Some(i as usize);
                b
            })
            .collect();
        let (m1, s1, _) = train_generator(&dataset, &lexicon, &cfg).unwrap();
        let (m2, s2, _) = train_generator(&dataset, &lexicon, &cfg).unwrap();
        for (a, b) in m1.params.values().iter().zip(m2.params.values()) {
            assert_eq!(a, &b);
        }
        assert_eq!(s1.mat(), s2.mat());
    }

    #[test]
    fn generator_gradients_match_finite_differences_on_a_tiny_model() {
        let mut cfg = tiny_cfg();
        cfg.d_motion_feat = 4;
        cfg.generator_hidden = 6;
        cfg.d_pos = 2;
        // K = 4 frames
        cfg.fps = 8.0;
        let model = GeneratorModel::new(&cfg);
        let k = cfg.block_frames();
        assert_eq!(k, 4);
        let mut r = rng::stream(31, "gen-fd");
        let prev = Mat::from_fn(k, POSE_DIM, |_, _| r.random::<f64>() - 0.5);
        let ctx: Vec<Mat> = (0..3)
            .map(|_| Mat::from_fn(k, cfg.d_audio_low, |_, _| r.random::<f64>() - 0.5))
            .collect();
        let lex = Mat::from_fn(1, cfg.d_lexeme, |_, _| r.random::<f64>());
        let sty = Mat::from_fn(1, cfg.d_style, |_, _| r.random::<f64>());
        let target = Mat::from_fn(k, POSE_DIM, |_, _| r.random::<f64>() - 0.5);
        let noise: Vec<Mat> = (0..cfg.latent_groups)
            .map(|_| Mat::from_fn(k, cfg.latent_categories, |_, _| rng::gumbel(&mut r)))
            .collect();
        let n = model.params.len();
        let mut leaves = model.params.values();
        leaves.push(prev);
        for c in &ctx {
            leaves.push(c.clone());
        }
        leaves.push(lex);
        leaves.push(sty);
        leaves.push(target.clone());
        crate::nn::finite_diff_check(
            &leaves,
            |t, v| {
                let bound = Bound::from_vars(&v[..n]);
                let (out, _) = model.forward_on(
                    t,
                    &bound,
                    v[n],
                    [v[n + 1], v[n + 2], v[n + 3]],
                    v[n + 4],
                    v[n + 5],
                    None,
                    &LatentMode::Soft {
                        temp: 0.8,
                        noise: &noise,
                    },
                    None,
                );
                t.mse(v[n + 6], out)
            },
            1e-3,
            13,
        );
    }
}
