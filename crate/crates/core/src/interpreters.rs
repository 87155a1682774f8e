//! Inference-time interpreters: speech features to gesture lexemes
//! (classification) and style codes (regression), plus a statistical
//! Markov-chain fallback and the silent-period hint.

use crate::autograd::{Tape, Var};
use crate::checkpoint;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::lexicon::nearest_silent_lexeme;
use crate::math::{self, Mat};
use crate::nn::{Adam, Bound, Gru, Linear, Params};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// One training/inference example for the interpreters.
#[derive(Debug, Clone)]
pub struct InterpreterExample {
    /// High-level audio features of blocks `i-1, i, i+1`.
    pub audio_high: [Mat; 3],
    /// Low-level audio features of blocks `i-1, i, i+1`.
    pub audio_low: [Mat; 3],
    /// `K x d_t` text features; ignored in audio-only mode.
    pub text: Option<Mat>,
    pub speaker: usize,
    pub prev_lexeme: usize,
    /// Assigned lexeme of this block (training target before the silent
    /// replacement).
    pub lexeme: usize,
    pub silent: bool,
    /// Learned style code of this block (training target).
    pub style_target: Vec<f64>,
    pub prev_style: Vec<f64>,
    /// `K x 1` style-feature block when style editing is enabled.
    pub style_block: Option<Mat>,
}

pub struct LexemeInterpreterModel {
    pub params: Params,
    audio_fc: Linear,
    text_fc: Option<Linear>,
    gru: Gru,
    head: Linear,
    k: usize,
    n_speakers: usize,
    audio_only: bool,
    style_edit: bool,
    trained: bool,
}

impl LexemeInterpreterModel {
    pub const CHECKPOINT_KIND: &'static str = "lexeme-interpreter";

    pub fn new(cfg: &Config, n_speakers: usize) -> Self {
        let mut rng = rng::stream(cfg.seed, "lexeme-interpreter-init");
        let mut params = Params::new();
        let audio_fc = Linear::new(
            &mut params,
            &mut rng,
            "audio_fc",
            3 * cfg.d_audio_high,
            cfg.d_audio_ctx_high,
        );
        let text_fc = (!cfg.audio_only).then(|| {
            Linear::new(&mut params, &mut rng, "text_fc", cfg.d_text, cfg.d_text_feat)
        });
        let d_c = if cfg.style_edit_feature.is_some() { 1 } else { 0 };
        let mut frame_dim = cfg.d_audio_ctx_high + cfg.d_lexeme + d_c;
        if !cfg.audio_only {
            frame_dim += cfg.d_text_feat + n_speakers;
        }
        let gru = Gru::new(&mut params, &mut rng, "gru", frame_dim, cfg.interpreter_hidden);
        let head = Linear::new(
            &mut params,
            &mut rng,
            "head",
            cfg.interpreter_hidden,
            cfg.lexicon_size,
        );
        LexemeInterpreterModel {
            params,
            audio_fc,
            text_fc,
            gru,
            head,
            k: cfg.block_frames(),
            n_speakers,
            audio_only: cfg.audio_only,
            style_edit: d_c == 1,
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn checkpoint_kind(&self) -> String {
        if self.audio_only {
            format!("{}-audio-only", Self::CHECKPOINT_KIND)
        } else {
            Self::CHECKPOINT_KIND.to_string()
        }
    }

    fn logits_on(
        &self,
        t: &mut Tape,
        p: &Bound,
        ex: &InterpreterExample,
        prev_lexeme_vec: &[f64],
    ) -> Var {
        let cat = {
            let a0 = t.input(ex.audio_high[0].clone());
            let a1 = t.input(ex.audio_high[1].clone());
            let a2 = t.input(ex.audio_high[2].clone());
            t.hcat(&[a0, a1, a2])
        };
        let audio = self.audio_fc.forward(t, p, cat);
        let prev = t.input(Mat::row_vec(prev_lexeme_vec.to_vec()));
        let prev_block = t.repeat_rows(prev, self.k);
        let mut parts = vec![audio, prev_block];
        if !self.audio_only {
            let text_fc = self.text_fc.as_ref().expect("text path present");
            let text = t.input(
                ex.text
                    .clone()
                    .expect("text features required unless audio-only"),
            );
            parts.push(text_fc.forward(t, p, text));
            let mut one_hot = Mat::zeros(1, self.n_speakers);
            one_hot.set(0, ex.speaker, 1.0);
            let sp = t.input(one_hot);
            parts.push(t.repeat_rows(sp, self.k));
        }
        if let Some(c) = &ex.style_block {
            assert!(self.style_edit, "style block passed to a plain model");
            parts.push(t.input(c.clone()));
        } else {
            assert!(!self.style_edit, "style-edit model needs a feature block");
        }
        let frames = t.hcat(&parts);
        let h0 = t.input(Mat::zeros(1, self.gru.hidden));
        let (_, last) = self.gru.forward_seq(t, p, frames, h0);
        self.head.forward(t, p, last)
    }

    /// Class probabilities for one block (softmax over lexemes).
    pub fn distribution(&self, ex: &InterpreterExample, prev_lexeme_vec: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let logits = self.logits_on(&mut tape, &bound, ex, prev_lexeme_vec);
        math::softmax(tape.value(logits).row(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, &self.checkpoint_kind(), &self.params)
    }

    pub fn load(path: &Path, cfg: &Config, n_speakers: usize) -> Result<Self> {
        let mut model = LexemeInterpreterModel::new(cfg, n_speakers);
        checkpoint::load_params(path, &model.checkpoint_kind(), &mut model.params)?;
        model.trained = true;
        Ok(model)
    }
}

/// Outcome of one lexeme-interpretation step.
#[derive(Debug, Clone, PartialEq)]
pub struct LexemeChoice {
    pub distribution: Vec<f64>,
    pub chosen: usize,
    /// Set when the silent hint fired but no silent lexeme exists.
    pub silent_fallback_warning: bool,
}

/// Argmax of the distribution (ties to the lowest index), except during
/// silent periods, where the nearest silent lexeme to `prev` is forced.
#[allow(clippy::too_many_arguments)]
pub fn interpret_lexeme(
    model: &LexemeInterpreterModel,
    ex: &InterpreterExample,
    prev: usize,
    codebook: &Mat,
    silent_set: &BTreeSet<usize>,
) -> LexemeChoice {
    let distribution = model.distribution(ex, codebook.row(prev));
    debug_assert!((distribution.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    if ex.silent {
        match nearest_silent_lexeme(prev, silent_set, codebook) {
            Ok(chosen) => {
                return LexemeChoice {
                    distribution,
                    chosen,
                    silent_fallback_warning: false,
                }
            }
            Err(_) => {
                return LexemeChoice {
                    distribution,
                    chosen: prev,
                    silent_fallback_warning: true,
                }
            }
        }
    }
    let chosen = argmax_lowest(&distribution);
    LexemeChoice {
        distribution,
        chosen,
        silent_fallback_warning: false,
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub struct StyleInterpreterModel {
    pub params: Params,
    audio_fc: Linear,
    text_fc: Option<Linear>,
    gru: Gru,
    head: Linear,
    k: usize,
    d_style: usize,
    d_lexeme: usize,
    audio_only: bool,
    trained: bool,
}

impl StyleInterpreterModel {
    pub const CHECKPOINT_KIND: &'static str = "style-interpreter";

    pub fn new(cfg: &Config) -> Self {
        let mut rng = rng::stream(cfg.seed, "style-interpreter-init");
        let mut params = Params::new();
        let audio_fc = Linear::new(
            &mut params,
            &mut rng,
            "audio_fc",
            3 * cfg.d_audio_low,
            cfg.d_audio_ctx,
        );
        let text_fc = (!cfg.audio_only).then(|| {
            Linear::new(&mut params, &mut rng, "text_fc", cfg.d_text, cfg.d_text_feat)
        });
        let mut frame_dim = cfg.d_audio_ctx + cfg.d_style + cfg.d_lexeme;
        if !cfg.audio_only {
            frame_dim += cfg.d_text_feat;
        }
        let gru = Gru::new(&mut params, &mut rng, "gru", frame_dim, cfg.interpreter_hidden);
        let head = Linear::new(&mut params, &mut rng, "head", cfg.interpreter_hidden, cfg.d_style);
        StyleInterpreterModel {
            params,
            audio_fc,
            text_fc,
            gru,
            head,
            k: cfg.block_frames(),
            d_style: cfg.d_style,
            d_lexeme: cfg.d_lexeme,
            audio_only: cfg.audio_only,
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn checkpoint_kind(&self) -> String {
        if self.audio_only {
            format!("{}-audio-only", Self::CHECKPOINT_KIND)
        } else {
            Self::CHECKPOINT_KIND.to_string()
        }
    }

    fn predict_on(
        &self,
        t: &mut Tape,
        p: &Bound,
        ex: &InterpreterExample,
        prev_style: &[f64],
        lexeme_vec: &[f64],
    ) -> Var {
        let cat = {
            let a0 = t.input(ex.audio_low[0].clone());
            let a1 = t.input(ex.audio_low[1].clone());
            let a2 = t.input(ex.audio_low[2].clone());
            t.hcat(&[a0, a1, a2])
        };
        let audio = self.audio_fc.forward(t, p, cat);
        let prev = t.input(Mat::row_vec(prev_style.to_vec()));
        let prev_block = t.repeat_rows(prev, self.k);
        let lex = t.input(Mat::row_vec(lexeme_vec.to_vec()));
        let lex_block = t.repeat_rows(lex, self.k);
        let mut parts = vec![audio, prev_block, lex_block];
        if !self.audio_only {
            let text_fc = self.text_fc.as_ref().expect("text path present");
            let text = t.input(ex.text.clone().expect("text features required"));
            parts.push(text_fc.forward(t, p, text));
        }
        let frames = t.hcat(&parts);
        let h0 = t.input(Mat::zeros(1, self.gru.hidden));
        let (_, last) = self.gru.forward_seq(t, p, frames, h0);
        self.head.forward(t, p, last)
    }

    /// Deterministic style code for one block.
    pub fn interpret(
        &self,
        ex: &InterpreterExample,
        prev_style: &[f64],
        lexeme_vec: &[f64],
    ) -> Vec<f64> {
        assert_eq!(prev_style.len(), self.d_style);
        assert_eq!(lexeme_vec.len(), self.d_lexeme);
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let z = self.predict_on(&mut tape, &bound, ex, prev_style, lexeme_vec);
        tape.value(z).row(0).to_vec()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, &self.checkpoint_kind(), &self.params)
    }

    pub fn load(path: &Path, cfg: &Config) -> Result<Self> {
        let mut model = StyleInterpreterModel::new(cfg);
        checkpoint::load_params(path, &model.checkpoint_kind(), &mut model.params)?;
        model.trained = true;
        Ok(model)
    }
}

/// Train both interpreters: cross-entropy on lexeme targets (silent blocks
/// retargeted to the nearest silent lexeme) and MSE on style targets.
pub fn train_interpreters(
    examples: &[InterpreterExample],
    n_speakers: usize,
    codebook: &Mat,
    silent_set: &BTreeSet<usize>,
    cfg: &Config,
) -> Result<(LexemeInterpreterModel, StyleInterpreterModel)> {
    if examples.is_empty() {
        return Err(Error::Argument("interpreter dataset is empty".into()));
    }
    if examples[0].style_target.is_empty() {
        return Err(Error::Argument(
            "style-code table missing: train the generator first".into(),
        ));
    }

    // silent retargeting
    let targets: Vec<usize> = examples
        .iter()
        .map(|ex| {
            if ex.silent {
                nearest_silent_lexeme(ex.lexeme, silent_set, codebook).unwrap_or(ex.lexeme)
            } else {
                ex.lexeme
            }
        })
        .collect();

    let mut lex_model = LexemeInterpreterModel::new(cfg, n_speakers);
    let mut style_model = StyleInterpreterModel::new(cfg);
    let mut lex_adam = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut style_adam = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut batch_rng = rng::stream(cfg.seed, "interpreter-batches");
    let batch_size = cfg.batch_size.min(examples.len());

    for step in 0..cfg.interpreter_steps {
        // lexeme interpreter: categorical cross-entropy
        let mut tape = Tape::new();
        let bound = lex_model.params.bind(&mut tape);
        let mut losses = Vec::with_capacity(batch_size);
        let mut idxs = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = batch_rng.random_range(0..examples.len());
            idxs.push(i);
            let ex = &examples[i];
            let logits = lex_model.logits_on(&mut tape, &bound, ex, codebook.row(ex.prev_lexeme));
            let lse = tape.logsumexp_rows(logits);
            let pick = tape.select_per_row(logits, vec![targets[i]]);
            losses.push(tape.sub(lse, pick));
        }
        let stack = tape.vcat(&losses);
        let loss = tape.mean(stack);
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::Numerical(format!(
                "lexeme interpreter loss diverged at step {step}"
            )));
        }
        let grads = tape.backward(loss);
        lex_adam.step(&mut lex_model.params, &bound, &grads);

        // style interpreter: MSE against the learned style codes
        let mut tape = Tape::new();
        let bound = style_model.params.bind(&mut tape);
        let mut losses = Vec::with_capacity(batch_size);
        for &i in &idxs {
            let ex = &examples[i];
            let z = style_model.predict_on(
                &mut tape,
                &bound,
                ex,
                &ex.prev_style,
                codebook.row(targets[i]),
            );
            let target = tape.input(Mat::row_vec(ex.style_target.clone()));
            losses.push(tape.mse(target, z));
        }
        let stack = tape.vcat(&losses);
        let loss = tape.mean(stack);
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::Numerical(format!(
                "style interpreter loss diverged at step {step}"
            )));
        }
        let grads = tape.backward(loss);
        style_adam.step(&mut style_model.params, &bound, &grads);
    }
    lex_model.trained = true;
    style_model.trained = true;
    Ok((lex_model, style_model))
}

// ---- statistical interpreter ----

/// Frequency-matching Markov fallback: ignores the speech and samples the
/// next lexeme from `softmax(f_I - f_t) . L`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StatisticalInterpreter {
    version: u32,
    /// Target lexeme frequency of the speaker.
    pub freq: Vec<f64>,
    /// Row-stochastic transition matrix, row-major.
    pub transition: Vec<Vec<f64>>,
    /// Lexeme counts of the generated sequence so far.
    #[serde(default)]
    counts: Vec<u64>,
}

impl StatisticalInterpreter {
    pub const VERSION: u32 = 1;

    /// Estimate from training lexeme sequences with add-one smoothing.
    pub fn from_sequences(sequences: &[Vec<usize>], n_lexemes: usize) -> Self {
        let mut freq = vec![1.0; n_lexemes]; // add-one
        let mut trans = vec![vec![1.0; n_lexemes]; n_lexemes];
        for seq in sequences {
            for &l in seq {
                freq[l] += 1.0;
            }
            for w in seq.windows(2) {
                trans[w[0]][w[1]] += 1.0;
            }
        }
        let total: f64 = freq.iter().sum();
        for f in freq.iter_mut() {
            *f /= total;
        }
        for row in trans.iter_mut() {
            let s: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        StatisticalInterpreter {
            version: Self::VERSION,
            freq,
            transition: trans,
            counts: vec![0; n_lexemes],
        }
    }

    pub fn n_lexemes(&self) -> usize {
        self.freq.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.freq.len();
        let ok_dist = |v: &[f64]| v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-6;
        if !ok_dist(&self.freq) {
            return Err(Error::Argument("speaker frequency is not a distribution".into()));
        }
        if self.transition.len() != n || self.transition.iter().any(|r| r.len() != n || !ok_dist(r)) {
            return Err(Error::Argument(
                "transition matrix is not row-stochastic".into(),
            ));
        }
        Ok(())
    }

    /// Running frequency `f_t` of generated lexemes (zeros before the first
    /// draw).
    pub fn running_freq(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }

    /// The multinomial `softmax(f_I - f_t) . L` for the next draw.
    pub fn next_probabilities(&self) -> Vec<f64> {
        let ft = self.running_freq();
        let diff: Vec<f64> = self.freq.iter().zip(&ft).map(|(a, b)| a - b).collect();
        let weights = math::softmax(&diff);
        // row vector times matrix
        let n = self.freq.len();
        let mut out = vec![0.0; n];
        for (i, &w) in weights.iter().enumerate() {
            for j in 0..n {
                out[j] += w * self.transition[i][j];
            }
        }
        out
    }

    /// Draw the next lexeme and update the running frequency.
    pub fn step(&mut self, rng: &mut impl Rng) -> usize {
        let probs = self.next_probabilities();
        let pick = rng::multinomial(rng, &probs);
        self.counts[pick] += 1;
        pick
    }

    /// Silent-hint override shared with the learned interpreter: during a
    /// silent block the nearest silent lexeme to `prev` is used and counted.
    pub fn step_with_silence(
        &mut self,
        rng: &mut impl Rng,
        silent: bool,
        prev: usize,
        codebook: &Mat,
        silent_set: &BTreeSet<usize>,
    ) -> usize {
        if silent {
            if let Ok(s) = nearest_silent_lexeme(prev, silent_set, codebook) {
                self.counts[s] += 1;
                return s;
            }
        }
        self.step(rng)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: StatisticalInterpreter = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if state.version != Self::VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: state.version,
                expected: Self::VERSION,
            });
        }
        state.validate()?;
        let mut state = state;
        if state.counts.len() != state.freq.len() {
            state.counts = vec![0; state.freq.len()];
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> Config {
        let mut cfg = Config::desk_scale(9);
        cfg.lexicon_size = 3;
        cfg.d_lexeme = 4;
        cfg.d_audio_high = 5;
        cfg.d_audio_low = 5;
        cfg.d_audio_ctx = 6;
        cfg.d_audio_ctx_high = 6;
        cfg.d_text = 7;
        cfg.d_text_feat = 4;
        cfg.d_style = 3;
        cfg.interpreter_hidden = 8;
        cfg.interpreter_steps = 4;
        cfg.batch_size = 2;
        cfg
    }

    fn example(cfg: &Config, seed: u64) -> InterpreterExample {
        let mut r = rng::stream(seed, "interp-ex");
        let k = cfg.block_frames();
        let m = |r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
            Mat::from_fn(rows, cols, |_, _| r.random::<f64>() - 0.5)
        };
        InterpreterExample {
            audio_high: [
                m(&mut r, k, cfg.d_audio_high),
                m(&mut r, k, cfg.d_audio_high),
                m(&mut r, k, cfg.d_audio_high),
            ],
            audio_low: [
                m(&mut r, k, cfg.d_audio_low),
                m(&mut r, k, cfg.d_audio_low),
                m(&mut r, k, cfg.d_audio_low),
            ],
            text: Some(m(&mut r, k, cfg.d_text)),
            speaker: 0,
            prev_lexeme: 0,
            lexeme: 1,
            silent: false,
            style_target: vec![0.1; cfg.d_style],
            prev_style: vec![0.0; cfg.d_style],
            style_block: None,
        }
    }

    fn codebook(cfg: &Config) -> Mat {
        Mat::from_fn(cfg.lexicon_size, cfg.d_lexeme, |r, c| {
            (r as f64) + 0.1 * c as f64
        })
    }

    #[test]
    fn distribution_sums_to_one_and_shift_invariance_holds() {
        let cfg = tiny_cfg();
        let model = LexemeInterpreterModel::new(&cfg, 2);
        let ex = example(&cfg, 1);
        let cb = codebook(&cfg);
        let dist = model.distribution(&ex, cb.row(0));
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(dist.iter().all(|&p| p >= 0.0));
        // softmax shift invariance on the head: adding a constant to all
        // logits leaves the distribution unchanged
        let logits = vec![0.3, -1.0, 2.0];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 7.5).collect();
        let a = math::softmax(&logits);
        let b = math::softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_model_ties_break_to_index_zero() {
        let cfg = tiny_cfg();
        let mut model = LexemeInterpreterModel::new(&cfg, 2);
        let zeroed: Vec<Mat> = model
            .params
            .values()
            .iter()
            .map(|m| Mat::zeros(m.rows(), m.cols()))
            .collect();
        model.params.set_values(&zeroed);
        let ex = example(&cfg, 2);
        let cb = codebook(&cfg);
        let choice = interpret_lexeme(&model, &ex, 0, &cb, &BTreeSet::new());
        assert_eq!(choice.chosen, 0);
        for p in &choice.distribution {
            assert!((p - 1.0 / cfg.lexicon_size as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn silent_flag_forces_a_silent_lexeme_or_warns() {
        let cfg = tiny_cfg();
        let model = LexemeInterpreterModel::new(&cfg, 2);
        let mut ex = example(&cfg, 3);
        ex.silent = true;
        let cb = codebook(&cfg);
        let mut silent = BTreeSet::new();
        silent.insert(2usize);
        let choice = interpret_lexeme(&model, &ex, 0, &cb, &silent);
        assert_eq!(choice.chosen, 2);
        assert!(!choice.silent_fallback_warning);
        // prev already silent stays put
        let choice = interpret_lexeme(&model, &ex, 2, &cb, &silent);
        assert_eq!(choice.chosen, 2);
        // empty silent set: keep prev with a warning
        let choice = interpret_lexeme(&model, &ex, 1, &cb, &BTreeSet::new());
        assert_eq!(choice.chosen, 1);
        assert!(choice.silent_fallback_warning);
    }

    #[test]
    fn style_interpreter_is_deterministic_and_zeroed_gives_bias() {
        let cfg = tiny_cfg();
        let mut model = StyleInterpreterModel::new(&cfg);
        let ex = example(&cfg, 4);
        let cb = codebook(&cfg);
        let a = model.interpret(&ex, &[0.0; 3], cb.row(1));
        let b = model.interpret(&ex, &[0.0; 3], cb.row(1));
        assert_eq!(a, b);

        let zeroed: Vec<Mat> = model
            .params
            .values()
            .iter()
            .map(|m| Mat::zeros(m.rows(), m.cols()))
            .collect();
        model.params.set_values(&zeroed);
        *model.params.get_mut(model.head.b) = Mat::row_vec(vec![0.5, -0.25, 0.75]);
        let z = model.interpret(&ex, &[0.0; 3], cb.row(1));
        assert_eq!(z, vec![0.5, -0.25, 0.75]);
    }

    #[test]
    fn training_is_deterministic_and_zero_steps_is_identity() {
        let mut cfg = tiny_cfg();
        cfg.interpreter_steps = 0;
        let exs: Vec<InterpreterExample> = (0..4).map(|i| example(&cfg, 10 + i)).collect();
        let cb = codebook(&cfg);
        let silent = BTreeSet::new();
        let (lex, style) = train_interpreters(&exs, 2, &cb, &silent, &cfg).unwrap();
        let fresh_lex = LexemeInterpreterModel::new(&cfg, 2);
        let fresh_style = StyleInterpreterModel::new(&cfg);
        for (a, b) in lex.params.values().iter().zip(fresh_lex.params.values()) {
            assert_eq!(a, &b);
        }
        for (a, b) in style.params.values().iter().zip(fresh_style.params.values()) {
            assert_eq!(a, &b);
        }

        cfg.interpreter_steps = 3;
        let (l1, s1) = train_interpreters(&exs, 2, &cb, &silent, &cfg).unwrap();
        let (l2, s2) = train_interpreters(&exs, 2, &cb, &silent, &cfg).unwrap();
        for (a, b) in l1.params.values().iter().zip(l2.params.values()) {
            assert_eq!(a, &b);
        }
        for (a, b) in s1.params.values().iter().zip(s2.params.values()) {
            assert_eq!(a, &b);
        }
    }

    #[test]
    fn audio_only_mode_drops_text_and_speaker_paths() {
        let mut cfg = tiny_cfg();
        cfg.audio_only = true;
        let mut exs: Vec<InterpreterExample> = (0..3).map(|i| example(&cfg, 20 + i)).collect();
        for ex in exs.iter_mut() {
            ex.text = None;
        }
        let cb = codebook(&cfg);
        cfg.interpreter_steps = 2;
        let (lex, style) = train_interpreters(&exs, 2, &cb, &BTreeSet::new(), &cfg).unwrap();
        assert!(lex.checkpoint_kind().contains("audio-only"));
        assert!(style.checkpoint_kind().contains("audio-only"));
        let choice = interpret_lexeme(&lex, &exs[0], 0, &cb, &BTreeSet::new());
        assert_eq!(choice.distribution.len(), cfg.lexicon_size);
    }

    #[test]
    fn statistical_interpreter_matches_the_hand_computation() {
        let state = StatisticalInterpreter {
            version: 1,
            freq: vec![0.5, 0.5],
            transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            counts: vec![1, 0], // f_t = [1, 0]
        };
        state.validate().unwrap();
        let probs = state.next_probabilities();
        // softmax([-0.5, 0.5]) = [0.2689, 0.7311]; times L
        assert!((probs[0] - 0.3882).abs() < 1e-4, "{probs:?}");
        assert!((probs[1] - 0.6118).abs() < 1e-4, "{probs:?}");
        // brute force
        let sm = math::softmax(&[0.5 - 1.0, 0.5 - 0.0]);
        let expect = [
            sm[0] * 0.9 + sm[1] * 0.2,
            sm[0] * 0.1 + sm[1] * 0.8,
        ];
        assert!((probs[0] - expect[0]).abs() < 1e-12);
        assert!((probs[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn uniform_transition_rows_wash_out_the_frequencies() {
        let state = StatisticalInterpreter {
            version: 1,
            freq: vec![0.7, 0.2, 0.1],
            transition: vec![vec![1.0 / 3.0; 3]; 3],
            counts: vec![5, 0, 0],
        };
        let probs = state.next_probabilities();
        for p in probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn long_run_frequency_approaches_the_target() {
        // a fairly mobile chain: the matching rule should track f^I
        let n = 4;
        let mut seqs = Vec::new();
        let mut r = rng::stream(5, "stat-gen");
        for _ in 0..20 {
            let mut seq = Vec::new();
            for _ in 0..100 {
                // target frequencies roughly [0.4, 0.3, 0.2, 0.1]
                let x: f64 = r.random();
                seq.push(if x < 0.4 {
                    0
                } else if x < 0.7 {
                    1
                } else if x < 0.9 {
                    2
                } else {
                    3
                });
            }
            seqs.push(seq);
        }
        let mut state = StatisticalInterpreter::from_sequences(&seqs, n);
        state.validate().unwrap();
        let target = state.freq.clone();
        let mut rng = rng::stream(6, "stat-run");
        for _ in 0..10_000 {
            state.step(&mut rng);
        }
        let ft = state.running_freq();
        let tv: f64 = target
            .iter()
            .zip(&ft)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.1, "total variation {tv}, target {target:?}, got {ft:?}");
    }

    #[test]
    fn non_stochastic_matrix_fails_validation_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        let bad = StatisticalInterpreter {
            version: 1,
            freq: vec![0.5, 0.5],
            transition: vec![vec![0.9, 0.3], vec![0.2, 0.8]],
            counts: vec![0, 0],
        };
        assert!(bad.validate().is_err());
        std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
        assert!(StatisticalInterpreter::load(&path).is_err());

        let good = StatisticalInterpreter::from_sequences(&[vec![0, 1, 0, 1]], 2);
        good.save(&path).unwrap();
        let back = StatisticalInterpreter::load(&path).unwrap();
        assert_eq!(back.freq, good.freq);
        assert_eq!(back.transition, good.transition);
    }
}
