//! Pipeline configuration.
//!
//! Defaults follow the reference hyperparameters: onset interval range
//! `[0.2 s, 0.5 s]`, 20 fps, lexicon of 50, feature dims
//! `(768, 128, 128, 128, 192, 32, 32)`, Adam `(0.9, 0.999, 3e-4)`, loss
//! weights `(1.0, 1.0, 1.0, 0.5, 0.2, 1.0)`, smoothing kernel 5, and a PMB
//! threshold of 0.2 s. The block length `K = ceil(D_M * fps)` is always
//! derived, never stored.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Minimum onset interval D_m (seconds).
    pub d_min_s: f64,
    /// Maximum onset interval D_M (seconds); also the normalized block length.
    pub d_max_s: f64,
    /// Percentile of the RMS envelope used as the environmental-noise
    /// threshold.
    pub noise_percentile: f64,
    /// Motion frame rate.
    pub fps: f64,
    /// Lexicon size N_s.
    pub lexicon_size: usize,
    /// Word-embedding dimension d_t.
    pub d_text: usize,
    /// Generator audio-feature width d_a-tilde.
    pub d_audio_ctx: usize,
    /// Lexeme-interpreter audio-feature width d_A-tilde.
    pub d_audio_ctx_high: usize,
    /// Width d_a of the low-level audio feature (encoder layer 2).
    pub d_audio_low: usize,
    /// Width d_A of the high-level audio feature (encoder layer 8).
    pub d_audio_high: usize,
    /// Generator motion-feature width d_m-tilde.
    pub d_motion_feat: usize,
    /// Lexeme latent dimension d_s.
    pub d_lexeme: usize,
    /// Channel widths of the four lexicon encoder convolutions (the decoder
    /// mirrors them).
    pub lexicon_channels: Vec<usize>,
    /// Style-code dimension d_z.
    pub d_style: usize,
    /// Positional-encoding dimension d_P.
    pub d_pos: usize,
    /// Positional-encoding frequency base.
    pub pos_beta: f64,
    /// Grouped categorical latent: group count H.
    pub latent_groups: usize,
    /// Grouped categorical latent: categories per group C.
    pub latent_categories: usize,
    /// Dimension of each group's code vector.
    pub latent_code_dim: usize,
    /// Contrastive temperature tau.
    pub tau: f64,
    /// Mel bands for the audio front-end.
    pub mel_bands: usize,
    /// Audio sample rate used for analysis (input audio is resampled).
    pub analysis_sample_rate: u32,
    /// VQ commitment weight w_alpha.
    pub w_alpha: f64,
    /// VQ codebook weight w_beta.
    pub w_beta: f64,
    pub w_rec: f64,
    pub w_perc: f64,
    pub w_lexeme: f64,
    pub w_z: f64,
    /// Adam first-moment decay.
    pub adam_beta1: f64,
    /// Adam second-moment decay.
    pub adam_beta2: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Lexeme-loss context subset size N_J.
    pub lexeme_loss_contexts: usize,
    /// Gaussian smoothing kernel (frames) applied after denormalization.
    pub smoothing_kernel: usize,
    /// PMB matching threshold delta (seconds).
    pub pmb_delta_s: f64,
    /// Hidden width of the generator MLP encoder and recurrent decoder.
    pub generator_hidden: usize,
    /// Hidden width of both interpreters' recurrent cores.
    pub interpreter_hidden: usize,
    /// Text-feature width inside the interpreters.
    pub d_text_feat: usize,
    /// Mini-batch size shared by the trainers.
    pub batch_size: usize,
    /// Training steps per stage.
    pub audio_encoder_steps: usize,
    pub lexicon_steps: usize,
    pub generator_steps: usize,
    pub interpreter_steps: usize,
    /// Audio-encoder projection dimension for the contrastive space.
    pub d_projection: usize,
    /// Gumbel-softmax temperature schedule (exponential anneal).
    pub gumbel_temp_start: f64,
    pub gumbel_temp_end: f64,
    /// Silent data augmentation target fraction of the training set.
    pub silent_augment_ratio: f64,
    /// Stationarity threshold for silent-lexeme labeling, as a fraction of
    /// the dataset's median joint speed.
    pub silent_speed_fraction: f64,
    /// Motion-beat deceleration gate percentile.
    pub decel_percentile: f64,
    /// Style-feature sliding window (seconds).
    pub style_window_s: f64,
    /// Inference window after which the decoder state is reset (seconds).
    pub decoder_window_s: f64,
    /// Strip text and speaker inputs from the interpreters.
    pub audio_only: bool,
    /// Train the generator and lexeme interpreter with a style-feature
    /// conditioning block of this named feature.
    pub style_edit_feature: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            d_min_s: 0.2,
            d_max_s: 0.5,
            noise_percentile: 10.0,
            fps: 20.0,
            lexicon_size: 50,
            d_text: 768,
            d_audio_ctx: 128,
            d_audio_ctx_high: 128,
            d_audio_low: 128,
            d_audio_high: 128,
            d_motion_feat: 128,
            d_lexeme: 192,
            lexicon_channels: vec![64, 96, 128, 160],
            d_style: 32,
            d_pos: 32,
            pos_beta: 10_000.0,
            latent_groups: 64,
            latent_categories: 128,
            latent_code_dim: 8,
            tau: 0.1,
            mel_bands: 40,
            analysis_sample_rate: 16_000,
            w_alpha: 1.0,
            w_beta: 1.0,
            w_rec: 1.0,
            w_perc: 0.5,
            w_lexeme: 0.2,
            w_z: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            learning_rate: 3e-4,
            seed: 0,
            lexeme_loss_contexts: 8,
            smoothing_kernel: 5,
            pmb_delta_s: 0.2,
            generator_hidden: 512,
            interpreter_hidden: 256,
            d_text_feat: 128,
            batch_size: 32,
            audio_encoder_steps: 2000,
            lexicon_steps: 4000,
            generator_steps: 8000,
            interpreter_steps: 4000,
            d_projection: 64,
            gumbel_temp_start: 2.0,
            gumbel_temp_end: 0.1,
            silent_augment_ratio: 0.05,
            silent_speed_fraction: 0.05,
            decel_percentile: 20.0,
            style_window_s: 4.0,
            decoder_window_s: 4.0,
            audio_only: false,
            style_edit_feature: None,
        }
    }
}

impl Config {
    /// Frames per normalized block, `K = ceil(D_M * fps)`.
    pub fn block_frames(&self) -> usize {
        (self.d_max_s * self.fps).ceil() as usize
    }

    /// Motion dimension: 16 joints, 3 exponential-map components each.
    pub const D_MOTION: usize = 48;

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        };
        check(
            self.d_min_s > 0.0 && self.d_min_s < self.d_max_s,
            "d_min_s",
            "require 0 < D_m < D_M",
        )?;
        check(self.block_frames() >= 2, "d_max_s", "require K >= 2")?;
        check(self.fps > 0.0, "fps", "must be positive")?;
        check(self.lexicon_size >= 2, "lexicon_size", "require N_s >= 2")?;
        check(self.tau > 0.0, "tau", "must be positive")?;
        check(self.d_pos % 2 == 0, "d_pos", "must be even")?;
        check(
            (0.0..=100.0).contains(&self.noise_percentile),
            "noise_percentile",
            "must be in [0, 100]",
        )?;
        check(
            self.smoothing_kernel % 2 == 1,
            "smoothing_kernel",
            "must be odd",
        )?;
        check(self.pmb_delta_s > 0.0, "pmb_delta_s", "must be positive")?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            "must be positive and finite",
        )?;
        check(
            [self.w_alpha, self.w_beta, self.w_rec, self.w_perc, self.w_lexeme, self.w_z]
                .iter()
                .all(|w| *w >= 0.0),
            "loss weights",
            "must be non-negative",
        )?;
        check(self.batch_size >= 2, "batch_size", "require >= 2")?;
        check(
            self.lexicon_channels.len() == 4 && self.lexicon_channels.iter().all(|&c| c >= 1),
            "lexicon_channels",
            "must list four positive widths",
        )?;
        check(
            self.latent_groups >= 1 && self.latent_categories >= 2,
            "latent_groups",
            "require H >= 1 and C >= 2",
        )?;
        if let Some(f) = &self.style_edit_feature {
            check(
                matches!(f.as_str(), "hand_height" | "hand_speed" | "hand_radius"),
                "style_edit_feature",
                "must be one of hand_height, hand_speed, hand_radius",
            )?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)
            .map_err(|e| Error::config("<config file>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// A scaled-down configuration for fast desk-scale experiments and the
    /// synthetic benchmark datasets. Behavioral settings (intervals, loss
    /// weights, smoothing, delta) keep their defaults; widths and step
    /// counts shrink.
    pub fn desk_scale(seed: u64) -> Self {
        Config {
            seed,
            lexicon_size: 8,
            d_audio_ctx: 24,
            d_audio_ctx_high: 24,
            d_audio_low: 24,
            d_audio_high: 24,
            d_motion_feat: 32,
            d_lexeme: 48,
            lexicon_channels: vec![32, 48, 64, 80],
            d_style: 8,
            d_pos: 8,
            latent_groups: 4,
            latent_categories: 8,
            latent_code_dim: 8,
            mel_bands: 24,
            generator_hidden: 96,
            interpreter_hidden: 64,
            d_text_feat: 24,
            d_projection: 24,
            batch_size: 8,
            learning_rate: 1e-3,
            audio_encoder_steps: 300,
            lexicon_steps: 700,
            generator_steps: 1200,
            interpreter_steps: 600,
            lexeme_loss_contexts: 4,
            ..Config::default()
        }
    }
}
