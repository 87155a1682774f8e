//! Rhythm-aware co-speech gesture synthesis.
//!
//! The library turns a speech recording into an upper-body gesture animation
//! in four stages:
//!
//! 1. **Segmentation** — audio onsets are filtered into a beat grid and the
//!    speech (motion, audio, text) is cut at every beat and time-scaled into
//!    uniform blocks ([`rhythm`]).
//! 2. **Lexicon** — a vector-quantized autoencoder clusters the normalized
//!    motion blocks into a discrete set of gesture lexemes ([`lexicon`]).
//! 3. **Generation** — an autoregressive block generator synthesizes motion
//!    conditioned on the previous block, audio context, a lexeme, and a
//!    style code ([`generator`]); interpreters predict lexemes and style
//!    codes from speech at inference time ([`interpreters`]).
//! 4. **Evaluation** — rhythm and quality metrics, including the percentage
//!    of matched beats ([`metrics`]).
//!
//! The `gesture-rhythm` CLI drives the full pipeline; see [`pipeline`] for
//! the stage graph and on-disk artifact layout.

pub mod audio_encoder;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod generator;
pub mod interpreters;
pub mod lexicon;
pub mod manifest;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rhythm;
pub mod rng;
pub mod synthetic;

pub use config::Config;
pub use error::{Error, Result};
