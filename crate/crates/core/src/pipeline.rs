//! Stage orchestration and on-disk artifacts.
//!
//! Stages run one at a time over a shared output directory:
//!
//! ```text
//! preprocess -> train-audio -> build-lexicon -> train-generator
//!            -> train-interpreters -> infer -> eval
//! ```
//!
//! Every stage freezes the config on first use, verifies the content hashes
//! of the artifacts it consumes, and records the hashes of what it writes,
//! so stale or missing prerequisites fail with exit-code-3 errors instead
//! of silently mixing runs.

use crate::audio_encoder::{self, AudioEncoderModel, AudioFeatureBlock};
use crate::checkpoint::{Reader, Writer};
use crate::config::Config;
use crate::data::audio::{load_wav, AudioClip};
use crate::data::motion::{load_motion_clip, save_motion_clip, MotionClip};
use crate::data::skeleton::{Skeleton, POSE_DIM};
use crate::data::style::{compute_style_features, StyleFeature};
use crate::data::text::{align_text_to_frames, WordAlignment, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::generator::{self, GeneratorModel, GeneratorState, StyleTable, TrainingBlock};
use crate::interpreters::{
    interpret_lexeme, train_interpreters, InterpreterExample, LexemeInterpreterModel,
    StatisticalInterpreter, StyleInterpreterModel,
};
use crate::lexicon::{self, LexemeAssignment, LexiconModel};
use crate::manifest::{ClipRecord, DatasetManifest, Split};
use crate::math::{self, Mat};
use crate::metrics::{self, BeatSequence, MetricReport};
use crate::rhythm::{
    denormalize_and_smooth, detect_onsets, identify_beats, normalize_segments,
    segment::{seconds_to_frame, SegmentInput},
    Beat, BeatConfig, BeatGrid, NormalizedBlock, OnsetList,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const ONSET_HOP_S: f64 = 0.016;
pub const RMS_WINDOW_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    TrainAudio,
    BuildLexicon,
    TrainGenerator,
    TrainInterpreters,
    Infer,
    Eval,
    StyleEdit,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "preprocess" => Stage::Preprocess,
            "train-audio" => Stage::TrainAudio,
            "build-lexicon" => Stage::BuildLexicon,
            "train-generator" => Stage::TrainGenerator,
            "train-interpreters" => Stage::TrainInterpreters,
            "infer" => Stage::Infer,
            "eval" => Stage::Eval,
            "style-edit" => Stage::StyleEdit,
            other => {
                return Err(Error::Argument(format!(
                    "unknown stage `{other}` (expected preprocess, train-audio, build-lexicon, \
                     train-generator, train-interpreters, infer, eval, or style-edit)"
                )))
            }
        })
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Preprocess => "preprocess",
            Stage::TrainAudio => "train-audio",
            Stage::BuildLexicon => "build-lexicon",
            Stage::TrainGenerator => "train-generator",
            Stage::TrainInterpreters => "train-interpreters",
            Stage::Infer => "infer",
            Stage::Eval => "eval",
            Stage::StyleEdit => "style-edit",
        })
    }
}

/// Requested constant style value for editing runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleEditRequest {
    pub feature: StyleFeature,
    pub value: f64,
}

/// A pipeline run rooted at one output directory.
pub struct Run {
    pub cfg: Config,
    pub manifest: DatasetManifest,
    pub out: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Run {
    /// Open a run: merge manifest overrides onto the config, freeze the
    /// config into the output directory, and load the hash registry.
    pub fn open(cfg: &Config, manifest_path: &Path, out: &Path) -> Result<Run> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let cfg = manifest.apply_overrides(cfg)?;
        cfg.validate()?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

        let frozen = out.join("config.toml");
        let serialized = cfg.to_toml_string();
        if frozen.exists() {
            let existing = std::fs::read_to_string(&frozen).map_err(|e| Error::io(&frozen, e))?;
            if existing != serialized {
                return Err(Error::config(
                    "config.toml",
                    "config differs from the one frozen in this output directory; \
                     use a fresh --out for a new configuration",
                ));
            }
        } else {
            std::fs::write(&frozen, &serialized).map_err(|e| Error::io(&frozen, e))?;
        }

        let hashes_path = out.join("hashes.json");
        let hashes = if hashes_path.exists() {
            let text =
                std::fs::read_to_string(&hashes_path).map_err(|e| Error::io(&hashes_path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::parse(&hashes_path, e.line(), e.to_string()))?
        } else {
            BTreeMap::new()
        };
        Ok(Run {
            cfg,
            manifest,
            out: out.to_path_buf(),
            hashes,
        })
    }

    pub fn log(&self, stage: Stage, message: &str) {
        let line = format!("[{stage}] {message}");
        eprintln!("{line}");
        let path = self.out.join("stage.log");
        let stamped = format!(
            "{} {line}\n",
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        );
        let _ = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| std::io::Write::write_all(&mut f, stamped.as_bytes()));
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.out)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned()
    }

    /// Record an artifact this stage just wrote.
    fn record(&mut self, path: &Path) -> Result<()> {
        let hash = hash_file(path)?;
        self.hashes.insert(self.rel(path), hash);
        let text = serde_json::to_string_pretty(&self.hashes).expect("serializable");
        let hashes_path = self.out.join("hashes.json");
        std::fs::write(&hashes_path, text).map_err(|e| Error::io(&hashes_path, e))
    }

    /// Verify an input artifact exists and still matches the hash recorded
    /// when it was produced.
    fn require(&self, path: &Path, produced_by: Stage) -> Result<()> {
        if !path.exists() {
            return Err(Error::StageDependency {
                artifact: self.rel(path),
                stage: produced_by.to_string(),
            });
        }
        match self.hashes.get(&self.rel(path)) {
            None => Err(Error::StageDependency {
                artifact: self.rel(path),
                stage: produced_by.to_string(),
            }),
            Some(recorded) => {
                if *recorded != hash_file(path)? {
                    Err(Error::StaleArtifact {
                        artifact: self.rel(path),
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    // ---- artifact paths ----

    fn variant_suffix(&self) -> String {
        let mut s = String::new();
        if let Some(f) = &self.cfg.style_edit_feature {
            s.push('-');
            s.push_str(f);
        }
        if self.cfg.audio_only {
            s.push_str("-audio-only");
        }
        s
    }

    pub fn preprocess_dir(&self) -> PathBuf {
        self.out.join("preprocess")
    }

    pub fn blocks_path(&self, clip: &str) -> PathBuf {
        self.preprocess_dir().join(format!("{clip}.blocks.bin"))
    }

    pub fn beats_path(&self, clip: &str) -> PathBuf {
        self.preprocess_dir().join(format!("{clip}.beats.json"))
    }

    pub fn onsets_path(&self, clip: &str) -> PathBuf {
        self.preprocess_dir().join(format!("{clip}.onsets.json"))
    }

    pub fn audio_encoder_dir(&self) -> PathBuf {
        self.out.join("audio-encoder")
    }

    pub fn lexicon_dir(&self) -> PathBuf {
        self.out.join("lexicon")
    }

    pub fn generator_dir(&self) -> PathBuf {
        self.out
            .join(format!("generator{}", self.variant_suffix()))
    }

    pub fn interpreters_dir(&self) -> PathBuf {
        self.out
            .join(format!("interpreters{}", self.variant_suffix()))
    }

    pub fn infer_dir(&self) -> PathBuf {
        self.out.join(format!("infer{}", self.variant_suffix()))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join(format!("eval{}", self.variant_suffix()))
    }
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

// ---- preprocessed clip bundles ----

/// Everything the later stages need from one clip.
pub struct ClipBundle {
    pub id: String,
    pub speaker: usize,
    pub sample_rate: u32,
    pub clip_end_s: f64,
    pub blocks: Vec<NormalizedBlock>,
    pub grid: BeatGrid,
    pub onsets: OnsetList,
}

#[derive(Serialize, Deserialize)]
struct BeatFileEntry {
    time_s: f64,
    is_pseudo: bool,
}

#[derive(Serialize, Deserialize)]
struct OnsetFileEntry {
    time_s: f64,
    strength: f64,
}

pub fn save_beats(path: &Path, grid: &BeatGrid) -> Result<()> {
    #[derive(Serialize)]
    struct BeatFile {
        clip_end_s: f64,
        beats: Vec<BeatFileEntry>,
    }
    let file = BeatFile {
        clip_end_s: grid.clip_end_s,
        beats: grid
            .beats
            .iter()
            .map(|b| BeatFileEntry {
                time_s: b.time_s,
                is_pseudo: b.is_pseudo,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_beats(path: &Path) -> Result<BeatGrid> {
    #[derive(Deserialize)]
    struct BeatFile {
        clip_end_s: f64,
        beats: Vec<BeatFileEntry>,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: BeatFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    Ok(BeatGrid {
        beats: file
            .beats
            .iter()
            .map(|b| Beat {
                time_s: b.time_s,
                is_pseudo: b.is_pseudo,
            })
            .collect(),
        clip_end_s: file.clip_end_s,
    })
}

pub fn save_onsets(path: &Path, onsets: &OnsetList) -> Result<()> {
    let entries: Vec<OnsetFileEntry> = onsets
        .times
        .iter()
        .zip(&onsets.strengths)
        .map(|(&time_s, &strength)| OnsetFileEntry { time_s, strength })
        .collect();
    let text = serde_json::to_string_pretty(&entries).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_onsets(path: &Path) -> Result<OnsetList> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<OnsetFileEntry> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    Ok(OnsetList {
        times: entries.iter().map(|e| e.time_s).collect(),
        strengths: entries.iter().map(|e| e.strength).collect(),
    })
}

const BLOCKS_KIND: &str = "blocks";

fn save_blocks(path: &Path, bundle: &ClipBundle) -> Result<()> {
    let mut w = Writer::new(BLOCKS_KIND);
    w.u32(bundle.speaker as u32);
    w.u32(bundle.sample_rate);
    w.f64(bundle.clip_end_s);
    w.u32(bundle.blocks.len() as u32);
    for b in &bundle.blocks {
        let flags = (b.motion.is_some() as u32) | ((b.text.is_some() as u32) << 1)
            | ((b.silent as u32) << 2);
        w.u32(flags);
        w.f64(b.start_s);
        w.f64(b.duration_s);
        w.u32(b.native_frames as u32);
        if let Some(m) = &b.motion {
            w.mat("motion", m);
        }
        if let Some(t) = &b.text {
            w.mat("text", t);
        }
        w.u32(b.audio.len() as u32);
        for &s in &b.audio {
            w.f64(s);
        }
    }
    w.finish(path)
}

fn load_blocks(path: &Path, id: &str, grid: BeatGrid, onsets: OnsetList) -> Result<ClipBundle> {
    let mut r = Reader::open(path, BLOCKS_KIND)?;
    let speaker = r.u32()? as usize;
    let sample_rate = r.u32()?;
    let clip_end_s = r.f64()?;
    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let flags = r.u32()?;
        let start_s = r.f64()?;
        let duration_s = r.f64()?;
        let native_frames = r.u32()? as usize;
        let motion = if flags & 1 != 0 {
            let (name, m) = r.mat()?;
            if name != "motion" {
                return Err(Error::corrupt(path, "expected motion tensor"));
            }
            Some(m)
        } else {
            None
        };
        let text = if flags & 2 != 0 {
            let (name, m) = r.mat()?;
            if name != "text" {
                return Err(Error::corrupt(path, "expected text tensor"));
            }
            Some(m)
        } else {
            None
        };
        let audio_len = r.u32()? as usize;
        let mut audio = Vec::with_capacity(audio_len);
        for _ in 0..audio_len {
            audio.push(r.f64()?);
        }
        blocks.push(NormalizedBlock {
            motion,
            audio,
            text,
            silent: flags & 4 != 0,
            start_s,
            duration_s,
            native_frames,
        });
    }
    Ok(ClipBundle {
        id: id.to_string(),
        speaker,
        sample_rate,
        clip_end_s,
        blocks,
        grid,
        onsets,
    })
}

// ---- stage running ----

/// Execute one stage. `style_edit` provides the requested feature value for
/// `infer`/`style-edit` runs on an editing-enabled configuration.
pub fn run_stage(
    stage: Stage,
    cfg: &Config,
    manifest_path: &Path,
    out: &Path,
    style_edit: Option<StyleEditRequest>,
) -> Result<()> {
    let mut run = Run::open(cfg, manifest_path, out)?;
    match stage {
        Stage::Preprocess => preprocess(&mut run),
        Stage::TrainAudio => train_audio(&mut run),
        Stage::BuildLexicon => build_lexicon(&mut run),
        Stage::TrainGenerator => train_generator_stage(&mut run),
        Stage::TrainInterpreters => train_interpreters_stage(&mut run),
        Stage::Infer => infer(&mut run, style_edit),
        Stage::Eval => eval(&mut run, style_edit),
        Stage::StyleEdit => {
            let req = style_edit.ok_or_else(|| {
                Error::Argument("style-edit stage needs --style-edit feature=value".into())
            })?;
            infer(&mut run, Some(req))
        }
    }
}

/// Noise threshold from a clip's RMS envelope at the configured percentile.
pub fn noise_threshold(audio: &AudioClip, cfg: &Config) -> f64 {
    let env = audio.rms_envelope(RMS_WINDOW_S);
    math::percentile(&env.values, cfg.noise_percentile)
}

/// Segment one clip end to end (onsets, beats, normalized blocks).
pub fn preprocess_clip(
    audio: &AudioClip,
    motion: Option<&MotionClip>,
    alignment: Option<&WordAlignment>,
    table: Option<&WordEmbeddingTable>,
    cfg: &Config,
) -> Result<(Vec<NormalizedBlock>, BeatGrid, OnsetList)> {
    let onsets = detect_onsets(audio, ONSET_HOP_S);
    let env = audio.rms_envelope(RMS_WINDOW_S);
    let threshold = math::percentile(&env.values, cfg.noise_percentile);
    let clip_end = match motion {
        Some(m) => audio.duration_s().min(m.duration_s()),
        None => audio.duration_s(),
    };
    let grid = identify_beats(
        &onsets,
        &env,
        &BeatConfig::from_config(cfg, threshold),
        clip_end,
    );
    let text_frames = match (alignment, table, motion) {
        (Some(a), Some(t), Some(m)) => {
            Some(align_text_to_frames(a, t, cfg.fps, m.num_frames()))
        }
        (Some(a), Some(t), None) => {
            let n = (audio.duration_s() * cfg.fps).round().max(1.0) as usize;
            Some(align_text_to_frames(a, t, cfg.fps, n))
        }
        _ => None,
    };
    let input = SegmentInput {
        motion,
        audio,
        text_frames: text_frames.as_ref(),
        alignment,
        noise_threshold: threshold,
    };
    let blocks = normalize_segments(&input, &grid, cfg.fps, cfg.d_min_s, cfg.d_max_s)?;
    Ok((blocks, grid, onsets))
}

fn preprocess(run: &mut Run) -> Result<()> {
    let dir = run.preprocess_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let skeleton = Skeleton::load(&run.manifest.skeleton)?;
    let table = WordEmbeddingTable::load(&run.manifest.embeddings)?;
    let cfg = run.cfg.clone();
    let clips: Vec<ClipRecord> = run.manifest.clips.clone();

    let results: Vec<Result<(String, Vec<NormalizedBlock>, BeatGrid, OnsetList, usize, u32, f64)>> =
        clips
            .par_iter()
            .map(|clip| {
                let audio = load_wav(&clip.audio)?;
                let motion = load_motion_clip(&clip.motion, &skeleton)?;
                let alignment = clip
                    .alignment
                    .as_ref()
                    .map(|p| WordAlignment::load(p))
                    .transpose()?;
                let (blocks, grid, onsets) =
                    preprocess_clip(&audio, Some(&motion), alignment.as_ref(), Some(&table), &cfg)?;
                Ok((
                    clip.id.clone(),
                    blocks,
                    grid,
                    onsets,
                    clip.speaker,
                    audio.sample_rate(),
                    audio.duration_s(),
                ))
            })
            .collect();

    for result in results {
        let (id, blocks, grid, onsets, speaker, sample_rate, clip_end_s) = result?;
        let bundle = ClipBundle {
            id: id.clone(),
            speaker,
            sample_rate,
            clip_end_s,
            blocks,
            grid,
            onsets,
        };
        let blocks_path = run.blocks_path(&id);
        save_blocks(&blocks_path, &bundle)?;
        run.record(&blocks_path)?;
        let beats_path = run.beats_path(&id);
        save_beats(&beats_path, &bundle.grid)?;
        run.record(&beats_path)?;
        let onsets_path = run.onsets_path(&id);
        save_onsets(&onsets_path, &bundle.onsets)?;
        run.record(&onsets_path)?;
        run.log(
            Stage::Preprocess,
            &format!("{id}: {} blocks, {} beats", bundle.blocks.len(), bundle.grid.len()),
        );
    }
    Ok(())
}

fn load_bundles(run: &Run, split: Split) -> Result<Vec<ClipBundle>> {
    run.manifest
        .split(split)
        .map(|clip| {
            let blocks_path = run.blocks_path(&clip.id);
            run.require(&blocks_path, Stage::Preprocess)?;
            let grid = load_beats(&run.beats_path(&clip.id))?;
            let onsets = load_onsets(&run.onsets_path(&clip.id))?;
            load_blocks(&blocks_path, &clip.id, grid, onsets)
        })
        .collect()
}

fn train_audio(run: &mut Run) -> Result<()> {
    let bundles = load_bundles(run, Split::Train)?;
    let cfg = &run.cfg;
    let k = cfg.block_frames();
    let mut dataset = Vec::new();
    for bundle in &bundles {
        for block in &bundle.blocks {
            let Some(text) = &block.text else { continue };
            let clip = AudioClip::new(
                bundle.sample_rate,
                if block.audio.is_empty() {
                    vec![0.0; 64]
                } else {
                    block.audio.clone()
                },
            )?;
            let mel = crate::data::audio::log_mel_grid(
                &clip,
                cfg.analysis_sample_rate,
                cfg.mel_bands,
                k,
            );
            dataset.push((mel, text.clone()));
        }
    }
    run.log(
        Stage::TrainAudio,
        &format!("training on {} blocks", dataset.len()),
    );
    let (model, curve) = audio_encoder::train_audio_encoder(&dataset, cfg)?;
    let dir = run.audio_encoder_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ckpt = dir.join("model.ckpt");
    model.save(&ckpt)?;
    run.record(&ckpt)?;
    let loss = dir.join("loss.csv");
    audio_encoder::save_loss_curve(&loss, &curve)?;
    run.record(&loss)?;
    Ok(())
}

/// Ordered training motion blocks plus their silence flags.
fn train_motion_blocks(bundles: &[ClipBundle]) -> (Vec<Mat>, Vec<bool>) {
    let mut blocks = Vec::new();
    let mut silent = Vec::new();
    for bundle in bundles {
        for b in &bundle.blocks {
            if let Some(m) = &b.motion {
                blocks.push(m.clone());
                silent.push(b.silent);
            }
        }
    }
    (blocks, silent)
}

fn build_lexicon(run: &mut Run) -> Result<()> {
    let bundles = load_bundles(run, Split::Train)?;
    let skeleton = Skeleton::load(&run.manifest.skeleton)?;
    let (blocks, silent_flags) = train_motion_blocks(&bundles);
    run.log(
        Stage::BuildLexicon,
        &format!("training on {} blocks", blocks.len()),
    );
    let model = lexicon::train_lexicon(&blocks, &run.cfg)?;
    let assignment = lexicon::assign_and_label_silent(
        &blocks,
        &silent_flags,
        &skeleton,
        run.cfg.fps,
        &run.cfg,
        &model,
    )?;
    let dir = run.lexicon_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ckpt = dir.join("model.ckpt");
    model.save(&ckpt)?;
    run.record(&ckpt)?;
    let lexicon_file = dir.join("gestures.lexicon");
    lexicon::save_lexicon_file(&lexicon_file, &model, &assignment.silent)?;
    run.record(&lexicon_file)?;
    let assign_csv = dir.join("assignments.csv");
    lexicon::save_assignment_csv(&assign_csv, &assignment)?;
    run.record(&assign_csv)?;
    let latents_csv = dir.join("latents.csv");
    lexicon::save_latents_csv(&latents_csv, &assignment)?;
    run.record(&latents_csv)?;
    run.log(
        Stage::BuildLexicon,
        &format!("silent lexemes: {:?}", assignment.silent),
    );
    Ok(())
}

fn load_trained_lexicon(run: &Run) -> Result<(LexiconModel, LexemeAssignment, Vec<Mat>, Vec<bool>)> {
    let ckpt = run.lexicon_dir().join("model.ckpt");
    run.require(&ckpt, Stage::BuildLexicon)?;
    let model = LexiconModel::load(&ckpt, &run.cfg)?;
    let bundles = load_bundles(run, Split::Train)?;
    let skeleton = Skeleton::load(&run.manifest.skeleton)?;
    let (blocks, silent_flags) = train_motion_blocks(&bundles);
    let assignment = lexicon::assign_and_label_silent(
        &blocks,
        &silent_flags,
        &skeleton,
        run.cfg.fps,
        &run.cfg,
        &model,
    )?;
    Ok((model, assignment, blocks, silent_flags))
}

fn load_audio_encoder(run: &Run) -> Result<AudioEncoderModel> {
    let ckpt = run.audio_encoder_dir().join("model.ckpt");
    run.require(&ckpt, Stage::TrainAudio)?;
    AudioEncoderModel::load(&ckpt, &run.cfg)
}

/// Per-block style-feature values resampled onto the normalized grid.
fn style_blocks_for_clip(
    motion_path: &Path,
    skeleton: &Skeleton,
    blocks: &[NormalizedBlock],
    feature: StyleFeature,
    cfg: &Config,
) -> Result<Vec<Mat>> {
    let clip = load_motion_clip(motion_path, skeleton)?;
    let series = compute_style_features(&clip, skeleton, feature, cfg.style_window_s)?;
    let k = cfg.block_frames();
    Ok(blocks
        .iter()
        .map(|b| {
            let f0 = seconds_to_frame(b.start_s, cfg.fps).min(series.values.len() - 1);
            let f1 = (f0 + b.native_frames).min(series.values.len());
            let rows = Mat::from_fn(f1 - f0, 1, |r, _| series.values[f0 + r]);
            math::resample_rows_linear(&rows, k)
        })
        .collect())
}

/// The audio features of every block of every bundle, in order.
fn features_for_bundles(
    bundles: &[ClipBundle],
    encoder: &AudioEncoderModel,
    cfg: &Config,
) -> Result<Vec<Vec<AudioFeatureBlock>>> {
    bundles
        .iter()
        .map(|b| audio_encoder::features_for_blocks(&b.blocks, b.sample_rate, encoder, cfg))
        .collect()
}

/// Quietest one-second segment across the training clips, encoded: the
/// environmental-noise feature used for silent augmentation.
fn environment_feature(
    run: &Run,
    encoder: &AudioEncoderModel,
) -> Result<Mat> {
    let cfg = &run.cfg;
    let mut best: Option<(f64, PathBuf, f64)> = None; // (rms, clip, start)
    for clip in run.manifest.split(Split::Train) {
        let audio = load_wav(&clip.audio)?;
        let env = audio.rms_envelope(RMS_WINDOW_S);
        let frames_per_s = (1.0 / env.hop_s).round() as usize;
        if env.values.len() < frames_per_s {
            continue;
        }
        for start in 0..env.values.len() - frames_per_s {
            let mean: f64 = env.values[start..start + frames_per_s].iter().sum::<f64>()
                / frames_per_s as f64;
            let t = start as f64 * env.hop_s;
            if best.as_ref().map(|(b, _, _)| mean < *b).unwrap_or(true) {
                best = Some((mean, clip.audio.clone(), t));
            }
        }
    }
    let (_, path, start) = best.ok_or_else(|| {
        Error::Argument("no training clip is long enough for the noise probe".into())
    })?;
    let audio = load_wav(&path)?;
    // center a D_M slice inside the quiet second
    let lo = start + (1.0 - cfg.d_max_s) / 2.0;
    let samples = audio.slice_seconds(lo, lo + cfg.d_max_s);
    let clip = AudioClip::new(audio.sample_rate(), samples)?;
    let mel = crate::data::audio::log_mel_grid(
        &clip,
        cfg.analysis_sample_rate,
        cfg.mel_bands,
        cfg.block_frames(),
    );
    let levels = encoder.encode_multilevel(&mel);
    Ok(levels[1].clone())
}

/// Build the generator training set from preprocessed bundles: one
/// `TrainingBlock` per motion block, style rows numbered globally.
fn generator_dataset(
    run: &Run,
    bundles: &[ClipBundle],
    features: &[Vec<AudioFeatureBlock>],
    assignment: &LexemeAssignment,
    skeleton: &Skeleton,
) -> Result<Vec<TrainingBlock>> {
    let cfg = &run.cfg;
    let k = cfg.block_frames();
    let rest = Mat::zeros(k, POSE_DIM);
    let style_feature: Option<StyleFeature> = cfg
        .style_edit_feature
        .as_deref()
        .map(|f| f.parse())
        .transpose()?;

    let mut dataset = Vec::new();
    let mut global = 0usize;
    for (bundle, feats) in bundles.iter().zip(features.iter()) {
        let style_blocks = match style_feature {
            Some(feature) => {
                let record = run
                    .manifest
                    .clips
                    .iter()
                    .find(|c| c.id == bundle.id)
                    .expect("bundle from manifest");
                Some(style_blocks_for_clip(
                    &record.motion,
                    skeleton,
                    &bundle.blocks,
                    feature,
                    cfg,
                )?)
            }
            None => None,
        };
        for (i, block) in bundle.blocks.iter().enumerate() {
            let motion = block.motion.clone().expect("training blocks carry motion");
            let prev_motion = if i == 0 {
                rest.clone()
            } else {
                bundle.blocks[i - 1].motion.clone().unwrap()
            };
            let ctx = |j: isize| -> Mat {
                let j = j.clamp(0, feats.len() as isize - 1) as usize;
                feats[j].low.clone()
            };
            dataset.push(TrainingBlock {
                motion,
                prev_motion,
                audio_low: [ctx(i as isize - 1), ctx(i as isize), ctx(i as isize + 1)],
                lexeme: assignment.lexemes[global],
                silent: block.silent,
                style_block: style_blocks.as_ref().map(|s| s[i].clone()),
                style_row: Some(global),
            });
            global += 1;
        }
    }
    Ok(dataset)
}

fn train_generator_stage(run: &mut Run) -> Result<()> {
    let bundles = load_bundles(run, Split::Train)?;
    let encoder = load_audio_encoder(run)?;
    let (lexicon_model, assignment, _, _) = load_trained_lexicon(run)?;
    let skeleton = Skeleton::load(&run.manifest.skeleton)?;
    let features = features_for_bundles(&bundles, &encoder, &run.cfg)?;
    let dataset = generator_dataset(run, &bundles, &features, &assignment, &skeleton)?;

    let env = environment_feature(run, &encoder)?;
    let (augmented, inserted, warn) = generator::augment_silence(
        &dataset,
        &assignment.silent,
        lexicon_model.codebook(),
        &env,
        run.cfg.silent_augment_ratio,
        run.cfg.seed,
    );
    if warn {
        run.log(
            Stage::TrainGenerator,
            "no silent lexemes labeled; skipping silent augmentation",
        );
    }
    run.log(
        Stage::TrainGenerator,
        &format!(
            "training on {} blocks ({} augmented silent)",
            augmented.len(),
            inserted
        ),
    );
    let (model, styles, curve) = generator::train_generator(&augmented, &lexicon_model, &run.cfg)?;
    let dir = run.generator_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ckpt = dir.join("model.ckpt");
    model.save(&ckpt)?;
    run.record(&ckpt)?;
    let styles_path = dir.join("styles.ckpt");
    styles.save(&styles_path)?;
    run.record(&styles_path)?;
    let loss = dir.join("loss.csv");
    audio_encoder::save_loss_curve(&loss, &curve)?;
    run.record(&loss)?;
    Ok(())
}

fn train_interpreters_stage(run: &mut Run) -> Result<()> {
    let bundles = load_bundles(run, Split::Train)?;
    let encoder = load_audio_encoder(run)?;
    let (lexicon_model, assignment, _, _) = load_trained_lexicon(run)?;
    let skeleton = Skeleton::load(&run.manifest.skeleton)?;
    let features = features_for_bundles(&bundles, &encoder, &run.cfg)?;
    let styles_path = run.generator_dir().join("styles.ckpt");
    run.require(&styles_path, Stage::TrainGenerator)?;
    let styles = StyleTable::load(&styles_path)?;

    let cfg = run.cfg.clone();
    let cfg = &cfg;
    let style_feature: Option<StyleFeature> = cfg
        .style_edit_feature
        .as_deref()
        .map(|f| f.parse())
        .transpose()?;
    let rest_lexeme = lexicon::quantize(
        &lexicon_model.encode(&Mat::zeros(cfg.block_frames(), POSE_DIM)),
        lexicon_model.codebook(),
    )
    .0;

    let mut examples = Vec::new();
    let mut global = 0usize;
    let mut sequences: Vec<Vec<usize>> = Vec::new();
    for (bundle, feats) in bundles.iter().zip(features.iter()) {
        let style_blocks = match style_feature {
            Some(feature) => {
                let record = run
                    .manifest
                    .clips
                    .iter()
                    .find(|c| c.id == bundle.id)
                    .expect("bundle from manifest");
                Some(style_blocks_for_clip(
                    &record.motion,
                    &skeleton,
                    &bundle.blocks,
                    feature,
                    cfg,
                )?)
            }
            None => None,
        };
        let base = global;
        let mut seq = Vec::with_capacity(bundle.blocks.len());
        for (i, block) in bundle.blocks.iter().enumerate() {
            let ctx = |bank: fn(&AudioFeatureBlock) -> &Mat, j: isize| -> Mat {
                let j = j.clamp(0, feats.len() as isize - 1) as usize;
                bank(&feats[j]).clone()
            };
            let prev_lexeme = if i == 0 {
                rest_lexeme
            } else {
                assignment.lexemes[base + i - 1]
            };
            let prev_style = if i == 0 {
                vec![0.0; cfg.d_style]
            } else {
                styles.row(base + i - 1).to_vec()
            };
            examples.push(InterpreterExample {
                audio_high: [
                    ctx(|f| &f.high, i as isize - 1),
                    ctx(|f| &f.high, i as isize),
                    ctx(|f| &f.high, i as isize + 1),
                ],
                audio_low: [
                    ctx(|f| &f.low, i as isize - 1),
                    ctx(|f| &f.low, i as isize),
                    ctx(|f| &f.low, i as isize + 1),
                ],
                text: if cfg.audio_only { None } else { block.text.clone() },
                speaker: bundle.speaker,
                prev_lexeme,
                lexeme: assignment.lexemes[global],
                silent: block.silent,
                style_target: styles.row(global).to_vec(),
                prev_style,
                style_block: style_blocks.as_ref().map(|s| s[i].clone()),
            });
            seq.push(assignment.lexemes[global]);
            global += 1;
        }
        sequences.push(seq);
    }
    run.log(
        Stage::TrainInterpreters,
        &format!("training on {} blocks", examples.len()),
    );
    let n_speakers = run.manifest.num_speakers();
    let (lex_model, style_model) = train_interpreters(
        &examples,
        n_speakers,
        lexicon_model.codebook(),
        &assignment.silent,
        cfg,
    )?;
    let dir = run.interpreters_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let lex_path = dir.join("lexeme.ckpt");
    lex_model.save(&lex_path)?;
    run.record(&lex_path)?;
    let style_path = dir.join("style.ckpt");
    style_model.save(&style_path)?;
    run.record(&style_path)?;
    // statistical interpreter from the training assignments
    let stats = StatisticalInterpreter::from_sequences(&sequences, cfg.lexicon_size);
    let stats_path = dir.join("stats.json");
    stats.save(&stats_path)?;
    run.record(&stats_path)?;
    Ok(())
}

/// Everything needed to synthesize gestures for new speech.
pub struct InferenceModels {
    pub encoder: AudioEncoderModel,
    pub lexicon: LexiconModel,
    pub codebook: Mat,
    pub silent_set: std::collections::BTreeSet<usize>,
    pub generator: GeneratorModel,
    pub lexeme_interpreter: LexemeInterpreterModel,
    pub style_interpreter: StyleInterpreterModel,
}

pub fn load_inference_models(run: &Run) -> Result<InferenceModels> {
    let encoder = load_audio_encoder(run)?;
    let lex_ckpt = run.lexicon_dir().join("model.ckpt");
    run.require(&lex_ckpt, Stage::BuildLexicon)?;
    let lexicon_model = LexiconModel::load(&lex_ckpt, &run.cfg)?;
    let lexicon_file = run.lexicon_dir().join("gestures.lexicon");
    run.require(&lexicon_file, Stage::BuildLexicon)?;
    let (codebook, silent_set) = lexicon::load_lexicon_file(&lexicon_file)?;
    let gen_ckpt = run.generator_dir().join("model.ckpt");
    run.require(&gen_ckpt, Stage::TrainGenerator)?;
    let generator = GeneratorModel::load(&gen_ckpt, &run.cfg)?;
    let lexeme_path = run.interpreters_dir().join("lexeme.ckpt");
    run.require(&lexeme_path, Stage::TrainInterpreters)?;
    let lexeme_interpreter =
        LexemeInterpreterModel::load(&lexeme_path, &run.cfg, run.manifest.num_speakers())?;
    let style_path = run.interpreters_dir().join("style.ckpt");
    run.require(&style_path, Stage::TrainInterpreters)?;
    let style_interpreter = StyleInterpreterModel::load(&style_path, &run.cfg)?;
    Ok(InferenceModels {
        encoder,
        lexicon: lexicon_model,
        codebook,
        silent_set,
        generator,
        lexeme_interpreter,
        style_interpreter,
    })
}

/// Synthesize normalized gesture blocks for preprocessed speech blocks.
pub fn synthesize_blocks(
    blocks: &[NormalizedBlock],
    features: &[AudioFeatureBlock],
    speaker: usize,
    models: &InferenceModels,
    cfg: &Config,
    style_edit: Option<&StyleEditRequest>,
) -> Result<Vec<Mat>> {
    let k = cfg.block_frames();
    let rest = Mat::zeros(k, POSE_DIM);
    let mut prev_motion = rest.clone();
    let mut prev_lexeme =
        lexicon::quantize(&models.lexicon.encode(&rest), &models.codebook).0;
    let mut prev_style = vec![0.0; cfg.d_style];
    let mut state: Option<GeneratorState> = None;
    let mut out = Vec::with_capacity(blocks.len());

    for (i, block) in blocks.iter().enumerate() {
        let ctx = |bank: fn(&AudioFeatureBlock) -> &Mat, j: isize| -> Mat {
            let j = j.clamp(0, features.len() as isize - 1) as usize;
            bank(&features[j]).clone()
        };
        let style_block = style_edit.map(|req| Mat::from_fn(k, 1, |_, _| req.value));
        let example = InterpreterExample {
            audio_high: [
                ctx(|f| &f.high, i as isize - 1),
                ctx(|f| &f.high, i as isize),
                ctx(|f| &f.high, i as isize + 1),
            ],
            audio_low: [
                ctx(|f| &f.low, i as isize - 1),
                ctx(|f| &f.low, i as isize),
                ctx(|f| &f.low, i as isize + 1),
            ],
            text: if cfg.audio_only { None } else { block.text.clone() },
            speaker,
            prev_lexeme,
            lexeme: 0,
            silent: block.silent,
            style_target: Vec::new(),
            prev_style: prev_style.clone(),
            style_block: style_block.clone(),
        };
        let choice = interpret_lexeme(
            &models.lexeme_interpreter,
            &example,
            prev_lexeme,
            &models.codebook,
            &models.silent_set,
        );
        let lexeme_vec = models.codebook.row(choice.chosen).to_vec();
        // silent blocks use the zero style code, matching the training-time
        // silent augmentation
        let style = if block.silent {
            vec![0.0; cfg.d_style]
        } else {
            models
                .style_interpreter
                .interpret(&example, &prev_style, &lexeme_vec)
        };
        let (motion, new_state) = models.generator.generate_block(
            &prev_motion,
            [&example.audio_low[0], &example.audio_low[1], &example.audio_low[2]],
            &lexeme_vec,
            &style,
            style_block.as_ref(),
            state.as_ref(),
            block.duration_s,
        )?;
        state = Some(new_state);
        prev_motion = motion.clone();
        prev_lexeme = choice.chosen;
        prev_style = style;
        out.push(motion);
    }
    Ok(out)
}

fn infer(run: &mut Run, style_edit: Option<StyleEditRequest>) -> Result<()> {
    validate_style_request(run, style_edit.as_ref())?;
    let models = load_inference_models(run)?;
    let table = WordEmbeddingTable::load(&run.manifest.embeddings)?;
    let cfg = run.cfg.clone();
    let dir = infer_output_dir(run, style_edit.as_ref());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let clips: Vec<ClipRecord> = run.manifest.split(Split::Test).cloned().collect();
    for clip in &clips {
        let audio = load_wav(&clip.audio)?;
        let alignment = if cfg.audio_only {
            None
        } else {
            clip.alignment
                .as_ref()
                .map(|p| WordAlignment::load(p))
                .transpose()?
        };
        let (blocks, grid, _onsets) =
            preprocess_clip(&audio, None, alignment.as_ref(), Some(&table), &cfg)?;
        if blocks.is_empty() {
            run.log(Stage::Infer, &format!("{}: no blocks, skipped", clip.id));
            continue;
        }
        let features =
            audio_encoder::features_for_blocks(&blocks, audio.sample_rate(), &models.encoder, &cfg)?;
        let motion_blocks = synthesize_blocks(
            &blocks,
            &features,
            clip.speaker,
            &models,
            &cfg,
            style_edit.as_ref(),
        )?;
        let native: Vec<usize> = blocks.iter().map(|b| b.native_frames).collect();
        let motion =
            denormalize_and_smooth(&motion_blocks, &native, cfg.fps, cfg.smoothing_kernel)?;
        let motion_path = dir.join(format!("{}.motion", clip.id));
        save_motion_clip(&motion_path, &motion)?;
        run.record(&motion_path)?;
        let beats_path = dir.join(format!("{}.beats.json", clip.id));
        save_beats(&beats_path, &grid)?;
        run.record(&beats_path)?;
        run.log(
            Stage::Infer,
            &format!("{}: {} frames written", clip.id, motion.num_frames()),
        );
    }
    Ok(())
}

fn validate_style_request(run: &Run, req: Option<&StyleEditRequest>) -> Result<()> {
    match (&run.cfg.style_edit_feature, req) {
        (Some(cfg_f), Some(r)) if *cfg_f != r.feature.to_string() => Err(Error::Argument(
            format!("model was trained for feature `{cfg_f}`, not `{}`", r.feature),
        )),
        (None, Some(_)) => Err(Error::Argument(
            "config has no style_edit_feature; train editing-enabled models first".into(),
        )),
        _ => Ok(()),
    }
}

fn infer_output_dir(run: &Run, style_edit: Option<&StyleEditRequest>) -> PathBuf {
    match style_edit {
        Some(req) => run
            .out
            .join(format!("infer-{}-{}", req.feature, req.value)),
        None => run.infer_dir(),
    }
}

fn eval(run: &mut Run, style_edit: Option<StyleEditRequest>) -> Result<()> {
    let skeleton = Skeleton::load(&run.manifest.skeleton)?;
    let lex_ckpt = run.lexicon_dir().join("model.ckpt");
    run.require(&lex_ckpt, Stage::BuildLexicon)?;
    let lexicon_model = LexiconModel::load(&lex_ckpt, &run.cfg)?;
    let cfg = run.cfg.clone();
    let infer_dir = infer_output_dir(run, style_edit.as_ref());
    let out_dir = match &style_edit {
        Some(req) => run.out.join(format!("eval-{}-{}", req.feature, req.value)),
        None => run.eval_dir(),
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let deltas: Vec<f64> = (1..=20).map(|i| i as f64 * 0.025).collect();
    let mut rows = Vec::new();
    let mut curve_acc = vec![0.0; deltas.len()];
    let clips: Vec<ClipRecord> = run.manifest.split(Split::Test).cloned().collect();
    for clip in &clips {
        let generated_path = infer_dir.join(format!("{}.motion", clip.id));
        run.require(&generated_path, Stage::Infer)?;
        let generated = load_motion_clip(&generated_path, &skeleton)?;
        let reference = load_motion_clip(&clip.motion, &skeleton)?;
        let grid = load_beats(&infer_dir.join(format!("{}.beats.json", clip.id)))?;
        let audio = load_wav(&clip.audio)?;
        let onsets = detect_onsets(&audio, ONSET_HOP_S);

        // align the reference to the generated span
        let intervals = grid.intervals(cfg.d_min_s);
        let f0 = seconds_to_frame(intervals.first().map(|iv| iv.0).unwrap_or(0.0), cfg.fps);
        let reference_span = reference
            .slice_frames(f0, generated.num_frames().min(reference.num_frames() - f0));
        let reference_clip = MotionClip::new(cfg.fps, reference_span)?;
        let (maje, mad) = if reference_clip.num_frames() == generated.num_frames() {
            metrics::joint_errors(&generated, &reference_clip, &skeleton)?
        } else {
            (f64::NAN, f64::NAN)
        };

        // FGD between lexicon latents of generated and reference blocks
        let renorm = |m: &MotionClip| -> Result<Vec<Vec<f64>>> {
            let input = SegmentInput {
                motion: Some(m),
                audio: &audio,
                text_frames: None,
                alignment: None,
                noise_threshold: 0.0,
            };
            let blocks = normalize_segments(&input, &grid, cfg.fps, cfg.d_min_s, cfg.d_max_s)?;
            Ok(blocks
                .iter()
                .filter_map(|b| b.motion.as_ref())
                .map(|m| lexicon_model.encode(m))
                .collect())
        };
        // the generated clip starts at the grid origin: shift its frames
        // back onto the reference timeline for renormalization
        let mut padded = Mat::zeros(f0 + generated.num_frames(), POSE_DIM);
        for r in 0..generated.num_frames() {
            padded
                .row_mut(f0 + r)
                .copy_from_slice(generated.frame(r));
        }
        let padded_clip = MotionClip::new(cfg.fps, padded)?;
        let gen_latents = renorm(&padded_clip)?;
        let ref_latents = renorm(&reference)?;
        let fgd = if gen_latents.len() > 1 && ref_latents.len() > 1 {
            metrics::fgd(&gen_latents, &ref_latents)?
        } else {
            f64::NAN
        };

        // rhythm: generated motion beats against the audio onsets
        let motion_beats = metrics::extract_motion_beats(&padded_clip, &skeleton, cfg.decel_percentile);
        let audio_beats = BeatSequence::new(onsets.times.clone());
        let pmb = metrics::pmb(&motion_beats, &audio_beats, cfg.pmb_delta_s);
        for (acc, &d) in curve_acc.iter_mut().zip(deltas.iter()) {
            *acc += metrics::pmb(&motion_beats, &audio_beats, d).percent;
        }

        // diversity of the generated lexeme sequence
        let gen_lexemes: Vec<usize> = gen_latents
            .iter()
            .map(|l| lexicon::quantize(l, lexicon_model.codebook()).0)
            .collect();
        let diversity = if gen_lexemes.is_empty() {
            0.0
        } else {
            metrics::diversity(&gen_lexemes, cfg.lexicon_size)
        };

        rows.push(MetricReport {
            clip_id: clip.id.clone(),
            maje_mm: maje,
            mad_mm_s2: mad,
            fgd,
            pmb_pct: pmb.percent,
            diversity_nats: diversity,
        });
        run.log(
            Stage::Eval,
            &format!(
                "{}: maje {:.2} mm, mad {:.2} mm/s2, fgd {:.4}, pmb {:.2}%",
                clip.id, maje, mad, fgd, pmb.percent
            ),
        );
    }

    let report = out_dir.join("report.csv");
    metrics::save_report_csv(&report, &rows)?;
    run.record(&report)?;
    let curve: Vec<(f64, f64)> = deltas
        .iter()
        .zip(curve_acc.iter())
        .map(|(&d, &acc)| (d, acc / clips.len().max(1) as f64))
        .collect();
    let curve_path = out_dir.join("pmb_curve.csv");
    metrics::save_pmb_curve_csv(&curve_path, &curve)?;
    run.record(&curve_path)?;
    Ok(())
}
