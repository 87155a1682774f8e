//! `gesture-rhythm`: drive the co-speech gesture pipeline from the shell.
//!
//! ```text
//! gesture-rhythm <stage> --config cfg.toml --manifest data/manifest.json --out runs/a
//! gesture-rhythm synth --out data --seed 7 --clips 6 --duration 30
//! ```
//!
//! Exit codes: 0 ok, 2 config error, 3 missing/stale stage dependency,
//! 4 numerical failure, 1 anything else.

use clap::{Args, Parser, Subcommand};
use gesture_rhythm::config::Config;
use gesture_rhythm::data::style::StyleFeature;
use gesture_rhythm::error::Error;
use gesture_rhythm::pipeline::{run_stage, Stage, StyleEditRequest};
use gesture_rhythm::synthetic::{generate_synthetic_dataset, SynthSpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gesture-rhythm", version, about = "Rhythm-aware co-speech gesture synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory of this run.
    #[arg(long)]
    out: PathBuf,
    /// Strip text and speaker inputs from the interpreters.
    #[arg(long)]
    audio_only: bool,
    /// Constant style request `feature=value`, e.g. `hand_height=1.4`.
    #[arg(long, value_name = "FEATURE=VALUE")]
    style_edit: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment speech at beats and cache normalized blocks.
    Preprocess(StageArgs),
    /// Train the contrastive multi-level audio encoder.
    TrainAudio(StageArgs),
    /// Learn the gesture lexicon and label silent lexemes.
    BuildLexicon(StageArgs),
    /// Train the block generator and per-block style codes.
    TrainGenerator(StageArgs),
    /// Train the lexeme and style interpreters.
    TrainInterpreters(StageArgs),
    /// Synthesize motion for the test-split speech.
    Infer(StageArgs),
    /// Compute MAJE/MAD/FGD/PMB/diversity reports.
    Eval(StageArgs),
    /// Inference with a constant edited style feature.
    StyleEdit(StageArgs),
    /// Generate a synthetic benchmark dataset with planted ground truth.
    Synth {
        /// Directory to create the dataset in.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        prototypes: usize,
        #[arg(long, default_value_t = 6)]
        clips: usize,
        /// Clip duration in seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        /// Optional config whose dims (d_t, fps) the dataset should match.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, Error> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn parse_style_edit(raw: &Option<String>) -> Result<Option<StyleEditRequest>, Error> {
    let Some(raw) = raw else { return Ok(None) };
    let (feature, value) = raw.split_once('=').ok_or_else(|| {
        Error::Argument(format!("--style-edit expects feature=value, got `{raw}`"))
    })?;
    let feature: StyleFeature = feature.parse()?;
    let value: f64 = value
        .parse()
        .map_err(|_| Error::Argument(format!("bad style value `{value}`")))?;
    Ok(Some(StyleEditRequest { feature, value }))
}

fn run(stage: Stage, args: StageArgs) -> Result<(), Error> {
    let mut cfg = load_config(&args.config)?;
    if args.audio_only {
        cfg.audio_only = true;
    }
    let style_edit = parse_style_edit(&args.style_edit)?;
    run_stage(stage, &cfg, &args.manifest, &args.out, style_edit)
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Preprocess(a) => run(Stage::Preprocess, a),
        Command::TrainAudio(a) => run(Stage::TrainAudio, a),
        Command::BuildLexicon(a) => run(Stage::BuildLexicon, a),
        Command::TrainGenerator(a) => run(Stage::TrainGenerator, a),
        Command::TrainInterpreters(a) => run(Stage::TrainInterpreters, a),
        Command::Infer(a) => run(Stage::Infer, a),
        Command::Eval(a) => run(Stage::Eval, a),
        Command::StyleEdit(a) => run(Stage::StyleEdit, a),
        Command::Synth {
            out,
            seed,
            prototypes,
            clips,
            duration,
            config,
        } => {
            let cfg = load_config(&config)?;
            let spec = SynthSpec {
                seed,
                prototypes,
                clips,
                duration_s: duration,
                fps: cfg.fps,
                ..SynthSpec::default()
            };
            let manifest = generate_synthetic_dataset(&out, &spec, &cfg)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}
