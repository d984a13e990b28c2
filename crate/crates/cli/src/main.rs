//! `fxprofile`: dataset generation, training, inference, evaluation and
//! schedule preview from the command line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use fxprofile::dataset::{
    build_dataset, load_wav, resample, save_wav, write_chunk_cache, BitDepth, Dataset,
    DatasetManifest, DatasetOptions,
};
use fxprofile::effects::{EffectId, EffectInstance};
use fxprofile::model::{Checkpoint, ModelConfig};
use fxprofile::trainer::{evaluate, onecycle_lr, train, LossKind, OneCycle, TrainConfig, TrainOptions};
use fxprofile::Error;

#[derive(Parser, Debug)]
#[command(name = "fxprofile", version, about = "Learn audio effects from dry/processed pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw chunk pairs from a WAV corpus and write train/val manifests.
    GenDataset(GenDatasetArgs),
    /// Train a model on dataset manifests.
    Train(TrainArgs),
    /// Run a checkpoint over a WAV file.
    Process(ProcessArgs),
    /// Score a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Print the learning-rate schedule as CSV.
    LrPreview(LrPreviewArgs),
}

fn parse_effect(s: &str) -> Result<EffectId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|_| {
        let ids: Vec<_> = LossKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown loss '{s}'; expected one of {{{}}}", ids.join(", "))
    })
}

fn parse_pin(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    let v = value
        .trim()
        .parse()
        .map_err(|_| format!("'{value}' is not a number"))?;
    Ok((name.trim().to_string(), v))
}

#[derive(Args, Debug, Serialize)]
struct GenDatasetArgs {
    /// Directory tree of WAV files.
    #[arg(long)]
    corpus: PathBuf,
    /// One of comp4c, echo, tremolo, chorus.
    #[arg(long, value_parser = parse_effect)]
    effect: EffectId,
    /// Output directory for train.json / val.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_chunks: usize,
    #[arg(long, default_value_t = 4096)]
    chunk_size: usize,
    /// Sample rate of the dataset; the corpus is resampled to it.
    #[arg(long, default_value_t = 44100)]
    sr: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// History rendered before each chunk; defaults to the effect's estimate.
    #[arg(long)]
    context_len: Option<usize>,
    /// Fraction of chunks held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    /// Fix a knob in physical units, e.g. `--pin threshold=-20`. Repeatable.
    #[arg(long = "pin", value_parser = parse_pin)]
    pins: Vec<(String, f64)>,
    /// Keep near-silent chunks instead of redrawing them.
    #[arg(long)]
    keep_silence: bool,
    /// Also write rendered pairs as raw float32 (`train.f32`, `val.f32`).
    #[arg(long)]
    cache: bool,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    train_manifest: PathBuf,
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr_max: f64,
    #[arg(long, default_value_t = 0.3)]
    pct_up: f64,
    #[arg(long, default_value_t = 25.0)]
    div: f64,
    #[arg(long, default_value_t = 1e4)]
    final_div: f64,
    /// logcosh_time, logcosh_spec or logsnr.
    #[arg(long, default_value = "logcosh_time", value_parser = parse_loss)]
    loss: LossKind,
    /// Frame length of the spectral loss.
    #[arg(long, default_value_t = 512)]
    spec_fft_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write an extra checkpoint every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Must match the manifests when given.
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long, default_value_t = 512)]
    frame_size: usize,
    #[arg(long, default_value_t = 256)]
    hop: usize,
    /// Seven comma-separated hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "512,256,128,64,128,256,512")]
    widths: Vec<usize>,
    /// Keep the analysis and synthesis transforms at their DFT values.
    #[arg(long)]
    freeze_transforms: bool,
    /// Drop the input-to-output skip connection.
    #[arg(long)]
    no_final_skip: bool,
    /// Log 0 instead of elapsed seconds so logs are byte-reproducible.
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Args, Debug, Serialize)]
struct ProcessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Knob values in physical units, comma separated, in declaration order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    knobs: Vec<f64>,
    /// Write 16-bit PCM instead of 32-bit float.
    #[arg(long)]
    pcm16: bool,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Write target/prediction/difference WAVs for every example here.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Also write the metrics JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct LrPreviewArgs {
    #[arg(long)]
    total_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr_max: f64,
    #[arg(long, default_value_t = 0.3)]
    pct_up: f64,
    #[arg(long, default_value_t = 25.0)]
    div: f64,
    #[arg(long, default_value_t = 1e4)]
    final_div: f64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Usage errors exit 1, everything else 2.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Incompatible(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn config_text(command: &str, config: &impl Serialize) -> String {
    let v = json!({ "command": command, "config": config });
    serde_json::to_string_pretty(&v).expect("config serializes")
}

fn echo_config(command: &str, config: &impl Serialize) {
    println!("{}", config_text(command, config));
}

fn gen_dataset(a: &GenDatasetArgs) -> CmdResult {
    let fx = EffectInstance::new(a.effect, a.sr)?;
    let mut pinned = vec![None; fx.knob_count()];
    for (name, physical) in &a.pins {
        let i = fx.knob_index(name).ok_or_else(|| {
            let names: Vec<_> = fx.knob_specs.iter().map(|k| k.name.as_str()).collect();
            Failure::Usage(format!(
                "{} has no knob '{name}'; knobs are {}",
                a.effect,
                names.join(", ")
            ))
        })?;
        let spec = &fx.knob_specs[i];
        if !(spec.min..=spec.max).contains(physical) {
            return Err(Failure::Usage(format!(
                "{name}={physical} outside [{}, {}] {}",
                spec.min, spec.max, spec.units
            )));
        }
        pinned[i] = Some(spec.normalize(*physical));
    }
    if !(0.0..1.0).contains(&a.val_frac) {
        return Err(Failure::Usage(format!("--val-frac {} must be in [0, 1)", a.val_frac)));
    }
    let mut opts = DatasetOptions::new(&a.corpus, a.effect);
    opts.sample_rate = a.sr;
    opts.n_chunks = a.n_chunks;
    opts.chunk_size = a.chunk_size;
    opts.context_len = a.context_len;
    opts.seed = a.seed;
    opts.val_frac = a.val_frac;
    opts.pinned = pinned;
    opts.reject_silence = !a.keep_silence;
    echo_config(
        "gen-dataset",
        &json!({
            "args": a,
            "context_len": a.context_len.unwrap_or_else(|| fx.default_context_len()),
            "knobs": fx.knob_specs,
        }),
    );

    let split = build_dataset(&opts)?;
    fs::create_dir_all(&a.out)?;
    split.train.save(a.out.join("train.json"))?;
    split.val.save(a.out.join("val.json"))?;
    if a.cache {
        for (m, name) in [(&split.train, "train.f32"), (&split.val, "val.f32")] {
            let pairs = Dataset::open(m.clone())?.pairs()?;
            write_chunk_cache(&pairs, a.out.join(name))?;
        }
    }
    println!(
        "{}",
        json!({ "train_chunks": split.train.len(), "val_chunks": split.val.len() })
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let manifest = DatasetManifest::load(&a.train_manifest)?;
    if let Some(c) = a.chunk_size {
        if c != manifest.chunk_size {
            return Err(Failure::Usage(format!(
                "--chunk-size {c} but the manifest holds {}-sample chunks",
                manifest.chunk_size
            )));
        }
    }
    let cfg = TrainConfig {
        model: ModelConfig {
            chunk_size: manifest.chunk_size,
            frame_size: a.frame_size,
            hop: a.hop,
            hidden_widths: a.widths.clone(),
            knob_count: manifest.effect.knob_count(),
            freeze_transforms: a.freeze_transforms,
            final_skip: !a.no_final_skip,
            seed: a.seed,
        },
        options: TrainOptions {
            epochs: a.epochs,
            max_steps: a.max_steps,
            batch_size: a.batch_size,
            schedule: OneCycle {
                lr_max: a.lr_max,
                pct_up: a.pct_up,
                div: a.div,
                final_div: a.final_div,
            },
            loss: a.loss,
            spec_fft_size: a.spec_fft_size,
            seed: a.seed,
            checkpoint_every: a.checkpoint_every,
            record_wall_time: !a.no_wall_time,
            ..TrainOptions::default()
        },
        train_manifest: a.train_manifest.clone(),
        val_manifest: a.val_manifest.clone(),
        out_dir: a.out.clone(),
    };
    echo_config("train", &cfg);
    cfg.model.validate()?;
    cfg.options.validate(cfg.model.chunk_size)?;
    let out = train(&cfg)?;
    println!(
        "{}",
        json!({
            "steps": out.checkpoint.step,
            "initial_train_loss": out.initial_train_loss,
            "final_train_loss": out.final_train_loss,
            "final_val_loss": out.final_val_loss,
            "checkpoint": a.out.join("checkpoint.json"),
        })
    );
    Ok(())
}

fn process(a: &ProcessArgs) -> CmdResult {
    let ck = Checkpoint::load(&a.checkpoint)?;
    echo_config(
        "process",
        &json!({ "args": a, "effect": ck.effect, "model": ck.model.config() }),
    );
    if a.knobs.len() != ck.effect.knob_count() {
        let names: Vec<_> = ck.effect.knob_specs.iter().map(|k| k.name.as_str()).collect();
        return Err(Failure::Usage(format!(
            "checkpoint expects {} knobs ({}), got {}",
            ck.effect.knob_count(),
            names.join(", "),
            a.knobs.len()
        )));
    }
    let knobs = ck.effect.normalize(&a.knobs)?;
    let mut clip = load_wav(&a.input)?;
    if clip.sample_rate != ck.effect.sample_rate {
        log::info!(
            "resampling input from {} Hz to {} Hz",
            clip.sample_rate,
            ck.effect.sample_rate
        );
        clip = resample(&clip, ck.effect.sample_rate)?;
    }
    let y = ck.model.forward_long(&clip, &knobs.to_f32())?;
    let depth = if a.pcm16 { BitDepth::Pcm16 } else { BitDepth::Float32 };
    save_wav(&y, &a.out, depth)?;
    println!("{}", json!({ "samples_in": clip.len(), "samples_out": y.len() }));
    Ok(())
}

fn eval(a: &EvalArgs) -> CmdResult {
    echo_config("eval", a);
    let ck = Checkpoint::load(&a.checkpoint)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let metrics = evaluate(&ck, manifest, a.export.as_deref())?;
    let text = serde_json::to_string_pretty(&metrics).map_err(Error::from)?;
    println!("{text}");
    if let Some(p) = &a.out {
        fs::write(p, format!("{text}\n"))?;
    }
    Ok(())
}

fn write_schedule(a: &LrPreviewArgs, w: impl Write) -> Result<(), Error> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["step", "lr"])?;
    for step in 0..=a.total_steps {
        let lr = onecycle_lr(step, a.total_steps, a.lr_max, a.pct_up, a.div, a.final_div);
        csv.write_record([step.to_string(), lr.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

fn lr_preview(a: &LrPreviewArgs) -> CmdResult {
    if a.total_steps == 0 {
        return Err(Failure::Usage("--total-steps must be at least 1".into()));
    }
    if !(a.lr_max > 0.0) || !(a.pct_up > 0.0 && a.pct_up < 1.0) || a.div <= 0.0 || a.final_div <= 0.0 {
        return Err(Failure::Usage(
            "need lr-max > 0, 0 < pct-up < 1 and positive divisors".into(),
        ));
    }
    match &a.out {
        Some(p) => {
            echo_config("lr-preview", a);
            write_schedule(a, fs::File::create(p)?)?
        }
        None => {
            // stdout carries the CSV here
            eprintln!("{}", config_text("lr-preview", a));
            write_schedule(a, io::stdout().lock())?
        }
    }
    Ok(())
}

fn init_logging() -> Result<(), String> {
    let level = match std::env::var("FX_LOG_LEVEL").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => {
            return Err(format!(
                "FX_LOG_LEVEL='{other}'; expected one of quiet, info, debug"
            ))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn output_paths(cmd: &Command) -> Vec<&Path> {
    match cmd {
        Command::GenDataset(a) => vec![&a.out],
        Command::Train(a) => vec![&a.out],
        Command::Process(a) => vec![&a.out],
        Command::Eval(a) => a.out.iter().chain(&a.export).map(PathBuf::as_path).collect(),
        Command::LrPreview(a) => a.out.iter().map(PathBuf::as_path).collect(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = init_logging() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let existed: Vec<bool> = output_paths(&cli.command).iter().map(|p| p.exists()).collect();
    let result = match &cli.command {
        Command::GenDataset(a) => gen_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Process(a) => process(a),
        Command::Eval(a) => eval(a),
        Command::LrPreview(a) => lr_preview(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            // Nothing this run created should survive a usage error.
            for (p, existed) in output_paths(&cli.command).into_iter().zip(existed) {
                if !existed {
                    let _ = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
