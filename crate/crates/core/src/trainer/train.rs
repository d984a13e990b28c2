use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimState};
use super::loss::{spectral_basis, LossKind};
use super::schedule::OneCycle;
use crate::dataset::{batch_order, ChunkPair, Dataset, DatasetManifest};
use crate::effects::EffectInstance;
use crate::error::{invalid, Error, Result};
use crate::gradcore::{Gradients, SpectralBasis, Tape};
use crate::model::{Checkpoint, Model, ModelConfig};

pub const LOG_HEADER: &str = "step,epoch,lr,train_loss,val_loss,wall_time_s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Stops after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub schedule: OneCycle,
    pub adam: AdamConfig,
    pub loss: LossKind,
    /// Frame length of the spectral loss.
    pub spec_fft_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Writes `ckpt_epoch_NNNN.json` every this many epochs.
    pub checkpoint_every: Option<usize>,
    /// When false the wall-time column is written as 0 so logs are
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            max_steps: None,
            batch_size: 8,
            schedule: OneCycle::default(),
            adam: AdamConfig::default(),
            loss: LossKind::LogcoshTime,
            spec_fft_size: 512,
            seed: 0,
            checkpoint_every: None,
            record_wall_time: true,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self, chunk_size: usize) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch size must be at least 1");
        }
        if self.epochs == 0 || self.max_steps == Some(0) {
            return invalid("training needs at least one step");
        }
        let s = &self.schedule;
        if !(s.lr_max > 0.0 && s.lr_max.is_finite()) {
            return invalid(format!("learning rate {} must be positive", s.lr_max));
        }
        if !(s.pct_up > 0.0 && s.pct_up < 1.0) || s.div <= 0.0 || s.final_div <= 0.0 {
            return invalid("schedule needs 0 < pct_up < 1 and positive divisors");
        }
        if self.loss == LossKind::LogcoshSpec
            && (!self.spec_fft_size.is_power_of_two()
                || self.spec_fft_size < 4
                || self.spec_fft_size > chunk_size)
        {
            return invalid(format!(
                "spectral frame {} must be a power of two in [4, {chunk_size}]",
                self.spec_fft_size
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        let per_epoch = n_train.div_ceil(self.batch_size);
        let all = per_epoch.saturating_mul(self.epochs);
        self.max_steps.map_or(all, |m| m.min(all))
    }
}

/// Everything `train` needs when working from files on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub options: TrainOptions,
    pub train_manifest: PathBuf,
    pub val_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_time_s: f64,
}

/// CSV loss log, flushed after every row.
pub struct LossLog {
    writer: csv::Writer<fs::File>,
}

impl LossLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(fs::File::create(path)?);
        writer.write_record(LOG_HEADER.split(','))?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, r: &LossRecord) -> Result<()> {
        self.writer.serialize(r)?;
        self.writer.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<LossRecord>,
    /// Mean training-set loss before the first step.
    pub initial_train_loss: f64,
    /// Mean training-set loss after the last step.
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
}

fn check_pairs(pairs: &[ChunkPair], cfg: &ModelConfig, what: &str) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        if p.input.len() != cfg.chunk_size || p.target.len() != cfg.chunk_size {
            return Err(Error::Incompatible(format!(
                "{what} pair {i} has {} samples, model expects {}",
                p.input.len(),
                cfg.chunk_size
            )));
        }
        if p.knobs.len() != cfg.knob_count {
            return Err(Error::Incompatible(format!(
                "{what} pair {i} has {} knobs, model expects {}",
                p.knobs.len(),
                cfg.knob_count
            )));
        }
    }
    Ok(())
}

/// Mean loss of `model` over `pairs`, evaluated in `f64`.
pub(crate) fn mean_loss(
    model: &Model<f32>,
    pairs: &[ChunkPair],
    kind: LossKind,
    fft_size: usize,
) -> Result<f64> {
    if pairs.is_empty() {
        return invalid("no examples to evaluate");
    }
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            let y = model.forward(&p.input, &p.knobs.to_f32())?;
            kind.eval(&y, &p.target, fft_size)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn example_gradients(
    model: &Model<f32>,
    pair: &ChunkPair,
    kind: LossKind,
    basis: &Arc<SpectralBasis<f32>>,
) -> Result<(f64, Gradients<f32>)> {
    let mut tape = Tape::new(&model.params);
    let y = model.arch.graph(&mut tape, &pair.input, &pair.knobs.to_f32())?;
    let loss = kind.record(&mut tape, y, &pair.target, basis)?;
    let value = tape.value(loss).data()[0] as f64;
    Ok((value, tape.backward(1.0)?))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 finalizer over (seed, epoch)
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains `model` on in-memory pairs. With `out_dir` set, the loss log,
/// interval checkpoints and `checkpoint.json` are written there.
pub fn fit(
    mut model: Model<f32>,
    effect: &EffectInstance,
    opts: &TrainOptions,
    train: &[ChunkPair],
    val: &[ChunkPair],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let cfg = model.config().clone();
    opts.validate(cfg.chunk_size)?;
    if effect.knob_count() != cfg.knob_count {
        return Err(Error::Incompatible(format!(
            "effect {} has {} knobs, model expects {}",
            effect.effect_id,
            effect.knob_count(),
            cfg.knob_count
        )));
    }
    if train.is_empty() {
        return invalid("training set is empty");
    }
    check_pairs(train, &cfg, "train")?;
    check_pairs(val, &cfg, "validation")?;

    let mut log = match out_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            Some(LossLog::create(d.join("train_log.csv"))?)
        }
        None => None,
    };
    let basis = Arc::new(spectral_basis::<f32>(if opts.loss == LossKind::LogcoshSpec {
        opts.spec_fft_size
    } else {
        4
    })?);
    let eval_loss = |m: &Model<f32>, pairs: &[ChunkPair]| {
        mean_loss(m, pairs, opts.loss, opts.spec_fft_size)
    };

    let initial_train_loss = eval_loss(&model, train)?;
    let total = opts.total_steps(train.len());
    let mut state = OptimState::new(&model.params);
    let mut records = Vec::with_capacity(total);
    let started = Instant::now();
    let mut step = 0;
    let mut epoch = 0;
    let mut last_val = None;
    log::info!(
        "training {} parameters on {} pairs for {total} steps",
        model.params.num_scalars(),
        train.len()
    );

    while step < total {
        epoch += 1;
        let batches = batch_order(train.len(), opts.batch_size, epoch_seed(opts.seed, epoch))?;
        let n_batches = batches.len();
        for (bi, batch) in batches.into_iter().enumerate() {
            if step == total {
                break;
            }
            let lr = opts.schedule.lr(step, total);
            let per_example: Vec<(f64, Gradients<f32>)> = batch
                .par_iter()
                .map(|&i| example_gradients(&model, &train[i], opts.loss, &basis))
                .collect::<Result<_>>()?;
            let mut grads = Gradients::zeros_like(&model.params);
            let mut loss = 0.0;
            for (l, g) in &per_example {
                loss += l;
                grads.add_assign(g)?;
            }
            let b = per_example.len();
            loss /= b as f64;
            grads.scale(1.0 / b as f32);
            step += 1;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { step, value: loss });
            }
            adam_step(&mut model.params, &grads, &mut state, lr, &opts.adam)?;

            let epoch_done = bi + 1 == n_batches || step == total;
            let val_loss = if epoch_done && !val.is_empty() {
                let v = eval_loss(&model, val)?;
                last_val = Some(v);
                Some(v)
            } else {
                None
            };
            let rec = LossRecord {
                step,
                epoch,
                lr,
                train_loss: loss,
                val_loss,
                wall_time_s: if opts.record_wall_time {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            };
            if let Some(l) = log.as_mut() {
                l.append(&rec)?;
            }
            log::debug!("step {step} lr {lr:.3e} loss {loss:.6}");
            records.push(rec);
        }
        if let (Some(d), Some(every)) = (out_dir, opts.checkpoint_every) {
            if every > 0 && epoch % every == 0 {
                Checkpoint::new(model.clone(), effect.clone(), step)
                    .save(d.join(format!("ckpt_epoch_{epoch:04}.json")))?;
            }
        }
        if let Some(v) = last_val {
            log::info!("epoch {epoch} step {step} val {v:.6}");
        }
    }

    let final_train_loss = eval_loss(&model, train)?;
    let checkpoint = Checkpoint::new(model, effect.clone(), step);
    if let Some(d) = out_dir {
        checkpoint.save(d.join("checkpoint.json"))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        records,
        initial_train_loss,
        final_train_loss,
        final_val_loss: last_val,
    })
}

fn check_manifest(m: &DatasetManifest, cfg: &ModelConfig, what: &str) -> Result<()> {
    if m.effect.knob_count() != cfg.knob_count {
        return Err(Error::Incompatible(format!(
            "{what} manifest has {} knobs, model configured for {}",
            m.effect.knob_count(),
            cfg.knob_count
        )));
    }
    if m.chunk_size != cfg.chunk_size {
        return Err(Error::Incompatible(format!(
            "{what} manifest chunk {} differs from model chunk {}",
            m.chunk_size, cfg.chunk_size
        )));
    }
    Ok(())
}

/// Loads the manifests named in `cfg`, trains a fresh model and writes the
/// results into `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.model.validate()?;
    cfg.options.validate(cfg.model.chunk_size)?;
    let train_m = DatasetManifest::load(&cfg.train_manifest)?;
    check_manifest(&train_m, &cfg.model, "train")?;
    let val_m = cfg
        .val_manifest
        .as_ref()
        .map(DatasetManifest::load)
        .transpose()?;
    if let Some(v) = &val_m {
        check_manifest(v, &cfg.model, "validation")?;
        if v.effect != train_m.effect {
            return Err(Error::Incompatible(
                "train and validation manifests use different effects".into(),
            ));
        }
    }
    let effect = train_m.effect.clone();
    let train_pairs = Dataset::open(train_m)?.pairs()?;
    let val_pairs = match val_m {
        Some(v) => Dataset::open(v)?.pairs()?,
        None => Vec::new(),
    };
    let model = Model::init(&cfg.model)?;
    fit(
        model,
        &effect,
        &cfg.options,
        &train_pairs,
        &val_pairs,
        Some(&cfg.out_dir),
    )
}
