use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss_logcosh_time, loss_logsnr};
use crate::dataset::{save_wav, AudioClip, BitDepth, ChunkPair, Dataset, DatasetManifest};
use crate::error::{invalid, Error, Result};
use crate::model::Checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub logcosh: f64,
    pub logsnr: f64,
    pub n_examples: usize,
}

fn check_compatible(ck: &Checkpoint, m: &DatasetManifest) -> Result<()> {
    let cfg = ck.model.config();
    let mut problems = Vec::new();
    if ck.effect.effect_id != m.effect.effect_id {
        problems.push(format!(
            "checkpoint effect {} vs dataset effect {}",
            ck.effect.effect_id, m.effect.effect_id
        ));
    }
    if cfg.knob_count != m.effect.knob_count() {
        problems.push(format!(
            "checkpoint has {} knobs vs dataset {}",
            cfg.knob_count,
            m.effect.knob_count()
        ));
    }
    if cfg.chunk_size != m.chunk_size {
        problems.push(format!(
            "checkpoint chunk {} vs dataset chunk {}",
            cfg.chunk_size, m.chunk_size
        ));
    }
    if ck.effect.sample_rate != m.sample_rate {
        problems.push(format!(
            "checkpoint rate {} Hz vs dataset rate {} Hz",
            ck.effect.sample_rate, m.sample_rate
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Incompatible(problems.join("; ")))
    }
}

/// Mean log-cosh and log-SNR of the checkpoint's predictions over `pairs`.
/// With `export_dir` set, every example is written as three float WAVs:
/// target, prediction and their difference.
pub fn evaluate_pairs(
    ck: &Checkpoint,
    pairs: &[ChunkPair],
    export_dir: Option<&Path>,
) -> Result<Metrics> {
    if pairs.is_empty() {
        return invalid("no examples to evaluate");
    }
    if let Some(d) = export_dir {
        fs::create_dir_all(d)?;
    }
    let sr = ck.effect.sample_rate;
    let per: Vec<(f64, f64)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if p.knobs.len() != ck.model.config().knob_count {
                return Err(Error::Incompatible(format!(
                    "example {i} has {} knobs",
                    p.knobs.len()
                )));
            }
            let y = ck.model.forward(&p.input, &p.knobs.to_f32())?;
            if let Some(d) = export_dir {
                let diff: Vec<f32> = y.iter().zip(&p.target).map(|(a, b)| a - b).collect();
                for (tag, s) in [("target", &p.target), ("prediction", &y), ("difference", &diff)] {
                    save_wav(
                        &AudioClip::new(s.clone(), sr),
                        d.join(format!("{i:05}_{tag}.wav")),
                        BitDepth::Float32,
                    )?;
                }
            }
            Ok((loss_logcosh_time(&y, &p.target)?, loss_logsnr(&y, &p.target)?))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok(Metrics {
        logcosh: per.iter().map(|p| p.0).sum::<f64>() / n,
        logsnr: per.iter().map(|p| p.1).sum::<f64>() / n,
        n_examples: per.len(),
    })
}

/// Evaluates a checkpoint on a dataset manifest after checking that the two
/// agree on effect, knob count, chunk size and sample rate.
pub fn evaluate(
    ck: &Checkpoint,
    manifest: DatasetManifest,
    export_dir: Option<&Path>,
) -> Result<Metrics> {
    check_compatible(ck, &manifest)?;
    let pairs = Dataset::open(manifest)?.pairs()?;
    evaluate_pairs(ck, &pairs, export_dir)
}
