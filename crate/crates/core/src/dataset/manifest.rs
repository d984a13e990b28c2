use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clip::rms;
use super::{load_wav, resample, AudioClip};
use crate::effects::{EffectId, EffectInstance, KnobVector};
use crate::error::{invalid, Error, Result};

pub const MANIFEST_FORMAT: &str = "fxds-v1";

/// Inputs quieter than this RMS are redrawn when silence rejection is on.
pub const SILENCE_RMS: f64 = 1e-5;
const SILENCE_RETRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    /// Path relative to the corpus directory, `/`-separated.
    pub source_file: String,
    pub offset: usize,
    pub knobs: KnobVector,
}

/// Everything needed to rebuild a set of chunk pairs bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub effect: EffectInstance,
    pub sample_rate: u32,
    pub chunk_size: usize,
    pub context_len: usize,
    pub seed: u64,
    pub corpus_dir: PathBuf,
    pub split: Split,
    pub reject_silence: bool,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
        if m.format != MANIFEST_FORMAT {
            return invalid(format!(
                "manifest format '{}' (expected '{MANIFEST_FORMAT}')",
                m.format
            ));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifests {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
}

#[derive(Clone, Debug)]
pub struct DatasetOptions {
    pub corpus_dir: PathBuf,
    pub effect: EffectId,
    pub sample_rate: u32,
    pub n_chunks: usize,
    pub chunk_size: usize,
    /// Settling history per chunk; defaults to the effect's own estimate.
    pub context_len: Option<usize>,
    pub seed: u64,
    /// Fraction of entries (taken from the end) held out for validation.
    pub val_frac: f64,
    /// Per-knob normalized values that override the random draw.
    pub pinned: Vec<Option<f64>>,
    pub reject_silence: bool,
}

impl DatasetOptions {
    pub fn new(corpus_dir: impl Into<PathBuf>, effect: EffectId) -> Self {
        Self {
            corpus_dir: corpus_dir.into(),
            effect,
            sample_rate: 44100,
            n_chunks: 1000,
            chunk_size: 4096,
            context_len: None,
            seed: 0,
            val_frac: 0.1,
            pinned: Vec::new(),
            reject_silence: true,
        }
    }
}

/// Training datapoint: dry chunk, processed chunk and the knobs used.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkPair {
    pub input: Vec<f32>,
    pub target: Vec<f32>,
    pub knobs: KnobVector,
    pub source_file: String,
    pub offset: usize,
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn relative_name(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Decoded corpus files at one sample rate, keyed by relative path.
#[derive(Clone, Debug, Default)]
pub struct CorpusCache {
    clips: BTreeMap<String, AudioClip>,
}

impl CorpusCache {
    /// Loads every WAV below `dir`, resampling to `sample_rate` where needed.
    pub fn load_dir(dir: &Path, sample_rate: u32) -> Result<Self> {
        let files = list_wavs(dir)?;
        let clips = files
            .par_iter()
            .map(|p| {
                let clip = load_wav(p)?;
                let clip = if clip.sample_rate != sample_rate {
                    resample(&clip, sample_rate)?
                } else {
                    clip
                };
                Ok((relative_name(dir, p), clip))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clips: clips.into_iter().collect(),
        })
    }

    /// Loads only the files a manifest refers to.
    pub fn for_manifest(m: &DatasetManifest) -> Result<Self> {
        let names: std::collections::BTreeSet<&str> =
            m.entries.iter().map(|e| e.source_file.as_str()).collect();
        let clips = names
            .into_par_iter()
            .map(|name| {
                let clip = load_wav(m.corpus_dir.join(name))?;
                let clip = if clip.sample_rate != m.sample_rate {
                    resample(&clip, m.sample_rate)?
                } else {
                    clip
                };
                Ok((name.to_owned(), clip))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clips: clips.into_iter().collect(),
        })
    }

    pub fn get(&self, name: &str) -> Option<&AudioClip> {
        self.clips.get(name)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// Draws `n_chunks` (file, offset, knobs) triples. Chunk `i` uses its own
/// generator seeded by `(seed, i)`, so results do not depend on execution
/// order.
pub fn build_dataset(opts: &DatasetOptions) -> Result<SplitManifests> {
    let fx = EffectInstance::new(opts.effect, opts.sample_rate)?;
    if opts.chunk_size == 0 {
        return invalid("chunk size must be positive");
    }
    if !(0.0..1.0).contains(&opts.val_frac) {
        return invalid(format!("validation fraction {} outside [0, 1)", opts.val_frac));
    }
    if !opts.pinned.is_empty() && opts.pinned.len() != fx.knob_count() {
        return invalid(format!(
            "{} pinned knob slots for a {}-knob effect",
            opts.pinned.len(),
            fx.knob_count()
        ));
    }
    if let Some(v) = opts.pinned.iter().flatten().find(|v| !(-0.5..=0.5).contains(*v)) {
        return invalid(format!("pinned knob value {v} outside [-0.5, 0.5]"));
    }
    let context_len = opts.context_len.unwrap_or_else(|| fx.default_context_len());
    let corpus = CorpusCache::load_dir(&opts.corpus_dir, opts.sample_rate)?;
    if corpus.is_empty() {
        return invalid(format!("no WAV files under {}", opts.corpus_dir.display()));
    }
    let need = opts.chunk_size + context_len;
    let eligible: Vec<(&String, &AudioClip)> = corpus
        .clips
        .iter()
        .filter(|(_, c)| c.len() >= need)
        .collect();
    if eligible.is_empty() {
        return invalid(format!(
            "every corpus file is shorter than chunk + context ({need} samples at {} Hz)",
            opts.sample_rate
        ));
    }

    let entries: Vec<ManifestEntry> = (0..opts.n_chunks)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(index as u64);
            let mut pick = None;
            for _ in 0..SILENCE_RETRIES {
                let (name, clip) = eligible[rng.gen_range(0..eligible.len())];
                let offset = rng.gen_range(context_len..=clip.len() - opts.chunk_size);
                let quiet = rms(&clip.samples[offset..offset + opts.chunk_size]) < SILENCE_RMS;
                pick = Some((name.clone(), offset));
                if !(opts.reject_silence && quiet) {
                    break;
                }
            }
            let (source_file, offset) = pick.expect("at least one draw");
            let knobs = (0..fx.knob_count())
                .map(|k| {
                    let drawn = rng.gen_range(-0.5..=0.5);
                    opts.pinned.get(k).copied().flatten().unwrap_or(drawn)
                })
                .collect();
            ManifestEntry {
                index,
                source_file,
                offset,
                knobs: KnobVector::new(knobs).expect("draws lie in range"),
            }
        })
        .collect();

    let n_val = (opts.n_chunks as f64 * opts.val_frac).round() as usize;
    let n_train = opts.n_chunks - n_val;
    let make = |split, entries: Vec<ManifestEntry>| DatasetManifest {
        format: MANIFEST_FORMAT.to_owned(),
        effect: fx.clone(),
        sample_rate: opts.sample_rate,
        chunk_size: opts.chunk_size,
        context_len,
        seed: opts.seed,
        corpus_dir: opts.corpus_dir.clone(),
        split,
        reject_silence: opts.reject_silence,
        entries,
    };
    let mut train = entries;
    let val = train.split_off(n_train);
    Ok(SplitManifests {
        train: make(Split::Train, train),
        val: make(Split::Val, val),
    })
}

/// Deterministic shuffled batches of indices `0..n`; the last batch may be
/// short.
pub fn batch_order(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return invalid("batch size must be at least 1");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// A manifest with its decoded sources; pairs are rendered on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    corpus: CorpusCache,
}

impl Dataset {
    pub fn open(manifest: DatasetManifest) -> Result<Self> {
        let corpus = CorpusCache::for_manifest(&manifest)?;
        Ok(Self { manifest, corpus })
    }

    pub fn with_corpus(manifest: DatasetManifest, corpus: CorpusCache) -> Self {
        Self { manifest, corpus }
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    /// Renders entry `i`: the effect runs over `context_len` samples of
    /// history plus the chunk, and the history part of the output is dropped.
    pub fn pair(&self, i: usize) -> Result<ChunkPair> {
        let m = &self.manifest;
        let e = m
            .entries
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("entry {i} out of range")))?;
        let clip = self.corpus.get(&e.source_file).ok_or_else(|| {
            Error::InvalidArgument(format!("source '{}' not loaded", e.source_file))
        })?;
        if e.offset < m.context_len || e.offset + m.chunk_size > clip.len() {
            return invalid(format!(
                "entry {i}: offset {} does not fit '{}'",
                e.offset, e.source_file
            ));
        }
        let span = AudioClip::new(
            clip.samples[e.offset - m.context_len..e.offset + m.chunk_size].to_vec(),
            m.sample_rate,
        );
        let processed = m.effect.apply(&e.knobs, &span)?;
        Ok(ChunkPair {
            input: clip.samples[e.offset..e.offset + m.chunk_size].to_vec(),
            target: processed.samples[m.context_len..].to_vec(),
            knobs: e.knobs.clone(),
            source_file: e.source_file.clone(),
            offset: e.offset,
        })
    }

    /// Renders every pair, in index order.
    pub fn pairs(&self) -> Result<Vec<ChunkPair>> {
        (0..self.len()).into_par_iter().map(|i| self.pair(i)).collect()
    }

    /// Lazily rendered batches in the epoch's shuffled order.
    pub fn iterate_batches(
        &self,
        batch_size: usize,
        epoch_seed: u64,
    ) -> Result<impl Iterator<Item = Result<Vec<ChunkPair>>> + '_> {
        let order = batch_order(self.len(), batch_size, epoch_seed)?;
        Ok(order
            .into_iter()
            .map(move |b| b.into_iter().map(|i| self.pair(i)).collect()))
    }
}

/// Writes pairs as raw little-endian `f32`: each pair's input then target.
pub fn write_chunk_cache(pairs: &[ChunkPair], path: impl AsRef<Path>) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        for &s in p.input.iter().chain(&p.target) {
            f.write_all(&s.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Reads a cache written by [`write_chunk_cache`] back into (input, target)
/// pairs.
pub fn read_chunk_cache(
    path: impl AsRef<Path>,
    chunk_size: usize,
) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    let pair_bytes = 8 * chunk_size;
    if chunk_size == 0 || bytes.len() % pair_bytes != 0 {
        return invalid(format!(
            "cache of {} bytes is not a whole number of {chunk_size}-sample pairs",
            bytes.len()
        ));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(floats
        .chunks_exact(2 * chunk_size)
        .map(|c| (c[..chunk_size].to_vec(), c[chunk_size..].to_vec()))
        .collect())
}
