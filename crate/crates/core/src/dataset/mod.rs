//! Audio ingestion and deterministic training-pair generation.

mod clip;
mod manifest;
mod resample;
pub mod synth;
mod wav;

pub use clip::AudioClip;
pub use manifest::{
    batch_order, build_dataset, read_chunk_cache, write_chunk_cache, ChunkPair, CorpusCache,
    Dataset, DatasetManifest, DatasetOptions, ManifestEntry, Split, SplitManifests,
    MANIFEST_FORMAT, SILENCE_RMS,
};
pub use resample::resample;
pub use wav::{load_wav, save_wav, BitDepth};
