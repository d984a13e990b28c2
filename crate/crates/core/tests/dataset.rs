use std::collections::BTreeSet;
use std::path::Path;

use fxprofile::dataset::synth::{write_corpus, CorpusKind};
use fxprofile::dataset::{
    batch_order, build_dataset, load_wav, read_chunk_cache, save_wav, write_chunk_cache,
    AudioClip, BitDepth, Dataset, DatasetManifest, DatasetOptions, Split,
};
use fxprofile::effects::{EffectId, EffectInstance, KnobVector};
use proptest::prelude::*;

fn corpus(dir: &Path, sr: u32) {
    write_corpus(dir, CorpusKind::Mix, 3, 3.0, sr, 5).unwrap();
}

fn options(dir: &Path, effect: EffectId) -> DatasetOptions {
    DatasetOptions {
        n_chunks: 10,
        chunk_size: 1024,
        val_frac: 0.2,
        seed: 9,
        ..DatasetOptions::new(dir, effect)
    }
}

#[test]
fn same_seed_gives_identical_manifests_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 44100);
    let opts = options(dir.path(), EffectId::Echo);
    let a = build_dataset(&opts).unwrap();
    let b = build_dataset(&opts).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.val, b.val);
    assert_eq!(a.train.len() + a.val.len(), 10);
    assert_eq!(a.val.len(), 2);
    assert_eq!(a.train.split, Split::Train);
    assert_eq!(a.val.split, Split::Val);
    // Validation is the tail of the index range.
    let idx: Vec<usize> = a.train.entries.iter().chain(&a.val.entries).map(|e| e.index).collect();
    assert_eq!(idx, (0..10).collect::<Vec<_>>());

    let pa = Dataset::open(a.train.clone()).unwrap().pairs().unwrap();
    let pb = Dataset::open(b.train).unwrap().pairs().unwrap();
    assert_eq!(pa, pb);
    assert!(pa.iter().all(|p| p.input.len() == 1024 && p.target.len() == 1024));

    let dir2 = tempfile::tempdir().unwrap();
    a.train.save(dir2.path().join("a.json")).unwrap();
    build_dataset(&opts).unwrap().train.save(dir2.path().join("b.json")).unwrap();
    assert_eq!(
        std::fs::read(dir2.path().join("a.json")).unwrap(),
        std::fs::read(dir2.path().join("b.json")).unwrap()
    );

    let other = build_dataset(&DatasetOptions { seed: 10, ..opts }).unwrap();
    assert_ne!(other.train.entries, a.train.entries);
}

#[test]
fn manifest_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 44100);
    let m = build_dataset(&options(dir.path(), EffectId::Chorus)).unwrap().train;
    let path = dir.path().join("train.json");
    m.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), m);
}

#[test]
fn transparent_compressor_settings_leave_audio_untouched() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 44100);
    let fx = EffectInstance::new(EffectId::Comp4c, 44100).unwrap();
    // Every knob at its minimum except the threshold, which sits at 0 dBFS.
    let mut pinned = vec![Some(-0.5); 4];
    pinned[fx.knob_index("threshold").unwrap()] = Some(0.5);
    let opts = DatasetOptions {
        pinned,
        ..options(dir.path(), EffectId::Comp4c)
    };
    let split = build_dataset(&opts).unwrap();
    for p in Dataset::open(split.train).unwrap().pairs().unwrap() {
        let worst = p
            .input
            .iter()
            .zip(&p.target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-6, "max deviation {worst}");
        assert_eq!(p.knobs.values()[1], -0.5);
    }
}

#[test]
fn target_matches_effect_over_context_plus_chunk() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 44100);
    let m = build_dataset(&options(dir.path(), EffectId::Echo)).unwrap().train;
    let ctx = m.context_len;
    assert_eq!(ctx, m.effect.default_context_len());
    let ds = Dataset::open(m.clone()).unwrap();
    let e = &m.entries[0];
    let clip = load_wav(dir.path().join(&e.source_file)).unwrap();
    let span = AudioClip::new(clip.samples[e.offset - ctx..e.offset + 1024].to_vec(), 44100);
    let full = m.effect.apply(&e.knobs, &span).unwrap();
    let p = ds.pair(0).unwrap();
    assert_eq!(p.target, full.samples[ctx..]);
    assert_eq!(p.input, clip.samples[e.offset..e.offset + 1024]);
    assert!(ds.pair(m.len()).is_err());
}

#[test]
fn corpus_at_other_rate_is_resampled() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 22050);
    let opts = DatasetOptions {
        sample_rate: 16000,
        ..options(dir.path(), EffectId::Tremolo)
    };
    let split = build_dataset(&opts).unwrap();
    assert_eq!(split.train.sample_rate, 16000);
    assert_eq!(split.train.effect.sample_rate, 16000);
    assert_eq!(split.train.context_len, 0);
    // Three seconds at 16 kHz.
    let longest = split.train.entries.iter().map(|e| e.offset + 1024).max().unwrap();
    assert!(longest <= 48000);
    assert_eq!(Dataset::open(split.train).unwrap().pairs().unwrap().len(), 8);
}

#[test]
fn invalid_options_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 44100);
    let base = options(dir.path(), EffectId::Comp4c);
    let bad = [
        DatasetOptions { chunk_size: 0, ..base.clone() },
        DatasetOptions { val_frac: 1.0, ..base.clone() },
        DatasetOptions { pinned: vec![Some(0.0)], ..base.clone() },
        DatasetOptions { pinned: vec![Some(0.7), None, None, None], ..base.clone() },
        DatasetOptions { chunk_size: 100_000, ..base.clone() },
    ];
    for o in bad {
        assert!(build_dataset(&o).is_err(), "{o:?}");
    }
    let empty = tempfile::tempdir().unwrap();
    assert!(build_dataset(&options(empty.path(), EffectId::Echo)).is_err());
}

#[test]
fn silent_regions_are_avoided() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = vec![0.0f32; 44100];
    for (i, v) in s[22050..].iter_mut().enumerate() {
        *v = 0.3 * (i as f32 * 0.05).sin();
    }
    save_wav(&AudioClip::new(s, 44100), dir.path().join("quiet.wav"), BitDepth::Float32).unwrap();
    let opts = DatasetOptions {
        context_len: Some(0),
        ..options(dir.path(), EffectId::Echo)
    };
    let split = build_dataset(&opts).unwrap();
    let hits = split.train.entries.iter().filter(|e| e.offset + 1024 > 22050).count();
    assert_eq!(hits, split.train.len());
}

#[test]
fn chunk_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 44100);
    let m = build_dataset(&options(dir.path(), EffectId::Tremolo)).unwrap().val;
    let pairs = Dataset::open(m).unwrap().pairs().unwrap();
    let path = dir.path().join("val.f32");
    write_chunk_cache(&pairs, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 2 * 2 * 1024 * 4);
    let back = read_chunk_cache(&path, 1024).unwrap();
    for (p, (i, t)) in pairs.iter().zip(&back) {
        assert_eq!(&p.input, i);
        assert_eq!(&p.target, t);
    }
}

#[test]
fn batches_cover_manifest_once() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 44100);
    let m = build_dataset(&options(dir.path(), EffectId::Echo)).unwrap().train;
    let ds = Dataset::open(m).unwrap();
    let all = ds.pairs().unwrap();
    let batches: Vec<_> = ds
        .iterate_batches(3, 42)
        .unwrap()
        .collect::<Result<Vec<_>, _>>()
        .unwrap();
    assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 2]);
    let seen: BTreeSet<usize> = batches.iter().flatten().map(|p| all.iter().position(|q| q == p).unwrap()).collect();
    assert_eq!(seen.len(), 8);

    let big = ds.iterate_batches(100, 1).unwrap().count();
    assert_eq!(big, 1);
    assert!(ds.iterate_batches(0, 1).is_err());
}

proptest! {
    #[test]
    fn batch_order_is_a_partition(n in 0usize..200, b in 1usize..40, seed: u64) {
        let order = batch_order(n, b, seed).unwrap();
        prop_assert_eq!(order.clone(), batch_order(n, b, seed).unwrap());
        prop_assert_eq!(order.len(), n.div_ceil(b));
        prop_assert!(order.iter().rev().skip(1).all(|x| x.len() == b));
        let mut flat: Vec<usize> = order.into_iter().flatten().collect();
        flat.sort_unstable();
        prop_assert_eq!(flat, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn knob_vectors_reject_out_of_range(v in prop::collection::vec(-1.0f64..1.0, 1..6)) {
        let ok = v.iter().all(|x| (-0.5..=0.5).contains(x));
        prop_assert_eq!(KnobVector::new(v).is_ok(), ok);
    }
}

#[test]
fn drawn_knobs_stay_in_range_for_every_effect() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 44100);
    for effect in EffectId::ALL {
        let opts = DatasetOptions {
            n_chunks: 40,
            ..options(dir.path(), effect)
        };
        let split = build_dataset(&opts).unwrap();
        for e in split.train.entries.iter().chain(&split.val.entries) {
            assert_eq!(e.knobs.len(), split.train.effect.knob_count());
            assert!(e.knobs.values().iter().all(|v| (-0.5..=0.5).contains(v)));
        }
    }
}
