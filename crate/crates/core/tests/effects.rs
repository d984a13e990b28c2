use fxprofile::dataset::AudioClip;
use fxprofile::effects::{
    chorus, compress, echo, static_gain_db, tremolo, tremolo_gain, EffectId, EffectInstance,
    KnobVector,
};
use proptest::prelude::*;

const SR: u32 = 44100;

fn signal() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, 64..512)
}

fn knobs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5f64..=0.5, n)
}

proptest! {
    #[test]
    fn outputs_are_finite_and_length_preserving(
        x in signal(),
        effect in prop::sample::select(EffectId::ALL.to_vec()),
        k in knobs(4),
    ) {
        let fx = EffectInstance::new(effect, SR).unwrap();
        let kv = KnobVector::new(k[..fx.knob_count()].to_vec()).unwrap();
        let clip = AudioClip::new(x.clone(), SR);
        let y = fx.apply(&kv, &clip).unwrap();
        prop_assert_eq!(y.len(), x.len());
        prop_assert!(y.samples.iter().all(|v| v.is_finite()));
        prop_assert_eq!(y, fx.apply(&kv, &clip).unwrap());
    }

    #[test]
    fn effects_are_causal(
        x in signal(),
        effect in prop::sample::select(EffectId::ALL.to_vec()),
        k in knobs(4),
        cut_frac in 0.1f64..0.9,
    ) {
        let fx = EffectInstance::new(effect, SR).unwrap();
        let kv = KnobVector::new(k[..fx.knob_count()].to_vec()).unwrap();
        let cut = (x.len() as f64 * cut_frac) as usize;
        let mut changed = x.clone();
        for v in &mut changed[cut..] {
            *v = -*v * 0.5;
        }
        let a = fx.apply(&kv, &AudioClip::new(x, SR)).unwrap();
        let b = fx.apply(&kv, &AudioClip::new(changed, SR)).unwrap();
        prop_assert_eq!(&a.samples[..cut], &b.samples[..cut]);
    }

    #[test]
    fn compressor_never_amplifies(
        x in signal(),
        t in -30.0f64..0.0,
        r in 1.0f64..10.0,
        att in 1.0f64..100.0,
        rel in 10.0f64..1000.0,
    ) {
        let y = compress(&AudioClip::new(x.clone(), SR), t, r, att, rel).unwrap();
        for (a, b) in x.iter().zip(&y.samples) {
            prop_assert!(b.abs() <= a.abs() + 1e-7);
            prop_assert!(a * b >= 0.0);
        }
    }

    #[test]
    fn static_curve_is_monotone_and_bounded(
        l1 in -120.0f64..20.0,
        l2 in -120.0f64..20.0,
        t in -30.0f64..0.0,
        r in 1.0f64..10.0,
    ) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        prop_assert!(static_gain_db(lo, t, r) <= 0.0);
        // Output level never decreases with input level.
        prop_assert!(lo + static_gain_db(lo, t, r) <= hi + static_gain_db(hi, t, r) + 1e-9);
        if hi <= t {
            prop_assert_eq!(static_gain_db(hi, t, r), 0.0);
        }
    }

    #[test]
    fn echo_zero_mix_is_dry(x in signal(), d in 1.0f64..5.0, fb in 0.0f64..0.9) {
        let clip = AudioClip::new(x.clone(), SR);
        prop_assert_eq!(echo(&clip, d, fb, 0.0).unwrap().samples, x);
    }

    #[test]
    fn tremolo_gain_stays_in_unit_interval(n in 0usize..1_000_000, rate in 0.5f64..50.0, depth in 0.0f64..=1.0) {
        let g = tremolo_gain(n, rate, depth, SR);
        prop_assert!(g >= 1.0 - depth - 1e-12 && g <= 1.0 + 1e-12);
    }

    #[test]
    fn tremolo_is_linear(x in signal(), rate in 0.5f64..50.0, depth in 0.0f64..=1.0, s in -2.0f32..2.0) {
        let a = tremolo(&AudioClip::new(x.clone(), SR), rate, depth).unwrap();
        let scaled: Vec<f32> = x.iter().map(|v| v * s).collect();
        let b = tremolo(&AudioClip::new(scaled, SR), rate, depth).unwrap();
        for (p, q) in a.samples.iter().zip(&b.samples) {
            prop_assert!((p * s - q).abs() <= 1e-6 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn chorus_zero_mix_is_dry(x in signal(), rate in 0.0f64..6.0, depth in 0.0f64..5.0) {
        let clip = AudioClip::new(x.clone(), SR);
        prop_assert_eq!(chorus(&clip, rate, depth, 10.0, 0.0).unwrap().samples, x);
    }

    #[test]
    fn knob_normalization_round_trips(
        effect in prop::sample::select(EffectId::ALL.to_vec()),
        k in knobs(4),
    ) {
        let fx = EffectInstance::new(effect, SR).unwrap();
        let kv = KnobVector::new(k[..fx.knob_count()].to_vec()).unwrap();
        let phys = fx.denormalize(&kv).unwrap();
        for (p, s) in phys.iter().zip(&fx.knob_specs) {
            prop_assert!(*p >= s.min - 1e-9 && *p <= s.max + 1e-9);
        }
        let back = fx.normalize(&phys).unwrap();
        for (a, b) in back.values().iter().zip(kv.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
