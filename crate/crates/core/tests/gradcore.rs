use std::sync::Arc;

use fxprofile::gradcore::{
    compare_gradients, grad_check, numeric_gradients, ops, NodeId, ParamStore, SpectralBasis,
    Tape, Tensor2,
};
use fxprofile::model::{dft_weights, Model, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2<f64> {
    Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn check(
    store: &ParamStore<f64>,
    eps: f64,
    build: impl for<'a> Fn(&mut Tape<'a, f64>) -> fxprofile::Result<NodeId>,
) -> f64 {
    grad_check(store, eps, build).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dense_gradients(n_in in 1usize..=64, n_out in 1usize..=64, frames in 1usize..=3, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let x = s.push("x", random(&mut rng, frames, n_in, 1.0), false);
        let w = s.push("w", random(&mut rng, n_out, n_in, 1.0), false);
        let b = s.push("b", random(&mut rng, 1, n_out, 1.0), false);
        let r = weights(&mut rng, frames * n_out);
        let err = check(&s, EPS, |t| {
            let xn = t.param(x);
            let y = t.dense(xn, w, b)?;
            t.weighted_sum(y, r.clone())
        });
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn leaky_relu_gradients(n in 1usize..=64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        // Keep inputs away from the kink so central differences stay on one side.
        let v = Tensor2::from_fn(1, n, |_, _| {
            let m = rng.gen_range(0.01..2.0);
            if rng.gen_bool(0.5) { m } else { -m }
        });
        let x = s.push("x", v, false);
        let r = weights(&mut rng, n);
        let err = check(&s, EPS, |t| {
            let xn = t.param(x);
            let y = t.leaky_relu(xn, 0.1);
            t.weighted_sum(y, r.clone())
        });
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn add_append_concat_gradients(rows in 1usize..=4, cols in 1usize..=64, k in 1usize..=8, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.push("a", random(&mut rng, rows, cols, 1.0), false);
        let b = s.push("b", random(&mut rng, rows, cols, 1.0), false);
        let extra = weights(&mut rng, k);
        let r = weights(&mut rng, rows * (2 * cols + k));
        let err = check(&s, EPS, |t| {
            let (an, bn) = (t.param(a), t.param(b));
            let sum = t.add(an, bn)?;
            let app = t.append_cols(sum, &extra);
            let cat = t.concat_cols(app, bn)?;
            t.weighted_sum(cat, r.clone())
        });
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn framed_transform_gradients(half in 1usize..=16, extra in 0usize..=32, hop_sel in 0usize..4, feats in 1usize..=16, seed: u64) {
        let n = 2 * half;
        let hop = 1 + hop_sel * (n - 1) / 3;
        let len = n + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let sig = s.push("signal", random(&mut rng, 1, len, 1.0), false);
        let w = s.push("w", random(&mut rng, feats, n, 1.0), false);
        let frames = ops::frame_count(len, n, hop).unwrap();
        let r = weights(&mut rng, frames * feats);
        let err = check(&s, EPS, |t| {
            let x = t.param(sig);
            let y = t.framed_transform(x, w, hop)?;
            t.weighted_sum(y, r.clone())
        });
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn overlap_add_gradients(n in 1usize..=32, hop_sel in 0usize..4, frames in 1usize..=6, feats in 1usize..=16, seed: u64) {
        let hop = 1 + hop_sel * (n - 1) / 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let f = s.push("frames", random(&mut rng, frames, feats, 1.0), false);
        let w = s.push("w", random(&mut rng, n, feats, 1.0), false);
        let len = (frames - 1) * hop + n;
        let r = weights(&mut rng, len);
        let err = check(&s, EPS, |t| {
            let x = t.param(f);
            let y = t.overlap_add(x, w, hop)?;
            t.weighted_sum(y, r.clone())
        });
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn time_loss_gradients(n in 1usize..=64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let p = s.push("pred", random(&mut rng, 1, n, 2.0), false);
        let target: Vec<f64> = weights(&mut rng, n);
        let e1 = check(&s, EPS, |t| { let x = t.param(p); t.logcosh_loss(x, &target) });
        let e2 = check(&s, EPS, |t| { let x = t.param(p); t.logsnr_loss(x, &target) });
        prop_assert!(e1 < TOL, "logcosh err {e1}");
        prop_assert!(e2 < TOL, "logsnr err {e2}");
    }

    #[test]
    fn spectral_loss_gradients(log_n in 2u32..=5, extra_frames in 0usize..=3, seed: u64) {
        let n = 1usize << log_n;
        let len = n + extra_frames * n / 2;
        let (cos, sin) = dft_weights::<f64>(n).unwrap();
        let basis = Arc::new(SpectralBasis { cos, sin, hop: n / 2 });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let p = s.push("pred", random(&mut rng, 1, len, 1.0), false);
        let target = weights(&mut rng, len);
        // |X| has a kink at zero; skip draws with a bin inside the step size.
        let sig = s.value(p).data();
        let re = ops::framed_transform_forward(sig, &basis.cos, n / 2).unwrap();
        let im = ops::framed_transform_forward(sig, &basis.sin, n / 2).unwrap();
        prop_assume!(re.data().iter().zip(im.data()).all(|(a, b)| a.hypot(*b) > 1e-2));
        let err = check(&s, EPS, |t| {
            let x = t.param(p);
            t.spectral_logcosh_loss(x, &target, Arc::clone(&basis))
        });
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn accumulation_is_linear(n in 1usize..=64, seed: u64) {
        // One tensor feeding two consumers gets the sum of the single-use gradients.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let x = s.push("x", random(&mut rng, 1, n, 1.0), false);
        let (r1, r2) = (weights(&mut rng, n), weights(&mut rng, n));
        let grad_of = |uses: &[&Vec<f64>]| {
            let mut t = Tape::new(&s);
            let xn = t.param(x);
            let mut total = None;
            for r in uses {
                let y = t.leaky_relu(xn, 0.1);
                let l = t.weighted_sum(y, (*r).clone()).unwrap();
                total = Some(match total {
                    None => l,
                    Some(prev) => t.add(prev, l).unwrap(),
                });
            }
            t.backward(1.0).unwrap().get(x).data().to_vec()
        };
        let both = grad_of(&[&r1, &r2]);
        let (g1, g2) = (grad_of(&[&r1]), grad_of(&[&r2]));
        for i in 0..n {
            prop_assert!((both[i] - (g1[i] + g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_outputs_stay_finite(n in 1usize..=64, scale_exp in -6i32..=6, seed: u64) {
        let scale = 10f64.powi(scale_exp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        prop_assert!(x.iter().zip(&t).all(|(a, b)| ops::logcosh(a - b).is_finite()));
        prop_assert!(ops::leaky_relu(&x, 0.1).iter().all(|v| v.is_finite()));
        let w = Tensor2::from_fn(3, n, |_, _| rng.gen_range(-1.0..1.0));
        let y = ops::dense_forward(&x, &w, &[0.0; 3]).unwrap();
        prop_assert!(y.iter().all(|v| v.is_finite()));
        let mut s = ParamStore::new();
        let p = s.push("p", Tensor2::row_vector(x.clone()), false);
        let mut tape = Tape::new(&s);
        let pn = tape.param(p);
        let l1 = tape.logcosh_loss(pn, &t).unwrap();
        let l2 = tape.logsnr_loss(pn, &t).unwrap();
        let l = tape.add(l1, l2).unwrap();
        prop_assert!(tape.value(l).is_finite());
        prop_assert!(tape.backward(1.0).unwrap().is_finite());
    }
}

#[test]
fn full_tiny_model_gradient_check() {
    let mut cfg = ModelConfig::tiny(3);
    cfg.seed = 11;
    let model = Model::<f64>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..cfg.chunk_size).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let target: Vec<f64> = (0..cfg.chunk_size).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let knobs = [0.3, -0.2, 0.1];
    // The leaky kinks and the deep bottleneck (gradients near 1e-9) bound the
    // usable step from both sides; 1e-5 sits between them for this instance.
    let err = grad_check(&model.params, 1e-5, |t| {
        let y = model.arch.graph(t, &x, &knobs)?;
        t.logcosh_loss(y, &target)
    })
    .unwrap();
    assert!(err < TOL, "tiny model err {err}");
}

#[test]
fn tiny_model_gradients_match_normwise_across_seeds() {
    for seed in 0..10u64 {
        let mut cfg = ModelConfig::tiny(2);
        cfg.seed = seed;
        let model = Model::<f64>::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x: Vec<f64> = (0..cfg.chunk_size).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let target: Vec<f64> = (0..cfg.chunk_size).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let knobs = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let build = |t: &mut Tape<'_, f64>| {
            let y = model.arch.graph(t, &x, &knobs)?;
            t.logcosh_loss(y, &target)
        };
        let mut tape = Tape::new(&model.params);
        build(&mut tape).unwrap();
        let analytic = tape.backward(1.0).unwrap();
        let numeric = numeric_gradients(&model.params, 1e-6, build).unwrap();
        let (mut diff, mut norm) = (0.0, 0.0);
        for ((_, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
            for (a, n) in a.data().iter().zip(n.data()) {
                diff += (a - n).powi(2);
                norm += n * n;
            }
        }
        let rel = (diff / norm).sqrt();
        assert!(rel < 1e-6, "seed {seed}: normwise error {rel}");
    }
}

#[test]
fn zero_seed_path_gives_zero_gradients() {
    let mut s = ParamStore::new();
    let w = s.push("w", Tensor2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let b = s.push("b", Tensor2::row_vector(vec![0.5, -0.5]), false);
    let mut t = Tape::new(&s);
    let x = t.constant(Tensor2::row_vector(vec![1.0, 1.0]));
    let y = t.dense(x, w, b).unwrap();
    assert_eq!(t.value(y).data(), &[3.5, 6.5]);
    t.weighted_sum(y, vec![0.0, 0.0]).unwrap();
    let g = t.backward(1.0).unwrap();
    assert!(g.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn linear_map_weight_gradient_is_input() {
    let x = vec![0.7, -1.3, 2.0];
    let mut s = ParamStore::new();
    let w = s.push("w", Tensor2::from_fn(2, 3, |i, j| (i + 2 * j) as f64), false);
    let b = s.push("b", Tensor2::zeros(1, 2), false);
    let mut t = Tape::new(&s);
    let xn = t.constant(Tensor2::row_vector(x.clone()));
    let y = t.dense(xn, w, b).unwrap();
    t.weighted_sum(y, vec![1.0, 1.0]).unwrap();
    let g = t.backward(1.0).unwrap();
    for i in 0..2 {
        assert_eq!(g.get(w).row(i), x.as_slice());
    }
    assert_eq!(g.get(b).data(), &[1.0, 1.0]);
}

#[test]
fn frozen_parameters_get_zero_gradient() {
    let mut s = ParamStore::new();
    let w = s.push("w", Tensor2::from_fn(2, 2, |i, j| 1.0 + (i * 2 + j) as f64), true);
    let b = s.push("b", Tensor2::row_vector(vec![0.1, 0.2]), false);
    let mut t = Tape::new(&s);
    let xn = t.constant(Tensor2::row_vector(vec![1.0, -2.0]));
    let y = t.dense(xn, w, b).unwrap();
    t.logcosh_loss(y, &[3.0, 3.0]).unwrap();
    let g = t.backward(1.0).unwrap();
    assert!(g.get(w).data().iter().all(|&v| v == 0.0));
    assert!(g.get(b).data().iter().any(|&v| v != 0.0));
}

#[test]
fn backward_rejects_non_scalar_result() {
    let mut s = ParamStore::new();
    let x = s.push("x", Tensor2::row_vector(vec![1.0, 2.0]), false);
    let mut t = Tape::new(&s);
    t.param(x);
    assert!(t.backward(1.0).is_err());
}

#[test]
fn checker_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    let w = s.push("w", random(&mut rng, 4, 5, 1.0), false);
    let b = s.push("b", random(&mut rng, 1, 4, 1.0), false);
    let x = random(&mut rng, 1, 5, 1.0);
    let r = weights(&mut rng, 4);
    let build = |t: &mut Tape<'_, f64>| {
        let xn = t.constant(x.clone());
        let y = t.dense(xn, w, b)?;
        t.weighted_sum(y, r.clone())
    };
    assert!(grad_check(&s, 1e-5, build).unwrap() < 1e-6);

    let mut analytic = {
        let mut t = Tape::new(&s);
        build(&mut t).unwrap();
        t.backward(1.0).unwrap()
    };
    analytic.scale(2.0);
    let numeric = numeric_gradients(&s, 1e-5, build).unwrap();
    let err = compare_gradients(&s, &analytic, &numeric);
    assert!((err - 0.5).abs() < 1e-6, "{err}");

    let empty = ParamStore::<f64>::new();
    let err = grad_check(&empty, 1e-5, |t| {
        let c = t.constant(Tensor2::row_vector(vec![1.0, 2.0]));
        t.weighted_sum(c, vec![1.0, 1.0])
    })
    .unwrap();
    assert_eq!(err, 0.0);

    assert!(grad_check(&s, 1e-3, build).is_err());
    assert!(grad_check(&s, 1e-8, build).is_err());
}
