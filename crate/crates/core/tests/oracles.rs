mod common;

use common::*;
use neuroview::arch::ArchSpec;
use neuroview::model::Classifier;
use neuroview::neuroview::{NeuroViewConfig, VqMode};
use neuroview::tensor::{ReduceMode, Tape};
use neuroview::{NeuroViewModel, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn conv_matches_six_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(c, h, w, o, k, stride, pad) in &[(1, 5, 5, 2, 3, 1, 1), (3, 7, 6, 4, 3, 2, 0), (2, 4, 4, 3, 1, 1, 0), (2, 6, 5, 2, 5, 1, 2)] {
        let x = Tensor::<f64>::uniform(&[2, c, h, w], -1.0, 1.0, &mut rng);
        let kern = Tensor::<f64>::uniform(&[o, c, k, k], -1.0, 1.0, &mut rng);
        let bias = Tensor::<f64>::uniform(&[o], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xn, kn, bn) = (tape.constant(x.clone()), tape.constant(kern.clone()), tape.constant(bias.clone()));
        let y = tape.conv2d(xn, kn, bn, stride, pad).unwrap();
        let got = tape.value(y);
        for b in 0..2 {
            let want = naive_conv(&sample_map(&x, b), kern.data(), bias.data(), o, k, stride, pad);
            assert_eq!(got.shape()[1..], [want.c, want.h, want.w]);
            let n = want.v.len();
            for (g, e) in got.data()[b * n..(b + 1) * n].iter().zip(&want.v) {
                assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
            }
        }
    }
}

#[test]
fn linear_and_cross_entropy_match_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (b, n, m) = (5, 7, 4);
    let x = Tensor::<f64>::uniform(&[b, n], -2.0, 2.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[m, n], -2.0, 2.0, &mut rng);
    let bias = Tensor::<f64>::uniform(&[m], -2.0, 2.0, &mut rng);
    let labels = vec![0, 3, 1, 2, 3];
    let mut tape = Tape::new();
    let (xn, wn, bn) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(bias.clone()));
    let y = tape.linear(xn, wn, bn).unwrap();
    let loss = tape.softmax_cross_entropy(y, &labels).unwrap();
    let mut want = Vec::new();
    for r in 0..b {
        for j in 0..m {
            want.push(bias.data()[j] + (0..n).map(|i| w.data()[j * n + i] * x.data()[r * n + i]).sum::<f64>());
        }
    }
    for (g, e) in tape.value(y).data().iter().zip(&want) {
        assert!((g - e).abs() <= 1e-12);
    }
    let ce = naive_cross_entropy(&want, m, &labels);
    assert!((tape.value(loss).item() - ce).abs() <= 1e-12);
}

fn forward_oracle_case(reduce: ReduceMode, views: usize, vq: VqMode, temperature: f64, shared: bool, seed: u64) -> f64 {
    let spec = ArchSpec::preset("vgg-mini").unwrap();
    let cfg = NeuroViewConfig { vq, temperature, reduce, views, shared_view_weights: shared };
    let mut model = NeuroViewModel::<f64>::new(spec, cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    random_head(&mut model, &mut rng, 0.5);
    let inputs: Vec<Tensor<f64>> = (0..views).map(|_| Tensor::uniform(&[2, 1, 28, 28], 0.0, 1.0, &mut rng)).collect();
    let logits = model.logits(&inputs).unwrap();
    let mut worst = 0.0f64;
    for b in 0..2 {
        let maps: Vec<Map> = inputs.iter().map(|x| sample_map(x, b)).collect();
        let want = naive_logits(&model, &maps);
        for (g, e) in logits.data()[b * 10..(b + 1) * 10].iter().zip(&want) {
            worst = worst.max((g - e).abs());
        }
    }
    worst
}

#[test]
fn forward_matches_naive_path_for_variants() {
    for (i, &(vq, t, shared)) in [(VqMode::Identity, 1.0, true), (VqMode::Sigmoid, 0.5, true), (VqMode::Sigmoid, 2.0, false)]
        .iter()
        .enumerate()
    {
        for reduce in [ReduceMode::Max, ReduceMode::Mean] {
            let err = forward_oracle_case(reduce, 2, vq, t, shared, 40 + i as u64);
            assert!(err <= 1e-6, "{vq} t={t} shared={shared} {reduce}: {err}");
        }
    }
}

#[test]
fn identical_inputs_give_identical_rows_and_batch_order_permutes_rows() {
    let spec = ArchSpec::preset("vgg-mini").unwrap();
    let mut model = NeuroViewModel::<f64>::new(spec, NeuroViewConfig::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    random_head(&mut model, &mut rng, 1.0);
    let one = Tensor::<f64>::uniform(&[1, 1, 28, 28], 0.0, 1.0, &mut rng);
    let twice = Tensor::new(vec![2, 1, 28, 28], [one.data(), one.data()].concat()).unwrap();
    let l = model.logits(&[twice]).unwrap();
    assert_eq!(l.data()[..10], l.data()[10..]);

    let x = Tensor::<f64>::uniform(&[3, 1, 28, 28], 0.0, 1.0, &mut rng);
    let perm = [2, 0, 1];
    let base = model.logits(std::slice::from_ref(&x)).unwrap();
    let permuted = model.logits(&[x.gather_batch(&perm).unwrap()]).unwrap();
    for (r, &p) in perm.iter().enumerate() {
        assert_eq!(permuted.data()[r * 10..(r + 1) * 10], base.data()[p * 10..(p + 1) * 10]);
    }
}

#[test]
fn first_kernel_receives_gradient() {
    let spec = ArchSpec::preset("vgg-mini").unwrap();
    let mut model = NeuroViewModel::<f64>::new(spec, NeuroViewConfig::default(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    random_head(&mut model, &mut rng, 0.1);
    let x = Tensor::<f64>::uniform(&[4, 1, 28, 28], 0.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let params: Vec<_> = model.params().into_iter().map(|p| tape.param(p.clone())).collect();
    let xn = tape.constant(x);
    let logits = model.logits_on_tape(&mut tape, &params, &[xn]).unwrap();
    let loss = tape.softmax_cross_entropy(logits, &[0, 1, 2, 3]).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(params[0]).unwrap();
    assert!(g.data().iter().any(|&v| v != 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sigmoid_codes_stay_in_open_unit_interval(seed in 0u64..1000, scale in 0.0f64..50.0) {
        let spec = ArchSpec::preset("vgg-mini").unwrap();
        let model = NeuroViewModel::<f32>::new(spec, NeuroViewConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::uniform(&[1, 1, 28, 28], -scale, scale, &mut rng);
        let codes = model.extract_codes(&[x]).unwrap();
        prop_assert_eq!(codes.width(), 176);
        prop_assert!(codes.values.data().iter().all(|&c| c > 0.0 && c < 1.0));
    }
}
