//! Invariants of the batch attention and the model, checked on random
//! inputs.

mod common;

use btn_core::batch_attention::{cba, cba_weights, PredictionTriple};
use btn_core::model::{loss, Btn, LossWeights};
use btn_tensor::{no_grad, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=5, 1usize..=3, 1usize..=6).prop_flat_map(|(b, n, s)| {
        (
            Just(b),
            Just(n),
            Just(s),
            prop::collection::vec(-3.0f64..3.0, b * n * s),
            prop::collection::vec(-5.0f64..5.0, b * n),
        )
    })
}

proptest! {
    #[test]
    fn weights_are_row_stochastic((b, n, s, e, _p) in instance(), scale in any::<bool>()) {
        let w = cba_weights(&Tensor::new(e, &[b, n, s]).unwrap(), scale).unwrap();
        prop_assert_eq!(w.shape(), &[n, b, b]);
        for row in w.data().chunks(b) {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn batch_scores_are_convex_combinations((b, n, s, e, p) in instance()) {
        let out = cba(&Tensor::new(e, &[b, n, s]).unwrap(), &Tensor::new(p.clone(), &[b, n]).unwrap(), false).unwrap();
        for ni in 0..n {
            let col: Vec<f64> = (0..b).map(|bi| p[bi * n + ni]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for bi in 0..b {
                let v = out.data()[bi * n + ni];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn permuting_the_batch_permutes_the_scores((b, n, s, e, p) in instance(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perm = btn_core::sampler::shuffled(b, &mut rng);
        let et = Tensor::new(e.clone(), &[b, n, s]).unwrap();
        let pt = Tensor::new(p.clone(), &[b, n]).unwrap();
        let base = cba(&et, &pt, false).unwrap();
        let pe: Vec<f64> = perm.iter().flat_map(|&i| e[i * n * s..(i + 1) * n * s].to_vec()).collect();
        let pp: Vec<f64> = perm.iter().flat_map(|&i| p[i * n..(i + 1) * n].to_vec()).collect();
        let moved = cba(&Tensor::new(pe, &[b, n, s]).unwrap(), &Tensor::new(pp, &[b, n]).unwrap(), false).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for ni in 0..n {
                prop_assert!((moved.data()[k * n + ni] - base.data()[i * n + ni]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn single_sample_batch_attention_is_identity((_b, n, s, e, p) in instance()) {
        let e = Tensor::new(e[..n * s].to_vec(), &[1, n, s]).unwrap();
        let p = Tensor::new(p[..n].to_vec(), &[1, n]).unwrap();
        let t = PredictionTriple::new(p.clone(), cba(&e, &p, true).unwrap()).unwrap();
        for k in 0..n {
            prop_assert!((t.p_cba().data()[k] - p.data()[k]).abs() <= 1e-12);
            prop_assert!((t.p_bt().data()[k] - 2.0 * p.data()[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_logits_cost_lambda_plus_two_log_n(n in 2usize..6, b in 1usize..5, lambda in 0.0f64..4.0, seed in any::<u64>()) {
        // Equal logits stay equal through the batch head (it averages them),
        // so every term is ln N and p_bt's equal logits also give ln N.
        let p = Tensor::full(&[b, n], 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = common::random(&mut rng, &[b, n, 4]);
        let t = PredictionTriple::new(p.clone(), cba(&e, &p, false).unwrap()).unwrap();
        let labels: Vec<usize> = (0..b).map(|i| i % n).collect();
        let w = LossWeights { lambda, bt_term: true, cba_term: true };
        let l = loss(&t, &labels, &w).unwrap().item().unwrap();
        prop_assert!((l - (lambda + 2.0) * (n as f64).ln()).abs() <= 1e-12);
    }
}

#[test]
fn inference_ignores_batch_composition() {
    let model = Btn::new(&common::tiny_model(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = common::random(&mut rng, &[8, 3, 8, 8]);
    let batch = model.infer(&x).unwrap();
    let perm = btn_core::sampler::shuffled(8, &mut rng);
    let parts: Vec<Tensor> = perm.iter().map(|&i| x.narrow(0, i, 1).unwrap()).collect();
    let shuffled = model.infer(&Tensor::concat(&parts, 0).unwrap()).unwrap();
    let n = 3;
    for (k, &i) in perm.iter().enumerate() {
        let alone = model.infer(&parts[k]).unwrap();
        let reference = &batch.data()[i * n..(i + 1) * n];
        assert!(common::max_abs_diff(alone.data(), reference) <= 1e-12);
        assert!(common::max_abs_diff(&shuffled.data()[k * n..(k + 1) * n], reference) <= 1e-12);
    }
    // the training pass over the same batch does mix samples
    let train = no_grad(|| model.forward_train(&x, None)).unwrap();
    let t = train.triple.unwrap();
    assert_eq!(t.p_vit().data(), batch.data());
    assert!(common::max_abs_diff(t.p_bt().data(), batch.data()) > 1e-6);
}
