//! Attention modules against scalar loops, and the per-sample structure of
//! everything except the batch head.

mod common;

use btn_core::attention::{AttentionConfig, MultiHeadAttention};
use btn_core::batch_attention::{cba, BtHead};
use btn_core::mla::{LevelFeatures, LevelFuse, Mla, QuerySource, VitInputFuse};
use btn_core::model::Btn;
use btn_tensor::{ParamBuilder, ParamSet, Tensor};
use common::{attention_loops, cba_loops, max_abs_diff, random, tiny_model, token_rows};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(t: &Tensor, b: usize) -> Tensor {
    t.narrow(0, b, 1).unwrap()
}

#[test]
fn cba_matches_loops_with_and_without_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (b, n, s) = (rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=6));
        let e = random(&mut rng, &[b, n, s]);
        let p = random(&mut rng, &[b, n]);
        for scale in [false, true] {
            let got = cba(&e, &p, scale).unwrap();
            let want = cba_loops(e.data(), p.data(), b, n, s, scale);
            assert!(max_abs_diff(got.data(), &want) <= 1e-12);
        }
    }
}

#[test]
fn cross_attention_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut set = ParamSet::new();
    let attn = MultiHeadAttention::new(
        &mut ParamBuilder::new(&mut set, &mut rng),
        AttentionConfig::new(4, 2).unwrap(),
    )
    .unwrap();
    let q = random(&mut rng, &[1, 2, 4]);
    let kv = random(&mut rng, &[1, 3, 4]);
    let got = attn.cross_attend(&q, &kv, &kv).unwrap();
    assert_eq!(got.shape(), &[1, 2, 4]);
    let want = attention_loops(&attn, &token_rows(&q)[0], &token_rows(&kv)[0]);
    assert!(max_abs_diff(got.data(), &want.concat()) <= 1e-12);
}

/// `[1, C, H, W]` as `H * W` tokens of `C` features, row-major positions.
fn map_tokens(x: &Tensor) -> Vec<Vec<f64>> {
    let s = x.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    (0..hw)
        .map(|t| (0..c).map(|ch| x.data()[ch * hw + t]).collect())
        .collect()
}

#[test]
fn level_fuse_matches_loops_for_both_query_sources() {
    for query in [QuerySource::Landmark, QuerySource::Image] {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut set = ParamSet::new();
        let fuse = LevelFuse::new(&mut ParamBuilder::new(&mut set, &mut rng), 4, 2, query).unwrap();
        let img = random(&mut rng, &[1, 4, 2, 2]);
        let lmk = random(&mut rng, &[1, 4, 2, 2]);
        let got = fuse.forward(&img, &lmk).unwrap();
        assert_eq!(got.shape(), img.shape());
        let (q, kv) = match query {
            QuerySource::Landmark => (map_tokens(&lmk), map_tokens(&img)),
            QuerySource::Image => (map_tokens(&img), map_tokens(&lmk)),
        };
        let tokens = attention_loops(&fuse.attn, &q, &kv);
        for (t, token) in tokens.iter().enumerate() {
            for (ch, want) in token.iter().enumerate() {
                assert!((got.data()[ch * 4 + t] - want).abs() <= 1e-12);
            }
        }
    }
}

fn levels(rng: &mut ChaCha8Rng, b: usize, channels: [usize; 3], sizes: [usize; 3]) -> LevelFeatures {
    let [s1, s2, s3] = [0, 1, 2].map(|l| random(rng, &[b, channels[l], sizes[l], sizes[l]]));
    LevelFeatures::new(s1, s2, s3).unwrap()
}

#[test]
fn cascade_with_silent_low_level_is_uniform_over_mid() {
    // A zero low level downsamples to the convolution bias at every
    // position, so every key and value is that bias and each mid-level
    // token becomes out(value(bias)) regardless of its query.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut set = ParamSet::new();
    let mla = Mla::new(
        &mut ParamBuilder::new(&mut set, &mut rng),
        [2, 4, 4],
        [4, 2, 1],
        2,
    )
    .unwrap();
    let mut lv = levels(&mut rng, 2, [2, 4, 4], [4, 2, 1]);
    lv = LevelFeatures::new(Tensor::zeros(&[2, 2, 4, 4]), lv.s2.clone(), lv.s3.clone()).unwrap();
    let out = mla.forward_parts(&lv).unwrap();
    let bias = mla.down_low.bias.as_ref().unwrap().to_vec();
    let token = attention_loops(&mla.attend_mid, &[vec![0.0; 4]], &[bias])[0].clone();
    for b in 0..2 {
        for (ch, want) in token.iter().enumerate() {
            for t in 0..4 {
                let v = out.low_to_mid.data()[(b * 4 + ch) * 4 + t];
                assert!((v - want).abs() <= 1e-12, "b {b} ch {ch} t {t}");
            }
        }
    }
}

#[test]
fn vit_input_tokens_depend_only_on_their_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut set = ParamSet::new();
    let (ch, sz) = ([3, 4, 5], [4, 2, 1]);
    let fuse = VitInputFuse::new(&mut ParamBuilder::new(&mut set, &mut rng), ch, sz, 6).unwrap();
    let base = levels(&mut rng, 2, ch, sz);
    let t0 = fuse.forward(&base).unwrap();
    assert_eq!(t0.shape(), &[2, 3, 6]);
    assert_eq!(fuse.token_counts(), [1, 1, 1]);
    let maps = base.levels().map(Tensor::clone);
    for l in 0..3 {
        let mut perturbed = maps.clone();
        perturbed[l] = perturbed[l].add_scalar(0.5);
        let [a, b, c] = perturbed;
        let t1 = fuse.forward(&LevelFeatures::new(a, b, c).unwrap()).unwrap();
        for bi in 0..2 {
            for tok in 0..3 {
                let off = (bi * 3 + tok) * 6;
                let same = t0.data()[off..off + 6] == t1.data()[off..off + 6];
                assert_eq!(same, tok != l, "level {l} token {tok}");
            }
        }
    }
}

#[test]
fn attention_modules_never_mix_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut set = ParamSet::new();
    let mut pb = ParamBuilder::new(&mut set, &mut rng);
    let attn = MultiHeadAttention::new(&mut pb.scope("a"), AttentionConfig::new(4, 2).unwrap()).unwrap();
    let fuse = LevelFuse::new(&mut pb.scope("f"), 4, 2, QuerySource::Landmark).unwrap();
    let mla = Mla::new(&mut pb.scope("m"), [2, 4, 4], [4, 2, 1], 2).unwrap();
    drop(pb);

    let x = random(&mut rng, &[3, 5, 4]);
    let all = attn.self_attend(&x).unwrap();
    let img = random(&mut rng, &[3, 4, 2, 2]);
    let lmk = random(&mut rng, &[3, 4, 2, 2]);
    let fused = fuse.forward(&img, &lmk).unwrap();
    let lv = levels(&mut rng, 3, [2, 4, 4], [4, 2, 1]);
    let cascade = mla.forward(&lv).unwrap();
    for b in 0..3 {
        let alone = attn.self_attend(&sample(&x, b)).unwrap();
        assert_eq!(alone.data(), sample(&all, b).data());
        let alone = fuse.forward(&sample(&img, b), &sample(&lmk, b)).unwrap();
        assert_eq!(alone.data(), sample(&fused, b).data());
        let one = LevelFeatures::new(sample(&lv.s1, b), sample(&lv.s2, b), sample(&lv.s3, b)).unwrap();
        assert!(max_abs_diff(mla.forward(&one).unwrap().data(), sample(&cascade, b).data()) <= 1e-12);
    }
}

#[test]
fn batch_head_couples_samples_only_in_training() {
    let cfg = tiny_model();
    let model = Btn::new(&cfg, &mut ChaCha8Rng::seed_from_u64(23)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let x = Tensor::from_fn(&[3, 3, 8, 8], |_| rng.gen_range(-1.0..1.0)).into_leaf(true);

    let out = model.forward_train(&x, None).unwrap();
    let p_bt = out.triple.as_ref().unwrap().p_bt();
    p_bt.narrow(0, 0, 1).unwrap().sum().backward().unwrap();
    let g = x.grad().unwrap();
    let per = 3 * 8 * 8;
    assert!(
        g[per..].iter().any(|v| *v != 0.0),
        "other samples must reach sample 0's p_bt"
    );

    x.zero_grad();
    let out = model.forward_train(&x, None).unwrap();
    out.p_vit.narrow(0, 0, 1).unwrap().sum().backward().unwrap();
    let g = x.grad().unwrap();
    assert!(g[..per].iter().any(|v| *v != 0.0));
    assert!(
        g[per..].iter().all(|v| *v == 0.0),
        "p_vit of sample 0 must ignore the rest of the batch"
    );
}

#[test]
fn bt_head_embeds_one_channel_per_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut set = ParamSet::new();
    let head = BtHead::new(&mut ParamBuilder::new(&mut set, &mut rng), 5, 3, false).unwrap();
    let f = random(&mut rng, &[2, 5, 2, 3]);
    assert_eq!(head.embed(&f).unwrap().shape(), &[2, 3, 6]);
    let p = random(&mut rng, &[2, 3]);
    let t = head.forward(&f, &p).unwrap();
    assert_eq!(t.p_vit().data(), p.data());
    let sum = t.p_vit().add(t.p_cba()).unwrap();
    assert_eq!(t.p_bt().data(), sum.data());
}
