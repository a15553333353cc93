mod common;

use common::{rng, uniform, GRAD_H, MODEL_TOL};
use mmsa::params::ParamStore;
use mmsa::seed::rng_for;
use mmsa::tensor::{finite_difference_check, Tape, Tensor, Var};
use mmsa::transformer::{
    AttentionMask, EncoderConfig, ForwardCtx, ModalityEncoder, MultiHeadAttention,
};
use mmsa::Error;
use proptest::prelude::*;
use rand::Rng;

fn config(layers: usize) -> EncoderConfig {
    EncoderConfig {
        model_dim: 8,
        num_heads: 2,
        ff_dim: 12,
        num_layers: layers,
        max_seq_len: 16,
        dropout_rate: 0.0,
    }
}

fn encoder(input_dim: usize, layers: usize, seed: u64) -> (ParamStore<f64>, ModalityEncoder) {
    let mut store = ParamStore::new();
    let enc = ModalityEncoder::new(
        &mut store,
        "video",
        input_dim,
        &config(layers),
        &mut rng_for(seed, 1),
    )
    .unwrap();
    (store, enc)
}

/// (pooled, logits) values for `x: [b×s×in]` under `masks`.
fn run(
    store: &ParamStore<f64>,
    enc: &ModalityEncoder,
    x: Tensor<f64>,
    masks: &[AttentionMask],
) -> (Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let x = tape.constant(x);
    let out = enc
        .forward(&mut tape, &params, x, masks, &mut ForwardCtx::eval())
        .unwrap();
    (
        tape.value(out.pooled).clone(),
        tape.value(out.logits).clone(),
    )
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trailing_padding_never_changes_outputs(
        seed in 0u64..1000,
        lens in prop::collection::vec(1usize..6, 1..4),
        extra in 1usize..6,
    ) {
        let (store, enc) = encoder(3, 2, seed);
        let s = *lens.iter().max().unwrap();
        let b = lens.len();
        let mut r = rng(seed);
        let base = uniform(&[b, s, 3], &mut r);
        let masks: Vec<AttentionMask> =
            lens.iter().map(|&l| AttentionMask::prefix(l, s).unwrap()).collect();

        let mut padded = Vec::new();
        for i in 0..b {
            padded.extend_from_slice(&base.data()[i * s * 3..(i + 1) * s * 3]);
            padded.extend((0..extra * 3).map(|_| r.random_range(-100.0..100.0)));
        }
        let padded = Tensor::new([b, s + extra, 3], padded).unwrap();
        let padded_masks: Vec<AttentionMask> =
            lens.iter().map(|&l| AttentionMask::prefix(l, s + extra).unwrap()).collect();

        let (p0, l0) = run(&store, &enc, base, &masks);
        let (p1, l1) = run(&store, &enc, padded, &padded_masks);
        prop_assert!(max_diff(&p0, &p1) <= 1e-6);
        prop_assert!(max_diff(&l0, &l1) <= 1e-6);
    }
}

#[test]
fn permuting_the_batch_permutes_outputs() {
    let (store, enc) = encoder(4, 2, 3);
    let (b, s) = (4, 5);
    let x = uniform(&[b, s, 4], &mut rng(3));
    let lens = [5, 2, 4, 1];
    let masks: Vec<_> = lens
        .iter()
        .map(|&l| AttentionMask::prefix(l, s).unwrap())
        .collect();
    let perm = [2, 0, 3, 1];
    let mut px = Vec::new();
    for &p in &perm {
        px.extend_from_slice(&x.data()[p * s * 4..(p + 1) * s * 4]);
    }
    let pmasks: Vec<_> = perm.iter().map(|&p| masks[p].clone()).collect();
    let (_, logits) = run(&store, &enc, x, &masks);
    let (_, plogits) = run(&store, &enc, Tensor::new([b, s, 4], px).unwrap(), &pmasks);
    for (i, &p) in perm.iter().enumerate() {
        for c in 0..3 {
            let d = plogits.data()[i * 3 + c] - logits.data()[p * 3 + c];
            assert!(d.abs() < 1e-12);
        }
    }
}

#[test]
fn zeroed_residual_projections_make_the_stack_an_identity() {
    let (mut store, enc) = encoder(3, 2, 5);
    for layer in &enc.layers {
        for lin in [&layer.attention.output, &layer.ff_out] {
            for id in lin.param_ids() {
                store.get_mut(id).data_mut().fill(0.0);
            }
        }
    }
    let x = uniform(&[2, 4, 8], &mut rng(5));
    let masks = vec![
        AttentionMask::prefix(4, 4).unwrap(),
        AttentionMask::prefix(2, 4).unwrap(),
    ];
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let y = enc
        .encode_stack(&mut tape, &params, xv, &masks, &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(tape.value(y).data(), x.data());
    assert_eq!(tape.value(y).shape(), &[2, 4, 8]);
}

fn attention(seed: u64) -> (ParamStore<f64>, MultiHeadAttention) {
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, &mut rng_for(seed, 2));
    (store, mha)
}

#[test]
fn attention_rows_sum_to_one_and_ignore_masked_keys() {
    let (store, mha) = attention(7);
    let valid = vec![vec![true, false, true, true, false], vec![true; 5]];
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let x = tape.constant(uniform(&[2, 5, 8], &mut rng(7)));
    let out = mha.forward(&mut tape, &params, x, &valid).unwrap();
    let w = tape.value(out.weights);
    assert_eq!(w.shape(), &[4, 5, 5]);
    for (r, row) in w.data().chunks(5).enumerate() {
        let sample = r / 10;
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (k, &p) in row.iter().enumerate() {
            if !valid[sample][k] {
                assert_eq!(p, 0.0);
            }
        }
    }
}

#[test]
fn equal_scores_give_uniform_weights_over_valid_keys() {
    let (mut store, mha) = attention(8);
    for id in mha.query.param_ids() {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let valid = vec![vec![true, true, false, true]];
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let x = tape.constant(uniform(&[1, 4, 8], &mut rng(8)));
    let out = mha.forward(&mut tape, &params, x, &valid).unwrap();
    for row in tape.value(out.weights).data().chunks(4) {
        for (k, &p) in row.iter().enumerate() {
            let want = if valid[0][k] { 1.0 / 3.0 } else { 0.0 };
            assert!((p - want).abs() < 1e-12);
        }
    }
}

#[test]
fn single_position_attention_is_value_then_output_projection() {
    let (store, mha) = attention(9);
    let x = uniform(&[1, 1, 8], &mut rng(9));
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let xv = tape.constant(x);
    let out = mha
        .forward(&mut tape, &params, xv, &[vec![true]])
        .unwrap()
        .output;
    let v = mha.value.forward(&mut tape, &params, xv).unwrap();
    let want = mha.output.forward(&mut tape, &params, v).unwrap();
    assert!(max_diff(tape.value(out), tape.value(want)) < 1e-12);
}

#[test]
fn sequence_longer_than_max_is_a_config_error() {
    let (store, enc) = encoder(3, 1, 1);
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros([1, 17, 3]));
    let masks = [AttentionMask::prefix(17, 17).unwrap()];
    let err = enc.forward(&mut tape, &params, x, &masks, &mut ForwardCtx::eval());
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn logits_are_b_by_3_and_softmax_rows_normalize() {
    let (store, enc) = encoder(3, 1, 2);
    let masks: Vec<_> = [3, 1, 2]
        .iter()
        .map(|&l| AttentionMask::prefix(l, 3).unwrap())
        .collect();
    let (pooled, logits) = run(&store, &enc, uniform(&[3, 3, 3], &mut rng(2)), &masks);
    assert_eq!(pooled.shape(), &[3, 8]);
    assert_eq!(logits.shape(), &[3, 3]);
    let mut tape = Tape::new();
    let l = tape.constant(logits);
    let p = tape.softmax(l, 1).unwrap();
    for row in tape.value(p).data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn dropout_only_acts_in_training_mode() {
    let mut cfg = config(1);
    cfg.dropout_rate = 0.5;
    let mut store = ParamStore::<f64>::new();
    let enc = ModalityEncoder::new(&mut store, "audio", 3, &cfg, &mut rng_for(4, 1)).unwrap();
    let x = uniform(&[2, 3, 3], &mut rng(4));
    let masks: Vec<_> = (0..2)
        .map(|_| AttentionMask::prefix(3, 3).unwrap())
        .collect();
    let logits = |ctx: &mut ForwardCtx<'_>| {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = enc.forward(&mut tape, &params, xv, &masks, ctx).unwrap();
        tape.value(out.logits).clone()
    };
    let a = logits(&mut ForwardCtx::eval());
    let b = logits(&mut ForwardCtx::eval());
    assert_eq!(a, b);
    let mut r = rng_for(4, 9);
    let c = logits(&mut ForwardCtx::train(&mut r));
    assert!(max_diff(&a, &c) > 1e-9);
}

#[test]
fn modality_forward_with_cross_entropy_matches_finite_differences() {
    let (store, enc) = encoder(3, 2, 11);
    let x = uniform(&[2, 4, 3], &mut rng(11));
    let masks = vec![
        AttentionMask::prefix(4, 4).unwrap(),
        AttentionMask::prefix(3, 4).unwrap(),
    ];
    let mut inputs = store.tensors().to_vec();
    inputs.push(x);
    let n = store.len();
    let report = finite_difference_check(
        |tape: &mut Tape<f64>, vars: &[Var]| {
            let out = enc.forward(tape, &vars[..n], vars[n], &masks, &mut ForwardCtx::eval())?;
            tape.cross_entropy(out.logits, &[2, 0])
        },
        &inputs,
        GRAD_H,
        MODEL_TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}
