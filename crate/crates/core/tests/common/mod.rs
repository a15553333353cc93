//! Shared fixtures: the per-op gradient suite, tiny datasets and models.
#![allow(dead_code)]

use mmsa::data::{
    generate_synthetic, make_batches, Batch, Coupling, Dataset, ModalityDims, SyntheticConfig,
};
use mmsa::fusion::{Approach, FusionModel, ModelConfig};
use mmsa::tensor::{finite_difference_check, Tape, Tensor, Var};
use mmsa::transformer::{EncoderConfig, ForwardCtx, LAYER_NORM_EPS};
use mmsa::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_H: f64 = 1e-4;
pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Uniform in [-2, 2] but at least 0.05 away from zero, so ReLU kinks stay
/// outside the difference stencil.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..2.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(y ⊙ w)` for a fixed pseudo-random `w`, so every output element
/// contributes a distinct weight to the scalar.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(uniform(&shape, &mut rng(seed ^ 0xfeed)));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: OpFn,
}

fn cases(seed: u64) -> Vec<OpCase> {
    let mut r = rng(seed);
    let mut u = |shape: &[usize]| uniform(shape, &mut r);
    let valid = vec![
        vec![true, true, false, true],
        vec![true, false, false, false],
    ];
    let mut cases = vec![
        OpCase {
            name: "matmul",
            inputs: vec![u(&[3, 4]), u(&[4, 2])],
            f: Box::new(|t, v| t.matmul(v[0], v[1])),
        },
        OpCase {
            name: "batch_matmul",
            inputs: vec![u(&[2, 3, 4]), u(&[2, 4, 2])],
            f: Box::new(|t, v| t.batch_matmul(v[0], v[1], false)),
        },
        OpCase {
            name: "batch_matmul_transposed",
            inputs: vec![u(&[2, 3, 4]), u(&[2, 5, 4])],
            f: Box::new(|t, v| t.batch_matmul(v[0], v[1], true)),
        },
        OpCase {
            name: "add",
            inputs: vec![u(&[2, 3]), u(&[2, 3])],
            f: Box::new(|t, v| t.add(v[0], v[1])),
        },
        OpCase {
            name: "add_broadcast",
            inputs: vec![u(&[2, 3, 4]), u(&[4])],
            f: Box::new(|t, v| t.add_broadcast(v[0], v[1])),
        },
        OpCase {
            name: "mul",
            inputs: vec![u(&[3, 2]), u(&[3, 2])],
            f: Box::new(|t, v| t.mul(v[0], v[1])),
        },
        OpCase {
            name: "scale",
            inputs: vec![u(&[5])],
            f: Box::new(|t, v| t.scale(v[0], -0.7)),
        },
        OpCase {
            name: "softmax_last",
            inputs: vec![u(&[2, 3, 4])],
            f: Box::new(|t, v| t.softmax(v[0], 2)),
        },
        OpCase {
            name: "softmax_middle",
            inputs: vec![u(&[2, 3, 4])],
            f: Box::new(|t, v| t.softmax(v[0], 1)),
        },
        OpCase {
            name: "masked_softmax",
            inputs: vec![u(&[4, 3, 4])],
            f: Box::new(move |t, v| t.masked_softmax(v[0], &valid, 2)),
        },
        OpCase {
            name: "layer_norm",
            inputs: vec![u(&[2, 3, 5]), u(&[5]), u(&[5])],
            f: Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)),
        },
        OpCase {
            name: "concat",
            inputs: vec![u(&[2, 3]), u(&[2, 1]), u(&[2, 2])],
            f: Box::new(|t, v| t.concat(v, 1)),
        },
        OpCase {
            name: "reshape",
            inputs: vec![u(&[2, 6])],
            f: Box::new(|t, v| t.reshape(v[0], [3, 4])),
        },
        OpCase {
            name: "split_heads",
            inputs: vec![u(&[2, 3, 4])],
            f: Box::new(|t, v| t.split_heads(v[0], 2)),
        },
        OpCase {
            name: "merge_heads",
            inputs: vec![u(&[4, 3, 2])],
            f: Box::new(|t, v| t.merge_heads(v[0], 2)),
        },
        OpCase {
            name: "gather_positions",
            inputs: vec![u(&[3, 4, 2])],
            f: Box::new(|t, v| t.gather_positions(v[0], &[3, 0, 2])),
        },
        OpCase {
            name: "sum",
            inputs: vec![u(&[3, 2])],
            f: Box::new(|t, v| t.sum(v[0])),
        },
        OpCase {
            name: "mean_axis",
            inputs: vec![u(&[2, 3, 4])],
            f: Box::new(|t, v| t.mean_axis(v[0], 1)),
        },
        OpCase {
            name: "cross_entropy",
            inputs: vec![u(&[4, 3])],
            f: Box::new(|t, v| t.cross_entropy(v[0], &[0, 2, 1, 2])),
        },
        OpCase {
            name: "dropout",
            inputs: vec![u(&[4, 5])],
            f: Box::new(move |t, v| t.dropout(v[0], 0.3, &mut rng(seed))),
        },
    ];
    cases.push(OpCase {
        name: "relu",
        inputs: vec![away_from_zero(&[3, 4], &mut rng(seed ^ 0x7e1))],
        f: Box::new(|t, v| t.relu(v[0])),
    });
    cases
}

/// Worst relative error per op over `seeds`, in suite order.
pub fn op_gradient_suite(seeds: std::ops::Range<u64>) -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in seeds {
        for (i, case) in cases(seed).into_iter().enumerate() {
            let OpCase { name, inputs, f } = case;
            let report = finite_difference_check(
                |t: &mut Tape<f64>, v: &[Var]| {
                    let y = f(t, v)?;
                    weighted_sum(t, y, seed + i as u64)
                },
                &inputs,
                GRAD_H,
                OP_TOL,
            )
            .unwrap_or_else(|e| panic!("{name}: {e}"));
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some((_, w)) => *w = w.max(report.max_rel_error),
                None => worst.push((name, report.max_rel_error)),
            }
        }
    }
    worst
}

pub fn tiny_dims() -> [ModalityDims; 3] {
    [
        ModalityDims::new(4, 3),
        ModalityDims::new(3, 5),
        ModalityDims::new(4, 4),
    ]
}

pub fn tiny_dataset(n: usize, coupling: Coupling, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n_samples: n,
        dims: tiny_dims(),
        coupling,
        noise_std: 0.3,
        seed,
    })
    .unwrap()
}

/// d=8, h=2, two layers, no dropout.
pub fn tiny_config() -> ModelConfig {
    let encoder = EncoderConfig {
        model_dim: 8,
        num_heads: 2,
        ff_dim: 12,
        num_layers: 2,
        max_seq_len: 6,
        dropout_rate: 0.0,
    };
    ModelConfig::new(encoder, tiny_dims().map(|d| d.feat_dim))
}

pub fn first_batch<S: mmsa::Scalar>(dataset: &Dataset, b: usize) -> Batch<S> {
    make_batches(&dataset.samples[..b], b, None)
        .unwrap()
        .remove(0)
}

/// Finite-difference check of a whole model's loss with respect to every
/// parameter, on the first `b` samples of a JOINT dataset.
pub fn model_loss_gradient_error(approach: Approach, b: usize, seed: u64) -> f64 {
    let model = FusionModel::<f64>::new(tiny_config(), approach, seed).unwrap();
    let data = tiny_dataset(12, Coupling::Joint, seed);
    let batch: Batch<f64> = first_batch(&data, b);
    let report = finite_difference_check(
        |tape: &mut Tape<f64>, params: &[Var]| {
            let out = model.forward(tape, params, &batch, &mut ForwardCtx::eval())?;
            model.loss(tape, &out, &batch.labels)
        },
        model.store.tensors(),
        GRAD_H,
        MODEL_TOL,
    )
    .unwrap();
    report.max_rel_error
}
