use rand::seq::SliceRandom;

use super::MultimodalSample;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// train / validation / test
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.15, 0.15);

const SPLIT_STREAM: u64 = 0x5b11;

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<MultimodalSample>,
    pub val: Vec<MultimodalSample>,
    pub test: Vec<MultimodalSample>,
}

/// Seeded shuffle, then contiguous train/val/test cuts. Validation and test
/// sizes are `floor(n·ratio)`; the remainder goes to train.
pub fn split_dataset(
    samples: Vec<MultimodalSample>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Split> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|&r| !(r > 0.0)) {
        return Err(Error::config(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios must sum to 1, got {ratios:?}"
        )));
    }
    let n = samples.len();
    if n < 3 {
        return Err(Error::data(format!("cannot split {n} samples three ways")));
    }
    let n_val = (n as f64 * r_val).floor() as usize;
    let n_test = (n as f64 * r_test).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, SPLIT_STREAM));
    let mut slots: Vec<Option<MultimodalSample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<MultimodalSample> {
        idx.iter()
            .map(|&i| slots[i].take().expect("each index once"))
            .collect()
    };
    let n_train = n - n_val - n_test;
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(Split { train, val, test })
}
