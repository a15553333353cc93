use rand::seq::SliceRandom;

use super::{Modality, MultimodalSample};
use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::transformer::AttentionMask;

/// Padded features of a group of samples. Each modality is padded to the
/// longest valid length in the batch; padding rows are zero and masked.
#[derive(Clone, Debug)]
pub struct Batch<S: Scalar = f32> {
    /// `[b × s_m × d_m]` per modality, video, audio, text
    pub features: [Tensor<S>; 3],
    pub masks: [Vec<AttentionMask>; 3],
    pub labels: Vec<usize>,
    /// positions of these samples in the input slice
    pub indices: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_samples(samples: &[&MultimodalSample], indices: Vec<usize>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::contract("empty batch"))?;
        let dims = first.dims();
        let b = samples.len();
        let mut features = Vec::with_capacity(3);
        let mut masks = Vec::with_capacity(3);
        for m in Modality::ALL {
            let feat_dim = dims[m.index()].feat_dim;
            let max_len = samples
                .iter()
                .map(|s| s.valid_lens[m.index()])
                .max()
                .unwrap();
            let mut data = vec![S::zero(); b * max_len * feat_dim];
            let mut mask = Vec::with_capacity(b);
            for (i, s) in samples.iter().enumerate() {
                if s.dims() != dims {
                    return Err(Error::data(format!(
                        "sample {} has dims {:?}, batch has {dims:?}",
                        indices[i],
                        s.dims()
                    )));
                }
                let len = s.valid_lens[m.index()];
                let src = &s.features[m.index()].data[..len * feat_dim];
                let dst = i * max_len * feat_dim;
                for (d, &v) in data[dst..dst + len * feat_dim].iter_mut().zip(src) {
                    *d = S::from_f32(v).unwrap();
                }
                mask.push(AttentionMask::prefix(len, max_len)?);
            }
            features.push(Tensor::new([b, max_len, feat_dim], data)?);
            masks.push(mask);
        }
        Ok(Self {
            features: features.try_into().expect("three modalities"),
            masks: masks.try_into().expect("three modalities"),
            labels: samples.iter().map(|s| s.label.index()).collect(),
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Groups samples into padded batches, shuffling first when `rng` is given.
/// The final partial batch is kept.
pub fn make_batches<S: Scalar>(
    samples: &[MultimodalSample],
    batch_size: usize,
    rng: Option<&mut Rng>,
) -> Result<Vec<Batch<S>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let group: Vec<&MultimodalSample> = chunk.iter().map(|&i| &samples[i]).collect();
            Batch::from_samples(&group, chunk.to_vec())
        })
        .collect()
}
