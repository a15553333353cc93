//! Synthetic aligned multimodal data.
//!
//! Every modality carries a latent digit `c_m ∈ {0, 1, 2}`, written into each
//! valid frame as one of three fixed ±1 patterns plus Gaussian noise.
//!
//! * `Independent`: `c_m = label` for every modality, so each modality alone
//!   determines the class.
//! * `Joint`: `label = (c_v + c_a + c_t) mod 3`. Samples cycle through all 27
//!   digit triples, so each class is equally frequent and every single digit,
//!   and every pair of digits, is independent of the label. Only the three
//!   modalities together determine it.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Features, Modality, ModalityDims, MultimodalSample, Sentiment};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};

const PATTERN_STREAM: u64 = 0x9a77;
const SAMPLE_STREAM: u64 = 0x5a3d;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    Independent,
    Joint,
}

impl FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Coupling::Independent),
            "joint" => Ok(Coupling::Joint),
            _ => Err(Error::config(format!("unknown coupling {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    /// video, audio, text
    pub dims: [ModalityDims; 3],
    pub coupling: Coupling,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 300,
            dims: [
                ModalityDims::new(20, 35),
                ModalityDims::new(20, 74),
                ModalityDims::new(50, 300),
            ],
            coupling: Coupling::Joint,
            noise_std: 0.3,
            seed: 0,
        }
    }
}

/// Class of a JOINT-mode digit triple.
pub fn joint_label(digits: [usize; 3]) -> usize {
    digits.iter().sum::<usize>() % 3
}

/// Per-class sample counts.
pub fn class_counts(samples: &[MultimodalSample]) -> [usize; 3] {
    let mut counts = [0; 3];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    counts
}

fn patterns(feat_dim: usize, rng: &mut Rng) -> [Vec<f32>; 3] {
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(3);
    while out.len() < 3 {
        let p: Vec<f32> = (0..feat_dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out.try_into().expect("three patterns")
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    generate_synthetic_with_latents(cfg).map(|(d, _)| d)
}

/// Also returns each sample's latent digits (video, audio, text).
pub fn generate_synthetic_with_latents(
    cfg: &SyntheticConfig,
) -> Result<(Dataset, Vec<[usize; 3]>)> {
    for (m, d) in Modality::ALL.iter().zip(&cfg.dims) {
        if d.seq_len == 0 || d.feat_dim < 2 {
            return Err(Error::config(format!(
                "{m}: need seq_len >= 1 and feat_dim >= 2, got {d:?}"
            )));
        }
    }
    if !(cfg.noise_std >= 0.0) || !cfg.noise_std.is_finite() {
        return Err(Error::config(format!(
            "noise_std {} must be >= 0",
            cfg.noise_std
        )));
    }
    let mut pattern_rng = rng_for(cfg.seed, PATTERN_STREAM);
    let table: Vec<[Vec<f32>; 3]> = cfg
        .dims
        .iter()
        .map(|d| patterns(d.feat_dim, &mut pattern_rng))
        .collect();
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated std");

    let mut rng = rng_for(cfg.seed, SAMPLE_STREAM);
    let mut generated = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let label = i % 3;
        let digits = match cfg.coupling {
            Coupling::Independent => [label; 3],
            Coupling::Joint => {
                let pair = (i / 3) % 9;
                let (v, a) = (pair % 3, pair / 3);
                [v, a, (label + 6 - v - a) % 3]
            }
        };
        let mut valid_lens = [0; 3];
        let features: Vec<Features> = (0..3)
            .map(|m| {
                let d = cfg.dims[m];
                let len = rng.random_range(d.seq_len.div_ceil(2)..=d.seq_len);
                valid_lens[m] = len;
                let pattern = &table[m][digits[m]];
                let mut data = vec![0.0f32; d.numel()];
                for row in data.chunks_mut(d.feat_dim).take(len) {
                    for (x, &p) in row.iter_mut().zip(pattern) {
                        *x = p + noise.sample(&mut rng) as f32;
                    }
                }
                Features::new(d, data)
            })
            .collect::<Result<_>>()?;
        let score = Sentiment::from_index(label)?.representative_score();
        let sample = MultimodalSample::new(
            features.try_into().expect("three modalities"),
            valid_lens,
            score,
        )?;
        generated.push((sample, digits));
    }
    generated.shuffle(&mut rng);
    let (samples, latents) = generated.into_iter().unzip();
    Ok((Dataset::new(cfg.dims, samples)?, latents))
}
