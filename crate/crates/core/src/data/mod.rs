//! Samples, sentiment discretization, the dataset file format, splits,
//! batching and the synthetic generator.

mod batch;
mod format;
mod split;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use batch::{make_batches, Batch};
pub use format::{
    decode_dataset, encode_dataset, load_dataset, load_dataset_with, record_len, write_dataset,
    LoadOptions, FORMAT_VERSION, HEADER_LEN, MAGIC,
};
pub use split::{split_dataset, Split, DEFAULT_SPLIT};
pub use synthetic::{
    class_counts, generate_synthetic, generate_synthetic_with_latents, joint_label, Coupling,
    SyntheticConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Video,
    Audio,
    Text,
}

impl Modality {
    /// Fixed order used everywhere: video, audio, text.
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Audio, Modality::Text];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown modality {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sentiment {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Sentiment::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::data(format!("class index {i} out of range")))
    }

    /// Score placed at the middle of the class interval.
    pub fn representative_score(self) -> f32 {
        match self {
            Sentiment::Negative => -2.0,
            Sentiment::Neutral => 0.0,
            Sentiment::Positive => 2.0,
        }
    }
}

/// `[-3, -1)` negative, `[-1, 1]` neutral, `(1, 3]` positive.
pub fn discretize_sentiment(score: f64) -> Result<Sentiment> {
    if !(-3.0..=3.0).contains(&score) {
        return Err(Error::data(format!(
            "sentiment score {score} outside [-3, 3]"
        )));
    }
    Ok(if score < -1.0 {
        Sentiment::Negative
    } else if score <= 1.0 {
        Sentiment::Neutral
    } else {
        Sentiment::Positive
    })
}

/// Declared extents of one modality's feature block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModalityDims {
    pub seq_len: usize,
    pub feat_dim: usize,
}

impl ModalityDims {
    pub const fn new(seq_len: usize, feat_dim: usize) -> Self {
        Self { seq_len, feat_dim }
    }

    pub fn numel(&self) -> usize {
        self.seq_len * self.feat_dim
    }
}

/// Row-major `seq_len × feat_dim` block of 32-bit features.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub dims: ModalityDims,
    pub data: Vec<f32>,
}

impl Features {
    pub fn new(dims: ModalityDims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.numel() {
            return Err(Error::Dimension {
                op: "Features::new",
                lhs: vec![dims.seq_len, dims.feat_dim],
                rhs: vec![data.len()],
            });
        }
        Ok(Self { dims, data })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dims.feat_dim..(t + 1) * self.dims.feat_dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    /// video, audio, text
    pub features: [Features; 3],
    pub valid_lens: [usize; 3],
    pub score: f32,
    pub label: Sentiment,
}

impl MultimodalSample {
    /// Validates lengths and finiteness and derives the label from `score`.
    pub fn new(features: [Features; 3], valid_lens: [usize; 3], score: f32) -> Result<Self> {
        let label = discretize_sentiment(score as f64)?;
        let sample = Self {
            features,
            valid_lens,
            score,
            label,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        for m in Modality::ALL {
            let f = &self.features[m.index()];
            let len = self.valid_lens[m.index()];
            if len == 0 || len > f.dims.seq_len {
                return Err(Error::data(format!(
                    "{m} valid length {len} outside 1..={}",
                    f.dims.seq_len
                )));
            }
            if f.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "{m} features contain a non-finite value"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> [ModalityDims; 3] {
        [
            self.features[0].dims,
            self.features[1].dims,
            self.features[2].dims,
        ]
    }

    pub fn modality(&self, m: Modality) -> &Features {
        &self.features[m.index()]
    }
}

/// Samples plus the per-modality extents shared by all of them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: [ModalityDims; 3],
    pub samples: Vec<MultimodalSample>,
}

impl Dataset {
    pub fn new(dims: [ModalityDims; 3], samples: Vec<MultimodalSample>) -> Result<Self> {
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.dims() != dims) {
            return Err(Error::contract(format!(
                "sample {i} has dims {:?}, dataset declares {dims:?}",
                s.dims()
            )));
        }
        Ok(Self { dims, samples })
    }

    /// Infers dims from the first sample.
    pub fn from_samples(samples: Vec<MultimodalSample>) -> Result<Self> {
        let dims = samples
            .first()
            .map(MultimodalSample::dims)
            .unwrap_or([ModalityDims::new(0, 0); 3]);
        Self::new(dims, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.index()).collect()
    }
}
