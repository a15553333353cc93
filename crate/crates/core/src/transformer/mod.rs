//! Per-modality transformer pipeline: input projection, sinusoidal positional
//! encoding, a pre-norm encoder stack and a 3-way classifier head.

mod attention;
mod layers;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::seed::Rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::NUM_CLASSES;

pub use attention::{AttentionOutput, MultiHeadAttention};
pub use layers::{EncoderLayer, LayerNorm, Linear};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub num_layers: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            num_heads: 4,
            ff_dim: 128,
            num_layers: 2,
            max_seq_len: 64,
            dropout_rate: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.model_dim % 2 != 0 {
            return Err(Error::config(format!(
                "model_dim must be positive and even, got {}",
                self.model_dim
            )));
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "num_heads {} must divide model_dim {}",
                self.num_heads, self.model_dim
            )));
        }
        if self.ff_dim == 0 || self.num_layers == 0 || self.max_seq_len == 0 {
            return Err(Error::config(
                "ff_dim, num_layers and max_seq_len must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Per-position validity flags for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    valid: Vec<bool>,
}

impl AttentionMask {
    pub fn new(valid: Vec<bool>) -> Result<Self> {
        if !valid.iter().any(|&v| v) {
            return Err(Error::contract("attention mask with no valid position"));
        }
        Ok(Self { valid })
    }

    /// First `valid_len` of `seq_len` positions valid.
    pub fn prefix(valid_len: usize, seq_len: usize) -> Result<Self> {
        if valid_len == 0 || valid_len > seq_len {
            return Err(Error::contract(format!(
                "valid length {valid_len} outside 1..={seq_len}"
            )));
        }
        Ok(Self {
            valid: (0..seq_len).map(|i| i < valid_len).collect(),
        })
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn last_valid(&self) -> usize {
        self.valid
            .iter()
            .rposition(|&v| v)
            .expect("mask has a valid position")
    }
}

/// Forward-pass mode. Dropout is active only when an RNG is supplied.
pub struct ForwardCtx<'a> {
    rng: Option<&'a mut Rng>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(rng: &'a mut Rng) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn dropout<S: Scalar>(&mut self, tape: &mut Tape<S>, x: Var, rate: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => tape.dropout(x, rate, rng),
            _ => Ok(x),
        }
    }
}

/// Sinusoidal table: `(pos, 2i) = sin(pos / 10000^(2i/d))`, `(pos, 2i+1) = cos(…)`.
pub fn positional_encoding<S: Scalar>(seq_len: usize, d: usize) -> Result<Tensor<S>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::config(format!(
            "positional encoding needs an even dimension, got {d}"
        )));
    }
    if seq_len == 0 {
        return Err(Error::config("positional encoding needs seq_len >= 1"));
    }
    let mut data = Vec::with_capacity(seq_len * d);
    for pos in 0..seq_len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d as f64);
            data.push(S::from_f64_lossy(angle.sin()));
            data.push(S::from_f64_lossy(angle.cos()));
        }
    }
    Tensor::new([seq_len, d], data)
}

pub fn uniform_init<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Pooled summary and class logits of one modality.
#[derive(Clone, Copy, Debug)]
pub struct ModalityOutput {
    /// `[b×d]` hidden state at each sample's last valid position
    pub pooled: Var,
    /// `[b×3]`
    pub logits: Var,
}

/// Parameter layout of one modality pipeline.
#[derive(Clone, Debug)]
pub struct ModalityEncoder {
    pub input_dim: usize,
    pub config: EncoderConfig,
    pub projection: Linear,
    pub layers: Vec<EncoderLayer>,
    pub classifier: Linear,
}

impl ModalityEncoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input_dim: usize,
        config: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::config(format!(
                "{prefix}: input_dim must be positive"
            )));
        }
        let d = config.model_dim;
        let projection = Linear::new(store, &format!("{prefix}.projection"), input_dim, d, rng);
        let layers = (0..config.num_layers)
            .map(|i| EncoderLayer::new(store, &format!("{prefix}.layer{i}"), config, rng))
            .collect();
        let classifier = Linear::new(store, &format!("{prefix}.classifier"), d, NUM_CLASSES, rng);
        Ok(Self {
            input_dim,
            config: config.clone(),
            projection,
            layers,
            classifier,
        })
    }

    /// Every parameter id owned by this encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.projection.param_ids();
        for layer in &self.layers {
            ids.extend(layer.param_ids());
        }
        ids.extend(self.classifier.param_ids());
        ids
    }

    /// Runs the encoder stack on `x: [b×s×d]` (already projected and position-encoded).
    pub fn encode_stack<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        mut x: Var,
        masks: &[AttentionMask],
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let key_valid: Vec<Vec<bool>> = masks.iter().map(|m| m.valid().to_vec()).collect();
        for layer in &self.layers {
            x = layer.forward(tape, params, x, &key_valid, self.config.dropout_rate, ctx)?;
        }
        Ok(x)
    }

    /// project → add positional encoding → encoder stack → pool last valid position → classify.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        features: Var,
        masks: &[AttentionMask],
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ModalityOutput> {
        let shape = tape.shape(features).to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim {
            return Err(Error::Dimension {
                op: "modality_forward",
                lhs: shape,
                rhs: vec![self.input_dim],
            });
        }
        let (b, s) = (shape[0], shape[1]);
        if s > self.config.max_seq_len {
            return Err(Error::config(format!(
                "sequence length {s} exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        if masks.len() != b || masks.iter().any(|m| m.len() != s) {
            return Err(Error::contract(format!("expected {b} masks of length {s}")));
        }
        let projected = self.projection.forward(tape, params, features)?;
        let pe = tape.constant(positional_encoding(s, self.config.model_dim)?);
        let x = tape.add_broadcast(projected, pe)?;
        let x = ctx.dropout(tape, x, self.config.dropout_rate)?;
        let hidden = self.encode_stack(tape, params, x, masks, ctx)?;
        let positions: Vec<usize> = masks.iter().map(AttentionMask::last_valid).collect();
        let pooled = tape.gather_positions(hidden, &positions)?;
        let logits = self.classifier.forward(tape, params, pooled)?;
        Ok(ModalityOutput { pooled, logits })
    }
}
