use super::Linear;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::seed::Rng;
use crate::tensor::{Scalar, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// `[b×s×d]`
    pub output: Var,
    /// `[(b·h)×s×s]` softmax weights; masked key columns are exactly zero
    pub weights: Var,
}

/// Scaled dot-product self-attention with `heads` heads and an output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            heads,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| l.param_ids())
            .collect()
    }

    /// `key_valid[i]` flags the attendable positions of sample `i`.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
        key_valid: &[Vec<bool>],
    ) -> Result<AttentionOutput> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] % self.heads != 0 {
            return Err(Error::Dimension {
                op: "multi_head_attention",
                lhs: shape,
                rhs: vec![self.heads],
            });
        }
        let head_dim = shape[2] / self.heads;

        let q = self.query.forward(tape, params, x)?;
        let k = self.key.forward(tape, params, x)?;
        let v = self.value.forward(tape, params, x)?;
        let q = tape.split_heads(q, self.heads)?;
        let k = tape.split_heads(k, self.heads)?;
        let v = tape.split_heads(v, self.heads)?;

        let scores = tape.batch_matmul(q, k, true)?;
        let scores = tape.scale(scores, S::from_f64_lossy(1.0 / (head_dim as f64).sqrt()))?;
        let weights = tape.masked_softmax(scores, key_valid, self.heads)?;
        let context = tape.batch_matmul(weights, v, false)?;
        let merged = tape.merge_heads(context, self.heads)?;
        let output = self.output.forward(tape, params, merged)?;
        Ok(AttentionOutput { output, weights })
    }
}
