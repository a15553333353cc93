use super::{uniform_init, EncoderConfig, ForwardCtx, MultiHeadAttention, LAYER_NORM_EPS};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::seed::Rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Affine map over the last axis: `x · W + b`, `W: [in×out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[in_dim, out_dim], in_dim, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let rows = shape[..shape.len().saturating_sub(1)]
            .iter()
            .product::<usize>();
        let flat = if shape.len() == 2 {
            x
        } else {
            tape.reshape(x, [rows, shape.last().copied().unwrap_or(1)])?
        };
        let y = tape.matmul(flat, params[self.weight.index()])?;
        let y = tape.add_broadcast(y, params[self.bias.index()])?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        tape.reshape(y, out_shape)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones([dim])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([dim])),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<Var> {
        tape.layer_norm(
            x,
            params[self.gain.index()],
            params[self.bias.index()],
            LAYER_NORM_EPS,
        )
    }
}

/// Pre-norm block: `x + MHA(LN(x))`, then `+ FF(LN(·))` with `FF = W₂·relu(W₁·)`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention_norm: LayerNorm,
    pub attention: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl EncoderLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        config: &EncoderConfig,
        rng: &mut Rng,
    ) -> Self {
        let d = config.model_dim;
        Self {
            attention_norm: LayerNorm::new(store, &format!("{name}.attention_norm"), d),
            attention: MultiHeadAttention::new(
                store,
                &format!("{name}.attention"),
                d,
                config.num_heads,
                rng,
            ),
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), d),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), d, config.ff_dim, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), config.ff_dim, d, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.attention_norm.param_ids();
        ids.extend(self.attention.param_ids());
        ids.extend(self.ff_norm.param_ids());
        ids.extend(self.ff_in.param_ids());
        ids.extend(self.ff_out.param_ids());
        ids
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
        key_valid: &[Vec<bool>],
        dropout: f64,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let normed = self.attention_norm.forward(tape, params, x)?;
        let attended = self
            .attention
            .forward(tape, params, normed, key_valid)?
            .output;
        let attended = ctx.dropout(tape, attended, dropout)?;
        let x = tape.add(x, attended)?;

        let normed = self.ff_norm.forward(tape, params, x)?;
        let hidden = self.ff_in.forward(tape, params, normed)?;
        let hidden = tape.relu(hidden)?;
        let ff = self.ff_out.forward(tape, params, hidden)?;
        let ff = ctx.dropout(tape, ff, dropout)?;
        tape.add(x, ff)
    }
}
