//! Model heads over the modality encoders: unimodal classification and the
//! three fusion strategies (majority vote, concatenation, attention).

mod checkpoint;
mod vote;

use std::fmt;
use std::str::FromStr;

use crate::data::{Batch, Modality};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::params::{ParamId, ParamStore};
use crate::seed::{rng_for, Rng};
use crate::tensor::{Scalar, Tape, Var};
use crate::transformer::{
    uniform_init, EncoderConfig, ForwardCtx, LayerNorm, Linear, ModalityEncoder, ModalityOutput,
    MultiHeadAttention,
};
use crate::NUM_CLASSES;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use vote::{late_fusion_predict, MASS_TIE_TOLERANCE};

const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    LateVote,
    EarlyConcat,
    Attention,
}

/// What a model predicts from: one modality, or a fusion of all three.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Approach {
    Unimodal(Modality),
    Fusion(FusionMode),
}

impl Approach {
    /// Reporting order: video, audio, text, a0, a1, a2.
    pub const ALL: [Approach; 6] = [
        Approach::Unimodal(Modality::Video),
        Approach::Unimodal(Modality::Audio),
        Approach::Unimodal(Modality::Text),
        Approach::Fusion(FusionMode::LateVote),
        Approach::Fusion(FusionMode::EarlyConcat),
        Approach::Fusion(FusionMode::Attention),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Unimodal(m) => m.name(),
            Approach::Fusion(FusionMode::LateVote) => "a0",
            Approach::Fusion(FusionMode::EarlyConcat) => "a1",
            Approach::Fusion(FusionMode::Attention) => "a2",
        }
    }

    pub fn modalities(self) -> Vec<Modality> {
        match self {
            Approach::Unimodal(m) => vec![m],
            Approach::Fusion(_) => Modality::ALL.to_vec(),
        }
    }

    pub(crate) fn tag(self) -> u64 {
        Approach::ALL.iter().position(|&a| a == self).unwrap() as u64
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown approach {s:?}")))
    }
}

/// Architecture hyperparameters shared by every encoder of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// feature width per modality: video, audio, text
    pub input_dims: [usize; 3],
    /// hidden width of the fusion classifiers
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, input_dims: [usize; 3]) -> Self {
        let head_hidden = encoder.model_dim;
        Self {
            encoder,
            input_dims,
            head_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.input_dims.contains(&0) || self.head_hidden == 0 {
            return Err(Error::config("input dims and head_hidden must be positive"));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 10] = [
        "dropout_rate",
        "ff_dim",
        "head_hidden",
        "input_dim_audio",
        "input_dim_text",
        "input_dim_video",
        "max_seq_len",
        "model_dim",
        "num_heads",
        "num_layers",
    ];

    pub fn to_kv(&self, kv: &mut KeyValues) {
        let e = &self.encoder;
        kv.set("model_dim", e.model_dim);
        kv.set("num_heads", e.num_heads);
        kv.set("ff_dim", e.ff_dim);
        kv.set("num_layers", e.num_layers);
        kv.set("max_seq_len", e.max_seq_len);
        kv.set("dropout_rate", e.dropout_rate);
        kv.set("head_hidden", self.head_hidden);
        for m in Modality::ALL {
            kv.set(&format!("input_dim_{m}"), self.input_dims[m.index()]);
        }
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let encoder = EncoderConfig {
            model_dim: kv.require("model_dim")?,
            num_heads: kv.require("num_heads")?,
            ff_dim: kv.require("ff_dim")?,
            num_layers: kv.require("num_layers")?,
            max_seq_len: kv.require("max_seq_len")?,
            dropout_rate: kv.require("dropout_rate")?,
        };
        let mut input_dims = [0; 3];
        for m in Modality::ALL {
            input_dims[m.index()] = kv.require(&format!("input_dim_{m}"))?;
        }
        let config = Self {
            encoder,
            input_dims,
            head_hidden: kv.require("head_hidden")?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// `Linear → ReLU → Linear(→3)`.
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl MlpHead {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), in_dim, hidden, rng),
            output: Linear::new(store, &format!("{name}.output"), hidden, NUM_CLASSES, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.hidden.param_ids();
        ids.extend(self.output.param_ids());
        ids
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, params, x)?;
        let h = tape.relu(h)?;
        self.output.forward(tape, params, h)
    }
}

/// One pre-norm self-attention block over the three pooled modality vectors,
/// which are tagged with learned modality embeddings, then averaged.
#[derive(Clone, Debug)]
pub struct AttentionFusion {
    /// `[3×d]`, one row per modality
    pub embeddings: ParamId,
    pub norm: LayerNorm,
    pub attention: MultiHeadAttention,
    pub classifier: MlpHead,
}

impl AttentionFusion {
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embeddings];
        ids.extend(self.norm.param_ids());
        ids.extend(self.attention.param_ids());
        ids.extend(self.classifier.param_ids());
        ids
    }
}

#[derive(Clone, Debug)]
pub enum FusionHead {
    /// unimodal models and majority vote
    None,
    Early(MlpHead),
    Attention(AttentionFusion),
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Class logits `[b×3]`; `None` for majority vote, which has no fused logits.
    pub logits: Option<Var>,
    pub modalities: Vec<(Modality, ModalityOutput)>,
    /// attention-fusion weights `[(b·h)×3×3]`
    pub attention_weights: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct FusionModel<S: Scalar = f32> {
    pub config: ModelConfig,
    pub approach: Approach,
    pub store: ParamStore<S>,
    pub encoders: Vec<(Modality, ModalityEncoder)>,
    pub head: FusionHead,
}

impl<S: Scalar> FusionModel<S> {
    /// Fresh model. Initialization is drawn from a stream derived from
    /// `seed` and the approach, so different approaches start independently.
    pub fn new(config: ModelConfig, approach: Approach, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, INIT_STREAM + approach.tag());
        let mut store = ParamStore::new();
        let encoders = approach
            .modalities()
            .into_iter()
            .map(|m| {
                let enc = ModalityEncoder::new(
                    &mut store,
                    m.name(),
                    config.input_dims[m.index()],
                    &config.encoder,
                    &mut rng,
                )?;
                Ok((m, enc))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = config.encoder.model_dim;
        let head = match approach {
            Approach::Unimodal(_) | Approach::Fusion(FusionMode::LateVote) => FusionHead::None,
            Approach::Fusion(FusionMode::EarlyConcat) => FusionHead::Early(MlpHead::new(
                &mut store,
                "fusion.early",
                3 * d,
                config.head_hidden,
                &mut rng,
            )),
            Approach::Fusion(FusionMode::Attention) => {
                let embeddings = store.add(
                    "fusion.attention.modality_embeddings",
                    uniform_init(&[3, d], d, &mut rng),
                );
                FusionHead::Attention(AttentionFusion {
                    embeddings,
                    norm: LayerNorm::new(&mut store, "fusion.attention.norm", d),
                    attention: MultiHeadAttention::new(
                        &mut store,
                        "fusion.attention.block",
                        d,
                        config.encoder.num_heads,
                        &mut rng,
                    ),
                    classifier: MlpHead::new(
                        &mut store,
                        "fusion.attention.classifier",
                        d,
                        config.head_hidden,
                        &mut rng,
                    ),
                })
            }
        };
        Ok(Self {
            config,
            approach,
            store,
            encoders,
            head,
        })
    }

    /// Majority-vote model assembled from three trained unimodal models.
    pub fn late_vote(video: &Self, audio: &Self, text: &Self) -> Result<Self> {
        let config = video.config.clone();
        for (m, model) in Modality::ALL.iter().zip([video, audio, text]) {
            if model.approach != Approach::Unimodal(*m) {
                return Err(Error::contract(format!(
                    "late vote needs a {m} model in {m} position, got {}",
                    model.approach
                )));
            }
            if model.config != config {
                return Err(Error::contract("late vote models disagree on config"));
            }
        }
        let mut model = Self::new(config, Approach::Fusion(FusionMode::LateVote), 0)?;
        for source in [video, audio, text] {
            model.copy_params_from(source, "")?;
        }
        Ok(model)
    }

    /// Copies every parameter of `source` whose name starts with `prefix`
    /// into the same-named parameter here. Returns how many were copied.
    pub fn copy_params_from(&mut self, source: &Self, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, tensor) in source.store.iter() {
            if !name.starts_with(prefix) {
                continue;
            }
            if let Some(id) = self.store.find(name) {
                self.store.assign(id, tensor)?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Initializes this model's encoder for the modality of `pretrained`, a
    /// unimodal model, from its weights. Returns how many tensors were copied.
    pub fn warm_start_from(&mut self, pretrained: &Self) -> Result<usize> {
        let Approach::Unimodal(m) = pretrained.approach else {
            return Err(Error::contract(format!(
                "warm start needs a unimodal model, got {}",
                pretrained.approach
            )));
        };
        if pretrained.config.encoder != self.config.encoder
            || pretrained.config.input_dims[m.index()] != self.config.input_dims[m.index()]
        {
            return Err(Error::config(format!(
                "pretrained {m} model has a different encoder configuration"
            )));
        }
        self.copy_params_from(pretrained, &format!("{m}."))
    }

    pub fn mode(&self) -> Option<FusionMode> {
        match self.approach {
            Approach::Fusion(mode) => Some(mode),
            Approach::Unimodal(_) => None,
        }
    }

    pub fn encoder(&self, m: Modality) -> Option<&ModalityEncoder> {
        self.encoders
            .iter()
            .find(|(em, _)| *em == m)
            .map(|(_, e)| e)
    }

    fn encode_all(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        batch: &Batch<S>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Vec<(Modality, ModalityOutput)>> {
        self.encoders
            .iter()
            .map(|(m, enc)| {
                let x = tape.constant(batch.features[m.index()].clone());
                let out = enc.forward(tape, params, x, &batch.masks[m.index()], ctx)?;
                Ok((*m, out))
            })
            .collect()
    }

    fn require_mode(&self, mode: FusionMode) -> Result<()> {
        if self.mode() != Some(mode) {
            return Err(Error::contract(format!(
                "{mode:?} forward called on a {} model",
                self.approach
            )));
        }
        Ok(())
    }

    /// Concatenates pooled video, audio and text states and classifies them.
    pub fn early_fusion_forward(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        batch: &Batch<S>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        self.require_mode(FusionMode::EarlyConcat)?;
        let encoded = self.encode_all(tape, params, batch, ctx)?;
        self.early_head(tape, params, &encoded)
    }

    fn early_head(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        encoded: &[(Modality, ModalityOutput)],
    ) -> Result<Var> {
        let FusionHead::Early(head) = &self.head else {
            return Err(Error::contract("model has no early-fusion head"));
        };
        let pooled: Vec<Var> = encoded.iter().map(|(_, o)| o.pooled).collect();
        let joined = tape.concat(&pooled, 1)?;
        head.forward(tape, params, joined)
    }

    /// Attention over the three modality tokens; returns (logits, attention weights).
    pub fn attention_fusion_forward(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        batch: &Batch<S>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Var, Var)> {
        self.require_mode(FusionMode::Attention)?;
        let encoded = self.encode_all(tape, params, batch, ctx)?;
        self.attention_head(tape, params, &encoded)
    }

    fn attention_head(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        encoded: &[(Modality, ModalityOutput)],
    ) -> Result<(Var, Var)> {
        let FusionHead::Attention(head) = &self.head else {
            return Err(Error::contract("model has no attention-fusion head"));
        };
        let b = tape.shape(encoded[0].1.pooled)[0];
        let d = self.config.encoder.model_dim;
        let tokens: Vec<Var> = encoded
            .iter()
            .map(|(_, o)| tape.reshape(o.pooled, [b, 1, d]))
            .collect::<Result<_>>()?;
        let tokens = tape.concat(&tokens, 1)?;
        let tokens = tape.add_broadcast(tokens, params[head.embeddings.index()])?;
        let normed = head.norm.forward(tape, params, tokens)?;
        let all_valid = vec![vec![true; 3]; b];
        let attended = head.attention.forward(tape, params, normed, &all_valid)?;
        let mixed = tape.add(tokens, attended.output)?;
        let mean = tape.mean_axis(mixed, 1)?;
        let logits = head.classifier.forward(tape, params, mean)?;
        Ok((logits, attended.weights))
    }

    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        batch: &Batch<S>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ModelOutput> {
        let modalities = self.encode_all(tape, params, batch, ctx)?;
        let (logits, attention_weights) = match self.approach {
            Approach::Unimodal(_) => (Some(modalities[0].1.logits), None),
            Approach::Fusion(FusionMode::LateVote) => (None, None),
            Approach::Fusion(FusionMode::EarlyConcat) => {
                (Some(self.early_head(tape, params, &modalities)?), None)
            }
            Approach::Fusion(FusionMode::Attention) => {
                let (l, w) = self.attention_head(tape, params, &modalities)?;
                (Some(l), Some(w))
            }
        };
        Ok(ModelOutput {
            logits,
            modalities,
            attention_weights,
        })
    }

    /// Training objective: cross-entropy of the model's logits. Majority vote
    /// has none, so its loss is the mean of the three unimodal cross-entropies.
    pub fn loss(&self, tape: &mut Tape<S>, output: &ModelOutput, labels: &[usize]) -> Result<Var> {
        match output.logits {
            Some(logits) => tape.cross_entropy(logits, labels),
            None => {
                let losses = output
                    .modalities
                    .iter()
                    .map(|(_, o)| tape.cross_entropy(o.logits, labels))
                    .collect::<Result<Vec<_>>>()?;
                let vectors = losses
                    .iter()
                    .map(|&l| tape.reshape(l, [1]))
                    .collect::<Result<Vec<_>>>()?;
                let joined = tape.concat(&vectors, 0)?;
                tape.mean_axis(joined, 0)
            }
        }
    }

    /// Classes for one batch, with dropout off.
    pub fn predict(&self, batch: &Batch<S>) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, false);
        let out = self.forward(&mut tape, &params, batch, &mut ForwardCtx::eval())?;
        predictions(&tape, &out)
    }
}

/// Argmax of the fused logits, or the majority vote when there are none.
pub fn predictions<S: Scalar>(tape: &Tape<S>, out: &ModelOutput) -> Result<Vec<usize>> {
    match out.logits {
        Some(l) => tape.value(l).argmax_rows(),
        None => {
            let [v, a, t] = [0, 1, 2].map(|i| tape.value(out.modalities[i].1.logits));
            late_fusion_predict(v, a, t)
        }
    }
}
