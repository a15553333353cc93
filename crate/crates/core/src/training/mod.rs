//! Adam, the epoch loop, evaluation and the majority-vote pipeline.

mod adam;

use std::fmt::Write as _;

use crate::data::{make_batches, Batch, Dataset, Modality};
use crate::error::{Error, Result};
use crate::fusion::{predictions, Approach, FusionMode, FusionModel, ModelConfig};
use crate::kv::KeyValues;
use crate::seed::rng_for;
use crate::tensor::{Scalar, Tape};
use crate::transformer::ForwardCtx;

pub use adam::{adam_step, AdamState};

const SHUFFLE_STREAM: u64 = 0x5e11;
const DROPOUT_STREAM: u64 = 0xd20f;

/// Column header of the per-epoch metrics CSV.
pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub approach: Approach,
}

impl TrainConfig {
    pub fn new(approach: Approach) -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            approach,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 8] = [
        "approach",
        "batch_size",
        "beta1",
        "beta2",
        "epochs",
        "eps",
        "learning_rate",
        "seed",
    ];

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("approach", self.approach);
        kv.set("batch_size", self.batch_size);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("epochs", self.epochs);
        kv.set("eps", self.eps);
        kv.set("learning_rate", self.learning_rate);
        kv.set("seed", self.seed);
    }

    /// Overrides fields present in `kv`; other fields keep their values.
    pub fn apply_kv(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(a) = kv.get("approach") {
            self.approach = a.parse()?;
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = kv.get_parsed(stringify!($field))? {
                    self.$field = v;
                })*
            };
        }
        take!(batch_size, beta1, beta2, epochs, eps, learning_rate, seed);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
    pub test_accuracy: Option<f64>,
}

impl Metrics {
    /// Header plus one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            )
            .unwrap();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    /// per sample, in dataset order
    pub predictions: Vec<usize>,
}

/// Accuracy and mean loss with dropout off, batches in dataset order.
pub fn evaluate<S: Scalar>(
    model: &FusionModel<S>,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::data("cannot evaluate on an empty dataset"));
    }
    let batches: Vec<Batch<S>> = make_batches(&dataset.samples, batch_size, None)?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(dataset.len());
    for batch in &batches {
        let mut tape = Tape::new();
        let params = model.store.bind(&mut tape, false);
        let out = model.forward(&mut tape, &params, batch, &mut ForwardCtx::eval())?;
        let loss = model.loss(&mut tape, &out, &batch.labels)?;
        loss_sum += tape.value(loss).item().to_f64_lossy() * batch.len() as f64;
        let p = predictions(&tape, &out)?;
        correct += p.iter().zip(&batch.labels).filter(|(a, b)| a == b).count();
        preds.extend(p);
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: loss_sum / n,
        predictions: preds,
    })
}

/// Fixed-epoch training. Data order and dropout use their own streams derived
/// from `cfg.seed` and the approach, so unimodal models trained alone or inside
/// the vote pipeline follow identical trajectories.
pub fn train<S: Scalar>(
    model: &mut FusionModel<S>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<Metrics> {
    cfg.validate()?;
    if model.approach != cfg.approach {
        return Err(Error::contract(format!(
            "model is {} but config asks for {}",
            model.approach, cfg.approach
        )));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data(
            "training and validation sets must be non-empty",
        ));
    }
    let tag = cfg.approach.tag();
    let mut shuffle_rng = rng_for(cfg.seed, SHUFFLE_STREAM + tag);
    let mut dropout_rng = rng_for(cfg.seed, DROPOUT_STREAM + tag);
    let mut state = AdamState::new(&model.store);
    let mut metrics = Metrics::default();

    for epoch in 1..=cfg.epochs {
        let batches: Vec<Batch<S>> =
            make_batches(&train_set.samples, cfg.batch_size, Some(&mut shuffle_rng))?;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in &batches {
            let mut tape = Tape::new();
            let params = model.store.bind(&mut tape, true);
            let out = model.forward(
                &mut tape,
                &params,
                batch,
                &mut ForwardCtx::train(&mut dropout_rng),
            )?;
            let loss = model.loss(&mut tape, &out, &batch.labels)?;
            loss_sum += tape.value(loss).item().to_f64_lossy() * batch.len() as f64;
            let p = predictions(&tape, &out)?;
            correct += p.iter().zip(&batch.labels).filter(|(a, b)| a == b).count();
            tape.backward(loss)?;
            model.store.absorb_grads(&tape, &params)?;
            adam_step(&mut model.store, &mut state, cfg)?;
        }
        let val = evaluate(model, val_set, cfg.batch_size)?;
        let n = train_set.len() as f64;
        metrics.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: val.mean_loss,
            val_accuracy: val.accuracy,
        });
    }
    Ok(metrics)
}

/// Three unimodal models, their histories and the majority-vote model built from them.
#[derive(Clone, Debug)]
pub struct LateFusionResult<S: Scalar = f32> {
    /// video, audio, text
    pub unimodal: [(FusionModel<S>, Metrics); 3],
    pub vote: FusionModel<S>,
    pub voted_accuracy: f64,
}

/// Trains one model per modality and evaluates their majority vote on `test`.
/// `cfg.approach` is ignored; each modality uses its own approach tag.
pub fn late_fusion_pipeline<S: Scalar>(
    config: &ModelConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<LateFusionResult<S>> {
    let run = |m: Modality| -> Result<(FusionModel<S>, Metrics)> {
        let approach = Approach::Unimodal(m);
        let cfg = TrainConfig {
            approach,
            ..cfg.clone()
        };
        let mut model = FusionModel::new(config.clone(), approach, cfg.seed)?;
        let mut metrics = train(&mut model, train_set, val_set, &cfg)?;
        metrics.test_accuracy = Some(evaluate(&model, test_set, cfg.batch_size)?.accuracy);
        Ok((model, metrics))
    };
    let (video, (audio, text)) = rayon::join(
        || run(Modality::Video),
        || rayon::join(|| run(Modality::Audio), || run(Modality::Text)),
    );
    let unimodal = [video?, audio?, text?];
    vote_from(unimodal, test_set, cfg.batch_size)
}

/// Majority-vote model from already trained unimodal models.
pub fn vote_from<S: Scalar>(
    unimodal: [(FusionModel<S>, Metrics); 3],
    test_set: &Dataset,
    batch_size: usize,
) -> Result<LateFusionResult<S>> {
    let vote = FusionModel::late_vote(&unimodal[0].0, &unimodal[1].0, &unimodal[2].0)?;
    debug_assert_eq!(vote.mode(), Some(FusionMode::LateVote));
    let voted_accuracy = evaluate(&vote, test_set, batch_size)?.accuracy;
    Ok(LateFusionResult {
        unimodal,
        vote,
        voted_accuracy,
    })
}
