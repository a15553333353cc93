//! One seeded run per approach on a train/val/test split, and the
//! six-approach comparison across seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{split_dataset, Dataset, Modality, DEFAULT_SPLIT};
use crate::error::Result;
use crate::fusion::{save_checkpoint, Approach, FusionMode, FusionModel, ModelConfig};
use crate::kv::KeyValues;
use crate::training::{evaluate, late_fusion_pipeline, train, vote_from, Metrics, TrainConfig};

#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SplitData {
    pub fn new(dataset: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<Self> {
        let split = split_dataset(dataset.samples.clone(), ratios, seed)?;
        Ok(Self {
            train: Dataset::new(dataset.dims, split.train)?,
            val: Dataset::new(dataset.dims, split.val)?,
            test: Dataset::new(dataset.dims, split.test)?,
        })
    }

    pub fn default_split(dataset: &Dataset, seed: u64) -> Result<Self> {
        Self::new(dataset, DEFAULT_SPLIT, seed)
    }
}

/// A trained model with its history. Majority vote carries one history per
/// modality; every other approach carries exactly one.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub approach: Approach,
    pub seed: u64,
    pub model: FusionModel<f32>,
    pub histories: Vec<(Option<Modality>, Metrics)>,
    pub test_accuracy: f64,
}

impl RunOutput {
    /// Unimodal accuracies of a majority-vote run, video, audio, text.
    pub fn unimodal_accuracies(&self) -> Vec<(Modality, f64)> {
        self.histories
            .iter()
            .filter_map(|(m, h)| Some(((*m)?, h.test_accuracy?)))
            .collect()
    }
}

/// Trains `cfg.approach` from scratch (seeded by `cfg.seed`) and tests it.
/// For early and attention fusion, encoders are first copied from any
/// `pretrained` unimodal models.
pub fn run_approach(
    data: &SplitData,
    config: &ModelConfig,
    cfg: &TrainConfig,
    pretrained: &[FusionModel<f32>],
) -> Result<RunOutput> {
    if cfg.approach == Approach::Fusion(FusionMode::LateVote) {
        let result = late_fusion_pipeline(config, &data.train, &data.val, &data.test, cfg)?;
        let histories = result
            .unimodal
            .iter()
            .zip(Modality::ALL)
            .map(|((_, h), m)| (Some(m), h.clone()))
            .collect();
        return Ok(RunOutput {
            approach: cfg.approach,
            seed: cfg.seed,
            model: result.vote,
            histories,
            test_accuracy: result.voted_accuracy,
        });
    }
    let mut model = FusionModel::new(config.clone(), cfg.approach, cfg.seed)?;
    if model.mode().is_some() {
        for p in pretrained {
            model.warm_start_from(p)?;
        }
    }
    let mut metrics = train(&mut model, &data.train, &data.val, cfg)?;
    let test_accuracy = evaluate(&model, &data.test, cfg.batch_size)?.accuracy;
    metrics.test_accuracy = Some(test_accuracy);
    Ok(RunOutput {
        approach: cfg.approach,
        seed: cfg.seed,
        model,
        histories: vec![(None, metrics)],
        test_accuracy,
    })
}

/// Test accuracy of every approach under every seed, in `Approach::ALL` order.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    /// `accuracy[approach][seed]`
    pub accuracy: Vec<Vec<f64>>,
    pub runs: Vec<RunOutput>,
}

impl Comparison {
    pub fn mean(&self, approach: Approach) -> f64 {
        let row = &self.accuracy[approach_index(approach)];
        row.iter().sum::<f64>() / row.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("approach,mean_accuracy");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push('\n');
        for (a, row) in Approach::ALL.iter().zip(&self.accuracy) {
            out.push_str(&format!("{a},{}", self.mean(*a)));
            for acc in row {
                out.push_str(&format!(",{acc}"));
            }
            out.push('\n');
        }
        out
    }
}

fn approach_index(a: Approach) -> usize {
    Approach::ALL.iter().position(|&x| x == a).expect("listed")
}

/// Trains all six approaches per seed. Majority vote reuses the seed's three
/// unimodal models, which is exactly what a standalone vote run would train.
/// Independent runs are spread over the current rayon pool.
pub fn compare(
    dataset: &Dataset,
    seeds: &[u64],
    config: &ModelConfig,
    base: &TrainConfig,
) -> Result<Comparison> {
    let splits = seeds
        .iter()
        .map(|&s| SplitData::default_split(dataset, s))
        .collect::<Result<Vec<_>>>()?;
    let trained: Vec<Approach> = Approach::ALL
        .into_iter()
        .filter(|a| *a != Approach::Fusion(FusionMode::LateVote))
        .collect();
    let jobs: Vec<(usize, Approach)> = (0..seeds.len())
        .flat_map(|i| trained.iter().map(move |&a| (i, a)))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(i, approach)| {
            let cfg = TrainConfig {
                approach,
                seed: seeds[i],
                ..base.clone()
            };
            run_approach(&splits[i], config, &cfg, &[])
        })
        .collect::<Result<Vec<_>>>()?;

    for (i, &seed) in seeds.iter().enumerate() {
        let unimodal = Modality::ALL.map(|m| {
            let run = runs
                .iter()
                .find(|r| r.seed == seed && r.approach == Approach::Unimodal(m))
                .expect("trained above");
            (run.model.clone(), run.histories[0].1.clone())
        });
        let voted = vote_from(unimodal, &splits[i].test, base.batch_size)?;
        let histories = voted
            .unimodal
            .iter()
            .zip(Modality::ALL)
            .map(|((_, h), m)| (Some(m), h.clone()))
            .collect();
        runs.push(RunOutput {
            approach: Approach::Fusion(FusionMode::LateVote),
            seed,
            model: voted.vote,
            histories,
            test_accuracy: voted.voted_accuracy,
        });
    }
    runs.sort_by_key(|r| {
        let s = seeds.iter().position(|&x| x == r.seed).unwrap();
        (approach_index(r.approach), s)
    });
    let accuracy = Approach::ALL
        .iter()
        .map(|&a| {
            runs.iter()
                .filter(|r| r.approach == a)
                .map(|r| r.test_accuracy)
                .collect()
        })
        .collect();
    Ok(Comparison {
        seeds: seeds.to_vec(),
        accuracy,
        runs,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub approach: String,
    pub seed: u64,
    pub test_accuracy: f64,
    pub epochs: usize,
    pub config_echo: BTreeMap<String, String>,
}

impl Summary {
    pub fn new(run: &RunOutput, epochs: usize, config: &KeyValues) -> Self {
        Self {
            approach: run.approach.to_string(),
            seed: run.seed,
            test_accuracy: run.test_accuracy,
            epochs,
            config_echo: config
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

/// Writes `model.ckpt`, the metrics CSV(s) and `summary.json` into `dir`.
/// Majority vote writes one `metrics_<modality>.csv` per modality.
pub fn write_run(dir: &Path, run: &RunOutput, summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&run.model, dir.join("model.ckpt"))?;
    for (m, h) in &run.histories {
        let name = match m {
            Some(m) => format!("metrics_{m}.csv"),
            None => "metrics.csv".to_string(),
        };
        fs::write(dir.join(name), h.to_csv())?;
    }
    let json = serde_json::to_string_pretty(summary).expect("plain data serializes");
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// `71.87%` style.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}%", 100.0 * fraction)
}
