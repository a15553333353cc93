//! `mmsa` command line: generate, train, eval, compare.
//!
//! Settings resolve as built-in defaults, then `--config` file values, then
//! flags. Exit codes: 0 success, 1 data or runtime error, 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{
    class_counts, generate_synthetic, load_dataset, write_dataset, Coupling, Dataset, ModalityDims,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::experiment::{compare, percent, run_approach, write_run, SplitData, Summary};
use crate::fusion::{load_checkpoint, Approach, FusionModel, ModelConfig};
use crate::kv::KeyValues;
use crate::training::{evaluate, TrainConfig};
use crate::transformer::EncoderConfig;
use crate::Modality;

#[derive(Debug, Parser)]
#[command(
    name = "mmsa",
    version,
    about = "Multimodal sentiment classification with transformer encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset file.
    Generate(GenerateArgs),
    /// Train one approach and write checkpoint, metrics and summary.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Train all six approaches over several seeds and tabulate test accuracy.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "joint", value_parser = ["joint", "independent"])]
    mode: String,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// feature width per modality: video,audio,text
    #[arg(long, value_delimiter = ',', default_values_t = [35, 74, 300])]
    dims: Vec<usize>,
    /// sequence length per modality: video,audio,text
    #[arg(long, value_delimiter = ',', default_values_t = [20, 20, 50])]
    seq_lens: Vec<usize>,
}

/// Model and optimizer overrides shared by `train` and `compare`.
#[derive(Debug, Args)]
struct HyperArgs {
    /// key=value file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    model_dim: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    head_hidden: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// worker threads for independent runs (0 = one per core)
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    approach: Option<Approach>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// initialize a1/a2 encoders from unimodal checkpoints
    #[arg(long)]
    warm_start: bool,
    /// where `<modality>/model.ckpt` live; defaults to the parent of --out
    #[arg(long)]
    pretrained_dir: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// write the JSON result here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let started = Instant::now();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => {
            println!("# time: {:.2}s", started.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    if a.dims.len() != 3 || a.seq_lens.len() != 3 {
        return Err(Error::config(
            "--dims and --seq-lens take three comma-separated values: video,audio,text",
        ));
    }
    let dims = [0, 1, 2].map(|i| ModalityDims::new(a.seq_lens[i], a.dims[i]));
    let cfg = SyntheticConfig {
        n_samples: a.n,
        dims,
        coupling: a.mode.parse::<Coupling>()?,
        noise_std: a.noise,
        seed: a.seed,
    };
    let dataset = generate_synthetic(&cfg)?;
    write_dataset(&dataset, &a.out).map_err(at(&a.out))?;
    if a.n == 0 {
        eprintln!("warning: --n 0 wrote a header-only dataset");
    }
    let [neg, neu, pos] = class_counts(&dataset.samples);
    println!("samples: {}", dataset.len());
    println!("class counts: negative={neg} neutral={neu} positive={pos}");
    Ok(())
}

/// Model and training settings after merging defaults, file and flags.
struct Resolved {
    model: ModelConfig,
    train: TrainConfig,
    echo: KeyValues,
}

const MODEL_KEYS: [&str; 7] = [
    "dropout_rate",
    "ff_dim",
    "head_hidden",
    "max_seq_len",
    "model_dim",
    "num_heads",
    "num_layers",
];

fn resolve(
    h: &HyperArgs,
    approach: Option<Approach>,
    seed: Option<u64>,
    dataset: &Dataset,
) -> Result<Resolved> {
    let mut kv = match &h.config {
        Some(path) => read_config(path)?,
        None => KeyValues::new(),
    };
    let allowed: Vec<&str> = MODEL_KEYS
        .iter()
        .chain(&TrainConfig::KEYS)
        .copied()
        .collect();
    kv.reject_unknown(&allowed)?;

    macro_rules! flag {
        ($($field:ident),*) => {
            $(if let Some(v) = &h.$field {
                kv.set(stringify!($field), v);
            })*
        };
    }
    flag!(
        epochs,
        model_dim,
        num_heads,
        ff_dim,
        num_layers,
        max_seq_len,
        dropout_rate,
        head_hidden,
        learning_rate,
        batch_size,
        beta1,
        beta2,
        eps
    );
    if let Some(a) = approach {
        kv.set("approach", a);
    }
    if let Some(s) = seed {
        kv.set("seed", s);
    }

    let defaults = EncoderConfig::default();
    let data_seq = dataset.dims.iter().map(|d| d.seq_len).max().unwrap_or(1);
    let encoder = EncoderConfig {
        model_dim: kv.get_parsed("model_dim")?.unwrap_or(defaults.model_dim),
        num_heads: kv.get_parsed("num_heads")?.unwrap_or(defaults.num_heads),
        ff_dim: kv.get_parsed("ff_dim")?.unwrap_or(defaults.ff_dim),
        num_layers: kv.get_parsed("num_layers")?.unwrap_or(defaults.num_layers),
        max_seq_len: kv.get_parsed("max_seq_len")?.unwrap_or(data_seq.max(1)),
        dropout_rate: kv
            .get_parsed("dropout_rate")?
            .unwrap_or(defaults.dropout_rate),
    };
    let mut model = ModelConfig::new(encoder, dataset.dims.map(|d| d.feat_dim.max(1)));
    if let Some(hh) = kv.get_parsed("head_hidden")? {
        model.head_hidden = hh;
    }
    model.validate()?;

    let mut train = TrainConfig::new(Approach::Fusion(crate::FusionMode::EarlyConcat));
    train.apply_kv(&kv)?;
    train.validate()?;

    let mut echo = KeyValues::new();
    model.to_kv(&mut echo);
    train.to_kv(&mut echo);
    Ok(Resolved { model, train, echo })
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start {threads} threads: {e}")))
}

/// Prefixes file-level errors with the path involved.
fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| {
        let p = path.display();
        match e {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{p}: {io}"))),
            Error::Format(msg) => Error::Format(format!("{p}: {msg}")),
            Error::Data(msg) => Error::Data(format!("{p}: {msg}")),
            Error::Length { offset, context } => Error::Length {
                offset,
                context: format!("{p}: {context}"),
            },
            other => other,
        }
    }
}

fn read_config(path: &Path) -> Result<KeyValues> {
    KeyValues::parse(&fs::read_to_string(path).map_err(|e| at(path)(e.into()))?)
}

fn load_nonempty(path: &Path) -> Result<Dataset> {
    let dataset = load_dataset(path).map_err(at(path))?;
    if dataset.is_empty() {
        return Err(Error::data(format!("{} holds no samples", path.display())));
    }
    Ok(dataset)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let dataset = load_nonempty(&a.data)?;
    let has_approach = a.approach.is_some()
        || match &a.hyper.config {
            Some(p) => read_config(p)?.get("approach").is_some(),
            None => false,
        };
    if !has_approach {
        return Err(Error::config(
            "--approach is required (or `approach` in --config)",
        ));
    }
    let r = resolve(&a.hyper, a.approach, a.seed, &dataset)?;
    let approach = r.train.approach;
    let data = SplitData::default_split(&dataset, r.train.seed)?;
    println!(
        "approach: {approach}  train/val/test: {}/{}/{}",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );

    let mut pretrained = Vec::new();
    if a.warm_start && matches!(approach, Approach::Fusion(_)) {
        let dir = a
            .pretrained_dir
            .clone()
            .unwrap_or_else(|| a.out.parent().map(Path::to_path_buf).unwrap_or_default());
        for m in Modality::ALL {
            let path = dir.join(m.name()).join("model.ckpt");
            if path.exists() {
                pretrained.push(load_checkpoint(&path).map_err(at(&path))?);
                println!("warm start: {m} encoder from {}", path.display());
            } else {
                println!(
                    "warm start: no {m} checkpoint at {}, training from scratch",
                    path.display()
                );
            }
        }
    }

    let run = thread_pool(a.hyper.threads)?
        .install(|| run_approach(&data, &r.model, &r.train, &pretrained))?;
    let summary = Summary::new(&run, r.train.epochs, &r.echo);
    write_run(&a.out, &run, &summary)?;
    write_dataset(&data.test, a.out.join("test.mmsa"))?;
    for (m, acc) in run.unimodal_accuracies() {
        println!("{m} test accuracy: {}", percent(acc));
    }
    println!("test accuracy: {}", percent(run.test_accuracy));
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    approach: String,
    samples: usize,
    accuracy: f64,
    mean_loss: f64,
}

/// Fails with a config error naming both shapes when `dataset` does not fit `model`.
pub fn check_compatible(model: &FusionModel<f32>, dataset: &Dataset) -> Result<()> {
    for m in model.approach.modalities() {
        let d = dataset.dims[m.index()];
        let want = model.config.input_dims[m.index()];
        let max_seq = model.config.encoder.max_seq_len;
        if d.feat_dim != want || d.seq_len > max_seq {
            return Err(Error::config(format!(
                "{m}: data has shape [{}x{}], checkpoint expects [<={max_seq}x{want}]",
                d.seq_len, d.feat_dim
            )));
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint).map_err(at(&a.checkpoint))?;
    let dataset = load_nonempty(&a.data)?;
    check_compatible(&model, &dataset)?;
    let result = evaluate(&model, &dataset, a.batch_size)?;
    println!("accuracy: {}", percent(result.accuracy));
    let report = EvalReport {
        approach: model.approach.to_string(),
        samples: dataset.len(),
        accuracy: result.accuracy,
        mean_loss: result.mean_loss,
    };
    let json = serde_json::to_string_pretty(&report).expect("plain data serializes");
    match &a.out {
        Some(path) => fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let dataset = load_nonempty(&a.data)?;
    let r = resolve(&a.hyper, None, None, &dataset)?;
    let comparison = thread_pool(a.hyper.threads)?
        .install(|| compare(&dataset, &a.seeds, &r.model, &r.train))?;
    for run in &comparison.runs {
        let mut echo = r.echo.clone();
        echo.set("approach", run.approach);
        echo.set("seed", run.seed);
        let dir = a
            .out
            .join(format!("seed{}", run.seed))
            .join(run.approach.name());
        write_run(&dir, run, &Summary::new(run, r.train.epochs, &echo))?;
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("comparison.csv"), comparison.to_csv())?;
    println!("{:<8} {:>10}", "approach", "accuracy");
    for approach in Approach::ALL {
        println!(
            "{:<8} {:>10}",
            approach.name(),
            percent(comparison.mean(approach))
        );
    }
    Ok(())
}
