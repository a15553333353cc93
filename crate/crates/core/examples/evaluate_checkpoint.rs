//! Evaluates a checkpoint on a dataset file, as `mmsa eval` does.
//!
//! cargo run --example evaluate_checkpoint -- <data.mmsa> <model.ckpt>

use mmsa::cli::check_compatible;
use mmsa::data::load_dataset;
use mmsa::fusion::load_checkpoint;
use mmsa::training::evaluate;

fn main() -> mmsa::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let [_, data, ckpt] = args.as_slice() else {
        eprintln!("usage: evaluate_checkpoint <data.mmsa> <model.ckpt>");
        std::process::exit(2);
    };
    let dataset = load_dataset(data)?;
    let model = load_checkpoint(ckpt)?;
    check_compatible(&model, &dataset)?;
    let result = evaluate(&model, &dataset, 32)?;
    println!(
        "{}: {} samples, accuracy {:.4}, mean loss {:.4}",
        model.approach,
        dataset.len(),
        result.accuracy,
        result.mean_loss
    );
    let mut confusion = [[0usize; 3]; 3];
    for (p, s) in result.predictions.iter().zip(&dataset.samples) {
        confusion[s.label.index()][*p] += 1;
    }
    println!("rows true, columns predicted (negative, neutral, positive)");
    for row in confusion {
        println!("{:>6} {:>6} {:>6}", row[0], row[1], row[2]);
    }
    Ok(())
}
