//! All six approaches over two seeds on JOINT data.

use mmsa::data::{generate_synthetic, Coupling, ModalityDims, SyntheticConfig};
use mmsa::experiment::{compare, percent};
use mmsa::fusion::ModelConfig;
use mmsa::training::TrainConfig;
use mmsa::transformer::EncoderConfig;
use mmsa::{Approach, Modality};

fn main() -> mmsa::Result<()> {
    let dims = [ModalityDims::new(8, 8); 3];
    let dataset = generate_synthetic(&SyntheticConfig {
        n_samples: 450,
        dims,
        coupling: Coupling::Joint,
        noise_std: 0.3,
        seed: 0,
    })?;
    let encoder = EncoderConfig {
        model_dim: 16,
        num_heads: 2,
        ff_dim: 32,
        num_layers: 1,
        max_seq_len: 8,
        dropout_rate: 0.1,
    };
    let mut config = ModelConfig::new(encoder, [8; 3]);
    config.head_hidden = 32;
    let base = TrainConfig {
        epochs: 30,
        ..TrainConfig::new(Approach::Unimodal(Modality::Video))
    };
    let comparison = compare(&dataset, &[1, 2], &config, &base)?;
    for approach in Approach::ALL {
        println!(
            "{:<6} {:>8}",
            approach.name(),
            percent(comparison.mean(approach))
        );
    }
    print!("\n{}", comparison.to_csv());
    Ok(())
}
