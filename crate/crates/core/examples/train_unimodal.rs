//! Trains a video-only classifier on INDEPENDENT data, where one modality
//! is enough to recover the label.

use mmsa::data::{generate_synthetic, Coupling, ModalityDims, SyntheticConfig};
use mmsa::experiment::SplitData;
use mmsa::fusion::{Approach, FusionModel, ModelConfig};
use mmsa::training::{evaluate, train, TrainConfig};
use mmsa::transformer::EncoderConfig;
use mmsa::Modality;

fn main() -> mmsa::Result<()> {
    let dims = [ModalityDims::new(8, 8); 3];
    let dataset = generate_synthetic(&SyntheticConfig {
        n_samples: 300,
        dims,
        coupling: Coupling::Independent,
        noise_std: 0.5,
        seed: 3,
    })?;
    let data = SplitData::default_split(&dataset, 3)?;

    let encoder = EncoderConfig {
        model_dim: 16,
        num_heads: 2,
        ff_dim: 32,
        num_layers: 1,
        max_seq_len: 8,
        dropout_rate: 0.1,
    };
    let approach = Approach::Unimodal(Modality::Video);
    let mut model = FusionModel::<f32>::new(ModelConfig::new(encoder, [8; 3]), approach, 3)?;
    let cfg = TrainConfig {
        epochs: 10,
        seed: 3,
        ..TrainConfig::new(approach)
    };
    let metrics = train(&mut model, &data.train, &data.val, &cfg)?;
    print!("{}", metrics.to_csv());
    let test = evaluate(&model, &data.test, cfg.batch_size)?;
    println!(
        "test accuracy {:.3}, mean loss {:.4}",
        test.accuracy, test.mean_loss
    );
    Ok(())
}
