//! Majority vote over three unimodal classifiers, first on hand-written
//! logits and then on trained models.

use mmsa::data::{generate_synthetic, Coupling, ModalityDims, SyntheticConfig};
use mmsa::experiment::SplitData;
use mmsa::fusion::{late_fusion_predict, ModelConfig};
use mmsa::tensor::Tensor;
use mmsa::training::{late_fusion_pipeline, TrainConfig};
use mmsa::transformer::EncoderConfig;
use mmsa::{Approach, FusionMode, Modality};

fn main() -> mmsa::Result<()> {
    // Two votes for class 2 win; three different votes fall back to the
    // largest summed probability.
    let video = Tensor::new([2, 3], vec![0.0, 0.0, 3.0, 4.0, 0.0, 0.0])?;
    let audio = Tensor::new([2, 3], vec![0.0, 2.0, 0.0, 0.0, 1.0, 0.0])?;
    let text = Tensor::new([2, 3], vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0])?;
    println!(
        "hand-written votes: {:?}",
        late_fusion_predict::<f64>(&video, &audio, &text)?
    );

    let dims = [ModalityDims::new(8, 8); 3];
    let dataset = generate_synthetic(&SyntheticConfig {
        n_samples: 300,
        dims,
        coupling: Coupling::Independent,
        noise_std: 2.0,
        seed: 2,
    })?;
    let data = SplitData::default_split(&dataset, 2)?;
    let encoder = EncoderConfig {
        model_dim: 16,
        num_heads: 2,
        ff_dim: 32,
        num_layers: 1,
        max_seq_len: 8,
        dropout_rate: 0.1,
    };
    let cfg = TrainConfig {
        epochs: 5,
        seed: 2,
        ..TrainConfig::new(Approach::Fusion(FusionMode::LateVote))
    };
    let result = late_fusion_pipeline::<f32>(
        &ModelConfig::new(encoder, [8; 3]),
        &data.train,
        &data.val,
        &data.test,
        &cfg,
    )?;
    for (m, (_, metrics)) in Modality::ALL.iter().zip(&result.unimodal) {
        println!("{m:>5}: {:.3}", metrics.test_accuracy.unwrap_or(f64::NAN));
    }
    println!(" vote: {:.3}", result.voted_accuracy);
    Ok(())
}
