//! Saves a trained model, loads it back and checks that evaluation agrees.

use mmsa::data::{generate_synthetic, ModalityDims, SyntheticConfig};
use mmsa::experiment::SplitData;
use mmsa::fusion::{
    load_checkpoint, save_checkpoint, Approach, FusionMode, FusionModel, ModelConfig,
};
use mmsa::training::{evaluate, train, TrainConfig};
use mmsa::transformer::EncoderConfig;

fn main() -> mmsa::Result<()> {
    let dims = [ModalityDims::new(6, 5); 3];
    let dataset = generate_synthetic(&SyntheticConfig {
        n_samples: 120,
        dims,
        seed: 4,
        ..Default::default()
    })?;
    let data = SplitData::default_split(&dataset, 4)?;
    let encoder = EncoderConfig {
        model_dim: 8,
        num_heads: 2,
        ff_dim: 16,
        num_layers: 1,
        max_seq_len: 6,
        dropout_rate: 0.1,
    };
    let approach = Approach::Fusion(FusionMode::EarlyConcat);
    let mut model = FusionModel::<f32>::new(ModelConfig::new(encoder, [5; 3]), approach, 4)?;
    train(
        &mut model,
        &data.train,
        &data.val,
        &TrainConfig {
            epochs: 3,
            ..TrainConfig::new(approach)
        },
    )?;

    let path = std::env::temp_dir().join("mmsa_example.ckpt");
    save_checkpoint(&model, &path)?;
    let loaded = load_checkpoint(&path)?;
    let before = evaluate(&model, &data.test, 32)?;
    let after = evaluate(&loaded, &data.test, 32)?;
    assert_eq!(before, after);
    println!(
        "{} parameters in {} tensors, {} bytes",
        loaded.store.num_scalars(),
        loaded.store.len(),
        std::fs::metadata(&path)?.len()
    );
    println!(
        "test accuracy {:.3} before and after reload",
        after.accuracy
    );
    Ok(())
}
