//! Trains attention fusion and prints how each modality token attends to the
//! others for a few test samples.

use mmsa::data::{
    generate_synthetic, make_batches, Batch, Coupling, ModalityDims, SyntheticConfig,
};
use mmsa::experiment::{run_approach, SplitData};
use mmsa::fusion::{Approach, FusionMode, ModelConfig};
use mmsa::tensor::Tape;
use mmsa::training::TrainConfig;
use mmsa::transformer::{EncoderConfig, ForwardCtx};

fn main() -> mmsa::Result<()> {
    let dims = [ModalityDims::new(8, 8); 3];
    let dataset = generate_synthetic(&SyntheticConfig {
        n_samples: 600,
        dims,
        coupling: Coupling::Joint,
        noise_std: 0.3,
        seed: 9,
    })?;
    let data = SplitData::default_split(&dataset, 9)?;
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
    let approach = Approach::Fusion(FusionMode::Attention);
    let cfg = TrainConfig {
        epochs: 40,
        seed: 9,
        ..TrainConfig::new(approach)
    };
    let run = run_approach(&data, &config, &cfg, &[])?;
    println!("test accuracy {:.3}", run.test_accuracy);

    let model = &run.model;
    let batch: Batch<f32> = make_batches(&data.test.samples[..3], 3, None)?.remove(0);
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape, false);
    let (_, weights) =
        model.attention_fusion_forward(&mut tape, &params, &batch, &mut ForwardCtx::eval())?;
    // [b·h × 3 × 3]: rows are queries, columns keys, in video/audio/text order.
    let w = tape.value(weights);
    let heads = config.encoder.num_heads;
    for (i, block) in w.data().chunks(9).enumerate() {
        println!("sample {} head {}:", i / heads, i % heads);
        for row in block.chunks(3) {
            println!("  {:.3} {:.3} {:.3}", row[0], row[1], row[2]);
        }
    }
    Ok(())
}
