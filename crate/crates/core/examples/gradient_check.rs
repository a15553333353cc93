//! Central-difference check of the attention-fusion loss gradient.

use mmsa::data::{generate_synthetic, make_batches, Batch, ModalityDims, SyntheticConfig};
use mmsa::fusion::{Approach, FusionMode, FusionModel, ModelConfig};
use mmsa::tensor::{finite_difference_check, Tape, Var};
use mmsa::transformer::{EncoderConfig, ForwardCtx};

fn main() -> mmsa::Result<()> {
    let dims = [ModalityDims::new(4, 3); 3];
    let data = generate_synthetic(&SyntheticConfig {
        n_samples: 6,
        dims,
        seed: 1,
        ..Default::default()
    })?;
    let batch: Batch<f64> = make_batches(&data.samples, 6, None)?.remove(0);

    let encoder = EncoderConfig {
        model_dim: 8,
        num_heads: 2,
        ff_dim: 12,
        num_layers: 1,
        max_seq_len: 4,
        dropout_rate: 0.0,
    };
    let approach = Approach::Fusion(FusionMode::Attention);
    let model = FusionModel::<f64>::new(ModelConfig::new(encoder, [3; 3]), approach, 1)?;
    let report = finite_difference_check(
        |tape: &mut Tape<f64>, params: &[Var]| {
            let out = model.forward(tape, params, &batch, &mut ForwardCtx::eval())?;
            model.loss(tape, &out, &batch.labels)
        },
        model.store.tensors(),
        1e-4,
        1e-3,
    )?;
    println!("checked {} scalars", report.checked);
    println!("max relative error {:.3e}", report.max_rel_error);
    if let Some((p, i)) = report.worst {
        let name = model.store.iter().nth(p).map(|(n, _)| n).unwrap_or("input");
        println!("worst at {name}[{i}]");
    }
    println!("{}", if report.passed { "passed" } else { "FAILED" });
    Ok(())
}
