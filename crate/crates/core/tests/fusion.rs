mod common;

use common::{first_batch, rng, tiny_config, tiny_dataset, uniform};
use mmsa::data::{Batch, Coupling, ModalityDims};
use mmsa::fusion::{
    decode_checkpoint, encode_checkpoint, late_fusion_predict, load_checkpoint, save_checkpoint,
    Approach, FusionHead, FusionMode, FusionModel, ModelConfig,
};
use mmsa::tensor::{Tape, Tensor};
use mmsa::transformer::ForwardCtx;
use mmsa::{Error, Modality};
use proptest::prelude::*;

const A0: Approach = Approach::Fusion(FusionMode::LateVote);
const A1: Approach = Approach::Fusion(FusionMode::EarlyConcat);
const A2: Approach = Approach::Fusion(FusionMode::Attention);

fn logits_of(model: &FusionModel<f64>, batch: &Batch<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape, false);
    let out = model
        .forward(&mut tape, &params, batch, &mut ForwardCtx::eval())
        .unwrap();
    tape.value(out.logits.unwrap()).clone()
}

fn zero_param(model: &mut FusionModel<f64>, name: &str) {
    let id = model
        .store
        .find(name)
        .unwrap_or_else(|| panic!("no {name}"));
    model.store.get_mut(id).data_mut().fill(0.0);
}

proptest! {
    #[test]
    fn positive_scaling_keeps_each_vote(
        rows in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..20),
        c in 0.01f64..100.0,
    ) {
        let t = Tensor::new([rows.len(), 3], rows.concat()).unwrap();
        let scaled = Tensor::new(
            [rows.len(), 3],
            rows.concat().iter().map(|x| x * c).collect(),
        ).unwrap();
        prop_assert_eq!(t.argmax_rows().unwrap(), scaled.argmax_rows().unwrap());
    }
}

#[test]
fn argmax_examples_and_ties() {
    let t = Tensor::new([2, 3], vec![0.1, 0.9, 0.2, 0.5, 0.5, 0.1]).unwrap();
    assert_eq!(t.argmax_rows().unwrap(), vec![1, 0]);
}

#[test]
fn vote_rejects_batch_mismatch() {
    let a = Tensor::<f64>::zeros([2, 3]);
    let b = Tensor::<f64>::zeros([3, 3]);
    assert!(matches!(
        late_fusion_predict(&a, &a, &b),
        Err(Error::Contract(_))
    ));
}

#[test]
fn late_vote_has_no_fusion_parameters() {
    let model = FusionModel::<f32>::new(tiny_config(), A0, 0).unwrap();
    assert!(matches!(model.head, FusionHead::None));
    assert!(model.store.iter().all(|(name, _)| Modality::ALL
        .iter()
        .any(|m| name.starts_with(&format!("{m}.")))));
}

#[test]
fn early_head_reads_3d_features() {
    let model = FusionModel::<f32>::new(tiny_config(), A1, 0).unwrap();
    let FusionHead::Early(head) = &model.head else {
        panic!("early head")
    };
    assert_eq!(head.hidden.in_dim, 3 * tiny_config().encoder.model_dim);
    assert_eq!(head.output.out_dim, 3);
}

#[test]
fn zero_output_layer_gives_uniform_probabilities() {
    for (approach, prefix) in [(A1, "fusion.early"), (A2, "fusion.attention.classifier")] {
        let mut model = FusionModel::<f64>::new(tiny_config(), approach, 1).unwrap();
        zero_param(&mut model, &format!("{prefix}.output.weight"));
        let batch = first_batch(&tiny_dataset(6, Coupling::Joint, 1), 4);
        let logits = logits_of(&model, &batch);
        assert_eq!(logits.shape(), &[4, 3]);
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let p = tape.softmax(l, 1).unwrap();
        assert!(tape
            .value(p)
            .data()
            .iter()
            .all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }
}

#[test]
fn mode_specific_forwards_reject_other_models() {
    let batch = first_batch(&tiny_dataset(3, Coupling::Joint, 1), 2);
    let model = FusionModel::<f64>::new(tiny_config(), A2, 1).unwrap();
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape, false);
    let err = model.early_fusion_forward(&mut tape, &params, &batch, &mut ForwardCtx::eval());
    assert!(matches!(err, Err(Error::Contract(_))));
    let model = FusionModel::<f64>::new(tiny_config(), A1, 1).unwrap();
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape, false);
    let err = model.attention_fusion_forward(&mut tape, &params, &batch, &mut ForwardCtx::eval());
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn attention_fusion_weights_normalize_over_three_tokens() {
    let model = FusionModel::<f64>::new(tiny_config(), A2, 2).unwrap();
    let batch = first_batch(&tiny_dataset(6, Coupling::Joint, 2), 5);
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape, false);
    let (logits, weights) = model
        .attention_fusion_forward(&mut tape, &params, &batch, &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(tape.shape(logits), &[5, 3]);
    let w = tape.value(weights);
    assert_eq!(w.shape(), &[5 * 2, 3, 3]);
    for row in w.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zeroed_attention_projection_classifies_the_mean_embedded_token() {
    let mut model = FusionModel::<f64>::new(tiny_config(), A2, 3).unwrap();
    zero_param(&mut model, "fusion.attention.block.output.weight");
    zero_param(&mut model, "fusion.attention.block.output.bias");
    let batch = first_batch(&tiny_dataset(6, Coupling::Joint, 3), 3);
    let got = logits_of(&model, &batch);

    let FusionHead::Attention(head) = &model.head else {
        panic!("attention head")
    };
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape, false);
    let out = model
        .forward(&mut tape, &params, &batch, &mut ForwardCtx::eval())
        .unwrap();
    let d = model.config.encoder.model_dim;
    let emb = model.store.get(head.embeddings).data().to_vec();
    let mut mean = vec![0.0; 3 * d];
    for (m, (_, o)) in out.modalities.iter().enumerate() {
        for (i, p) in tape.value(o.pooled).data().iter().enumerate() {
            mean[i] += (p + emb[m * d + i % d]) / 3.0;
        }
    }
    let mean = tape.constant(Tensor::new([3, d], mean).unwrap());
    let want = head.classifier.forward(&mut tape, &params, mean).unwrap();
    let diff = got
        .data()
        .iter()
        .zip(tape.value(want).data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn relabeling_modalities_with_permuted_head_blocks_keeps_logits() {
    let dims = [ModalityDims::new(4, 4); 3];
    let mut config = tiny_config();
    config.input_dims = [4; 3];
    let model = FusionModel::<f64>::new(config.clone(), A1, 4).unwrap();
    let data = mmsa::data::generate_synthetic(&mmsa::data::SyntheticConfig {
        n_samples: 6,
        dims,
        coupling: Coupling::Joint,
        noise_std: 0.3,
        seed: 4,
    })
    .unwrap();
    let batch: Batch<f64> = first_batch(&data, 4);

    // Swap the video and audio encoders and the matching row blocks of the head.
    let mut swapped = model.clone();
    for (name, tensor) in model.store.iter() {
        let other = if let Some(rest) = name.strip_prefix("video.") {
            format!("audio.{rest}")
        } else if let Some(rest) = name.strip_prefix("audio.") {
            format!("video.{rest}")
        } else {
            continue;
        };
        let id = swapped.store.find(&other).unwrap();
        swapped.store.assign(id, tensor).unwrap();
    }
    let d = config.encoder.model_dim;
    let id = swapped.store.find("fusion.early.hidden.weight").unwrap();
    let w = model.store.get(id).clone();
    let cols = w.shape()[1];
    let block = d * cols;
    let data = swapped.store.get_mut(id).data_mut();
    data[..block].copy_from_slice(&w.data()[block..2 * block]);
    data[block..2 * block].copy_from_slice(&w.data()[..block]);

    let mut relabeled = batch.clone();
    relabeled.features.swap(0, 1);
    relabeled.masks.swap(0, 1);
    let a = logits_of(&model, &batch);
    let b = logits_of(&swapped, &relabeled);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn all_modes_produce_finite_outputs_on_one_batch() {
    let batch: Batch<f32> = first_batch(&tiny_dataset(9, Coupling::Joint, 5), 7);
    for approach in Approach::ALL {
        let model = FusionModel::<f32>::new(tiny_config(), approach, 5).unwrap();
        let classes = model.predict(&batch).unwrap();
        assert_eq!(classes.len(), 7);
        assert!(classes.iter().all(|&c| c < 3));
    }
}

#[test]
fn warm_start_copies_the_encoder_only() {
    let video =
        FusionModel::<f32>::new(tiny_config(), Approach::Unimodal(Modality::Video), 6).unwrap();
    let mut fused = FusionModel::<f32>::new(tiny_config(), A1, 7).unwrap();
    let before = fused.clone();
    let copied = fused.warm_start_from(&video).unwrap();
    assert_eq!(copied, video.store.len());
    for (name, t) in fused.store.iter() {
        if name.starts_with("video.") {
            let src = video.store.get(video.store.find(name).unwrap());
            assert_eq!(t, src);
        } else {
            assert_eq!(t, before.store.get(before.store.find(name).unwrap()));
        }
    }
    assert!(fused.warm_start_from(&before).is_err());
}

#[test]
fn checkpoint_file_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut model = FusionModel::<f32>::new(tiny_config(), A2, 8).unwrap();
    for t in model.store.tensors_mut() {
        let noise = uniform(t.shape(), &mut rng(t.len() as u64));
        for (x, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *x += *n as f32 * 1e-3;
        }
    }
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let batch: Batch<f32> = first_batch(&tiny_dataset(6, Coupling::Joint, 8), 6);
    assert_eq!(
        model.predict(&batch).unwrap(),
        back.predict(&batch).unwrap()
    );
    assert_eq!(
        std::fs::read(&path).unwrap(),
        encode_checkpoint(&back).unwrap()
    );
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let model =
        FusionModel::<f32>::new(tiny_config(), Approach::Unimodal(Modality::Text), 9).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));

    for cut in [3, 7, 40, bytes.len() / 2, bytes.len() - 1] {
        match decode_checkpoint(&bytes[..cut]) {
            Err(Error::Length { offset, .. }) => assert_eq!(offset, cut as u64),
            other => panic!("cut {cut}: {other:?}"),
        }
    }

    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));

    let text = String::from_utf8_lossy(&bytes);
    let pos = text.find("text.projection.weight").unwrap();
    let mut bad = bytes.clone();
    bad[pos] = b'T';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
}

#[test]
fn model_config_round_trips_through_key_values() {
    let mut config = tiny_config();
    config.head_hidden = 21;
    let mut kv = mmsa::kv::KeyValues::new();
    config.to_kv(&mut kv);
    assert_eq!(ModelConfig::from_kv(&kv).unwrap(), config);
}
