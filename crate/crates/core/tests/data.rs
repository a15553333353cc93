use mmsa::data::{
    class_counts, decode_dataset, discretize_sentiment, encode_dataset,
    generate_synthetic_with_latents, make_batches, record_len, split_dataset, Batch, Coupling,
    Dataset, Features, LoadOptions, ModalityDims, MultimodalSample, SyntheticConfig, HEADER_LEN,
};
use mmsa::{Error, Sentiment};
use proptest::prelude::*;
use rand::SeedableRng;

fn dims_strategy() -> impl Strategy<Value = [ModalityDims; 3]> {
    prop::array::uniform3((1usize..5, 1usize..4).prop_map(|(s, d)| ModalityDims::new(s, d)))
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    dims_strategy().prop_flat_map(|dims| {
        let sample = (
            -3.0f32..=3.0,
            prop::array::uniform3(0.0f64..1.0),
            prop::collection::vec(-1e6f32..1e6, dims.iter().map(|d| d.numel()).sum::<usize>()),
        )
            .prop_map(move |(score, fracs, flat)| {
                let mut offset = 0;
                let features = dims.map(|d| {
                    let f = Features::new(d, flat[offset..offset + d.numel()].to_vec()).unwrap();
                    offset += d.numel();
                    f
                });
                let lens = [0, 1, 2]
                    .map(|m| 1 + (fracs[m] * dims[m].seq_len as f64) as usize % dims[m].seq_len);
                MultimodalSample::new(features, lens, score).unwrap()
            });
        prop::collection::vec(sample, 0..8).prop_map(move |s| Dataset::new(dims, s).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoding_round_trips_exactly(ds in dataset_strategy()) {
        let bytes = encode_dataset(&ds).unwrap();
        prop_assert_eq!(bytes.len(), HEADER_LEN + ds.len() * record_len(&ds.dims));
        let back = decode_dataset(&bytes, &LoadOptions::default()).unwrap();
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn every_strict_prefix_is_a_length_error(ds in dataset_strategy(), frac in 0.0f64..1.0) {
        let bytes = encode_dataset(&ds).unwrap();
        let cut = (frac * bytes.len() as f64) as usize;
        match decode_dataset(&bytes[..cut], &LoadOptions::default()) {
            Err(Error::Length { offset, .. }) => prop_assert_eq!(offset, cut as u64),
            other => prop_assert!(false, "cut {}: {:?}", cut, other),
        }
    }

    #[test]
    fn discretization_is_monotone(a in -3.0f64..=3.0, b in -3.0f64..=3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(discretize_sentiment(lo).unwrap() <= discretize_sentiment(hi).unwrap());
    }

    #[test]
    fn split_is_a_disjoint_exhaustive_partition(n in 3usize..60, seed in any::<u64>()) {
        let samples: Vec<_> = (0..n).map(|i| tagged(i as f32 / 100.0)).collect();
        let split = split_dataset(samples, (0.7, 0.15, 0.15), seed).unwrap();
        prop_assert_eq!(split.val.len(), (n as f64 * 0.15).floor() as usize);
        prop_assert_eq!(split.test.len(), (n as f64 * 0.15).floor() as usize);
        let mut tags: Vec<i64> = split.train.iter().chain(&split.val).chain(&split.test)
            .map(|s| (s.features[0].data[0] * 100.0).round() as i64)
            .collect();
        tags.sort();
        prop_assert_eq!(tags, (0..n as i64).collect::<Vec<_>>());
    }

    #[test]
    fn shuffled_batches_cover_each_sample_once(n in 1usize..40, b in 1usize..9, seed in any::<u64>()) {
        let samples: Vec<_> = (0..n).map(|i| tagged(i as f32)).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let batches: Vec<Batch<f32>> = make_batches(&samples, b, Some(&mut rng)).unwrap();
        prop_assert_eq!(batches.len(), n.div_ceil(b));
        let mut seen: Vec<usize> = batches.iter().flat_map(|x| x.indices.clone()).collect();
        for batch in &batches {
            for (row, &i) in batch.indices.iter().enumerate() {
                prop_assert_eq!(batch.features[0].data()[row * 2], i as f32);
            }
        }
        seen.sort();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}

/// Sample whose first video feature is `tag`.
fn tagged(tag: f32) -> MultimodalSample {
    let d = ModalityDims::new(1, 2);
    let features = [0, 1, 2].map(|_| Features::new(d, vec![tag, 0.0]).unwrap());
    MultimodalSample::new(features, [1; 3], 0.0).unwrap()
}

fn synthetic(coupling: Coupling, n: usize, noise: f64) -> SyntheticConfig {
    SyntheticConfig {
        n_samples: n,
        dims: [
            ModalityDims::new(5, 3),
            ModalityDims::new(4, 6),
            ModalityDims::new(6, 4),
        ],
        coupling,
        noise_std: noise,
        seed: 21,
    }
}

#[test]
fn joint_digits_are_individually_and_pairwise_uninformative() {
    let (ds, latents) =
        generate_synthetic_with_latents(&synthetic(Coupling::Joint, 270, 0.3)).unwrap();
    assert_eq!(class_counts(&ds.samples), [90, 90, 90]);
    for (s, d) in ds.samples.iter().zip(&latents) {
        assert_eq!(s.label.index(), d.iter().sum::<usize>() % 3);
    }
    for m in 0..3 {
        let mut table = [[0usize; 3]; 3];
        for (s, d) in ds.samples.iter().zip(&latents) {
            table[d[m]][s.label.index()] += 1;
        }
        assert!(table.iter().flatten().all(|&c| c == 30), "{table:?}");
    }
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let mut table = [[0usize; 3]; 9];
        for (s, d) in ds.samples.iter().zip(&latents) {
            table[d[a] * 3 + d[b]][s.label.index()] += 1;
        }
        assert!(table.iter().flatten().all(|&c| c == 10), "{table:?}");
    }
}

#[test]
fn independent_digits_equal_the_label() {
    let (ds, latents) =
        generate_synthetic_with_latents(&synthetic(Coupling::Independent, 60, 0.3)).unwrap();
    for (s, d) in ds.samples.iter().zip(&latents) {
        assert_eq!(*d, [s.label.index(); 3]);
    }
}

#[test]
fn noiseless_frames_are_patterns_and_padding_is_zero() {
    let (ds, latents) =
        generate_synthetic_with_latents(&synthetic(Coupling::Joint, 54, 0.0)).unwrap();
    for (s, d) in ds.samples.iter().zip(&latents) {
        for m in 0..3 {
            let f = &s.features[m];
            let len = s.valid_lens[m];
            assert!(len * 2 >= f.dims.seq_len && len <= f.dims.seq_len);
            for t in 0..f.dims.seq_len {
                let row = f.row(t);
                if t < len {
                    assert!(row.iter().all(|v| v.abs() == 1.0));
                    assert_eq!(row, f.row(0));
                } else {
                    assert!(row.iter().all(|&v| v == 0.0));
                }
            }
        }
        // Samples sharing a digit share its pattern.
        let other = ds
            .samples
            .iter()
            .zip(&latents)
            .find(|(_, e)| e[0] == d[0])
            .unwrap()
            .0;
        assert_eq!(s.features[0].row(0), other.features[0].row(0));
    }
}

#[test]
fn generator_rejects_degenerate_configs() {
    let mut cfg = synthetic(Coupling::Joint, 3, 0.3);
    cfg.dims[1] = ModalityDims::new(0, 3);
    assert!(matches!(
        generate_synthetic_with_latents(&cfg),
        Err(Error::Config(_))
    ));
    let cfg = synthetic(Coupling::Joint, 3, -1.0);
    assert!(matches!(
        generate_synthetic_with_latents(&cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn explicit_labels_must_match_the_sample_count() {
    let (ds, _) = generate_synthetic_with_latents(&synthetic(Coupling::Joint, 4, 0.3)).unwrap();
    let bytes = encode_dataset(&ds).unwrap();
    let opts = LoadOptions {
        labels: Some(vec![Sentiment::Positive; 3]),
    };
    assert!(matches!(decode_dataset(&bytes, &opts), Err(Error::Data(_))));
    let opts = LoadOptions {
        labels: Some(vec![Sentiment::Positive; 4]),
    };
    let back = decode_dataset(&bytes, &opts).unwrap();
    assert!(back.samples.iter().all(|s| s.label == Sentiment::Positive));
}
