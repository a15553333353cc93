//! Generates a JOINT dataset, writes it in the binary format and reads it back.

use mmsa::data::{class_counts, generate_synthetic, load_dataset, write_dataset, SyntheticConfig};

fn main() -> mmsa::Result<()> {
    let cfg = SyntheticConfig {
        n_samples: 90,
        seed: 7,
        ..SyntheticConfig::default()
    };
    let dataset = generate_synthetic(&cfg)?;
    let path = std::env::temp_dir().join("mmsa_example.mmsa");
    write_dataset(&dataset, &path)?;
    let back = load_dataset(&path)?;
    assert_eq!(back, dataset);

    let [neg, neu, pos] = class_counts(&back.samples);
    println!(
        "{} samples, {} bytes at {}",
        back.len(),
        std::fs::metadata(&path)?.len(),
        path.display()
    );
    println!("negative={neg} neutral={neu} positive={pos}");
    for (m, d) in mmsa::Modality::ALL.iter().zip(back.dims) {
        println!("{m}: {} x {}", d.seq_len, d.feat_dim);
    }
    let s = &back.samples[0];
    println!(
        "first sample: score {} label {:?} valid lengths {:?}",
        s.score, s.label, s.valid_lens
    );
    Ok(())
}
