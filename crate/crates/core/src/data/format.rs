//! Binary dataset layout, all fields little-endian:
//!
//! ```text
//! header  magic "MMSA" | version u8 | n_samples u32 | 3 × (seq_len u32, feat_dim u32)
//! record  score f32 | 3 × valid_len u32 | video f32[s_v·d_v] | audio f32[s_a·d_a] | text f32[s_t·d_t]
//! ```
//!
//! Modality order is video, audio, text. Labels are not stored; they are
//! derived from the score on load.

use std::fs;
use std::path::Path;

use super::{Dataset, Features, ModalityDims, MultimodalSample, Sentiment};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MMSA";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 4 + 3 * 8;

/// Record size in bytes for the given per-modality extents.
pub fn record_len(dims: &[ModalityDims; 3]) -> usize {
    4 + 3 * 4 + 4 * dims.iter().map(ModalityDims::numel).sum::<usize>()
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Replace score-derived labels, one per sample in file order.
    pub labels: Option<Vec<Sentiment>>,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::contract(format!("{what} {v} does not fit in u32")))
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let dims = &dataset.dims;
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.len() * record_len(dims));
    out.extend_from_slice(&MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&to_u32(dataset.len(), "sample count")?.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&to_u32(d.seq_len, "seq_len")?.to_le_bytes());
        out.extend_from_slice(&to_u32(d.feat_dim, "feat_dim")?.to_le_bytes());
    }
    for (i, sample) in dataset.samples.iter().enumerate() {
        if sample.dims() != *dims {
            return Err(Error::contract(format!(
                "sample {i} has dims {:?}, dataset declares {dims:?}",
                sample.dims()
            )));
        }
        out.extend_from_slice(&sample.score.to_le_bytes());
        for &len in &sample.valid_lens {
            out.extend_from_slice(&to_u32(len, "valid length")?.to_le_bytes());
        }
        for f in &sample.features {
            for v in &f.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: impl FnOnce() -> String) -> Result<&'a [u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(Error::Length {
                offset: self.bytes.len() as u64,
                context: format!("{} (needed {n} bytes at offset {})", context(), self.offset),
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self, context: impl FnOnce() -> String) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, context)?.try_into().unwrap(),
        ))
    }

    fn f32(&mut self, context: impl FnOnce() -> String) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4, context)?.try_into().unwrap(),
        ))
    }
}

pub fn decode_dataset(bytes: &[u8], options: &LoadOptions) -> Result<Dataset> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(4, || "magic".into())?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            "MMSA"
        )));
    }
    let version = r.take(1, || "version".into())?[0];
    if version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported dataset version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = r.u32(|| "sample count".into())? as usize;
    let mut dims = [ModalityDims::new(0, 0); 3];
    for d in &mut dims {
        d.seq_len = r.u32(|| "seq_len".into())? as usize;
        d.feat_dim = r.u32(|| "feat_dim".into())? as usize;
    }
    if n > 0 && dims.iter().any(|d| d.numel() == 0) {
        return Err(Error::format(format!(
            "zero extent in header dims {dims:?}"
        )));
    }
    if let Some(labels) = &options.labels {
        if labels.len() != n {
            return Err(Error::data(format!(
                "{} explicit labels for {n} samples",
                labels.len()
            )));
        }
    }

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let score = r.f32(|| format!("score of sample {i}"))?;
        let mut valid_lens = [0usize; 3];
        for len in &mut valid_lens {
            *len = r.u32(|| format!("valid lengths of sample {i}"))? as usize;
        }
        let features: Vec<Features> = dims
            .iter()
            .map(|&d| {
                let raw = r.take(4 * d.numel(), || format!("features of sample {i}"))?;
                let data: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::data(format!("non-finite feature in sample {i}")));
                }
                Features::new(d, data)
            })
            .collect::<Result<_>>()?;
        let features: [Features; 3] = features.try_into().expect("three modalities");
        let mut sample = MultimodalSample::new(features, valid_lens, score)
            .map_err(|e| Error::data(format!("sample {i}: {e}")))?;
        if let Some(labels) = &options.labels {
            sample.label = labels[i];
        }
        samples.push(sample);
    }
    if r.offset != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after {n} samples",
            bytes.len() - r.offset
        )));
    }
    Dataset::new(dims, samples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(path, &LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dims: [ModalityDims; 3], fill: f32, score: f32) -> MultimodalSample {
        let features = dims
            .map(|d| Features::new(d, (0..d.numel()).map(|i| fill + i as f32).collect()).unwrap());
        MultimodalSample::new(features, [1, dims[1].seq_len, 2], score).unwrap()
    }

    fn dims() -> [ModalityDims; 3] {
        [
            ModalityDims::new(2, 3),
            ModalityDims::new(4, 1),
            ModalityDims::new(3, 2),
        ]
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = Dataset::new(dims(), vec![]).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..4], b"MMSA");
        assert_eq!(&bytes[5..9], &0u32.to_le_bytes());
        assert_eq!(decode_dataset(&bytes, &LoadOptions::default()).unwrap(), ds);
    }

    #[test]
    fn single_sample_size_is_closed_form() {
        let ds = Dataset::new(dims(), vec![sample(dims(), 0.5, 1.5)]).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        // 33-byte header + score + 3 lengths + (6 + 4 + 6) floats
        assert_eq!(bytes.len(), 33 + 4 + 12 + 4 * 16);
        assert_eq!(bytes.len(), HEADER_LEN + record_len(&dims()));
    }

    #[test]
    fn encoding_is_deterministic_and_round_trips() {
        let ds = Dataset::new(
            dims(),
            vec![sample(dims(), 0.5, 1.5), sample(dims(), -2.0, -3.0)],
        )
        .unwrap();
        let a = encode_dataset(&ds).unwrap();
        let b = encode_dataset(&ds).unwrap();
        assert_eq!(a, b);
        let back = decode_dataset(&a, &LoadOptions::default()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.samples[1].label, Sentiment::Negative);
    }

    #[test]
    fn bad_magic_and_version() {
        let ds = Dataset::new(dims(), vec![sample(dims(), 0.0, 0.0)]).unwrap();
        let mut bytes = encode_dataset(&ds).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_dataset(&bytes, &LoadOptions::default()),
            Err(Error::Format(_))
        ));
        let mut bytes = encode_dataset(&ds).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_dataset(&bytes, &LoadOptions::default()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let samples = (0..10).map(|i| sample(dims(), i as f32, 0.0)).collect();
        let ds = Dataset::new(dims(), samples).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        // header still says 10 samples but only 9 records follow
        let cut = HEADER_LEN + 9 * record_len(&dims());
        match decode_dataset(&bytes[..cut], &LoadOptions::default()) {
            Err(Error::Length { offset, .. }) => assert_eq!(offset, cut as u64),
            other => panic!("expected length error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_feature_names_sample() {
        let ds = Dataset::new(
            dims(),
            vec![sample(dims(), 0.0, 0.0), sample(dims(), 0.0, 0.0)],
        )
        .unwrap();
        let mut bytes = encode_dataset(&ds).unwrap();
        let at = HEADER_LEN + record_len(&dims()) + 16;
        bytes[at..at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        match decode_dataset(&bytes, &LoadOptions::default()) {
            Err(Error::Data(msg)) => assert!(msg.contains("sample 1"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn explicit_labels_override_scores() {
        let ds = Dataset::new(dims(), vec![sample(dims(), 0.0, 0.0)]).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        let opts = LoadOptions {
            labels: Some(vec![Sentiment::Positive]),
        };
        let back = decode_dataset(&bytes, &opts).unwrap();
        assert_eq!(back.samples[0].label, Sentiment::Positive);
        let wrong = LoadOptions {
            labels: Some(vec![]),
        };
        assert!(decode_dataset(&bytes, &wrong).is_err());
    }
}
