use crate::error::{Error, Result};
use crate::tensor::{argmax, Scalar, Tensor};
use crate::NUM_CLASSES;

fn softmax_f64<S: Scalar>(row: &[S]) -> [f64; NUM_CLASSES] {
    let max = row
        .iter()
        .map(|v| v.to_f64_lossy())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v.to_f64_lossy() - max).exp();
    }
    let total: f64 = out.iter().sum();
    out.map(|v| v / total)
}

/// Summed probabilities closer than this count as tied. Mathematically equal
/// sums can differ by a few ulps depending on summation order.
pub const MASS_TIE_TOLERANCE: f64 = 1e-12;

/// Majority vote over per-modality argmax predictions.
///
/// A class with at least two votes wins. When all three modalities disagree,
/// the class with the largest summed softmax probability wins, and ties
/// (within [`MASS_TIE_TOLERANCE`]) go to the lowest class index.
pub fn late_fusion_predict<S: Scalar>(
    video: &Tensor<S>,
    audio: &Tensor<S>,
    text: &Tensor<S>,
) -> Result<Vec<usize>> {
    let shape = video.shape();
    if shape.len() != 2 || shape[1] != NUM_CLASSES {
        return Err(Error::contract(format!(
            "vote logits must be [b×{NUM_CLASSES}], got {shape:?}"
        )));
    }
    if audio.shape() != shape || text.shape() != shape {
        return Err(Error::contract(format!(
            "vote logits disagree on shape: {:?}, {:?}, {:?}",
            shape,
            audio.shape(),
            text.shape()
        )));
    }
    let rows = |t: &Tensor<S>| {
        t.data()
            .chunks(NUM_CLASSES)
            .map(<[S]>::to_vec)
            .collect::<Vec<_>>()
    };
    let (rv, ra, rt) = (rows(video), rows(audio), rows(text));
    let mut out = Vec::with_capacity(shape[0]);
    for i in 0..shape[0] {
        let mut counts = [0usize; NUM_CLASSES];
        for row in [&rv[i], &ra[i], &rt[i]] {
            counts[argmax(row)] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n >= 2) {
            out.push(c);
            continue;
        }
        let mut mass = [0.0f64; NUM_CLASSES];
        for row in [&rv[i], &ra[i], &rt[i]] {
            for (m, p) in mass.iter_mut().zip(softmax_f64(row)) {
                *m += p;
            }
        }
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if mass[c] > mass[best] + MASS_TIE_TOLERANCE {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::new([rows.len(), 3], rows.concat()).unwrap()
    }

    #[test]
    fn strict_majority_and_unanimity() {
        let pos = [0.0, 0.0, 1.0];
        let neg = [1.0, 0.0, 0.0];
        let got = late_fusion_predict(
            &logits(&[pos, neg]),
            &logits(&[pos, neg]),
            &logits(&[neg, neg]),
        )
        .unwrap();
        assert_eq!(got, vec![2, 0]);
    }

    #[test]
    fn three_way_tie_uses_softmax_mass() {
        // probabilities chosen so that the summed mass is [0.9, 1.1, 1.0]
        let v = [0.5f64, 0.3, 0.2].map(f64::ln);
        let a = [0.1f64, 0.6, 0.3].map(f64::ln);
        let t = [0.3f64, 0.2, 0.5].map(f64::ln);
        let got = late_fusion_predict(&logits(&[v]), &logits(&[a]), &logits(&[t])).unwrap();
        assert_eq!(got, vec![1]);
    }

    #[test]
    fn batch_mismatch_is_contract_error() {
        let one = logits(&[[0.0; 3]]);
        let two = logits(&[[0.0; 3], [0.0; 3]]);
        assert!(matches!(
            late_fusion_predict(&one, &two, &one),
            Err(Error::Contract(_))
        ));
    }
}
