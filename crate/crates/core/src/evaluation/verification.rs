use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::{Error, Result};

/// Minimum number of different-identity pairs accepted by
/// [`calibrate_threshold`].
pub const MIN_CALIBRATION_PAIRS: usize = 1000;

/// Cosine similarity between row `i` of `a` and row `j` of `b` (`[n, d]`).
pub fn cosine_rows(a: &Tensor, i: usize, b: &Tensor, j: usize) -> f64 {
    let (_, d) = a.dims2();
    assert_eq!(b.dims2().1, d, "embedding widths differ");
    let ra = &a.data()[i * d..(i + 1) * d];
    let rb = &b.data()[j * d..(j + 1) * d];
    let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    let na: f64 = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Similarity of every row of `embeddings` to the single row of `target`.
pub fn similarities_to(embeddings: &Tensor, target: &Tensor) -> Vec<f64> {
    (0..embeddings.dims2().0)
        .map(|i| cosine_rows(embeddings, i, target, 0))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationThreshold {
    pub model_id: String,
    pub tau: f64,
    pub far_target: f64,
    pub far_achieved: f64,
    pub pairs: usize,
}

/// Threshold accepting a `far` fraction of `negatives`: the smallest score
/// among the top `round(far·n)` scores. Scores tied with it are accepted too.
/// With `far = 0` the threshold sits just above the largest negative.
pub fn calibrate_threshold(
    model_id: &str,
    negatives: &[f64],
    far: f64,
) -> Result<VerificationThreshold> {
    if !(0.0..=1.0).contains(&far) {
        return Err(Error::Config(format!("far must lie in [0, 1], got {far}")));
    }
    if negatives.len() < MIN_CALIBRATION_PAIRS {
        return Err(Error::InvalidInput(format!(
            "threshold calibration needs at least {MIN_CALIBRATION_PAIRS} negative pairs, got {}",
            negatives.len()
        )));
    }
    if let Some(bad) = negatives.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite similarity {bad}")));
    }
    let mut sorted = negatives.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (far * sorted.len() as f64).round() as usize;
    let tau = if k == 0 {
        sorted[0].next_up()
    } else {
        sorted[k - 1]
    };
    Ok(VerificationThreshold {
        model_id: model_id.into(),
        tau,
        far_target: far,
        far_achieved: false_accept_rate(negatives, tau),
        pairs: negatives.len(),
    })
}

pub fn false_accept_rate(negatives: &[f64], tau: f64) -> f64 {
    negatives.iter().filter(|&&s| s >= tau).count() as f64 / negatives.len() as f64
}

/// Percentage of `scores` at or above `tau`.
pub fn asr_from_scores(scores: &[f64], tau: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(
            "attack success rate of an empty set".into(),
        ));
    }
    Ok(100.0 * scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64)
}

/// Attack success rate of `adv_images` against `target` (`[1, 3, H, W]`)
/// under `embed`, which maps an image batch to `[n, d]` embeddings.
pub fn asr(
    adv_images: &Tensor,
    target: &Tensor,
    embed: impl Fn(&Tensor) -> Tensor,
    tau: f64,
) -> Result<f64> {
    if adv_images.shape()[0] == 0 {
        return Err(Error::InvalidInput(
            "attack success rate of an empty set".into(),
        ));
    }
    asr_from_scores(&similarities_to(&embed(adv_images), &embed(target)), tau)
}

/// Equal-error operating point: the threshold where the false-reject rate of
/// `genuine` and the false-accept rate of `impostor` are closest, and the
/// accuracy `1 - (FAR + FRR) / 2` there.
pub fn eer_operating_point(genuine: &[f64], impostor: &[f64]) -> Result<(f64, f64)> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InvalidInput(
            "equal-error rate needs both same- and different-identity pairs".into(),
        ));
    }
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let (ng, ni) = (g.len() as f64, i.len() as f64);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &t in g.iter().chain(&i) {
        let frr = g.partition_point(|&s| s < t) as f64 / ng;
        let far = (i.len() - i.partition_point(|&s| s < t)) as f64 / ni;
        let gap = (far - frr).abs();
        if gap < best.0 {
            best = (gap, t, 1.0 - (far + frr) / 2.0);
        }
    }
    Ok((best.1, best.2))
}
