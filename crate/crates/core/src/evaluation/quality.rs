use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::{Error, Result};

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Maps a `[-1, 1]` image tensor to `[0, 1]`.
pub fn to_unit_range(t: &Tensor) -> Tensor {
    t.map(|v| (v + 1.0) / 2.0)
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// PSNR in dB of two `[0, 1]` images, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(t, wt)| wt * plane[r * w + c + t])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(t, wt)| wt * rows[(r + t) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean local SSIM of two `[0, 1]` images (`[C, H, W]` or `[N, C, H, W]`)
/// over Gaussian-weighted windows that fit entirely inside the image, and
/// over channels.
pub fn ssim(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    same_shape(a, b)?;
    let s = a.shape();
    if s.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "SSIM needs an image, got shape {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h < cfg.window || w < cfg.window {
        return Err(Error::InvalidInput(format!(
            "{h}×{w} image is smaller than the {0}×{0} SSIM window",
            cfg.window
        )));
    }
    let taps = gaussian_taps(cfg.window, cfg.sigma);
    let (c1, c2) = ((cfg.k1).powi(2), (cfg.k2).powi(2));
    let plane = h * w;
    let (mut total, mut count) = (0.0, 0usize);
    for (pa, pb) in a.data().chunks(plane).zip(b.data().chunks(plane)) {
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_a = filter_valid(pa, h, w, &taps);
        let mu_b = filter_valid(pb, h, w, &taps);
        let aa = filter_valid(&prod(pa, pa), h, w, &taps);
        let bb = filter_valid(&prod(pb, pb), h, w, &taps);
        let ab = filter_valid(&prod(pa, pb), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
