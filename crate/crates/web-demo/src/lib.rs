//! In-browser demo of the parts of the library that run without trained
//! networks: region-wise histogram makeup transfer on synthetic faces, the
//! input-diversity transform, and PSNR/SSIM of a face under Gaussian noise.
//!
//! Every operation returns an RGBA strip of square panels, `panels·R` wide
//! and `R` high, ready for `ImageData`.

use advmakeup::autograd::{Graph, Tensor};
use advmakeup::data::{synth_face, tensor_to_rgb8, FaceImage, RegionMaskSet, StyleDomain};
use advmakeup::diversity::{gaussian_noise, transform, DiversityConfig};
use advmakeup::evaluation::{psnr, ssim, to_unit_range, SsimConfig};
use advmakeup::histogram::histogram_match;
use advmakeup::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

pub const MIN_RESOLUTION: u32 = 16;
pub const MAX_RESOLUTION: u32 = 128;

fn check_resolution(r: u32) -> Result<usize> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&r) {
        return Err(Error::InvalidInput(format!(
            "resolution must lie in {MIN_RESOLUTION}..={MAX_RESOLUTION}, got {r}"
        )));
    }
    Ok(r as usize)
}

fn face(identity: u32, domain: StyleDomain, r: usize, seed: u64) -> (FaceImage, RegionMaskSet) {
    synth_face(
        identity as usize,
        domain,
        r,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

/// Side-by-side RGBA rendering of `3×R×R` tensors.
pub fn strip(panels: &[&Tensor]) -> Vec<u8> {
    let r = panels[0].shape()[1];
    let width = r * panels.len();
    let mut out = vec![255u8; 4 * width * r];
    for (k, p) in panels.iter().enumerate() {
        let img = tensor_to_rgb8(p);
        for (x, y, px) in img.enumerate_pixels() {
            let at = 4 * (y as usize * width + k * r + x as usize);
            out[at..at + 3].copy_from_slice(&px.0);
        }
    }
    out
}

/// Source face, made-up reference, and the source recoloured region by
/// region (lips, eyes, skin) to the reference's histograms.
pub fn makeup_transfer_strip(
    source: u32,
    reference: u32,
    resolution: u32,
    seed: u64,
) -> Result<Vec<u8>> {
    let r = check_resolution(resolution)?;
    let (x, xm) = face(source, StyleDomain::Source, r, seed);
    let (y, ym) = face(reference, StyleDomain::Reference, r, seed ^ 1);
    let matched = histogram_match(&x.pixels, &xm, &y.pixels, &ym)?;
    Ok(strip(&[&x.pixels, &y.pixels, &matched.pixels]))
}

/// A face and one draw of `T(x, p)`: random down/up resize, then noise.
pub fn diversity_strip(
    identity: u32,
    resolution: u32,
    p: f64,
    scale_low: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<u8>> {
    let r = check_resolution(resolution)?;
    let cfg = DiversityConfig {
        p,
        scale_low,
        scale_high: 1.0,
        sigma,
    };
    cfg.validate()?;
    let (x, _) = face(identity, StyleDomain::Source, r, seed);
    let g = Graph::new();
    let (t, _) = transform(
        g.constant(x.pixels.clone().reshape(&[1, 3, r, r])),
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(7)),
    );
    let t = (*t.value()).clone().reshape(&[3, r, r]);
    Ok(strip(&[&x.pixels, &t]))
}

/// PSNR and SSIM of a face against itself with `N(0, σ²)` noise added.
#[wasm_bindgen]
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseQuality {
    psnr: f64,
    ssim: f64,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl NoiseQuality {
    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.psnr
    }

    #[wasm_bindgen(getter)]
    pub fn ssim(&self) -> f64 {
        self.ssim
    }

    /// Clean and noisy panels.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

pub fn noise_quality_of(
    identity: u32,
    resolution: u32,
    sigma: f64,
    seed: u64,
) -> Result<NoiseQuality> {
    let r = check_resolution(resolution)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    let (x, _) = face(identity, StyleDomain::Source, r, seed);
    let g = Graph::new();
    let noisy = gaussian_noise(
        g.constant(x.pixels.clone()),
        sigma,
        &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(11)),
    );
    let noisy = (*noisy.value()).clone();
    let (a, b) = (to_unit_range(&x.pixels), to_unit_range(&noisy));
    Ok(NoiseQuality {
        psnr: psnr(&a, &b)?,
        ssim: ssim(&a, &b, &SsimConfig::default())?,
        rgba: strip(&[&x.pixels, &noisy]),
    })
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = makeupTransfer)]
pub fn makeup_transfer(
    source: u32,
    reference: u32,
    resolution: u32,
    seed: u32,
) -> Result<Vec<u8>, JsError> {
    makeup_transfer_strip(source, reference, resolution, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = inputDiversity)]
pub fn input_diversity(
    identity: u32,
    resolution: u32,
    p: f64,
    scale_low: f64,
    sigma: f64,
    seed: u32,
) -> Result<Vec<u8>, JsError> {
    diversity_strip(identity, resolution, p, scale_low, sigma, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = noiseQuality)]
pub fn noise_quality(
    identity: u32,
    resolution: u32,
    sigma: f64,
    seed: u32,
) -> Result<NoiseQuality, JsError> {
    noise_quality_of(identity, resolution, sigma, seed as u64).map_err(js)
}
