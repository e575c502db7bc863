//! Face images, region masks, synthetic identities and pair streams.
//!
//! Pixels live in `[-1, 1]` everywhere inside the pipeline. Images loaded from
//! disk are mapped linearly from 8-bit values; synthetic faces are rendered
//! procedurally so that identity is carried by geometry and a skin texture
//! while the style domain (bare vs made-up) only changes the colour palette.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{imageops::FilterType, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleDomain {
    /// Bare faces (domain X).
    Source,
    /// Faces wearing makeup (domain Y).
    Reference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    /// `3×H×W` in `[-1, 1]`.
    pub pixels: Tensor,
    pub identity_id: Option<usize>,
    pub style_domain: StyleDomain,
}

impl FaceImage {
    pub fn new(
        pixels: Tensor,
        identity_id: Option<usize>,
        style_domain: StyleDomain,
    ) -> Result<Self> {
        match pixels.shape() {
            [3, h, w] if h == w => {}
            other => {
                return Err(Error::InvalidInput(format!(
                    "face image must be 3×R×R, got {other:?}"
                )))
            }
        }
        if let Some(v) = pixels
            .data()
            .iter()
            .find(|v| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "pixel value {v} outside [-1, 1]"
            )));
        }
        Ok(Self {
            pixels,
            identity_id,
            style_domain,
        })
    }

    pub fn resolution(&self) -> usize {
        self.pixels.shape()[1]
    }

    /// 8-bit RGB rendering (exact inverse of the loader's linear map).
    pub fn to_rgb8(&self) -> RgbImage {
        tensor_to_rgb8(&self.pixels)
    }
}

/// Linear map from an 8-bit level to `[-1, 1]`.
pub fn normalize_u8(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Inverse of [`normalize_u8`], rounding and saturating.
pub fn denormalize(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn rgb8_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, rest) = (i / (h * w), i % (h * w));
        normalize_u8(img.get_pixel((rest % w) as u32, (rest / w) as u32)[c])
    })
}

/// Renders a `3×H×W` tensor (or the first item of a batch) as 8-bit RGB.
pub fn tensor_to_rgb8(t: &Tensor) -> RgbImage {
    let (h, w) = match t.shape() {
        [3, h, w] | [_, 3, h, w] => (*h, *w),
        other => panic!("cannot render tensor of shape {other:?}"),
    };
    let d = t.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([
            denormalize(d[i]),
            denormalize(d[h * w + i]),
            denormalize(d[2 * h * w + i]),
        ])
    })
}

/// Binary `H×W` mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    size: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(size: usize) -> Self {
        Self {
            size,
            bits: vec![false; size * size],
        }
    }

    pub fn full(size: usize) -> Self {
        Self {
            size,
            bits: vec![true; size * size],
        }
    }

    pub fn from_bits(size: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), size * size);
        Self { size, bits }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.size + col] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Flat pixel indices inside the mask, in raster order.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn overlaps(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }
}

/// Lips, eye-shadow and face-skin regions of one face.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMaskSet {
    pub lips: Mask,
    pub eyes: Mask,
    pub face: Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Lips,
    Eyes,
    Face,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Lips, Region::Eyes, Region::Face];

    pub fn name(self) -> &'static str {
        match self {
            Region::Lips => "lips",
            Region::Eyes => "eyes",
            Region::Face => "face",
        }
    }
}

impl RegionMaskSet {
    pub fn region(&self, r: Region) -> &Mask {
        match r {
            Region::Lips => &self.lips,
            Region::Eyes => &self.eyes,
            Region::Face => &self.face,
        }
    }

    /// Disjoint and nonempty.
    pub fn validate(&self) -> Result<()> {
        for r in Region::ALL {
            if self.region(r).is_empty() {
                return Err(Error::EmptyMask(r.name().into()));
            }
        }
        if self.lips.overlaps(&self.eyes)
            || self.lips.overlaps(&self.face)
            || self.eyes.overlaps(&self.face)
        {
            return Err(Error::InvalidInput("region masks overlap".into()));
        }
        Ok(())
    }

    /// Union of all three regions.
    pub fn union(&self) -> Mask {
        let bits = (0..self.face.bits.len())
            .map(|i| self.lips.bits[i] || self.eyes.bits[i] || self.face.bits[i])
            .collect();
        Mask::from_bits(self.face.size, bits)
    }

    /// Geometric masks for an average face, used when no sidecar is given.
    pub fn default_geometry(resolution: usize) -> Self {
        FaceGeometry::average().masks(resolution, (0.0, 0.0))
    }

    /// Decodes a channel-coded mask image (R = lips, G = eyes, B = face).
    /// Overlaps are resolved lips > eyes > face.
    pub fn from_rgb8(img: &RgbImage, resolution: usize) -> Self {
        let img = if img.width() as usize == resolution && img.height() as usize == resolution {
            img.clone()
        } else {
            image::imageops::resize(
                img,
                resolution as u32,
                resolution as u32,
                FilterType::Nearest,
            )
        };
        let mut set = RegionMaskSet {
            lips: Mask::empty(resolution),
            eyes: Mask::empty(resolution),
            face: Mask::empty(resolution),
        };
        for (x, y, px) in img.enumerate_pixels() {
            let (r, c) = (y as usize, x as usize);
            if px[0] >= 128 {
                set.lips.set(r, c, true);
            } else if px[1] >= 128 {
                set.eyes.set(r, c, true);
            } else if px[2] >= 128 {
                set.face.set(r, c, true);
            }
        }
        set
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let n = self.face.size as u32;
        RgbImage::from_fn(n, n, |x, y| {
            let (r, c) = (y as usize, x as usize);
            let on = |m: &Mask| if m.get(r, c) { 255 } else { 0 };
            image::Rgb([on(&self.lips), on(&self.eyes), on(&self.face)])
        })
    }
}

/// A face with its region masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: FaceImage,
    pub masks: RegionMaskSet,
    /// File stem for loaded images; synthetic samples use `id<k>_<n>`.
    pub name: String,
}

/// Stacks images into an `N×3×H×W` batch.
pub fn batch_of<'a>(images: impl IntoIterator<Item = &'a FaceImage>) -> Tensor {
    let items: Vec<Tensor> = images
        .into_iter()
        .map(|f| {
            let mut shape = vec![1];
            shape.extend_from_slice(f.pixels.shape());
            f.pixels.clone().reshape(&shape)
        })
        .collect();
    Tensor::stack(&items)
}

fn is_mask_sidecar(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.ends_with(".mask.png"))
        .unwrap_or(false)
}

/// Sidecar mask path for an image: `<stem>.mask.png` next to it.
pub fn mask_sidecar_path(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    image_path.with_file_name(format!("{stem}.mask.png"))
}

/// Image files in `dir`, sorted, without mask sidecars.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "image directory {} does not exist",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !is_mask_sidecar(p))
        .collect();
    files.sort();
    Ok(files)
}

fn decode_resized(path: &Path, resolution: usize) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    Ok(
        if img.width() as usize == resolution && img.height() as usize == resolution {
            img
        } else {
            image::imageops::resize(
                &img,
                resolution as u32,
                resolution as u32,
                FilterType::Triangle,
            )
        },
    )
}

/// Loads every decodable image in `dir`, resized to `resolution²`, with
/// region masks from sidecars (or the default geometry).
pub fn load_samples(dir: &Path, resolution: usize, domain: StyleDomain) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for path in image_files(dir)? {
        let img = match decode_resized(&path, resolution) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let sidecar = mask_sidecar_path(&path);
        let masks = if sidecar.is_file() {
            RegionMaskSet::from_rgb8(&image::open(&sidecar)?.to_rgb8(), resolution)
        } else {
            RegionMaskSet::default_geometry(resolution)
        };
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        out.push(Sample {
            image: FaceImage::new(rgb8_to_tensor(&img), None, domain)?,
            masks,
            name,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no decodable images in {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Loads one image as a source-domain face of `resolution²`.
pub fn load_image(path: &Path, resolution: usize) -> Result<FaceImage> {
    let img = decode_resized(path, resolution)?;
    FaceImage::new(rgb8_to_tensor(&img), None, StyleDomain::Source)
}

/// Loads every decodable image in `dir` as a source-domain face.
pub fn load_images(dir: &Path, resolution: usize) -> Result<Vec<FaceImage>> {
    Ok(load_samples(dir, resolution, StyleDomain::Source)?
        .into_iter()
        .map(|s| s.image)
        .collect())
}

/// Per-identity shape and texture, fixed by the identity index alone.
#[derive(Clone, Debug)]
struct FaceGeometry {
    center: (f64, f64),
    radii: (f64, f64),
    eye_dx: f64,
    eye_y: f64,
    mouth_y: f64,
    mouth_rx: f64,
    hairline: f64,
    /// `(frequency, angle, phase)` of two skin gratings.
    gratings: [(f64, f64, f64); 2],
}

const IDENTITY_SALT: u64 = 0x1d_e7_17_7f_ac_e5;
const EYE_RADII: (f64, f64) = (0.085, 0.055);
const MOUTH_RY: f64 = 0.045;
const TEXTURE_AMPLITUDE: f64 = 0.11;

impl FaceGeometry {
    fn for_identity(id: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(
            IDENTITY_SALT ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let mut grating = || {
            (
                rng.random_range(1.5..4.0),
                rng.random_range(0.0..PI),
                rng.random_range(0.0..2.0 * PI),
            )
        };
        let gratings = [grating(), grating()];
        Self {
            center: (
                0.5 + rng.random_range(-0.03..0.03),
                0.53 + rng.random_range(-0.03..0.03),
            ),
            radii: (rng.random_range(0.30..0.38), rng.random_range(0.37..0.44)),
            eye_dx: rng.random_range(0.13..0.19),
            eye_y: rng.random_range(0.39..0.46),
            mouth_y: rng.random_range(0.67..0.74),
            mouth_rx: rng.random_range(0.09..0.15),
            hairline: rng.random_range(0.04..0.16),
            gratings,
        }
    }

    fn average() -> Self {
        Self {
            center: (0.5, 0.53),
            radii: (0.34, 0.405),
            eye_dx: 0.16,
            eye_y: 0.425,
            mouth_y: 0.705,
            mouth_rx: 0.12,
            hairline: 0.1,
            gratings: [(0.0, 0.0, 0.0); 2],
        }
    }

    fn in_ellipse((u, v): (f64, f64), (cx, cy): (f64, f64), (rx, ry): (f64, f64)) -> bool {
        let (a, b) = ((u - cx) / rx, (v - cy) / ry);
        a * a + b * b <= 1.0
    }

    fn eye_centers(&self, (jx, jy): (f64, f64)) -> [(f64, f64); 2] {
        let cx = self.center.0 + jx;
        let y = self.eye_y + jy;
        [(cx - self.eye_dx, y), (cx + self.eye_dx, y)]
    }

    fn mouth_center(&self, (jx, jy): (f64, f64)) -> (f64, f64) {
        (self.center.0 + jx, self.mouth_y + jy)
    }

    fn masks(&self, res: usize, jitter: (f64, f64)) -> RegionMaskSet {
        let mut set = RegionMaskSet {
            lips: Mask::empty(res),
            eyes: Mask::empty(res),
            face: Mask::empty(res),
        };
        let center = (self.center.0 + jitter.0, self.center.1 + jitter.1);
        let eyes = self.eye_centers(jitter);
        let mouth = self.mouth_center(jitter);
        let mouth_radii = (self.mouth_rx, MOUTH_RY);
        for r in 0..res {
            for c in 0..res {
                let p = ((c as f64 + 0.5) / res as f64, (r as f64 + 0.5) / res as f64);
                if Self::in_ellipse(p, mouth, mouth_radii) {
                    set.lips.set(r, c, true);
                } else if eyes.iter().any(|&e| Self::in_ellipse(p, e, EYE_RADII)) {
                    set.eyes.set(r, c, true);
                } else if Self::in_ellipse(p, center, self.radii)
                    && p.1 > center.1 - self.radii.1 + self.hairline
                {
                    set.face.set(r, c, true);
                }
            }
        }
        // Tiny resolutions can miss every pixel centre: claim the nearest one.
        let nearest = |(u, v): (f64, f64)| {
            let clampi = |t: f64| ((t * res as f64).floor().max(0.0) as usize).min(res - 1);
            (clampi(v), clampi(u))
        };
        let claim = |set: &mut RegionMaskSet, region: Region, (r, c): (usize, usize)| {
            set.lips.set(r, c, region == Region::Lips);
            set.eyes.set(r, c, region == Region::Eyes);
            set.face.set(r, c, region == Region::Face);
        };
        if set.lips.is_empty() {
            claim(&mut set, Region::Lips, nearest(mouth));
        }
        for e in eyes {
            let (r, c) = nearest(e);
            if !Self::any_in(&set.eyes, (r, c), res) {
                claim(&mut set, Region::Eyes, (r, c));
            }
        }
        if set.face.is_empty() {
            claim(&mut set, Region::Face, nearest((center.0, center.1 - 0.1)));
        }
        set
    }

    fn any_in(mask: &Mask, (r, c): (usize, usize), res: usize) -> bool {
        let lo = |v: usize| v.saturating_sub(1);
        let hi = |v: usize| (v + 1).min(res - 1);
        (lo(r)..=hi(r)).any(|rr| (lo(c)..=hi(c)).any(|cc| mask.get(rr, cc)))
    }

    fn texture(&self, (u, v): (f64, f64)) -> f64 {
        self.gratings
            .iter()
            .map(|&(f, a, ph)| (2.0 * PI * f * (u * a.cos() + v * a.sin()) + ph).sin())
            .sum::<f64>()
            * TEXTURE_AMPLITUDE
            / 2.0
    }
}

const LIP_PALETTE: [[f64; 3]; 4] = [
    [0.70, -0.60, -0.50],
    [0.30, -0.50, -0.10],
    [0.80, -0.10, -0.30],
    [0.45, -0.70, -0.20],
];

const SHADOW_PALETTE: [[f64; 3]; 4] = [
    [0.10, -0.40, 0.40],
    [-0.40, -0.20, 0.50],
    [0.10, -0.35, -0.50],
    [-0.50, -0.50, -0.45],
];

/// Procedural face for `identity_id` in `domain`.
///
/// Identity fixes geometry and skin texture; per-sample draws from `rng`
/// choose a small placement jitter, lighting, the colour palette and sensor
/// noise. The masks follow the jittered geometry.
pub fn synth_face<R: Rng + ?Sized>(
    identity_id: usize,
    domain: StyleDomain,
    resolution: usize,
    rng: &mut R,
) -> (FaceImage, RegionMaskSet) {
    assert!(
        resolution >= 4,
        "resolution {resolution} too small for a face"
    );
    let geo = FaceGeometry::for_identity(identity_id);
    let jitter = (
        rng.random_range(-0.015..0.015),
        rng.random_range(-0.015..0.015),
    );
    let masks = geo.masks(resolution, jitter);

    let background = rng.random_range(-0.7..-0.4);
    let hair = [
        rng.random_range(-0.85..-0.6),
        rng.random_range(-0.9..-0.7),
        rng.random_range(-0.9..-0.75),
    ];
    let mut skin = [
        rng.random_range(0.35..0.6),
        rng.random_range(0.05..0.3),
        rng.random_range(-0.15..0.1),
    ];
    let (lips, shadow) = match domain {
        StyleDomain::Source => (
            [skin[0] + 0.12, skin[1] - 0.08, skin[2] - 0.02],
            [skin[0] - 0.35, skin[1] - 0.35, skin[2] - 0.3],
        ),
        StyleDomain::Reference => {
            skin[0] += 0.06;
            skin[1] += 0.04;
            let mut pick = |palette: &[[f64; 3]; 4]| {
                let base = palette[rng.random_range(0..palette.len())];
                base.map(|v| v + rng.random_range(-0.05..0.05))
            };
            (pick(&LIP_PALETTE), pick(&SHADOW_PALETTE))
        }
    };
    let light = rng.random_range(-0.05..0.05);
    let noise = Normal::new(0.0, 0.02).expect("finite std");

    let center = (geo.center.0 + jitter.0, geo.center.1 + jitter.1);
    let plane = resolution * resolution;
    let mut data = vec![0.0; 3 * plane];
    for r in 0..resolution {
        for c in 0..resolution {
            let p = (
                (c as f64 + 0.5) / resolution as f64,
                (r as f64 + 0.5) / resolution as f64,
            );
            let inside = FaceGeometry::in_ellipse(p, center, geo.radii);
            let color = if masks.lips.get(r, c) {
                lips
            } else if masks.eyes.get(r, c) {
                shadow
            } else if masks.face.get(r, c) {
                skin
            } else if inside {
                hair
            } else {
                [background + 0.2 * (p.1 - 0.5); 3]
            };
            let tex = if inside {
                geo.texture((p.0 - center.0, p.1 - center.1))
            } else {
                0.0
            };
            for ch in 0..3 {
                let v = color[ch] + tex + light + noise.sample(rng);
                data[ch * plane + r * resolution + c] = v.clamp(-0.95, 0.95);
            }
        }
    }
    let image = FaceImage::new(
        Tensor::new(vec![3, resolution, resolution], data),
        Some(identity_id),
        domain,
    )
    .expect("synthetic pixels are clamped");
    (image, masks)
}

/// `per_identity` synthetic samples for each identity in `ids`.
pub fn synth_samples<R: Rng + ?Sized>(
    ids: impl IntoIterator<Item = usize>,
    domain: StyleDomain,
    per_identity: usize,
    resolution: usize,
    rng: &mut R,
) -> Vec<Sample> {
    let mut out = Vec::new();
    for id in ids {
        for n in 0..per_identity {
            let (image, masks) = synth_face(id, domain, resolution, rng);
            out.push(Sample {
                image,
                masks,
                name: format!("id{id}_{n}"),
            });
        }
    }
    out
}

/// Reproducible uniform sampler of `(source, reference)` pairs.
#[derive(Clone, Debug)]
pub struct PairStream<'a> {
    seed: u64,
    sources: &'a [Sample],
    references: &'a [Sample],
    rng: ChaCha8Rng,
}

pub fn make_pair_stream<'a>(
    sources: &'a [Sample],
    references: &'a [Sample],
    seed: u64,
) -> Result<PairStream<'a>> {
    if sources.is_empty() || references.is_empty() {
        return Err(Error::Config(
            "pair stream needs nonempty source and reference sets".into(),
        ));
    }
    if let Some(s) = sources
        .iter()
        .find(|s| s.image.style_domain != StyleDomain::Source)
    {
        return Err(Error::InvalidInput(format!(
            "{} is not a source-domain face",
            s.name
        )));
    }
    if let Some(s) = references
        .iter()
        .find(|s| s.image.style_domain != StyleDomain::Reference)
    {
        return Err(Error::InvalidInput(format!(
            "{} is not a reference-domain face",
            s.name
        )));
    }
    Ok(PairStream {
        seed,
        sources,
        references,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl<'a> PairStream<'a> {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next pair as indices into the source and reference sets.
    pub fn next_indices(&mut self) -> (usize, usize) {
        let i = self.rng.random_range(0..self.sources.len());
        let j = self.rng.random_range(0..self.references.len());
        (i, j)
    }

    /// Draws `n` pairs.
    pub fn next_batch(&mut self, n: usize) -> Vec<(&'a Sample, &'a Sample)> {
        (0..n)
            .map(|_| self.next().expect("infinite stream"))
            .collect()
    }

    /// Position in the underlying random stream, for checkpointing.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }
}

impl<'a> Iterator for PairStream<'a> {
    type Item = (&'a Sample, &'a Sample);

    fn next(&mut self) -> Option<Self::Item> {
        let (i, j) = self.next_indices();
        Some((&self.sources[i], &self.references[j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn write_png(path: &Path, value: u8, size: u32) {
        RgbImage::from_pixel(size, size, image::Rgb([value; 3]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn black_and_white_images_hit_range_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("black.png"), 0, 8);
        let imgs = load_images(dir.path(), 8).unwrap();
        assert_eq!(imgs.len(), 1);
        assert!(imgs[0].pixels.data().iter().all(|&v| v == -1.0));

        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("white.png"), 255, 8);
        let imgs = load_images(dir.path(), 8).unwrap();
        assert!(imgs[0].pixels.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn corrupt_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..4 {
            write_png(&dir.path().join(format!("ok{i}.png")), 40 * i as u8, 16);
        }
        std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        let imgs = load_images(dir.path(), 8).unwrap();
        assert_eq!(imgs.len(), 4);
        assert!(imgs.iter().all(|f| f.resolution() == 8));
    }

    #[test]
    fn missing_or_empty_directory_is_an_error() {
        assert!(matches!(
            load_images(Path::new("/nonexistent/faces"), 8),
            Err(Error::Config(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("junk.jpg"), b"junk").unwrap();
        assert!(matches!(
            load_images(dir.path(), 8),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn gray_levels_round_trip_exactly() {
        for v in 0..=255u8 {
            assert_eq!(denormalize(normalize_u8(v)), v);
        }
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(16, 16, |x, y| image::Rgb([(y * 16 + x) as u8; 3]));
        img.save(dir.path().join("ramp.png")).unwrap();
        let loaded = load_images(dir.path(), 16).unwrap();
        assert_eq!(loaded[0].to_rgb8(), img);
    }

    #[test]
    fn mask_sidecar_is_used() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("face.png"), 128, 8);
        let masks = RegionMaskSet {
            lips: Mask::from_bits(8, (0..64).map(|i| i == 60).collect()),
            eyes: Mask::from_bits(8, (0..64).map(|i| i == 20).collect()),
            face: Mask::from_bits(8, (0..64).map(|i| i == 30 || i == 31).collect()),
        };
        masks
            .to_rgb8()
            .save(dir.path().join("face.mask.png"))
            .unwrap();
        let samples = load_samples(dir.path(), 8, StyleDomain::Source).unwrap();
        assert_eq!(samples.len(), 1, "sidecar must not load as a face");
        assert_eq!(samples[0].masks, masks);
    }

    #[test]
    fn synth_faces_are_deterministic() {
        let a = synth_face(3, StyleDomain::Reference, 32, &mut rng(9));
        let b = synth_face(3, StyleDomain::Reference, 32, &mut rng(9));
        assert_eq!(a, b);
    }

    #[test]
    fn synth_masks_are_disjoint_and_nonempty() {
        let mut r = rng(1);
        for res in [8, 16, 32, 64] {
            for id in 0..20 {
                for domain in [StyleDomain::Source, StyleDomain::Reference] {
                    let (_, masks) = synth_face(id, domain, res, &mut r);
                    masks
                        .validate()
                        .unwrap_or_else(|e| panic!("res {res} id {id}: {e}"));
                }
            }
        }
    }

    #[test]
    fn identities_differ_more_than_samples_of_one_identity() {
        let mut r = rng(5);
        let faces = |id, r: &mut ChaCha8Rng| -> Vec<Tensor> {
            (0..100)
                .map(|_| synth_face(id, StyleDomain::Source, 32, r).0.pixels)
                .collect()
        };
        let a = faces(0, &mut r);
        let b = faces(1, &mut r);
        let l1 = |x: &Tensor, y: &Tensor| x.zip_map(y, |p, q| (p - q).abs()).mean();
        let within: f64 = (0..99).map(|i| l1(&a[i], &a[i + 1])).sum::<f64>() / 99.0;
        let across: f64 = (0..100).map(|i| l1(&a[i], &b[i])).sum::<f64>() / 100.0;
        assert!(across > within, "across {across} within {within}");
    }

    fn small_sets() -> (Vec<Sample>, Vec<Sample>) {
        let mut r = rng(2);
        (
            synth_samples(0..10, StyleDomain::Source, 1, 8, &mut r),
            synth_samples(0..10, StyleDomain::Reference, 1, 8, &mut r),
        )
    }

    #[test]
    fn pair_stream_replays_from_seed() {
        let (src, refs) = small_sets();
        let a: Vec<_> = make_pair_stream(&src, &refs, 7)
            .unwrap()
            .take(50)
            .map(|(x, y)| (x.name.clone(), y.name.clone()))
            .collect();
        let b: Vec<_> = make_pair_stream(&src, &refs, 7)
            .unwrap()
            .take(50)
            .map(|(x, y)| (x.name.clone(), y.name.clone()))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn single_element_sets_repeat_one_pair() {
        let (src, refs) = small_sets();
        let mut s = make_pair_stream(&src[..1], &refs[..1], 3).unwrap();
        assert!((0..20).all(|_| s.next_indices() == (0, 0)));
    }

    #[test]
    fn pair_stream_rejects_empty_and_wrong_domain() {
        let (src, refs) = small_sets();
        assert!(matches!(
            make_pair_stream(&[], &refs, 0),
            Err(Error::Config(_))
        ));
        assert!(make_pair_stream(&refs, &src, 0).is_err());
    }

    #[test]
    fn sources_are_sampled_uniformly() {
        // Binomial(10 000, 0.1): std 30, so ±150 is a 5σ band (99% needs ~2.6σ per
        // cell, 3.3σ after a union bound over ten cells).
        let (src, refs) = small_sets();
        let mut s = make_pair_stream(&src, &refs, 11).unwrap();
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            counts[s.next_indices().0] += 1;
        }
        for c in counts {
            assert!((850..=1150).contains(&c), "count {c}");
        }
    }

    #[test]
    fn distinct_seeds_diverge_quickly() {
        let (src, refs) = small_sets();
        let differing = (0..100u64)
            .filter(|&k| {
                let a: Vec<_> = (0..10)
                    .map({
                        let mut s = make_pair_stream(&src, &refs, 2 * k).unwrap();
                        move |_| s.next_indices()
                    })
                    .collect();
                let b: Vec<_> = (0..10)
                    .map({
                        let mut s = make_pair_stream(&src, &refs, 2 * k + 1).unwrap();
                        move |_| s.next_indices()
                    })
                    .collect();
                a != b
            })
            .count();
        assert!(differing >= 99);
    }
}
