//! Region-wise colour histogram matching.
//!
//! For every region (lips, eye shadow, face skin) and channel, the source
//! pixels are remapped so their empirical distribution matches the reference
//! region's: a source pixel at rank `r` of `n` takes the reference value at
//! quantile `(r + ½)/n`. Ties are broken by pixel index, so the map is
//! monotone and deterministic. The result is a fixed target (no gradient).

use crate::autograd::Tensor;
use crate::data::{Mask, Region, RegionMaskSet};
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelHistogram {
    pub bin_counts: Vec<u64>,
    pub mask_pixel_count: u64,
}

/// Bin of a `[-1, 1]` value among `bins` uniform bins (values at +1 land in
/// the last bin).
pub fn bin_index(value: f64, bins: usize) -> usize {
    let t = ((value + 1.0) / 2.0 * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

fn channel_plane(image: &Tensor, channel: usize) -> Result<&[f64]> {
    let (c, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch {
                expected: vec![3, 0, 0],
                actual: other.to_vec(),
            })
        }
    };
    if channel >= c {
        return Err(Error::InvalidInput(format!(
            "channel {channel} of a {c}-channel image"
        )));
    }
    Ok(&image.data()[channel * h * w..(channel + 1) * h * w])
}

fn check_mask(image: &Tensor, mask: &Mask, what: &str) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if mask.size() != h || h != w {
        return Err(Error::ShapeMismatch {
            expected: vec![mask.size(), mask.size()],
            actual: vec![h, w],
        });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask(what.into()));
    }
    Ok(())
}

pub fn channel_histogram(
    image: &Tensor,
    mask: &Mask,
    channel: usize,
    bins: usize,
) -> Result<ChannelHistogram> {
    assert!(bins > 0);
    check_mask(image, mask, "histogram")?;
    let plane = channel_plane(image, channel)?;
    let mut bin_counts = vec![0u64; bins];
    let idx = mask.indices();
    for &i in &idx {
        bin_counts[bin_index(plane[i], bins)] += 1;
    }
    Ok(ChannelHistogram {
        bin_counts,
        mask_pixel_count: idx.len() as u64,
    })
}

/// Values of `plane` at `idx`, sorted ascending with ties in index order.
fn sorted_values(plane: &[f64], idx: &[usize]) -> Vec<f64> {
    let mut v: Vec<f64> = idx.iter().map(|&i| plane[i]).collect();
    // Stable sort keeps raster order among equal values.
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Matched values for the masked source pixels of one channel, in the order
/// of `source_mask.indices()`.
pub fn match_channel(
    source: &[f64],
    source_idx: &[usize],
    reference: &[f64],
    reference_idx: &[usize],
) -> Vec<f64> {
    let n = source_idx.len();
    let m = reference_idx.len();
    let ref_sorted = sorted_values(reference, reference_idx);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| source[source_idx[a]].total_cmp(&source[source_idx[b]]));
    let mut out = vec![0.0; n];
    for (rank, &k) in order.iter().enumerate() {
        let j = (((2 * rank + 1) * m) / (2 * n)).min(m - 1);
        out[k] = ref_sorted[j];
    }
    out
}

/// Matches one region of every channel; returns `3 × |source_mask|` values
/// (channel-major, raster order within a channel).
pub fn match_region(
    source: &Tensor,
    source_mask: &Mask,
    reference: &Tensor,
    reference_mask: &Mask,
) -> Result<Vec<f64>> {
    check_mask(source, source_mask, "source region")?;
    check_mask(reference, reference_mask, "reference region")?;
    let (s_idx, r_idx) = (source_mask.indices(), reference_mask.indices());
    let mut out = Vec::with_capacity(3 * s_idx.len());
    for ch in 0..source.shape()[0] {
        out.extend(match_channel(
            channel_plane(source, ch)?,
            &s_idx,
            channel_plane(reference, ch)?,
            &r_idx,
        ));
    }
    Ok(out)
}

/// Histogram-matched composite: `source` with each region recoloured to the
/// reference's corresponding region.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchedComposite {
    pub pixels: Tensor,
    pub matched_regions: Vec<Region>,
}

pub fn histogram_match(
    source: &Tensor,
    source_masks: &RegionMaskSet,
    reference: &Tensor,
    reference_masks: &RegionMaskSet,
) -> Result<MatchedComposite> {
    if source.shape() != reference.shape() {
        return Err(Error::ShapeMismatch {
            expected: source.shape().to_vec(),
            actual: reference.shape().to_vec(),
        });
    }
    let mut pixels = source.clone();
    let (c, h, w) = (source.shape()[0], source.shape()[1], source.shape()[2]);
    for region in Region::ALL {
        let (sm, rm) = (source_masks.region(region), reference_masks.region(region));
        if sm.is_empty() || rm.is_empty() {
            return Err(Error::EmptyMask(region.name().into()));
        }
        let matched = match_region(source, sm, reference, rm)?;
        let idx = sm.indices();
        for ch in 0..c {
            for (k, &i) in idx.iter().enumerate() {
                pixels.data_mut()[ch * h * w + i] = matched[ch * idx.len() + k];
            }
        }
    }
    Ok(MatchedComposite {
        pixels,
        matched_regions: Region::ALL.to_vec(),
    })
}

/// Composites for a batch (`N×3×H×W`) of pairs.
pub fn histogram_match_batch(
    sources: &Tensor,
    source_masks: &[&RegionMaskSet],
    references: &Tensor,
    reference_masks: &[&RegionMaskSet],
) -> Result<Tensor> {
    let n = sources.shape()[0];
    let items = (0..n)
        .map(|i| {
            let s = sources.slice_batch(i, 1);
            let r = references.slice_batch(i, 1);
            let shape = &s.shape()[1..].to_vec();
            let m = histogram_match(
                &s.clone().reshape(shape),
                source_masks[i],
                &r.reshape(shape),
                reference_masks[i],
            )?;
            Ok(m.pixels.reshape(s.shape()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&items))
}
