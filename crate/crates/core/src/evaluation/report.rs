//! End-to-end evaluation of a protection method on the unseen test
//! population, and the report files it produces.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{
    asr_from_scores, calibrate_threshold, fid, psnr, similarities_to, ssim, to_unit_range,
};
use super::{SsimConfig, VerificationThreshold};
use crate::attacks::{run_attack, AttackConfig};
use crate::autograd::Tensor;
use crate::data::{batch_of, Sample};
use crate::experiment::{calibration_data, negative_scores, CALIBRATION_IDENTITY_BASE};
use crate::networks::{FaceRecognizer, Surrogate};
use crate::training::Checkpoint;
use crate::{Error, Result};

/// Published results at full scale, kept as context only; desk-scale runs
/// are not comparable to them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceContext {
    pub clean_asr: f64,
    pub protected_asr: f64,
    pub fid: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub fid_without_regularizer: f64,
}

pub const REFERENCE_CONTEXT: ReferenceContext = ReferenceContext {
    clean_asr: 7.29,
    protected_asr: 76.96,
    fid: 34.4405,
    psnr: 19.5045,
    ssim: 0.7873,
    fid_without_regularizer: 37.55,
};

/// How the test images are protected.
#[derive(Clone, Debug, PartialEq)]
pub enum Protection {
    /// The checkpoint's generator, `G(x, y)`.
    Generator,
    /// A gradient attack against the checkpoint's surrogate ensemble.
    Attack(AttackConfig),
}

impl Protection {
    pub fn label(&self) -> String {
        match self {
            Protection::Generator => "generator".into(),
            Protection::Attack(a) => format!("{:?}", a.method).to_lowercase(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Ensemble,
    Holdout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetrics {
    pub role: ModelRole,
    /// Percentage of protected images accepted as the target.
    pub asr: f64,
    /// The same for the unmodified images.
    pub asr_clean: f64,
    pub tau: f64,
    pub far_achieved: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub config_hash: String,
    pub protection: String,
    pub images: usize,
    pub far: f64,
    pub models: BTreeMap<String, ModelMetrics>,
    /// Against the made-up reference set, on holdout-model features.
    pub fid: f64,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub reference_context: ReferenceContext,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        for (id, m) in &self.models {
            if !(0.0..=100.0).contains(&m.asr) || !(0.0..=100.0).contains(&m.asr_clean) {
                return bad(format!("{id}: ASR outside [0, 100]"));
            }
            if !(m.tau >= -1.0 && m.tau <= 1.0f64.next_up()) {
                return bad(format!("{id}: threshold {} outside [-1, 1]", m.tau));
            }
        }
        if !(self.fid >= 0.0) {
            return bad(format!("negative FID {}", self.fid));
        }
        if !(-1.0..=1.0).contains(&self.ssim_mean) {
            return bad(format!("SSIM {} outside [-1, 1]", self.ssim_mean));
        }
        Ok(())
    }
}

/// One row of the per-image CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub image: String,
    pub model_id: String,
    pub similarity: f64,
    pub similarity_clean: f64,
    pub accepted: bool,
    pub accepted_clean: bool,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub rows: Vec<ImageRow>,
    pub protected: Tensor,
}

/// Thresholds at `far` for every model, from different-identity pairs of
/// the calibration population.
pub fn calibrate_models<'a>(
    cfg: &crate::config::RunConfig,
    models: impl IntoIterator<Item = &'a FaceRecognizer>,
    far: f64,
) -> Result<Vec<VerificationThreshold>> {
    let samples = calibration_data(cfg, CALIBRATION_IDENTITY_BASE);
    models
        .into_iter()
        .map(|m| calibrate_threshold(&m.model_id, &negative_scores(m, &samples), far))
        .collect()
}

/// Protects `sources` (each paired with the reference of the same index,
/// cycling) and measures the result. Thresholds are calibrated unless given.
pub fn evaluate_run(
    ck: &Checkpoint,
    protection: &Protection,
    sources: &[Sample],
    references: &[Sample],
    far: f64,
    thresholds: Option<&[VerificationThreshold]>,
) -> Result<Evaluation> {
    if sources.is_empty() || references.is_empty() {
        return Err(Error::InvalidInput(
            "evaluation needs source and reference images".into(),
        ));
    }
    let x = batch_of(sources.iter().map(|s| &s.image));
    let y = batch_of((0..sources.len()).map(|i| &references[i % references.len()].image));
    let refs_all = batch_of(references.iter().map(|s| &s.image));
    let protected = match protection {
        Protection::Generator => ck.protect(&x, &y)?,
        Protection::Attack(cfg) => {
            let surrogates: Vec<&dyn Surrogate> =
                ck.ensemble.iter().map(|m| m as &dyn Surrogate).collect();
            run_attack(&x, &ck.target, &surrogates, cfg)?
        }
    };

    let models: Vec<(&FaceRecognizer, ModelRole)> = ck
        .ensemble
        .iter()
        .map(|m| (m, ModelRole::Ensemble))
        .chain([(&ck.holdout, ModelRole::Holdout)])
        .collect();
    let calibrated;
    let thresholds = match thresholds {
        Some(t) => t,
        None => {
            calibrated = calibrate_models(&ck.config, models.iter().map(|m| m.0), far)?;
            &calibrated[..]
        }
    };

    let (xu, pu) = (to_unit_range(&x), to_unit_range(&protected));
    let n = sources.len();
    let quality = (0..n)
        .map(|i| {
            let (a, b) = (pu.slice_batch(i, 1), xu.slice_batch(i, 1));
            Ok((psnr(&a, &b)?, ssim(&a, &b, &SsimConfig::default())?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut metrics = BTreeMap::new();
    for (m, role) in &models {
        let th = thresholds
            .iter()
            .find(|t| t.model_id == m.model_id)
            .ok_or_else(|| Error::InvalidInput(format!("no threshold for {}", m.model_id)))?;
        let z = m.embed_images(&ck.target);
        let adv = similarities_to(&m.embed_images(&protected), &z);
        let clean = similarities_to(&m.embed_images(&x), &z);
        for i in 0..n {
            rows.push(ImageRow {
                image: sources[i].name.clone(),
                model_id: m.model_id.clone(),
                similarity: adv[i],
                similarity_clean: clean[i],
                accepted: adv[i] >= th.tau,
                accepted_clean: clean[i] >= th.tau,
                psnr: quality[i].0,
                ssim: quality[i].1,
            });
        }
        metrics.insert(
            m.model_id.clone(),
            ModelMetrics {
                role: *role,
                asr: asr_from_scores(&adv, th.tau)?,
                asr_clean: asr_from_scores(&clean, th.tau)?,
                tau: th.tau,
                far_achieved: th.far_achieved,
            },
        );
    }

    let fid_value = fid(
        &ck.holdout.features_tensor(&protected),
        &ck.holdout.features_tensor(&refs_all),
    )?;
    let report = MetricsReport {
        config_hash: ck.config_hash(),
        protection: protection.label(),
        images: n,
        far,
        models: metrics,
        fid: fid_value,
        psnr_mean: quality.iter().map(|q| q.0).sum::<f64>() / n as f64,
        ssim_mean: quality.iter().map(|q| q.1).sum::<f64>() / n as f64,
        reference_context: REFERENCE_CONTEXT,
    };
    report.validate()?;
    Ok(Evaluation {
        report,
        rows,
        protected,
    })
}

pub fn write_rows(path: &Path, rows: &[ImageRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ImageRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(std::io::Error::from)?;
    let rows = rd
        .deserialize()
        .collect::<std::result::Result<Vec<ImageRow>, _>>();
    Ok(rows.map_err(std::io::Error::from)?)
}

/// Grouped bar chart of protected (dark) and clean (light) ASR per model,
/// on a 0–100 scale with gridlines every 25 points.
pub fn asr_bar_chart(report: &MetricsReport) -> RgbImage {
    const H: u32 = 200;
    const BAR: u32 = 24;
    const GAP: u32 = 32;
    let n = report.models.len() as u32;
    let w = GAP + n * (2 * BAR + GAP);
    let mut img = RgbImage::from_pixel(w, H + 20, Rgb([255, 255, 255]));
    for k in 0..=4 {
        let y = 10 + H - k * H / 4;
        for x in 0..w {
            img.put_pixel(x, y, Rgb([220, 220, 220]));
        }
    }
    let mut bar = |x0: u32, value: f64, color: Rgb<u8>| {
        let height = ((value / 100.0).clamp(0.0, 1.0) * H as f64).round() as u32;
        for x in x0..x0 + BAR {
            for y in (10 + H - height)..=(10 + H) {
                img.put_pixel(x, y, color);
            }
        }
    };
    for (i, m) in report.models.values().enumerate() {
        let x0 = GAP + i as u32 * (2 * BAR + GAP);
        let dark = match m.role {
            ModelRole::Holdout => Rgb([178, 34, 34]),
            ModelRole::Ensemble => Rgb([31, 78, 140]),
        };
        bar(x0, m.asr, dark);
        bar(x0 + BAR, m.asr_clean, Rgb([170, 170, 170]));
    }
    img
}
