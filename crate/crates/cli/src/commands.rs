use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use advmakeup::attacks::AttackConfig;
use advmakeup::config::RunConfig;
use advmakeup::data::{
    batch_of, image_files, load_image, load_samples, tensor_to_rgb8, StyleDomain,
};
use advmakeup::evaluation::{
    asr_bar_chart, calibrate_models, evaluate_run, false_accept_rate, write_rows, Protection,
    VerificationThreshold,
};
use advmakeup::experiment::{
    calibration_data, negative_scores, test_data, HELDOUT_CALIBRATION_IDENTITY_BASE,
};
use advmakeup::training::{self, load_checkpoint, Checkpoint, TrainOptions};
use advmakeup::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::{CalibrateArgs, EvaluateArgs, ProtectArgs, TrainArgs};

pub const PROTECT_SIDECAR: &str = "protect.json";
pub const REPORT_FILE: &str = "report.json";
pub const ROWS_FILE: &str = "images.csv";
pub const CHART_FILE: &str = "asr.png";

pub fn train(a: &TrainArgs) -> Result<()> {
    let config = RunConfig::load(&a.config)?.with_overrides(&a.overrides)?;
    let run_dir = a
        .run_dir
        .clone()
        .unwrap_or_else(|| a.run_root.join(&config.hash()[..12]));
    log::info!("run directory {}", run_dir.display());
    let opts = TrainOptions {
        resume: a.resume.clone(),
        force: a.force,
    };
    let out = training::train(&config, &run_dir, &opts)?;
    println!(
        "{} steps; final checkpoint {}",
        out.steps,
        out.final_checkpoint.display()
    );
    Ok(())
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::InvalidInput(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    load_checkpoint(path)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProtectedImage {
    pub image: String,
    pub source: PathBuf,
    /// Mean cosine similarity to the target over the ensemble.
    pub ensemble_similarity: f64,
    pub ensemble_similarity_clean: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProtectSidecar {
    pub config_hash: String,
    pub reference: PathBuf,
    pub images: Vec<ProtectedImage>,
}

pub fn protect(a: &ProtectArgs) -> Result<()> {
    let ck = open_checkpoint(&a.checkpoint)?;
    let r = ck.config.data.resolution;
    let files = image_files(&a.sources)?;
    let mut faces = Vec::new();
    for path in &files {
        let (w, h) = image::image_dimensions(path)?;
        faces.push((path, load_image(path, r)?, (w, h)));
    }
    if faces.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no images in {}",
            a.sources.display()
        )));
    }
    let reference = load_image(&a.reference, r)?;
    let x = batch_of(faces.iter().map(|f| &f.1));
    let y = batch_of(faces.iter().map(|_| &reference));
    let protected = ck.protect(&x, &y)?;
    let sims = ck.ensemble_similarity(&protected);
    let clean = ck.ensemble_similarity(&x);

    std::fs::create_dir_all(&a.out)?;
    let mut images = Vec::new();
    for (i, (path, _, (w, h))) in faces.iter().enumerate() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let mut img = tensor_to_rgb8(&protected.slice_batch(i, 1));
        if (img.width(), img.height()) != (*w, *h) {
            img = image::imageops::resize(&img, *w, *h, image::imageops::FilterType::Triangle);
        }
        img.save(a.out.join(format!("{stem}.png")))?;
        images.push(ProtectedImage {
            image: stem.to_string(),
            source: path.to_path_buf(),
            ensemble_similarity: sims[i],
            ensemble_similarity_clean: clean[i],
        });
    }
    let sidecar = ProtectSidecar {
        config_hash: ck.config_hash(),
        reference: a.reference.clone(),
        images,
    };
    std::fs::write(
        a.out.join(PROTECT_SIDECAR),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    println!("protected {} images into {}", faces.len(), a.out.display());
    Ok(())
}

fn attack_config(a: &EvaluateArgs, base: AttackConfig) -> Result<AttackConfig> {
    let mut c = base;
    c.method = a.attack.as_deref().unwrap_or("none").parse()?;
    if let Some(v) = a.eps {
        c.epsilon = v;
    }
    if let Some(v) = a.eps_u8 {
        c.epsilon = AttackConfig::epsilon_from_u8(v);
    }
    if let Some(v) = a.alpha {
        c.alpha = v;
    }
    if let Some(v) = a.alpha_u8 {
        c.alpha = AttackConfig::epsilon_from_u8(v);
    }
    if let Some(v) = a.steps {
        c.steps = v;
    }
    if let Some(v) = a.mu {
        c.mu = v;
    }
    if let Some(v) = a.kernel {
        c.kernel = v;
    }
    c.validate()?;
    Ok(c)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let ck = open_checkpoint(&a.checkpoint)?;
    let cfg = &ck.config;
    let protection = match a.attack {
        Some(_) => Protection::Attack(attack_config(a, cfg.attack)?),
        None => Protection::Generator,
    };
    let (sources, references) = match &a.test_dir {
        Some(dir) => {
            let r = cfg.data.resolution;
            (
                load_samples(&dir.join("sources"), r, StyleDomain::Source)?,
                load_samples(&dir.join("references"), r, StyleDomain::Reference)?,
            )
        }
        None => test_data(cfg),
    };
    let loaded = a
        .thresholds
        .as_deref()
        .map(ThresholdFile::load)
        .transpose()?;
    let far = match &loaded {
        Some(t) => t.far,
        None => a.far.unwrap_or(cfg.evaluation.far),
    };
    if !(0.0..=1.0).contains(&far) {
        return Err(Error::Config(format!("far must lie in [0, 1], got {far}")));
    }
    let ev = evaluate_run(
        &ck,
        &protection,
        &sources,
        &references,
        far,
        loaded.as_ref().map(|t| &t.thresholds[..]),
    )?;

    std::fs::create_dir_all(&a.out)?;
    std::fs::write(
        a.out.join(REPORT_FILE),
        serde_json::to_string_pretty(&ev.report)?,
    )?;
    write_rows(&a.out.join(ROWS_FILE), &ev.rows)?;
    asr_bar_chart(&ev.report).save(a.out.join(CHART_FILE))?;
    for (id, m) in &ev.report.models {
        println!(
            "{id:>8} {:<8} asr {:6.2}%  clean {:6.2}%  tau {:.4}",
            format!("{:?}", m.role).to_lowercase(),
            m.asr,
            m.asr_clean,
            m.tau
        );
    }
    println!(
        "fid {:.4}  psnr {:.2} dB  ssim {:.4}",
        ev.report.fid, ev.report.psnr_mean, ev.report.ssim_mean
    );
    Ok(())
}

/// Output of `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdFile {
    pub config_hash: String,
    pub far: f64,
    pub identities: usize,
    pub per_identity: usize,
    pub thresholds: Vec<VerificationThreshold>,
    /// False-accept rate of each threshold on a second, disjoint population.
    pub heldout_far: BTreeMap<String, f64>,
}

impl ThresholdFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read thresholds {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let ck = open_checkpoint(&a.checkpoint)?;
    let mut cfg = ck.config.clone();
    let far = a.far.unwrap_or(cfg.evaluation.far);
    if let Some(n) = a.identities {
        cfg.evaluation.calibration_identities = n;
    }
    if let Some(n) = a.per_identity {
        cfg.evaluation.calibration_per_identity = n;
    }
    let models: Vec<_> = ck.ensemble.iter().chain([&ck.holdout]).collect();
    let thresholds = calibrate_models(&cfg, models.iter().copied(), far)?;
    let heldout = calibration_data(&cfg, HELDOUT_CALIBRATION_IDENTITY_BASE);
    let heldout_far = models
        .iter()
        .zip(&thresholds)
        .map(|(m, t)| {
            (
                m.model_id.clone(),
                false_accept_rate(&negative_scores(m, &heldout), t.tau),
            )
        })
        .collect::<BTreeMap<_, _>>();
    for t in &thresholds {
        println!(
            "{:>8} tau {:.4}  far {:.4} on {} pairs, {:.4} held out",
            t.model_id, t.tau, t.far_achieved, t.pairs, heldout_far[&t.model_id]
        );
    }
    let file = ThresholdFile {
        config_hash: ck.config_hash(),
        far,
        identities: cfg.evaluation.calibration_identities,
        per_identity: cfg.evaluation.calibration_per_identity,
        thresholds,
        heldout_far,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&a.out, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}
