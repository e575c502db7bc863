//! Assembly of the datasets and surrogate models a run needs.
//!
//! Everything here is a deterministic function of the [`RunConfig`]: the
//! synthetic identity ranges are disjoint per role, and each role draws its
//! renders from its own seeded stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{FrConfig, RunConfig};
use crate::data::{load_samples, synth_face, synth_samples, FaceImage, Sample, StyleDomain};
use crate::evaluation::cosine_rows;
use crate::networks::{train_toy_fr, verification_scores, FaceRecognizer, FrTrainReport};
use crate::Result;

/// First identity of the unseen test population.
pub const TEST_IDENTITY_BASE: usize = 1000;
/// First identity of the threshold-calibration population.
pub const CALIBRATION_IDENTITY_BASE: usize = 2000;
/// First identity of the second calibration population, used to re-measure
/// the false-accept rate on pairs the threshold never saw.
pub const HELDOUT_CALIBRATION_IDENTITY_BASE: usize = 3000;

const TRAIN_STREAM: u64 = 0x7261_696e;
const TARGET_STREAM: u64 = 0x7461_7267;
const FR_STREAM: u64 = 0x6672_5f5f;
const FR_HELDOUT_STREAM: u64 = 0x6672_686f;
const TEST_STREAM: u64 = 0x7465_7374;
const CALIBRATION_STREAM: u64 = 0x6361_6c69;

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.rotate_left(17))
}

/// Unpaired training faces of both style domains and the target face `z`.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub sources: Vec<Sample>,
    pub references: Vec<Sample>,
    pub target: FaceImage,
}

/// Training sources and references are identities `1..=data.identities`;
/// the target is a bare face of `data.target_identity`. Directories in the
/// config replace the synthetic sets.
pub fn training_data(cfg: &RunConfig) -> Result<Datasets> {
    let d = &cfg.data;
    let mut rng = stream(d.seed, TRAIN_STREAM);
    let ids = 1..=d.identities;
    let sources = match &d.source_dir {
        Some(dir) => load_samples(dir, d.resolution, StyleDomain::Source)?,
        None => synth_samples(
            ids.clone(),
            StyleDomain::Source,
            d.per_identity,
            d.resolution,
            &mut rng,
        ),
    };
    let references = match &d.reference_dir {
        Some(dir) => load_samples(dir, d.resolution, StyleDomain::Reference)?,
        None => synth_samples(
            ids,
            StyleDomain::Reference,
            d.per_identity,
            d.resolution,
            &mut rng,
        ),
    };
    let target = match &d.target_image {
        Some(path) => {
            let img = crate::data::load_image(path, d.resolution)?;
            FaceImage::new(img.pixels, Some(d.target_identity), StyleDomain::Source)?
        }
        None => {
            synth_face(
                d.target_identity,
                StyleDomain::Source,
                d.resolution,
                &mut stream(d.seed, TARGET_STREAM),
            )
            .0
        }
    };
    Ok(Datasets {
        sources,
        references,
        target,
    })
}

/// Renders of identities `0..fr.identities` in both domains: a training
/// set and a held-out set for the stopping criterion.
pub fn fr_data(cfg: &RunConfig) -> (Vec<Sample>, Vec<Sample>) {
    let (f, r) = (&cfg.fr, cfg.data.resolution);
    let both = |per: usize, salt: u64| {
        let mut rng = stream(cfg.data.seed, salt);
        let mut out = synth_samples(0..f.identities, StyleDomain::Source, per, r, &mut rng);
        out.extend(synth_samples(
            0..f.identities,
            StyleDomain::Reference,
            per,
            r,
            &mut rng,
        ));
        out
    };
    (
        both(f.per_identity, FR_STREAM),
        both(f.heldout_per_identity, FR_HELDOUT_STREAM),
    )
}

/// The surrogate ensemble and the held-out victim model.
#[derive(Clone, Debug)]
pub struct FrModels {
    pub ensemble: Vec<FaceRecognizer>,
    pub holdout: FaceRecognizer,
    pub reports: Vec<FrTrainReport>,
}

impl FrModels {
    /// Ensemble members followed by the holdout.
    pub fn all(&self) -> impl Iterator<Item = &FaceRecognizer> {
        self.ensemble.iter().chain(std::iter::once(&self.holdout))
    }
}

pub fn train_fr_models(cfg: &RunConfig) -> Result<FrModels> {
    let (train, heldout) = fr_data(cfg);
    let mut reports = Vec::new();
    let mut fit = |seed: u64| -> Result<FaceRecognizer> {
        let (m, report) = train_toy_fr(
            &FrConfig::model_id(seed),
            &train,
            &heldout,
            seed,
            &cfg.fr.train,
        )?;
        log::info!(
            "{}: {} steps, eer accuracy {:.3}",
            report.model_id,
            report.steps,
            report.accuracy
        );
        reports.push(report);
        Ok(m)
    };
    let ensemble = cfg
        .fr
        .ensemble
        .iter()
        .map(|&s| fit(s))
        .collect::<Result<Vec<_>>>()?;
    let holdout = fit(cfg.fr.holdout)?;
    Ok(FrModels {
        ensemble,
        holdout,
        reports,
    })
}

/// Bare test faces of unseen identities, and made-up faces of the same
/// identities to pair them with.
pub fn test_data(cfg: &RunConfig) -> (Vec<Sample>, Vec<Sample>) {
    let e = &cfg.evaluation;
    let ids = TEST_IDENTITY_BASE..TEST_IDENTITY_BASE + e.test_identities;
    let mut rng = stream(e.seed, TEST_STREAM);
    let r = cfg.data.resolution;
    let sources = synth_samples(
        ids.clone(),
        StyleDomain::Source,
        e.test_per_identity,
        r,
        &mut rng,
    );
    let references = synth_samples(
        ids,
        StyleDomain::Reference,
        e.test_per_identity,
        r,
        &mut rng,
    );
    (sources, references)
}

/// Bare faces of the calibration population starting at `base`.
pub fn calibration_data(cfg: &RunConfig, base: usize) -> Vec<Sample> {
    let e = &cfg.evaluation;
    let mut rng = stream(e.seed ^ base as u64, CALIBRATION_STREAM);
    synth_samples(
        base..base + e.calibration_identities,
        StyleDomain::Source,
        e.calibration_per_identity,
        cfg.data.resolution,
        &mut rng,
    )
}

/// Similarities of every different-identity pair in `samples`.
pub fn negative_scores(model: &FaceRecognizer, samples: &[Sample]) -> Vec<f64> {
    verification_scores(model, samples).1
}

/// Similarities between every row of `a` and every row of `b` (`[n, d]`
/// embeddings of disjoint identities).
pub fn cross_scores(a: &crate::autograd::Tensor, b: &crate::autograd::Tensor) -> Vec<f64> {
    let (na, nb) = (a.dims2().0, b.dims2().0);
    let mut out = Vec::with_capacity(na * nb);
    for i in 0..na {
        for j in 0..nb {
            out.push(cosine_rows(a, i, b, j));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig::default()
            .with_overrides(&[
                "data.resolution=16",
                "data.identities=3",
                "data.per_identity=2",
            ])
            .unwrap()
    }

    #[test]
    fn training_data_is_deterministic_and_disjoint_from_target() {
        let cfg = small();
        let a = training_data(&cfg).unwrap();
        let b = training_data(&cfg).unwrap();
        assert_eq!(a.sources.len(), 6);
        assert_eq!(a.references.len(), 6);
        assert_eq!(a.sources[0].image, b.sources[0].image);
        assert_eq!(a.target, b.target);
        assert!(a
            .sources
            .iter()
            .all(|s| s.image.identity_id != Some(cfg.data.target_identity)));
        assert!(a
            .references
            .iter()
            .all(|s| s.image.style_domain == StyleDomain::Reference));
    }

    #[test]
    fn populations_do_not_overlap() {
        let cfg = small();
        let (test, _) = test_data(&cfg);
        let cal = calibration_data(&cfg, CALIBRATION_IDENTITY_BASE);
        let held = calibration_data(&cfg, HELDOUT_CALIBRATION_IDENTITY_BASE);
        let ids = |s: &[Sample]| {
            s.iter()
                .map(|s| s.image.identity_id.unwrap())
                .collect::<std::collections::BTreeSet<_>>()
        };
        assert!(ids(&test).is_disjoint(&ids(&cal)));
        assert!(ids(&cal).is_disjoint(&ids(&held)));
        let (fr, _) = fr_data(&cfg);
        assert!(ids(&fr).iter().all(|&i| i < cfg.fr.identities));
        assert!(ids(&test).iter().all(|&i| i >= TEST_IDENTITY_BASE));
    }
}
