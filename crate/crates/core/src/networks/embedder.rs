use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_image_batch, Embedder};
use crate::autograd::{Graph, Tensor, Var};
use crate::data::{batch_of, Sample};
use crate::diversity::{transform, DiversityConfig};
use crate::evaluation::{cosine_rows, eer_operating_point};
use crate::nn::{init_normal, Bound, Conv2d, Linear, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Result};

pub const EMBEDDING_DIM: usize = 64;

/// Architecture of one toy face-recognition model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderArch {
    pub width: usize,
    /// Extra same-width convs per stage.
    pub depth: usize,
}

impl EmbedderArch {
    const WIDTHS: [usize; 3] = [8, 12, 16];

    /// Architecture for a model seed: consecutive seeds cycle through three
    /// widths, then through an extra conv per stage.
    pub fn for_seed(seed: u64) -> Self {
        Self {
            width: Self::WIDTHS[(seed % 3) as usize],
            depth: ((seed / 3) % 2) as usize,
        }
    }

    /// Width of the pooled penultimate features.
    pub fn feature_dim(&self) -> usize {
        4 * self.width
    }
}

/// Conv trunk, global average pool, linear projection, L2 normalisation.
#[derive(Clone, Debug)]
pub struct FaceRecognizer {
    pub model_id: String,
    pub seed: u64,
    pub arch: EmbedderArch,
    pub params: ParamStore,
    stem: Conv2d,
    stage1: Vec<Conv2d>,
    down1: Conv2d,
    stage2: Vec<Conv2d>,
    down2: Conv2d,
    proj: Linear,
}

impl FaceRecognizer {
    pub fn new(model_id: impl Into<String>, seed: u64) -> Self {
        let arch = EmbedderArch::for_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00fa_ce1d);
        let w = arch.width;
        let mut p = ParamStore::new();
        let stem = Conv2d::new(&mut p, "stem", (3, w), 3, 1, &mut rng);
        let stage1 = (0..arch.depth)
            .map(|i| Conv2d::new(&mut p, &format!("s1.{i}"), (w, w), 3, 1, &mut rng))
            .collect();
        let down1 = Conv2d::new(&mut p, "down1", (w, 2 * w), 3, 2, &mut rng);
        let stage2 = (0..arch.depth)
            .map(|i| Conv2d::new(&mut p, &format!("s2.{i}"), (2 * w, 2 * w), 3, 1, &mut rng))
            .collect();
        let down2 = Conv2d::new(&mut p, "down2", (2 * w, 4 * w), 3, 2, &mut rng);
        let proj = Linear::new(&mut p, "proj", (4 * w, EMBEDDING_DIM), true, &mut rng);
        Self {
            model_id: model_id.into(),
            seed,
            arch,
            params: p,
            stem,
            stage1,
            down1,
            stage2,
            down2,
            proj,
        }
    }

    pub fn bind<'a, 'g>(&'a self, graph: &'g Graph, trainable: bool) -> BoundEmbedder<'a, 'g> {
        BoundEmbedder {
            net: self,
            params: self.params.bind(graph, trainable),
        }
    }

    fn in_chunks(
        &self,
        images: &Tensor,
        f: impl Fn(&BoundEmbedder<'_, '_>, Var<'_>) -> Tensor,
    ) -> Tensor {
        const CHUNK: usize = 64;
        let n = images.shape()[0];
        let parts: Vec<Tensor> = (0..n)
            .step_by(CHUNK)
            .map(|start| {
                let g = Graph::new();
                let b = self.bind(&g, false);
                f(
                    &b,
                    g.constant(images.slice_batch(start, CHUNK.min(n - start))),
                )
            })
            .collect();
        Tensor::stack(&parts)
    }

    /// Embeddings `[n, 64]` of an image batch, outside any training graph.
    pub fn embed_tensor(&self, images: &Tensor) -> Tensor {
        self.in_chunks(images, |b, x| (*b.embed(x).value()).clone())
    }

    /// Pooled penultimate features `[n, 4·width]`.
    pub fn features_tensor(&self, images: &Tensor) -> Tensor {
        self.in_chunks(images, |b, x| (*b.features(x).value()).clone())
    }
}

pub struct BoundEmbedder<'a, 'g> {
    net: &'a FaceRecognizer,
    pub params: Bound<'g>,
}

impl<'g> BoundEmbedder<'_, 'g> {
    pub fn features(&self, x: Var<'g>) -> Var<'g> {
        check_image_batch(&x, "embedder");
        let (n, p) = (self.net, &self.params);
        let mut h = n.stem.forward(p, x).silu();
        for c in &n.stage1 {
            h = c.forward(p, h).silu();
        }
        h = n.down1.forward(p, h).silu();
        for c in &n.stage2 {
            h = c.forward(p, h).silu();
        }
        n.down2.forward(p, h).silu().global_avg_pool()
    }
}

impl<'g> Embedder<'g> for BoundEmbedder<'_, 'g> {
    fn embed(&self, x: Var<'g>) -> Var<'g> {
        self.net
            .proj
            .forward(&self.params, self.features(x))
            .normalize_rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_steps: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Cosine-softmax scale.
    pub scale: f64,
    /// Additive cosine margin on the true class.
    pub margin: f64,
    /// Required held-out verification accuracy at the equal-error threshold.
    pub target_accuracy: f64,
    /// Resize and noise applied to every training batch.
    pub augment: DiversityConfig,
}

impl Default for FrTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 2e-3,
            min_steps: 300,
            max_steps: 3000,
            eval_every: 100,
            scale: 16.0,
            margin: 0.2,
            target_accuracy: 0.9,
            augment: DiversityConfig {
                p: 1.0,
                scale_low: 0.7,
                scale_high: 1.0,
                sigma: 0.1,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrTrainReport {
    pub model_id: String,
    pub steps: usize,
    pub parameter_count: usize,
    /// Cosine threshold where false accepts and false rejects balance.
    pub eer_threshold: f64,
    pub accuracy: f64,
    pub final_loss: f64,
}

/// Same-identity and different-identity cosine scores over all pairs of
/// `samples`.
pub fn verification_scores(model: &FaceRecognizer, samples: &[Sample]) -> (Vec<f64>, Vec<f64>) {
    let emb = model.embed_tensor(&batch_of(samples.iter().map(|s| &s.image)));
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let s = cosine_rows(&emb, i, &emb, j);
            if samples[i].image.identity_id == samples[j].image.identity_id {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
    }
    (genuine, impostor)
}

/// Trains a toy embedder with an additive-cosine-margin softmax over the
/// identities in `train`, until verification accuracy on `heldout` reaches
/// `cfg.target_accuracy` at the equal-error threshold.
pub fn train_toy_fr(
    model_id: &str,
    train: &[Sample],
    heldout: &[Sample],
    model_seed: u64,
    cfg: &FrTrainConfig,
) -> Result<(FaceRecognizer, FrTrainReport)> {
    let classes: BTreeMap<usize, usize> = train
        .iter()
        .map(|s| {
            s.image
                .identity_id
                .ok_or_else(|| Error::InvalidInput(format!("{} has no identity label", s.name)))
        })
        .collect::<Result<std::collections::BTreeSet<_>>>()?
        .into_iter()
        .enumerate()
        .map(|(k, id)| (id, k))
        .collect();
    if classes.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "toy face recognition needs at least 8 identities, got {}",
            classes.len()
        )));
    }
    let mut model = FaceRecognizer::new(model_id, model_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(model_seed.wrapping_add(0x7e57));
    let mut head = ParamStore::new();
    let centers_id = head.add(
        "class_centers",
        init_normal(
            &[classes.len(), EMBEDDING_DIM],
            EMBEDDING_DIM,
            1.0,
            &mut rng,
        ),
    );
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: 0.9,
        ..AdamConfig::default()
    };
    let mut opt = Adam::new(adam_cfg, &model.params);
    let mut head_opt = Adam::new(adam_cfg, &head);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut last_loss = f64::NAN;

    for step in 1..=cfg.max_steps {
        let mut picks = Vec::with_capacity(cfg.batch_size);
        while picks.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let targets: Vec<usize> = picks
            .iter()
            .map(|&i| classes[&train[i].image.identity_id.expect("checked above")])
            .collect();
        let images = batch_of(picks.iter().map(|&i| &train[i].image));
        let margin = Tensor::from_fn(&[picks.len(), classes.len()], |i| {
            if i % classes.len() == targets[i / classes.len()] {
                -cfg.margin
            } else {
                0.0
            }
        });

        let g = Graph::new();
        let b = model.bind(&g, true);
        let hb = head.bind(&g, true);
        let centers = hb.var(centers_id).normalize_rows();
        let (x, _) = transform(g.constant(images), &cfg.augment, &mut rng);
        let cos = b.embed(x).linear(centers, None);
        let loss = cos
            .add_const(&margin)
            .scale(cfg.scale)
            .cross_entropy(&targets);
        last_loss = loss.value().item();
        if !last_loss.is_finite() {
            return Err(Error::NonFinite {
                term: format!("{model_id} identity loss"),
                step: step as u64,
            });
        }
        let grads = g.backward(loss);
        let (pg, hg) = (b.params.grads(&grads), hb.grads(&grads));
        drop(b);
        drop(hb);
        opt.update(&mut model.params, &pg);
        head_opt.update(&mut head, &hg);

        if step >= cfg.min_steps && step % cfg.eval_every == 0 {
            let (genuine, impostor) = verification_scores(&model, heldout);
            let (threshold, accuracy) = eer_operating_point(&genuine, &impostor)?;
            log::debug!("{model_id} step {step}: loss {last_loss:.4} eer-accuracy {accuracy:.3}");
            if accuracy >= cfg.target_accuracy {
                let parameter_count = model.params.count();
                return Ok((
                    model,
                    FrTrainReport {
                        model_id: model_id.into(),
                        steps: step,
                        parameter_count,
                        eer_threshold: threshold,
                        accuracy,
                        final_loss: last_loss,
                    },
                ));
            }
        }
    }
    let (genuine, impostor) = verification_scores(&model, heldout);
    let (_, accuracy) = eer_operating_point(&genuine, &impostor)?;
    Err(Error::Budget(format!(
        "{model_id} reached verification accuracy {accuracy:.3} < {:.3} after {} steps (loss {last_loss:.4})",
        cfg.target_accuracy, cfg.max_steps
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use crate::data::{synth_samples, StyleDomain};
    use crate::networks::testutil::{random_batch, sample_coords};

    #[test]
    fn embeddings_are_unit_norm() {
        let m = FaceRecognizer::new("m", 1);
        let e = m.embed_tensor(&random_batch(&[100, 3, 8, 8], 0));
        for r in 0..100 {
            let n: f64 = e.data()[r * EMBEDDING_DIM..(r + 1) * EMBEDDING_DIM]
                .iter()
                .map(|v| v * v)
                .sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-5);
        }
        assert!((cosine_rows(&e, 3, &e, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_draw_different_architectures() {
        let a = FaceRecognizer::new("a", 1);
        let b = FaceRecognizer::new("b", 2);
        assert_ne!(a.params.count(), b.params.count());
        assert_ne!(EmbedderArch::for_seed(0), EmbedderArch::for_seed(3));
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let m = FaceRecognizer::new("m", 4);
        let x = random_batch(&[1, 3, 8, 8], 1);
        let z = m.embed_tensor(&random_batch(&[1, 3, 8, 8], 2));
        let err = gradcheck::check(&x, &sample_coords(x.len(), 20, 3), 1e-3, |xv| {
            let e = m.bind(xv.graph(), false).embed(xv);
            e.row_dot(xv.graph().constant(z.clone())).sum()
        });
        assert!(err < 1e-3, "rel err {err}");
    }

    #[test]
    fn too_few_identities_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = synth_samples(0..4, StyleDomain::Source, 2, 8, &mut rng);
        assert!(matches!(
            train_toy_fr("m", &s, &s, 0, &FrTrainConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }
}
