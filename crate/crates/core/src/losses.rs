//! Loss terms of the three players and their weighted totals.
//!
//! Norms are per-pixel means so the weights do not depend on resolution.
//! GAN terms work on critic logits: `-ln D = softplus(-l)` and
//! `-ln(1 - D) = softplus(l)`, which stay finite for any logit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::diversity::{transform, DiversityConfig};
use crate::networks::{Critic, Embedder, Purifier, Translator};
use crate::nn::{Conv2d, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub gan: f64,
    pub reg: f64,
    pub adv: f64,
    pub make: f64,
    pub idt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gan: 10.0,
            reg: 10.0,
            adv: 5.0,
            make: 2.0,
            idt: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("gan", self.gan),
            ("reg", self.reg),
            ("adv", self.adv),
            ("make", self.make),
            ("idt", self.idt),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!(
                    "loss.{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Scalar value of every term of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub d_gan: f64,
    pub g_gan: f64,
    pub g_reg: f64,
    pub g_adv: f64,
    pub g_make: f64,
    pub idt: f64,
    pub h_gan: f64,
    pub h_adv: f64,
    pub h_make: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub d_total: f64,
    pub g_total: f64,
    pub h_total: f64,
}

/// Weighted totals of the discriminator, generator and regularizer.
pub fn totals(terms: LossTerms, w: &LossWeights) -> Result<LossReport> {
    w.validate()?;
    let t = &terms;
    Ok(LossReport {
        terms,
        d_total: w.gan * t.d_gan,
        g_total: w.gan * t.g_gan
            + w.reg * t.g_reg
            + w.adv * t.g_adv
            + w.make * t.g_make
            + w.idt * t.idt,
        h_total: w.gan * t.h_gan + w.adv * t.h_adv + w.make * t.h_make + w.idt * t.idt,
    })
}

/// Errors if the value of `loss` is not finite.
pub fn ensure_finite<'g>(term: &str, loss: Var<'g>) -> Result<Var<'g>> {
    if loss.value().all_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            term: term.into(),
            step: 0,
        })
    }
}

/// Mean of `-ln D(x)` over batch and patch map.
fn real_term<'g>(d: &impl Critic<'g>, x: Var<'g>) -> Var<'g> {
    d.logits(x).scale(-1.0).softplus().mean()
}

/// Mean of `-ln(1 - D(x))`.
fn fake_term<'g>(d: &impl Critic<'g>, x: Var<'g>) -> Var<'g> {
    d.logits(x).softplus().mean()
}

/// Discriminator loss. The fakes are detached here.
pub fn gan_loss_d<'g>(
    dx: &impl Critic<'g>,
    dy: &impl Critic<'g>,
    x: Var<'g>,
    y: Var<'g>,
    gxy: Var<'g>,
    gyx: Var<'g>,
) -> Result<Var<'g>> {
    let loss = real_term(dx, x)
        .add(fake_term(dx, gyx.detach()))
        .add(real_term(dy, y))
        .add(fake_term(dy, gxy.detach()));
    ensure_finite("gan_d", loss)
}

/// Generator adversarial-realism loss: `G(y, x)` should look like domain X.
pub fn gan_loss_g<'g>(
    dx: &impl Critic<'g>,
    dy: &impl Critic<'g>,
    gxy: Var<'g>,
    gyx: Var<'g>,
) -> Result<Var<'g>> {
    ensure_finite("gan_g", real_term(dx, gyx).add(real_term(dy, gxy)))
}

/// Regularizer realism loss on `H` of detached fakes.
pub fn gan_loss_h<'g>(
    dx: &impl Critic<'g>,
    dy: &impl Critic<'g>,
    h: &impl Purifier<'g>,
    gxy: Var<'g>,
    gyx: Var<'g>,
) -> Result<Var<'g>> {
    gan_loss_h_on(dx, dy, h.purify(gxy.detach()), h.purify(gyx.detach()))
}

/// [`gan_loss_h`] given `H(G(x, y))` and `H(G(y, x))`.
pub fn gan_loss_h_on<'g>(
    dx: &impl Critic<'g>,
    dy: &impl Critic<'g>,
    h_gxy: Var<'g>,
    h_gyx: Var<'g>,
) -> Result<Var<'g>> {
    ensure_finite("gan_h", real_term(dx, h_gyx).add(real_term(dy, h_gxy)))
}

fn l1<'g>(a: Var<'g>, b: Var<'g>) -> Var<'g> {
    a.sub(b).abs().mean()
}

/// Cycle loss with `H` purifying both the translation and the reconstruction:
/// `|H(G(H(G(x,y)), x)) - x| + |H(G(H(G(y,x)), y)) - y|`.
pub fn reg_cycle_loss<'g>(
    g: &impl Translator<'g>,
    h: &impl Purifier<'g>,
    x: Var<'g>,
    y: Var<'g>,
) -> Var<'g> {
    reg_cycle_loss_with(g, h, x, y, g.translate(x, y), g.translate(y, x))
}

/// [`reg_cycle_loss`] given `G(x, y)` and `G(y, x)`.
pub fn reg_cycle_loss_with<'g>(
    g: &impl Translator<'g>,
    h: &impl Purifier<'g>,
    x: Var<'g>,
    y: Var<'g>,
    gxy: Var<'g>,
    gyx: Var<'g>,
) -> Var<'g> {
    let back = |a: Var<'g>, fake: Var<'g>| h.purify(g.translate(h.purify(fake), a));
    l1(back(x, gxy), x).add(l1(back(y, gyx), y))
}

/// `1 - cos` between every row of `emb` and the single row `target`,
/// averaged over rows.
fn mean_cosine_distance<'g>(emb: Var<'g>, target: &Tensor) -> Var<'g> {
    let (n, d) = emb.value().dims2();
    assert_eq!(target.len(), d, "target embedding width");
    let tiled = Tensor::from_fn(&[n, d], |i| target.data()[i % d]);
    let t = emb.graph().constant(tiled).normalize_rows();
    emb.normalize_rows()
        .row_dot(t)
        .scale(-1.0)
        .add_scalar(1.0)
        .mean()
}

/// Cached target embeddings, one `[1, d]` row per surrogate.
pub fn target_embeddings<'g>(
    models: &[&dyn Embedder<'g>],
    graph: &'g Graph,
    z: &Tensor,
) -> Vec<Tensor> {
    models
        .iter()
        .map(|m| (*m.embed(graph.constant(z.clone())).value()).clone())
        .collect()
}

/// Ensemble impersonation loss on diversified fakes. `T` is drawn
/// independently for each (model, direction).
pub fn adv_loss_g<'g, R: Rng + ?Sized>(
    models: &[&dyn Embedder<'g>],
    z_embeddings: &[Tensor],
    gxy: Var<'g>,
    gyx: Var<'g>,
    diversity: &DiversityConfig,
    rng: &mut R,
) -> Var<'g> {
    assert!(
        !models.is_empty(),
        "adversarial loss needs at least one surrogate"
    );
    assert_eq!(models.len(), z_embeddings.len());
    let mut total: Option<Var<'g>> = None;
    for (m, z) in models.iter().zip(z_embeddings) {
        for fake in [gxy, gyx] {
            let term = mean_cosine_distance(m.embed(transform(fake, diversity, rng).0), z);
            total = Some(total.map_or(term, |t| t.add(term)));
        }
    }
    total
        .expect("non-empty")
        .scale(1.0 / (2 * models.len()) as f64)
}

/// Keeps `H`'s outputs recognisable as their sources:
/// `1 - cos(M(x), M(H(G(x,y))))` averaged over models and directions.
pub fn adv_loss_h<'g>(
    models: &[&dyn Embedder<'g>],
    x: Var<'g>,
    y: Var<'g>,
    h_gxy: Var<'g>,
    h_gyx: Var<'g>,
) -> Var<'g> {
    assert!(
        !models.is_empty(),
        "adversarial loss needs at least one surrogate"
    );
    let mut total: Option<Var<'g>> = None;
    for m in models {
        for (src, out) in [(x, h_gxy), (y, h_gyx)] {
            let s = m.embed(src).normalize_rows();
            let o = m.embed(out).normalize_rows();
            let term = s.row_dot(o).scale(-1.0).add_scalar(1.0).mean();
            total = Some(total.map_or(term, |t| t.add(term)));
        }
    }
    total
        .expect("non-empty")
        .scale(1.0 / (2 * models.len()) as f64)
}

/// Root-mean-square distance to a fixed histogram-matched target.
pub fn makeup_loss<'g>(out: Var<'g>, target: &Tensor) -> Result<Var<'g>> {
    if out.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: target.shape().to_vec(),
            actual: out.shape(),
        });
    }
    Ok(out
        .sub(out.graph().constant(target.clone()))
        .square()
        .mean()
        .sqrt())
}

/// Perceptual distance between two image batches.
pub trait Perceptual {
    fn distance<'g>(&self, a: Var<'g>, b: Var<'g>) -> Var<'g>;
}

/// Frozen random conv pyramid. Features of each level are normalised to unit
/// length across channels; the distance is the mean squared feature
/// difference, summed over levels.
#[derive(Clone, Debug)]
pub struct RandomFeaturePerceptual {
    params: ParamStore,
    convs: Vec<Conv2d>,
}

impl RandomFeaturePerceptual {
    pub const DEFAULT_SEED: u64 = 0x5eed_f00d;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let convs = vec![
            Conv2d::new(&mut params, "p0", (3, 8), 3, 1, &mut rng),
            Conv2d::new(&mut params, "p1", (8, 16), 3, 2, &mut rng),
            Conv2d::new(&mut params, "p2", (16, 16), 3, 2, &mut rng),
        ];
        Self { params, convs }
    }
}

impl Default for RandomFeaturePerceptual {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl Perceptual for RandomFeaturePerceptual {
    fn distance<'g>(&self, a: Var<'g>, b: Var<'g>) -> Var<'g> {
        let p = self.params.bind(a.graph(), false);
        let (mut fa, mut fb) = (a, b);
        let mut total: Option<Var<'g>> = None;
        for conv in &self.convs {
            fa = conv.forward(&p, fa).silu();
            fb = conv.forward(&p, fb).silu();
            let term = fa
                .normalize_channels()
                .sub(fb.normalize_channels())
                .square()
                .mean();
            total = Some(total.map_or(term, |t| t.add(term)));
        }
        total.expect("at least one level")
    }
}

/// Self-reconstruction: `H(G(x, x))` should reproduce `x` in pixels and in
/// perceptual features, in both domains.
pub fn idt_loss<'g>(
    g: &impl Translator<'g>,
    h: &impl Purifier<'g>,
    x: Var<'g>,
    y: Var<'g>,
    perceptual: &dyn Perceptual,
) -> Var<'g> {
    idt_loss_with(h, x, y, g.translate(x, x), g.translate(y, y), perceptual)
}

/// [`idt_loss`] given `G(x, x)` and `G(y, y)`.
pub fn idt_loss_with<'g>(
    h: &impl Purifier<'g>,
    x: Var<'g>,
    y: Var<'g>,
    gxx: Var<'g>,
    gyy: Var<'g>,
    perceptual: &dyn Perceptual,
) -> Var<'g> {
    let one = |a: Var<'g>, gaa: Var<'g>| {
        let r = h.purify(gaa);
        l1(r, a).add(perceptual.distance(r, a))
    };
    one(x, gxx).add(one(y, gyy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use crate::networks::testutil::{critic, embedder, purifier, translator};
    use crate::networks::testutil::{random_batch, sample_coords};
    use crate::networks::{CriticFn, EmbedFn, IdentityPurifier, PurifyFn};
    use std::f64::consts::LN_2;

    fn half<'g>() -> CriticFn<impl Fn(Var<'g>) -> Var<'g>> {
        critic(|x| x.scale(0.0))
    }

    #[test]
    fn gan_losses_at_half() {
        let g = Graph::new();
        let b = || g.constant(random_batch(&[2, 3, 4, 4], 0));
        let (x, y, gxy, gyx) = (b(), b(), b(), b());
        let d = gan_loss_d(&half(), &half(), x, y, gxy, gyx)
            .unwrap()
            .value()
            .item();
        assert!((d - 4.0 * LN_2).abs() < 1e-6);
        let gl = gan_loss_g(&half(), &half(), gxy, gyx)
            .unwrap()
            .value()
            .item();
        assert!((gl - 2.0 * LN_2).abs() < 1e-6);
        let hl = gan_loss_h(&half(), &half(), &IdentityPurifier, gxy, gyx)
            .unwrap()
            .value()
            .item();
        assert!((hl - 2.0 * LN_2).abs() < 1e-6);
    }

    #[test]
    fn confident_discriminator_has_vanishing_loss() {
        let g = Graph::new();
        let real = g.constant(Tensor::full(&[1, 3, 4, 4], 0.5));
        let fake = g.constant(Tensor::full(&[1, 3, 4, 4], -0.5));
        // Logit +100 on real images, -100 on fakes.
        let sure = critic(|x| x.scale(200.0));
        let d = gan_loss_d(&sure, &sure, real, real, fake, fake)
            .unwrap()
            .value()
            .item();
        assert!(d < 1e-30);
        let fooled = critic(|x| x.scale(-200.0));
        assert!(
            gan_loss_g(&fooled, &fooled, fake, fake)
                .unwrap()
                .value()
                .item()
                < 1e-30
        );
    }

    #[test]
    fn gan_loss_d_matches_hand_sum() {
        let g = Graph::new();
        let d = critic(|x| x.avg_pool2());
        let xs: Vec<Tensor> = (0..4)
            .map(|s| random_batch(&[2, 3, 2, 2], 10 + s))
            .collect();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let got = gan_loss_d(&d, &d, vars[0], vars[1], vars[2], vars[3])
            .unwrap()
            .value()
            .item();
        let mean_pool = |t: &Tensor, s: usize, c: usize| {
            t.data()[(s * 3 + c) * 4..(s * 3 + c + 1) * 4]
                .iter()
                .sum::<f64>()
                / 4.0
        };
        let sig = |l: f64| 1.0 / (1.0 + (-l).exp());
        let avg = |t: &Tensor, f: &dyn Fn(f64) -> f64| {
            let mut acc = 0.0;
            for s in 0..2 {
                for c in 0..3 {
                    acc += f(sig(mean_pool(t, s, c)));
                }
            }
            acc / 6.0
        };
        let want = avg(&xs[0], &|p| -p.ln())
            + avg(&xs[3], &|p| -(1.0 - p).ln())
            + avg(&xs[1], &|p| -p.ln())
            + avg(&xs[2], &|p| -(1.0 - p).ln());
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn gan_loss_h_with_identity_equals_gan_loss_g() {
        let g = Graph::new();
        let d = critic(|x| x.avg_pool2().scale(3.0));
        let (gxy, gyx) = (
            g.constant(random_batch(&[2, 3, 4, 4], 1)),
            g.constant(random_batch(&[2, 3, 4, 4], 2)),
        );
        let a = gan_loss_g(&d, &d, gxy, gyx).unwrap().value().item();
        let b = gan_loss_h(&d, &d, &IdentityPurifier, gxy, gyx)
            .unwrap()
            .value()
            .item();
        assert_eq!(a, b);
    }

    #[test]
    fn cycle_loss_with_stubs() {
        let g = Graph::new();
        let x = g.constant(random_batch(&[2, 3, 4, 4], 3));
        let y = g.constant(random_batch(&[2, 3, 4, 4], 4));
        let first = translator(|a, _b| a);
        assert_eq!(
            reg_cycle_loss(&first, &IdentityPurifier, x, y)
                .value()
                .item(),
            0.0
        );
        let shift = translator(|a, _b| a.add_scalar(0.1));
        let v = reg_cycle_loss(&shift, &IdentityPurifier, x, y)
            .value()
            .item();
        assert!((v - 0.4).abs() < 1e-12);
    }

    fn unit(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec())
    }

    /// Embedder stub returning `row` for every batch element.
    fn fixed<'g>(g: &'g Graph, row: Tensor) -> EmbedFn<impl Fn(Var<'g>) -> Var<'g>> {
        EmbedFn(move |x: Var<'g>| {
            let n = x.shape()[0];
            let d = row.len();
            let tiled = Tensor::from_fn(&[n, d], |i| row.data()[i % d]);
            g.constant(tiled)
        })
    }

    #[test]
    fn adv_loss_g_values() {
        let g = Graph::new();
        let z = random_batch(&[1, 3, 4, 4], 5);
        let flat = embedder(|x| {
            let n = x.shape()[0];
            x.reshape(&[n, 48])
        });
        let models: Vec<&dyn Embedder<'_>> = vec![&flat];
        let ze = target_embeddings(&models, &g, &z);
        let zv = g.constant(z.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = adv_loss_g(&models, &ze, zv, zv, &DiversityConfig::OFF, &mut rng)
            .value()
            .item();
        assert!(v.abs() < 1e-12);

        let e0 = fixed(&g, unit(&[0.0, 1.0]));
        let models: Vec<&dyn Embedder<'_>> = vec![&e0, &e0, &e0];
        let ze = vec![unit(&[1.0, 0.0]); 3];
        let v = adv_loss_g(&models, &ze, zv, zv, &DiversityConfig::OFF, &mut rng)
            .value()
            .item();
        assert!((v - 1.0).abs() < 1e-12);

        let s = 3f64.sqrt() / 2.0;
        let (e1, e2) = (fixed(&g, unit(&[0.5, s])), fixed(&g, unit(&[-0.5, s])));
        let models: Vec<&dyn Embedder<'_>> = vec![&e1, &e2];
        let ze = vec![unit(&[1.0, 0.0]); 2];
        let v = adv_loss_g(&models, &ze, zv, zv, &DiversityConfig::OFF, &mut rng)
            .value()
            .item();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adv_loss_g_ignores_rng_when_p_is_zero() {
        let g = Graph::new();
        let flat = embedder(|x| {
            let n = x.shape()[0];
            x.reshape(&[n, 48]).scale(2.0)
        });
        let models: Vec<&dyn Embedder<'_>> = vec![&flat];
        let ze = target_embeddings(&models, &g, &random_batch(&[1, 3, 4, 4], 1));
        let (a, b) = (
            g.constant(random_batch(&[2, 3, 4, 4], 2)),
            g.constant(random_batch(&[2, 3, 4, 4], 3)),
        );
        let off = DiversityConfig {
            p: 0.0,
            ..Default::default()
        };
        let v1 = adv_loss_g(&models, &ze, a, b, &off, &mut ChaCha8Rng::seed_from_u64(1))
            .value()
            .item();
        let v2 = adv_loss_g(&models, &ze, a, b, &off, &mut ChaCha8Rng::seed_from_u64(2))
            .value()
            .item();
        assert_eq!(v1, v2);
        assert!((0.0..=2.0).contains(&v1));
    }

    #[test]
    fn adv_loss_h_values() {
        let g = Graph::new();
        let x = g.constant(random_batch(&[2, 3, 4, 4], 6));
        let y = g.constant(random_batch(&[2, 3, 4, 4], 7));
        let flat = embedder(|v| {
            let n = v.shape()[0];
            v.reshape(&[n, 48])
        });
        let models: Vec<&dyn Embedder<'_>> = vec![&flat];
        // H(G(x, y)) = x and H(G(y, x)) = y give zero.
        assert!(adv_loss_h(&models, x, y, x, y).value().item().abs() < 1e-12);

        // Stub embedders: sources embed to e_a, outputs to e_b, with chosen
        // cosines per model.
        let s = 3f64.sqrt() / 2.0;
        let split = |out_row: Vec<f64>| {
            embedder(move |v| {
                let n = v.shape()[0];
                let is_source = v.value().data()[0] > 0.95;
                let row = if is_source {
                    vec![1.0, 0.0]
                } else {
                    out_row.clone()
                };
                v.graph().constant(Tensor::from_fn(&[n, 2], |i| row[i % 2]))
            })
        };
        let src = g.constant(Tensor::full(&[2, 3, 4, 4], 0.99));
        let out = g.constant(Tensor::full(&[2, 3, 4, 4], 0.0));
        let (e1, e2) = (split(vec![0.0, 1.0]), split(vec![0.0, 1.0]));
        let models: Vec<&dyn Embedder<'_>> = vec![&e1, &e2];
        assert!((adv_loss_h(&models, src, src, out, out).value().item() - 1.0).abs() < 1e-12);
        let (e1, e2) = (split(vec![0.5, s]), split(vec![-0.5, s]));
        let models: Vec<&dyn Embedder<'_>> = vec![&e1, &e2];
        // (1/4)((1 - 0.5) + (1 + 0.5)) per direction, two directions.
        assert!((adv_loss_h(&models, src, src, out, out).value().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn makeup_loss_values() {
        let g = Graph::new();
        let t = random_batch(&[1, 3, 4, 4], 8);
        assert_eq!(
            makeup_loss(g.constant(t.clone()), &t)
                .unwrap()
                .value()
                .item(),
            0.0
        );
        let shifted = t.map(|v| v + 0.3);
        assert!((makeup_loss(g.constant(shifted), &t).unwrap().value().item() - 0.3).abs() < 1e-12);
        let o = random_batch(&[1, 3, 4, 4], 9);
        let mut ss = 0.0;
        for i in 0..48 {
            ss += (o.data()[i] - t.data()[i]).powi(2);
        }
        let got = makeup_loss(g.constant(o), &t).unwrap().value().item();
        assert!((got - (ss / 48.0).sqrt()).abs() < 1e-12);
        assert!(makeup_loss(g.constant(Tensor::zeros(&[1, 3, 2, 2])), &t).is_err());
    }

    #[test]
    fn idt_loss_values() {
        let g = Graph::new();
        let p = RandomFeaturePerceptual::default();
        let x = g.constant(random_batch(&[2, 3, 8, 8], 10));
        let y = g.constant(random_batch(&[2, 3, 8, 8], 11));
        let first = translator(|a, _b| a);
        assert_eq!(
            idt_loss(&first, &IdentityPurifier, x, y, &p).value().item(),
            0.0
        );
        let shift = translator(|a, _b| a.add_scalar(0.2));
        let got = idt_loss(&shift, &IdentityPurifier, x, y, &p).value().item();
        let px = p.distance(x.add_scalar(0.2), x).value().item();
        let py = p.distance(y.add_scalar(0.2), y).value().item();
        assert!(px > 0.0 && py > 0.0);
        assert!((got - (0.4 + px + py)).abs() < 1e-12);
    }

    #[test]
    fn totals_are_weighted_dot_products() {
        let w = LossWeights::default();
        let ones = LossTerms {
            d_gan: 1.0,
            g_gan: 1.0,
            g_reg: 1.0,
            g_adv: 1.0,
            g_make: 1.0,
            idt: 1.0,
            h_gan: 1.0,
            h_adv: 1.0,
            h_make: 1.0,
        };
        let r = totals(ones, &w).unwrap();
        assert_eq!((r.d_total, r.g_total, r.h_total), (10.0, 32.0, 22.0));
        let r = totals(LossTerms::default(), &w).unwrap();
        assert_eq!((r.d_total, r.g_total, r.h_total), (0.0, 0.0, 0.0));
        let only_adv = LossTerms {
            g_adv: 1.0,
            ..Default::default()
        };
        assert_eq!(totals(only_adv, &w).unwrap().g_total, 5.0);
        let twice = LossTerms {
            g_adv: 2.0,
            ..Default::default()
        };
        assert_eq!(
            totals(twice, &w).unwrap().g_total,
            2.0 * totals(only_adv, &w).unwrap().g_total
        );
        let neg = LossWeights { make: -1.0, ..w };
        assert!(matches!(totals(ones, &neg), Err(Error::Config(_))));
    }

    // Gradient checks on 8×8 inputs with small differentiable stubs.

    fn check(f: impl Fn(Var<'_>) -> Var<'_>, seed: u64) {
        let x = random_batch(&[1, 3, 8, 8], seed);
        let err = gradcheck::check(&x, &sample_coords(x.len(), 20, seed + 1), 1e-3, f);
        assert!(err < 1e-3, "check {seed}: rel err {err}");
    }

    fn pool_logits<'g>(x: Var<'g>) -> Var<'g> {
        x.avg_pool2().scale(2.0)
    }

    fn squash<'g>(x: Var<'g>) -> Var<'g> {
        x.scale(0.9).sigmoid().scale(1.6).add_scalar(-0.8)
    }

    fn pooled_embedding<'g>(x: Var<'g>) -> Var<'g> {
        let n = x.shape()[0];
        x.avg_pool2().reshape(&[n, 48]).normalize_rows()
    }

    fn konst<'g>(g: &'g Graph, t: &Tensor) -> Var<'g> {
        g.constant(t.clone())
    }

    fn smooth_g<'g>(a: Var<'g>, b: Var<'g>) -> Var<'g> {
        a.scale(0.8).add(b.scale(0.15)).tanh()
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let other = random_batch(&[1, 3, 8, 8], 99);
        let pooled = CriticFn(pool_logits);
        let h = PurifyFn(squash);
        let embed = EmbedFn(pooled_embedding);
        let target = random_batch(&[1, 3, 8, 8], 98);
        let z = Tensor::from_fn(&[1, 48], |i| (i as f64 * 0.37).sin());
        let perceptual = RandomFeaturePerceptual::default();

        let fakes = (
            random_batch(&[1, 3, 8, 8], 97),
            random_batch(&[1, 3, 8, 8], 96),
        );
        check(
            |x| {
                let g = x.graph();
                gan_loss_d(
                    &pooled,
                    &pooled,
                    x,
                    konst(g, &other),
                    konst(g, &fakes.0),
                    konst(g, &fakes.1),
                )
                .unwrap()
            },
            1,
        );
        // Gradient reaching a critic parameter through all four terms.
        check(
            |x| {
                let g = x.graph();
                let d = critic(move |v| v.mul(x).avg_pool2().scale(3.0));
                gan_loss_d(
                    &d,
                    &d,
                    konst(g, &other),
                    konst(g, &target),
                    konst(g, &fakes.0),
                    konst(g, &fakes.1),
                )
                .unwrap()
            },
            11,
        );
        check(
            |x| gan_loss_g(&pooled, &pooled, x, x.scale(-0.7)).unwrap(),
            2,
        );
        check(
            |x| reg_cycle_loss(&smooth_g, &h, x, x.graph().constant(other.clone())),
            3,
        );
        check(
            |x| {
                let gl = translator(|a, b| a.scale(0.5).add(b.scale(0.5)));
                reg_cycle_loss(&gl, &IdentityPurifier, x.graph().constant(other.clone()), x)
            },
            4,
        );
        // Gradient reaching a regularizer parameter; the fakes are fixed.
        check(
            |x| {
                let g = x.graph();
                let hp = purifier(move |v| v.add(x.scale(0.5)).tanh());
                gan_loss_h(
                    &pooled,
                    &pooled,
                    &hp,
                    konst(g, &fakes.0),
                    konst(g, &fakes.1),
                )
                .unwrap()
            },
            5,
        );
        check(
            |x| {
                let m: Vec<&dyn Embedder<'_>> = vec![&embed];
                adv_loss_g(
                    &m,
                    std::slice::from_ref(&z),
                    x,
                    x.scale(0.5),
                    &DiversityConfig::OFF,
                    &mut ChaCha8Rng::seed_from_u64(0),
                )
            },
            6,
        );
        check(
            |x| {
                let m: Vec<&dyn Embedder<'_>> = vec![&embed];
                let cfg = DiversityConfig {
                    p: 1.0,
                    scale_low: 0.75,
                    scale_high: 0.75,
                    sigma: 0.01,
                };
                adv_loss_g(
                    &m,
                    std::slice::from_ref(&z),
                    x,
                    x.scale(0.5),
                    &cfg,
                    &mut ChaCha8Rng::seed_from_u64(0),
                )
            },
            7,
        );
        check(
            |x| {
                let m: Vec<&dyn Embedder<'_>> = vec![&embed];
                let o = x.graph().constant(other.clone());
                adv_loss_h(&m, o, o, x, x.scale(0.5))
            },
            8,
        );
        check(|x| makeup_loss(x, &target).unwrap(), 9);
        check(
            |x| {
                idt_loss(
                    &smooth_g,
                    &h,
                    x,
                    x.graph().constant(other.clone()),
                    &perceptual,
                )
            },
            10,
        );
    }
}
