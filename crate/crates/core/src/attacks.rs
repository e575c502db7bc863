//! Gradient-based targeted impersonation attacks against an embedder
//! ensemble: PGD, MI-FGSM and TI-DIM.
//!
//! All three minimise the mean over models of `1 - cos(M(x'), M(z))` with
//! signed steps, then project onto the L∞ ball of radius `epsilon` around
//! the clean image and clamp to `[-1, 1]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::diversity::{transform, DiversityConfig};
use crate::evaluation::gaussian_taps;
use crate::networks::Surrogate;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    /// Clean images, no perturbation.
    #[default]
    None,
    Pgd,
    Mifgsm,
    Tidim,
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "pgd" => Ok(Self::Pgd),
            "mifgsm" => Ok(Self::Mifgsm),
            "tidim" => Ok(Self::Tidim),
            other => Err(Error::Config(format!(
                "unknown attack `{other}` (expected none, pgd, mifgsm or tidim)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// L∞ budget in `[-1, 1]` pixel units.
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    /// Momentum decay (MI-FGSM, TI-DIM).
    pub mu: f64,
    /// Side of the gradient-smoothing kernel (TI-DIM); odd.
    pub kernel: usize,
    pub kernel_sigma: f64,
    /// Input diversity (TI-DIM).
    pub diversity: DiversityConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::None,
            epsilon: 0.1,
            alpha: 0.01,
            steps: 40,
            mu: 1.0,
            kernel: 5,
            kernel_sigma: 1.0,
            diversity: DiversityConfig::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("attack.epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("attack.alpha must be > 0, got {}", self.alpha));
        }
        if self.steps == 0 {
            return bad("attack.steps must be >= 1".into());
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("attack.mu must be >= 0, got {}", self.mu));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("attack.kernel must be odd, got {}", self.kernel));
        }
        if !(self.kernel_sigma > 0.0) {
            return bad(format!(
                "attack.kernel_sigma must be > 0, got {}",
                self.kernel_sigma
            ));
        }
        self.diversity.validate()
    }

    /// Converts an 8-bit budget (e.g. 8/255 of the full range) to pixel units.
    pub fn epsilon_from_u8(levels: f64) -> f64 {
        levels * 2.0 / 255.0
    }
}

/// Normalised 2-D Gaussian kernel, `size × size`, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let t = gaussian_taps(size, sigma);
    t.iter()
        .flat_map(|a| t.iter().map(move |b| a * b))
        .collect()
}

/// Per-channel "same" convolution with zero padding.
pub fn smooth_gradient(grad: &Tensor, kernel: &[f64], size: usize) -> Tensor {
    if size == 1 {
        return grad.map(|v| v * kernel[0]);
    }
    let (n, c, h, w) = grad.dims4();
    let r = (size / 2) as isize;
    let mut out = Tensor::zeros(grad.shape());
    for p in 0..n * c {
        let src = &grad.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = 0.0;
                for di in -r..=r {
                    for dj in -r..=r {
                        let (y, x) = (i + di, j + dj);
                        if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                            acc += kernel[((di + r) * size as isize + dj + r) as usize]
                                * src[(y * w as isize + x) as usize];
                        }
                    }
                }
                dst[(i * w as isize + j) as usize] = acc;
            }
        }
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean over models and images of `1 - cos(M(x), M(z))`.
fn ensemble_distance<'g>(
    models: &[&dyn Surrogate],
    z_embeddings: &[Tensor],
    x: Var<'g>,
) -> Var<'g> {
    let n = x.shape()[0];
    let mut total: Option<Var<'g>> = None;
    for (m, z) in models.iter().zip(z_embeddings) {
        let d = z.len();
        let tiled = x
            .graph()
            .constant(Tensor::from_fn(&[n, d], |i| z.data()[i % d]));
        let term = m
            .embed_on(x)
            .normalize_rows()
            .row_dot(tiled.normalize_rows())
            .scale(-1.0)
            .add_scalar(1.0)
            .mean();
        total = Some(total.map_or(term, |t| t.add(term)));
    }
    total
        .expect("at least one model")
        .scale(1.0 / models.len() as f64)
}

struct Variant {
    momentum: Option<f64>,
    smoothing: Option<(Vec<f64>, usize)>,
    diversity: Option<DiversityConfig>,
}

fn check_inputs(
    x: &Tensor,
    z: &Tensor,
    models: &[&dyn Surrogate],
    cfg: &AttackConfig,
) -> Result<()> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidInput(
            "attack needs at least one surrogate model".into(),
        ));
    }
    if x.shape().len() != 4
        || z.shape().len() != 4
        || z.shape()[0] != 1
        || x.shape()[1..] != z.shape()[1..]
    {
        return Err(Error::ShapeMismatch {
            expected: x.shape().to_vec(),
            actual: z.shape().to_vec(),
        });
    }
    Ok(())
}

fn run(
    x: &Tensor,
    z: &Tensor,
    models: &[&dyn Surrogate],
    cfg: &AttackConfig,
    v: Variant,
) -> Result<Tensor> {
    check_inputs(x, z, models, cfg)?;
    let z_embeddings: Vec<Tensor> = models.iter().map(|m| m.embed_images(z)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = x.shape()[0];
    let per = x.len() / n;
    let mut adv = x.clone();
    let mut acc = Tensor::zeros(x.shape());
    for _ in 0..cfg.steps {
        let g = Graph::new();
        let xv = g.variable(adv.clone());
        let input = match &v.diversity {
            Some(d) => transform(xv, d, &mut rng).0,
            None => xv,
        };
        let mut grad = g
            .backward(ensemble_distance(models, &z_embeddings, input))
            .get_or_zeros(xv);
        if let Some((k, size)) = &v.smoothing {
            grad = smooth_gradient(&grad, k, *size);
        }
        let direction = match v.momentum {
            Some(mu) => {
                for s in 0..n {
                    let gs = &grad.data()[s * per..(s + 1) * per];
                    let l1: f64 = gs.iter().map(|v| v.abs()).sum();
                    let a = &mut acc.data_mut()[s * per..(s + 1) * per];
                    for (ai, gi) in a.iter_mut().zip(gs) {
                        *ai = mu * *ai + if l1 > 0.0 { gi / l1 } else { 0.0 };
                    }
                }
                acc.map(sign)
            }
            None => grad.map(sign),
        };
        adv = project(
            &adv.zip_map(&direction, |a, d| a - cfg.alpha * d),
            x,
            cfg.epsilon,
        );
    }
    Ok(adv)
}

/// Clamps `adv` into the L∞ ball of radius `eps` around `x` and into `[-1, 1]`.
pub fn project(adv: &Tensor, x: &Tensor, eps: f64) -> Tensor {
    adv.zip_map(x, |a, o| a.clamp(o - eps, o + eps).clamp(-1.0, 1.0))
}

pub fn pgd_targeted(
    x: &Tensor,
    z: &Tensor,
    models: &[&dyn Surrogate],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    let v = Variant {
        momentum: None,
        smoothing: None,
        diversity: None,
    };
    run(x, z, models, cfg, v)
}

pub fn mifgsm_targeted(
    x: &Tensor,
    z: &Tensor,
    models: &[&dyn Surrogate],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    let v = Variant {
        momentum: Some(cfg.mu),
        smoothing: None,
        diversity: None,
    };
    run(x, z, models, cfg, v)
}

pub fn tidim_targeted(
    x: &Tensor,
    z: &Tensor,
    models: &[&dyn Surrogate],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    let v = Variant {
        momentum: Some(cfg.mu),
        smoothing: Some((gaussian_kernel(cfg.kernel, cfg.kernel_sigma), cfg.kernel)),
        diversity: Some(cfg.diversity),
    };
    run(x, z, models, cfg, v)
}

/// Runs the configured method; `AttackMethod::None` returns `x` unchanged.
pub fn run_attack(
    x: &Tensor,
    z: &Tensor,
    models: &[&dyn Surrogate],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    match cfg.method {
        AttackMethod::None => {
            cfg.validate()?;
            Ok(x.clone())
        }
        AttackMethod::Pgd => pgd_targeted(x, z, models, cfg),
        AttackMethod::Mifgsm => mifgsm_targeted(x, z, models, cfg),
        AttackMethod::Tidim => tidim_targeted(x, z, models, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::testutil::random_batch;
    use proptest::prelude::*;

    /// `M(x) = W · flatten(x)`.
    struct LinearEmbedder(Tensor);

    impl Surrogate for LinearEmbedder {
        fn embed_on<'g>(&self, x: Var<'g>) -> Var<'g> {
            let n = x.shape()[0];
            let w = x.graph().constant(self.0.clone());
            x.reshape(&[n, self.0.shape()[1]]).linear(w, None)
        }
    }

    fn stub() -> LinearEmbedder {
        LinearEmbedder(Tensor::from_fn(&[2, 12], |i| {
            ((i * 7 % 5) as f64 - 2.0) * 0.3 + 0.1 * (i % 3) as f64
        }))
    }

    fn cfg(steps: usize) -> AttackConfig {
        AttackConfig {
            epsilon: 0.1,
            alpha: 0.01,
            steps,
            ..AttackConfig::default()
        }
    }

    /// Hand-derived gradient of `1 - (Wx · u) / |Wx|`, `u = Wz / |Wz|`:
    /// `-(Wᵀu / |Wx| - (Wx · u) WᵀWx / |Wx|³)`.
    fn linear_gradient(w: &Tensor, x: &[f64], z: &[f64]) -> Vec<f64> {
        let (d, k) = w.dims2();
        let mul = |v: &[f64]| {
            (0..d)
                .map(|r| (0..k).map(|c| w.data()[r * k + c] * v[c]).sum())
                .collect::<Vec<f64>>()
        };
        let wt = |v: &[f64]| {
            (0..k)
                .map(|c| (0..d).map(|r| w.data()[r * k + c] * v[r]).sum())
                .collect::<Vec<f64>>()
        };
        let (wx, wz) = (mul(x), mul(z));
        let nx = wx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nz = wz.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: Vec<f64> = wz.iter().map(|v| v / nz).collect();
        let dot: f64 = wx.iter().zip(&u).map(|(a, b)| a * b).sum();
        let (a, b) = (wt(&u), wt(&wx));
        (0..k)
            .map(|c| -(a[c] / nx - dot * b[c] / nx.powi(3)))
            .collect()
    }

    #[test]
    fn zero_budget_returns_the_input() {
        let m = stub();
        let x = random_batch(&[2, 3, 2, 2], 1);
        let z = random_batch(&[1, 3, 2, 2], 2);
        let c = AttackConfig {
            epsilon: 0.0,
            ..cfg(5)
        };
        for f in [pgd_targeted, mifgsm_targeted, tidim_targeted] {
            assert_eq!(f(&x, &z, &[&m], &c).unwrap(), x);
        }
    }

    #[test]
    fn one_pgd_step_on_a_linear_embedder() {
        let m = stub();
        let x = random_batch(&[1, 3, 2, 2], 3);
        let z = random_batch(&[1, 3, 2, 2], 4);
        let grad = linear_gradient(&m.0, x.data(), z.data());
        let want: Vec<f64> = x
            .data()
            .iter()
            .zip(&grad)
            .map(|(v, g)| (v - 0.01 * sign(*g)).clamp(-1.0, 1.0))
            .collect();
        let got = pgd_targeted(&x, &z, &[&m], &cfg(1)).unwrap();
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_accumulates_l1_normalised_gradients() {
        let m = stub();
        let x = random_batch(&[1, 3, 2, 2], 5);
        let z = random_batch(&[1, 3, 2, 2], 6);
        let mu = 0.7;
        let c = AttackConfig { mu, ..cfg(2) };
        let got = mifgsm_targeted(&x, &z, &[&m], &c).unwrap();

        let mut adv = x.data().to_vec();
        let mut acc = [0.0; 12];
        for _ in 0..2 {
            let g = linear_gradient(&m.0, &adv, z.data());
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            for i in 0..12 {
                acc[i] = mu * acc[i] + g[i] / l1;
                let o = x.data()[i];
                adv[i] = (adv[i] - 0.01 * sign(acc[i]))
                    .clamp(o - 0.1, o + 0.1)
                    .clamp(-1.0, 1.0);
            }
        }
        for (a, b) in got.data().iter().zip(&adv) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_variants_coincide() {
        let m = stub();
        let x = random_batch(&[3, 3, 2, 2], 7);
        let z = random_batch(&[1, 3, 2, 2], 8);
        let c = AttackConfig { mu: 0.0, ..cfg(10) };
        assert_eq!(
            pgd_targeted(&x, &z, &[&m], &c).unwrap(),
            mifgsm_targeted(&x, &z, &[&m], &c).unwrap()
        );
        let c = AttackConfig {
            mu: 1.0,
            kernel: 1,
            diversity: DiversityConfig {
                p: 0.0,
                ..Default::default()
            },
            ..cfg(10)
        };
        assert_eq!(
            mifgsm_targeted(&x, &z, &[&m], &c).unwrap(),
            tidim_targeted(&x, &z, &[&m], &c).unwrap()
        );
    }

    #[test]
    fn smoothing_kernel_is_normalised_and_keeps_uniform_fields() {
        for size in [1, 3, 5, 7] {
            let k = gaussian_kernel(size, 1.0);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let field = Tensor::full(&[1, 2, 9, 9], 0.25);
            let out = smooth_gradient(&field, &k, size);
            let r = size / 2;
            for c in 0..2 {
                for i in r..9 - r {
                    for j in r..9 - r {
                        assert!((out.data()[(c * 9 + i) * 9 + j] - 0.25).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn validation_rejects_bad_knobs() {
        assert!(AttackConfig::default().validate().is_ok());
        for c in [
            AttackConfig {
                epsilon: -0.1,
                ..Default::default()
            },
            AttackConfig {
                alpha: 0.0,
                ..Default::default()
            },
            AttackConfig {
                steps: 0,
                ..Default::default()
            },
            AttackConfig {
                mu: -1.0,
                ..Default::default()
            },
            AttackConfig {
                kernel: 4,
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        assert_eq!(
            "tidim".parse::<AttackMethod>().unwrap(),
            AttackMethod::Tidim
        );
        assert!("fgsm".parse::<AttackMethod>().is_err());
        assert!((AttackConfig::epsilon_from_u8(8.0) - 16.0 / 255.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn perturbation_stays_in_budget(seed in 0u64..500, eps in 0.0f64..0.3, which in 0usize..3) {
            let m = stub();
            let x = random_batch(&[2, 3, 2, 2], seed).map(|v| v / 0.9);
            let z = random_batch(&[1, 3, 2, 2], seed + 1);
            let c = AttackConfig { epsilon: eps, alpha: 0.05, steps: 6, kernel: 3, seed, ..AttackConfig::default() };
            let f = [pgd_targeted, mifgsm_targeted, tidim_targeted][which];
            let adv = f(&x, &z, &[&m], &c).unwrap();
            for (a, o) in adv.data().iter().zip(x.data()) {
                prop_assert!((a - o).abs() <= eps + 1e-6);
                prop_assert!((-1.0..=1.0).contains(a));
            }
            prop_assert_eq!(project(&adv, &x, eps), adv);
        }
    }
}
