//! Input diversity: random down/up resizing followed by Gaussian noise,
//! applied with probability `p` before a surrogate model sees an image.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiversityConfig {
    pub p: f64,
    pub scale_low: f64,
    pub scale_high: f64,
    pub sigma: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            scale_low: 0.8,
            scale_high: 1.0,
            sigma: 0.05,
        }
    }
}

impl DiversityConfig {
    /// Never transforms.
    pub const OFF: Self = Self {
        p: 0.0,
        scale_low: 1.0,
        scale_high: 1.0,
        sigma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "diversity.p must lie in [0, 1], got {}",
                self.p
            )));
        }
        if !(self.scale_low > 0.0
            && self.scale_low <= self.scale_high
            && self.scale_high.is_finite())
        {
            return Err(Error::Config(format!(
                "diversity scale range must satisfy 0 < low <= high, got ({}, {})",
                self.scale_low, self.scale_high
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "diversity.sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Resizes by a factor drawn from `U(low, high)` and back to the original
/// size, bilinearly. A draw that rounds to the original size is the identity.
pub fn random_resize<'g, R: Rng + ?Sized>(x: Var<'g>, scale: (f64, f64), rng: &mut R) -> Var<'g> {
    let shape = x.shape();
    let (h, w) = (shape[2], shape[3]);
    let u = if scale.0 < scale.1 {
        rng.random_range(scale.0..=scale.1)
    } else {
        scale.0
    };
    let (sh, sw) = (
        ((h as f64 * u).round() as usize).max(1),
        ((w as f64 * u).round() as usize).max(1),
    );
    if (sh, sw) == (h, w) {
        return x;
    }
    x.resize(sh, sw).resize(h, w)
}

/// Adds i.i.d. `N(0, sigma²)` noise and clamps to `[-1, 1]`.
pub fn gaussian_noise<'g, R: Rng + ?Sized>(x: Var<'g>, sigma: f64, rng: &mut R) -> Var<'g> {
    if sigma == 0.0 {
        return x;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let noise = Tensor::from_fn(&x.shape(), |_| normal.sample(rng));
    x.add_const(&noise).clamp(-1.0, 1.0)
}

/// `T(x, p)`: with probability `p` resize then noise, otherwise identity.
/// Returns whether the transform was applied.
pub fn transform<'g, R: Rng + ?Sized>(
    x: Var<'g>,
    cfg: &DiversityConfig,
    rng: &mut R,
) -> (Var<'g>, bool) {
    if !rng.random_bool(cfg.p) {
        return (x, false);
    }
    let y = random_resize(x, (cfg.scale_low, cfg.scale_high), rng);
    (gaussian_noise(y, cfg.sigma, rng), true)
}
