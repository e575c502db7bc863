//! Differentiable networks and the roles they play.
//!
//! Each network owns a [`ParamStore`](crate::nn::ParamStore) and is placed on
//! a [`Graph`](crate::autograd::Graph) with `bind`, either trainable or
//! frozen. The bound forms implement the role traits below; losses are
//! written against the traits so tests can substitute closures for networks.

mod discriminator;
mod embedder;
mod generator;
mod regularizer;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use embedder::{
    train_toy_fr, verification_scores, BoundEmbedder, EmbedderArch, FaceRecognizer, FrTrainConfig,
    FrTrainReport, EMBEDDING_DIM,
};
pub use generator::{BoundGenerator, Generator, GeneratorConfig};
pub use regularizer::{BoundRegularizer, Regularizer, RegularizerConfig};

use crate::autograd::{Graph, Tensor, Var};

/// Closest value to ±1 fed through `atanh` in the residual image heads.
pub(crate) const EDGE: f64 = 1.0 - 1e-5;

/// `tanh(atanh(x) + delta)`: an image-space residual that keeps outputs in
/// `(-1, 1)` and reduces to the identity when `delta` is zero.
pub(crate) fn residual_image<'g>(x: Var<'g>, delta: Var<'g>) -> Var<'g> {
    x.clamp(-EDGE, EDGE).atanh().add(delta).tanh()
}

/// `G(x, y)`: source `x` restyled with reference `y`.
pub trait Translator<'g> {
    fn translate(&self, x: Var<'g>, y: Var<'g>) -> Var<'g>;
}

/// `H(x)`: removes adversarial structure while keeping content.
pub trait Purifier<'g> {
    fn purify(&self, x: Var<'g>) -> Var<'g>;
}

/// Patch discriminator; returns pre-sigmoid realness logits.
pub trait Critic<'g> {
    fn logits(&self, x: Var<'g>) -> Var<'g>;

    /// Realness map in `(0, 1)`.
    fn realness(&self, x: Var<'g>) -> Var<'g> {
        self.logits(x).sigmoid()
    }
}

/// Unit-norm face embedding, `[n, d]`.
pub trait Embedder<'g> {
    fn embed(&self, x: Var<'g>) -> Var<'g>;
}

impl<'g, F: Fn(Var<'g>, Var<'g>) -> Var<'g>> Translator<'g> for F {
    fn translate(&self, x: Var<'g>, y: Var<'g>) -> Var<'g> {
        self(x, y)
    }
}

/// A frozen embedder that can be placed on any graph, e.g. an attack
/// surrogate or a verification model.
pub trait Surrogate {
    fn embed_on<'g>(&self, x: Var<'g>) -> Var<'g>;

    /// Embeddings of an image batch, outside any caller graph.
    fn embed_images(&self, images: &Tensor) -> Tensor {
        let g = Graph::new();
        let e = self.embed_on(g.constant(images.clone())).value();
        (*e).clone()
    }
}

impl Surrogate for FaceRecognizer {
    fn embed_on<'g>(&self, x: Var<'g>) -> Var<'g> {
        self.bind(x.graph(), false).embed(x)
    }

    fn embed_images(&self, images: &Tensor) -> Tensor {
        self.embed_tensor(images)
    }
}

/// Closure adaptor for [`Purifier`].
pub struct PurifyFn<F>(pub F);

impl<'g, F: Fn(Var<'g>) -> Var<'g>> Purifier<'g> for PurifyFn<F> {
    fn purify(&self, x: Var<'g>) -> Var<'g> {
        (self.0)(x)
    }
}

/// The identity purifier (used when the regularizer is disabled).
pub struct IdentityPurifier;

impl<'g> Purifier<'g> for IdentityPurifier {
    fn purify(&self, x: Var<'g>) -> Var<'g> {
        x
    }
}

/// Closure adaptor for [`Critic`].
pub struct CriticFn<F>(pub F);

impl<'g, F: Fn(Var<'g>) -> Var<'g>> Critic<'g> for CriticFn<F> {
    fn logits(&self, x: Var<'g>) -> Var<'g> {
        (self.0)(x)
    }
}

/// Closure adaptor for [`Embedder`].
pub struct EmbedFn<F>(pub F);

impl<'g, F: Fn(Var<'g>) -> Var<'g>> Embedder<'g> for EmbedFn<F> {
    fn embed(&self, x: Var<'g>) -> Var<'g> {
        (self.0)(x)
    }
}

pub(crate) fn check_image_batch(x: &Var<'_>, what: &str) {
    let shape = x.shape();
    assert!(
        shape.len() == 4 && shape[1] == 3,
        "{what} expects an N×3×H×W batch, got {shape:?}"
    );
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::{CriticFn, EmbedFn, PurifyFn};
    use crate::autograd::{Tensor, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random batch with values in `[-0.9, 0.9]` (clear of the clamp edges).
    pub fn random_batch(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-0.9..0.9))
    }

    /// `count` distinct coordinates in `0..len`.
    pub fn sample_coords(len: usize, count: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all: Vec<usize> = (0..len).collect();
        for i in 0..count.min(len) {
            let j = rng.random_range(i..len);
            all.swap(i, j);
        }
        all.truncate(count.min(len));
        all
    }

    // Constructors that pin closure signatures to one graph lifetime.

    pub fn critic<'g, F: Fn(Var<'g>) -> Var<'g>>(f: F) -> CriticFn<F> {
        CriticFn(f)
    }

    pub fn purifier<'g, F: Fn(Var<'g>) -> Var<'g>>(f: F) -> PurifyFn<F> {
        PurifyFn(f)
    }

    pub fn embedder<'g, F: Fn(Var<'g>) -> Var<'g>>(f: F) -> EmbedFn<F> {
        EmbedFn(f)
    }

    pub fn translator<'g, F: Fn(Var<'g>, Var<'g>) -> Var<'g>>(f: F) -> F {
        f
    }
}
