use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_image_batch, Critic};
use crate::autograd::{Graph, Var};
use crate::nn::{Bound, Conv2d, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { width: 16 }
    }
}

/// Patch discriminator: two stride-2 stages and a one-channel logit map at
/// quarter resolution.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    c1: Conv2d,
    c2: Conv2d,
    out: Conv2d,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Self {
        let c = config.width;
        let mut p = ParamStore::new();
        let c1 = Conv2d::new(&mut p, "c1", (3, c), 3, 2, rng);
        let c2 = Conv2d::new(&mut p, "c2", (c, 2 * c), 3, 2, rng);
        let out = Conv2d::with_gain(&mut p, "out", (2 * c, 1), 3, 1, 0.5, rng);
        Self {
            config,
            params: p,
            c1,
            c2,
            out,
        }
    }

    pub fn bind<'a, 'g>(&'a self, graph: &'g Graph, trainable: bool) -> BoundDiscriminator<'a, 'g> {
        BoundDiscriminator {
            net: self,
            params: self.params.bind(graph, trainable),
        }
    }
}

pub struct BoundDiscriminator<'a, 'g> {
    net: &'a Discriminator,
    pub params: Bound<'g>,
}

impl<'g> Critic<'g> for BoundDiscriminator<'_, 'g> {
    fn logits(&self, x: Var<'g>) -> Var<'g> {
        check_image_batch(&x, "discriminator");
        let (n, p) = (self.net, &self.params);
        let h = n.c1.forward(p, x).silu();
        let h = n.c2.forward(p, h).silu();
        n.out.forward(p, h)
    }
}
