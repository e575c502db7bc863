use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_image_batch, residual_image, Translator};
use crate::autograd::{Graph, Var};
use crate::nn::{Bound, Conv2d, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Channels at full resolution; the bottleneck uses twice as many.
    pub width: usize,
    pub residual_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 16,
            residual_blocks: 1,
        }
    }
}

/// Encoder / bottleneck / decoder translator. Source and reference are
/// concatenated on the channel axis; a skip connection carries the
/// full-resolution features past the bottleneck, and the output is an
/// image-space residual on the source.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamStore,
    enc1: Conv2d,
    enc2: Conv2d,
    res: Vec<(Conv2d, Conv2d)>,
    up: Conv2d,
    fuse: Conv2d,
    head: Conv2d,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Self {
        let c = config.width;
        let mut p = ParamStore::new();
        let enc1 = Conv2d::new(&mut p, "enc1", (6, c), 3, 1, rng);
        let enc2 = Conv2d::new(&mut p, "enc2", (c, 2 * c), 3, 2, rng);
        let res = (0..config.residual_blocks)
            .map(|i| {
                (
                    Conv2d::new(&mut p, &format!("res{i}.a"), (2 * c, 2 * c), 3, 1, rng),
                    Conv2d::with_gain(&mut p, &format!("res{i}.b"), (2 * c, 2 * c), 3, 1, 0.5, rng),
                )
            })
            .collect();
        let up = Conv2d::new(&mut p, "up", (2 * c, c), 3, 1, rng);
        let fuse = Conv2d::new(&mut p, "fuse", (2 * c, c), 3, 1, rng);
        let head = Conv2d::with_gain(&mut p, "head", (c, 3), 1, 1, 0.1, rng);
        Self {
            config,
            params: p,
            enc1,
            enc2,
            res,
            up,
            fuse,
            head,
        }
    }

    pub fn bind<'a, 'g>(&'a self, graph: &'g Graph, trainable: bool) -> BoundGenerator<'a, 'g> {
        BoundGenerator {
            net: self,
            params: self.params.bind(graph, trainable),
        }
    }
}

pub struct BoundGenerator<'a, 'g> {
    net: &'a Generator,
    pub params: Bound<'g>,
}

impl<'g> Translator<'g> for BoundGenerator<'_, 'g> {
    fn translate(&self, x: Var<'g>, y: Var<'g>) -> Var<'g> {
        check_image_batch(&x, "generator");
        assert_eq!(
            x.shape(),
            y.shape(),
            "generator inputs must have equal shapes"
        );
        assert!(
            x.shape()[2].is_multiple_of(2) && x.shape()[3].is_multiple_of(2),
            "generator needs even image sides"
        );
        let (n, p) = (self.net, &self.params);
        let e1 = n.enc1.forward(p, x.concat_channels(y)).silu();
        let mut h = n.enc2.forward(p, e1).silu();
        for (a, b) in &n.res {
            let r = b.forward(p, a.forward(p, h).silu());
            h = h.add(r);
        }
        let u = n.up.forward(p, h.upsample2x()).silu();
        let f = n.fuse.forward(p, u.concat_channels(e1)).silu();
        residual_image(x, n.head.forward(p, f))
    }
}
