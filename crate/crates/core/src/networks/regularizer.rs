use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_image_batch, residual_image, Purifier};
use crate::autograd::{Graph, Var};
use crate::nn::{Bound, Conv2d, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerConfig {
    pub width: usize,
    /// Channels added by each conv inside a dense block.
    pub growth: usize,
    /// Number of residual-in-residual dense blocks.
    pub blocks: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            width: 8,
            growth: 4,
            blocks: 3,
        }
    }
}

/// Residual scaling inside dense blocks and RRDBs.
const RESIDUAL_SCALE: f64 = 0.2;

#[derive(Clone, Debug)]
struct DenseBlock {
    convs: [Conv2d; 5],
}

impl DenseBlock {
    fn new<R: Rng + ?Sized>(
        p: &mut ParamStore,
        name: &str,
        nf: usize,
        gc: usize,
        rng: &mut R,
    ) -> Self {
        let mut conv = |i: usize, cout: usize, gain: f64| {
            Conv2d::with_gain(
                p,
                &format!("{name}.conv{i}"),
                (nf + i * gc, cout),
                3,
                1,
                gain,
                rng,
            )
        };
        Self {
            convs: [
                conv(0, gc, 1.0),
                conv(1, gc, 1.0),
                conv(2, gc, 1.0),
                conv(3, gc, 1.0),
                conv(4, nf, 0.1),
            ],
        }
    }

    fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let mut feats = x;
        for conv in &self.convs[..4] {
            let y = conv.forward(p, feats).silu();
            feats = feats.concat_channels(y);
        }
        self.convs[4].forward(p, feats).scale(RESIDUAL_SCALE).add(x)
    }
}

/// Residual-in-residual dense block: three dense blocks under one more
/// scaled skip connection.
#[derive(Clone, Debug)]
struct Rrdb {
    blocks: [DenseBlock; 3],
}

impl Rrdb {
    fn new<R: Rng + ?Sized>(
        p: &mut ParamStore,
        name: &str,
        nf: usize,
        gc: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            blocks: [
                DenseBlock::new(p, &format!("{name}.rdb0"), nf, gc, rng),
                DenseBlock::new(p, &format!("{name}.rdb1"), nf, gc, rng),
                DenseBlock::new(p, &format!("{name}.rdb2"), nf, gc, rng),
            ],
        }
    }

    fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let y = self.blocks.iter().fold(x, |h, b| b.forward(p, h));
        y.scale(RESIDUAL_SCALE).add(x)
    }
}

/// Encoder, RRDB trunk at half resolution, decoder. The final conv starts at
/// zero so a fresh regularizer is the identity map.
#[derive(Clone, Debug)]
pub struct Regularizer {
    pub config: RegularizerConfig,
    pub params: ParamStore,
    enc: Conv2d,
    down: Conv2d,
    trunk: Vec<Rrdb>,
    trunk_out: Conv2d,
    up: Conv2d,
    out: Conv2d,
}

impl Regularizer {
    pub fn new<R: Rng + ?Sized>(config: RegularizerConfig, rng: &mut R) -> Self {
        let (c, gc) = (config.width, config.growth);
        let mut p = ParamStore::new();
        let enc = Conv2d::new(&mut p, "enc", (3, c), 3, 1, rng);
        let down = Conv2d::new(&mut p, "down", (c, c), 3, 2, rng);
        let trunk = (0..config.blocks)
            .map(|i| Rrdb::new(&mut p, &format!("rrdb{i}"), c, gc, rng))
            .collect();
        let trunk_out = Conv2d::new(&mut p, "trunk_out", (c, c), 3, 1, rng);
        let up = Conv2d::new(&mut p, "up", (c, c), 3, 1, rng);
        let out = Conv2d::with_gain(&mut p, "out", (c, 3), 3, 1, 0.0, rng);
        Self {
            config,
            params: p,
            enc,
            down,
            trunk,
            trunk_out,
            up,
            out,
        }
    }

    pub fn bind<'a, 'g>(&'a self, graph: &'g Graph, trainable: bool) -> BoundRegularizer<'a, 'g> {
        BoundRegularizer {
            net: self,
            params: self.params.bind(graph, trainable),
        }
    }
}

pub struct BoundRegularizer<'a, 'g> {
    net: &'a Regularizer,
    pub params: Bound<'g>,
}

impl<'g> Purifier<'g> for BoundRegularizer<'_, 'g> {
    fn purify(&self, x: Var<'g>) -> Var<'g> {
        check_image_batch(&x, "regularizer");
        let (n, p) = (self.net, &self.params);
        let e = n.enc.forward(p, x).silu();
        let d = n.down.forward(p, e).silu();
        let t = n.trunk.iter().fold(d, |h, b| b.forward(p, h));
        let t = n.trunk_out.forward(p, t).add(d);
        let u = n.up.forward(p, t.upsample2x()).silu().add(e);
        residual_image(x, n.out.forward(p, u))
    }
}
