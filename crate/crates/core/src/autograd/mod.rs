//! Tape-based reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every node that transitively depends on a trainable leaf. Constant leaves
//! never receive gradients, which is how parameter freezing and detaching are
//! expressed.

mod kernels;
mod tensor;

use std::cell::RefCell;
use std::rc::Rc;

pub use kernels::{conv2d_forward, AxisTaps};
pub use tensor::Tensor;

use kernels::{conv2d_backward, resize_backward, resize_forward};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    Upsample2x(usize),
    AvgPool2(usize),
    LeakyRelu(usize, f64),
    Silu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Atanh(usize),
    Log(usize),
    Abs(usize),
    Sqrt(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    ConcatChannels(usize, usize),
    Sum(usize),
    Mean(usize),
    GlobalAvgPool(usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    NormalizeRows(usize),
    NormalizeChannels(usize),
    RowDot(usize, usize),
    Resize {
        x: usize,
        rows: AxisTaps,
        cols: AxisTaps,
    },
    Reshape(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Guard added under square roots of normalisers.
const NORM_EPS: f64 = 1e-12;

/// Operation tape. Cheap to create; drop it after `backward` to free values.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when it does not influence the output
    /// (or is a constant).
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when absent.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives gradients.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn unary(&self, a: usize, value: Tensor, op: Op) -> Var<'_> {
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor, op: Op) -> Var<'_> {
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    /// Reverse pass from a scalar output (seeded with 1).
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(self, output.graph),
            "output from another graph"
        );
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[output.id].value.len(),
            1,
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::full(nodes[output.id].value.shape(), 1.0));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, delta: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(acc) => acc.add_assign(&delta),
        None => grads[id] = Some(delta),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let needs = |i: usize| nodes[i].needs_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            if needs(*b) {
                accumulate(nodes, grads, *b, g.map(|v| -v));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(nodes, grads, *a, g.zip_map(val(*b), |g, y| g * y));
            }
            if needs(*b) {
                accumulate(nodes, grads, *b, g.zip_map(val(*a), |g, x| g * x));
            }
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, g.map(|v| v * s)),
        Op::AddScalar(a) | Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, g.clone().reshape(&shape));
        }
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        } => {
            let need = (needs(*x), needs(*w), b.map(needs).unwrap_or(false));
            let cg = conv2d_backward(val(*x), val(*w), g, *stride, *pad, need);
            if let Some(dx) = cg.dx {
                accumulate(nodes, grads, *x, dx);
            }
            if let Some(dw) = cg.dw {
                accumulate(nodes, grads, *w, dw);
            }
            if let (Some(b), Some(db)) = (b, cg.db) {
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Upsample2x(a) => {
            let (n, c, h, w) = val(*a).dims4();
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            let (oh, ow) = (2 * h, 2 * w);
            for p in 0..n * c {
                for i in 0..oh {
                    for j in 0..ow {
                        dx.data_mut()[p * h * w + (i / 2) * w + j / 2] +=
                            g.data()[p * oh * ow + i * ow + j];
                    }
                }
            }
            accumulate(nodes, grads, *a, dx);
        }
        Op::AvgPool2(a) => {
            let (n, c, h, w) = val(*a).dims4();
            let (oh, ow) = (h / 2, w / 2);
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for p in 0..n * c {
                for i in 0..oh {
                    for j in 0..ow {
                        let gv = 0.25 * g.data()[p * oh * ow + i * ow + j];
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            dx.data_mut()[p * h * w + (2 * i + di) * w + 2 * j + dj] += gv;
                        }
                    }
                }
            }
            accumulate(nodes, grads, *a, dx);
        }
        Op::LeakyRelu(a, slope) => {
            let d = g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { g * slope });
            accumulate(nodes, grads, *a, d);
        }
        Op::Silu(a) => {
            let d = g.zip_map(val(*a), |g, x| {
                let s = sigmoid(x);
                g * (s + x * s * (1.0 - s))
            });
            accumulate(nodes, grads, *a, d);
        }
        Op::Tanh(a) => accumulate(nodes, grads, *a, g.zip_map(out, |g, y| g * (1.0 - y * y))),
        Op::Sigmoid(a) => accumulate(nodes, grads, *a, g.zip_map(out, |g, y| g * y * (1.0 - y))),
        Op::Softplus(a) => {
            let d = g.zip_map(val(*a), |g, x| g * sigmoid(x));
            accumulate(nodes, grads, *a, d);
        }
        Op::Atanh(a) => {
            let d = g.zip_map(val(*a), |g, x| g / (1.0 - x * x));
            accumulate(nodes, grads, *a, d);
        }
        Op::Log(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |g, x| g / x)),
        Op::Abs(a) => {
            let d = g.zip_map(val(*a), |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            });
            accumulate(nodes, grads, *a, d);
        }
        Op::Sqrt(a) => {
            let d = g.zip_map(out, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 });
            accumulate(nodes, grads, *a, d);
        }
        Op::Square(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |g, x| 2.0 * g * x)),
        Op::Clamp(a, lo, hi) => {
            let d = g.zip_map(val(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 });
            accumulate(nodes, grads, *a, d);
        }
        Op::ConcatChannels(a, b) => {
            let (n, ca, h, w) = val(*a).dims4();
            let cb = val(*b).dims4().1;
            let plane = h * w;
            let mut da = Tensor::zeros(&[n, ca, h, w]);
            let mut db = Tensor::zeros(&[n, cb, h, w]);
            for s in 0..n {
                let src = &g.data()[s * (ca + cb) * plane..(s + 1) * (ca + cb) * plane];
                da.data_mut()[s * ca * plane..(s + 1) * ca * plane]
                    .copy_from_slice(&src[..ca * plane]);
                db.data_mut()[s * cb * plane..(s + 1) * cb * plane]
                    .copy_from_slice(&src[ca * plane..]);
            }
            accumulate(nodes, grads, *a, da);
            accumulate(nodes, grads, *b, db);
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), g.item())),
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            accumulate(
                nodes,
                grads,
                *a,
                Tensor::full(val(*a).shape(), g.item() / n),
            );
        }
        Op::GlobalAvgPool(a) => {
            let (n, c, h, w) = val(*a).dims4();
            let inv = 1.0 / (h * w) as f64;
            let dx = Tensor::from_fn(&[n, c, h, w], |i| g.data()[i / (h * w)] * inv);
            accumulate(nodes, grads, *a, dx);
        }
        Op::Linear { x, w, b } => {
            let (n, inp) = val(*x).dims2();
            let outp = val(*w).dims2().0;
            if needs(*x) {
                let wv = val(*w);
                let dx = Tensor::from_fn(&[n, inp], |i| {
                    let (r, c) = (i / inp, i % inp);
                    (0..outp)
                        .map(|o| g.data()[r * outp + o] * wv.data()[o * inp + c])
                        .sum()
                });
                accumulate(nodes, grads, *x, dx);
            }
            if needs(*w) {
                let xv = val(*x);
                let dw = Tensor::from_fn(&[outp, inp], |i| {
                    let (o, c) = (i / inp, i % inp);
                    (0..n)
                        .map(|r| g.data()[r * outp + o] * xv.data()[r * inp + c])
                        .sum()
                });
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                if needs(*b) {
                    let db =
                        Tensor::from_fn(&[outp], |o| (0..n).map(|r| g.data()[r * outp + o]).sum());
                    accumulate(nodes, grads, *b, db);
                }
            }
        }
        Op::NormalizeRows(a) => {
            let xv = val(*a);
            let (rows, cols) = xv.dims2();
            let mut dx = Tensor::zeros(&[rows, cols]);
            for r in 0..rows {
                let x = &xv.data()[r * cols..(r + 1) * cols];
                let y = &out.data()[r * cols..(r + 1) * cols];
                let gr = &g.data()[r * cols..(r + 1) * cols];
                let norm = (x.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
                let gy: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                for c in 0..cols {
                    dx.data_mut()[r * cols + c] = (gr[c] - y[c] * gy) / norm;
                }
            }
            accumulate(nodes, grads, *a, dx);
        }
        Op::NormalizeChannels(a) => {
            let xv = val(*a);
            let (n, c, h, w) = xv.dims4();
            let plane = h * w;
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for s in 0..n {
                for p in 0..plane {
                    let idx = |ch: usize| (s * c + ch) * plane + p;
                    let norm = ((0..c).map(|ch| xv.data()[idx(ch)].powi(2)).sum::<f64>()
                        + NORM_EPS)
                        .sqrt();
                    let gy: f64 = (0..c)
                        .map(|ch| g.data()[idx(ch)] * out.data()[idx(ch)])
                        .sum();
                    for ch in 0..c {
                        dx.data_mut()[idx(ch)] =
                            (g.data()[idx(ch)] - out.data()[idx(ch)] * gy) / norm;
                    }
                }
            }
            accumulate(nodes, grads, *a, dx);
        }
        Op::RowDot(a, b) => {
            let (rows, cols) = val(*a).dims2();
            let expand = |other: &Tensor| {
                Tensor::from_fn(&[rows, cols], |i| g.data()[i / cols] * other.data()[i])
            };
            if needs(*a) {
                accumulate(nodes, grads, *a, expand(val(*b)));
            }
            if needs(*b) {
                accumulate(nodes, grads, *b, expand(val(*a)));
            }
        }
        Op::Resize { x, rows, cols } => {
            let dx = resize_backward(g, val(*x).shape(), rows, cols);
            accumulate(nodes, grads, *x, dx);
        }
        Op::CrossEntropy { logits, targets } => {
            let lv = val(*logits);
            let (n, k) = lv.dims2();
            let scale = g.item() / n as f64;
            let mut dx = Tensor::zeros(&[n, k]);
            for r in 0..n {
                let row = &lv.data()[r * k..(r + 1) * k];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                for c in 0..k {
                    let p = (row[c] - max).exp() / z;
                    let t = if c == targets[r] { 1.0 } else { 0.0 };
                    dx.data_mut()[r * k + c] = scale * (p - t);
                }
            }
            accumulate(nodes, grads, *logits, dx);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Whether gradients flow back through this node.
    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    /// Same value as a constant leaf: stops gradient flow.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }

    fn check_same(&self, other: &Var<'g>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars from different graphs"
        );
    }

    fn map_unary(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'g> {
        let v = self.value().map(f);
        self.graph.unary(self.id, v, op)
    }

    pub fn add(&self, other: Var<'g>) -> Var<'g> {
        self.check_same(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph
            .binary(self.id, other.id, v, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'g>) -> Var<'g> {
        self.check_same(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph
            .binary(self.id, other.id, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'g>) -> Var<'g> {
        self.check_same(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.graph
            .binary(self.id, other.id, v, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, s: f64) -> Var<'g> {
        self.map_unary(|v| v * s, Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: f64) -> Var<'g> {
        self.map_unary(|v| v + s, Op::AddScalar(self.id))
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&self, t: &Tensor) -> Var<'g> {
        let c = self.graph.constant(t.clone());
        self.add(c)
    }

    /// Convolution with `w: [out, in, k, k]` and optional per-channel bias.
    pub fn conv2d(&self, w: Var<'g>, b: Option<Var<'g>>, stride: usize, pad: usize) -> Var<'g> {
        let v = conv2d_forward(
            &self.value(),
            &w.value(),
            b.map(|b| b.value()).as_deref(),
            stride,
            pad,
        );
        let needs = self.requires_grad()
            || w.requires_grad()
            || b.map(|b| b.requires_grad()).unwrap_or(false);
        let op = Op::Conv2d {
            x: self.id,
            w: w.id,
            b: b.map(|b| b.id),
            stride,
            pad,
        };
        self.graph.push(v, op, needs)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2x(&self) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (2 * h, 2 * w);
        let v = Tensor::from_fn(&[n, c, oh, ow], |i| {
            let (p, r) = (i / (oh * ow), i % (oh * ow));
            x.data()[p * h * w + (r / ow / 2) * w + (r % ow) / 2]
        });
        self.graph.unary(self.id, v, Op::Upsample2x(self.id))
    }

    /// 2×2 average pooling (stride 2).
    pub fn avg_pool2(&self) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let v = Tensor::from_fn(&[n, c, oh, ow], |i| {
            let (p, r) = (i / (oh * ow), i % (oh * ow));
            let (a, b) = (2 * (r / ow), 2 * (r % ow));
            let base = p * h * w;
            0.25 * (x.data()[base + a * w + b]
                + x.data()[base + a * w + b + 1]
                + x.data()[base + (a + 1) * w + b]
                + x.data()[base + (a + 1) * w + b + 1])
        });
        self.graph.unary(self.id, v, Op::AvgPool2(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        self.map_unary(
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(self.id, slope),
        )
    }

    pub fn relu(&self) -> Var<'g> {
        self.leaky_relu(0.0)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self) -> Var<'g> {
        self.map_unary(|x| x * sigmoid(x), Op::Silu(self.id))
    }

    pub fn tanh(&self) -> Var<'g> {
        self.map_unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.map_unary(sigmoid, Op::Sigmoid(self.id))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<'g> {
        self.map_unary(softplus, Op::Softplus(self.id))
    }

    pub fn atanh(&self) -> Var<'g> {
        self.map_unary(f64::atanh, Op::Atanh(self.id))
    }

    pub fn ln(&self) -> Var<'g> {
        self.map_unary(f64::ln, Op::Log(self.id))
    }

    pub fn abs(&self) -> Var<'g> {
        self.map_unary(f64::abs, Op::Abs(self.id))
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&self) -> Var<'g> {
        self.map_unary(f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn square(&self) -> Var<'g> {
        self.map_unary(|x| x * x, Op::Square(self.id))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g> {
        self.map_unary(move |x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    pub fn concat_channels(&self, other: Var<'g>) -> Var<'g> {
        self.check_same(&other);
        let (a, b) = (self.value(), other.value());
        let (n, ca, h, w) = a.dims4();
        let (nb, cb, hb, wb) = b.dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat shape mismatch");
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        for s in 0..n {
            data.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
            data.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
        }
        let v = Tensor::new(vec![n, ca + cb, h, w], data);
        self.graph
            .binary(self.id, other.id, v, Op::ConcatChannels(self.id, other.id))
    }

    pub fn sum(&self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        self.graph.unary(self.id, v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g> {
        let v = Tensor::scalar(self.value().mean());
        self.graph.unary(self.id, v, Op::Mean(self.id))
    }

    /// `[n, c, h, w] → [n, c]` spatial mean.
    pub fn global_avg_pool(&self) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let v = Tensor::from_fn(&[n, c], |i| {
            x.data()[i * plane..(i + 1) * plane].iter().sum::<f64>() / plane as f64
        });
        self.graph.unary(self.id, v, Op::GlobalAvgPool(self.id))
    }

    /// `[n, in] × w[out, in]ᵀ + b[out]`.
    pub fn linear(&self, w: Var<'g>, b: Option<Var<'g>>) -> Var<'g> {
        let (x, wv) = (self.value(), w.value());
        let (n, inp) = x.dims2();
        let (outp, winp) = wv.dims2();
        assert_eq!(inp, winp, "linear input width mismatch");
        let bv = b.map(|b| b.value());
        let v = Tensor::from_fn(&[n, outp], |i| {
            let (r, o) = (i / outp, i % outp);
            let dot: f64 = (0..inp)
                .map(|c| x.data()[r * inp + c] * wv.data()[o * inp + c])
                .sum();
            dot + bv.as_ref().map(|b| b.data()[o]).unwrap_or(0.0)
        });
        let needs = self.requires_grad()
            || w.requires_grad()
            || b.map(|b| b.requires_grad()).unwrap_or(false);
        let op = Op::Linear {
            x: self.id,
            w: w.id,
            b: b.map(|b| b.id),
        };
        self.graph.push(v, op, needs)
    }

    /// Scales each row of a `[n, d]` tensor to unit L2 norm.
    pub fn normalize_rows(&self) -> Var<'g> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        let mut v = (*x).clone();
        for r in 0..rows {
            let row = &mut v.data_mut()[r * cols..(r + 1) * cols];
            let norm = (row.iter().map(|a| a * a).sum::<f64>() + NORM_EPS).sqrt();
            row.iter_mut().for_each(|a| *a /= norm);
        }
        self.graph.unary(self.id, v, Op::NormalizeRows(self.id))
    }

    /// Scales the channel vector at every spatial position to unit L2 norm.
    pub fn normalize_channels(&self) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let mut v = (*x).clone();
        for s in 0..n {
            for p in 0..plane {
                let norm = ((0..c)
                    .map(|ch| x.data()[(s * c + ch) * plane + p].powi(2))
                    .sum::<f64>()
                    + NORM_EPS)
                    .sqrt();
                for ch in 0..c {
                    v.data_mut()[(s * c + ch) * plane + p] /= norm;
                }
            }
        }
        self.graph.unary(self.id, v, Op::NormalizeChannels(self.id))
    }

    /// Per-row dot product of two `[n, d]` tensors, giving `[n]`.
    pub fn row_dot(&self, other: Var<'g>) -> Var<'g> {
        self.check_same(&other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "row_dot shape mismatch");
        let (rows, cols) = a.dims2();
        let v = Tensor::from_fn(&[rows], |r| {
            (0..cols)
                .map(|c| a.data()[r * cols + c] * b.data()[r * cols + c])
                .sum()
        });
        self.graph
            .binary(self.id, other.id, v, Op::RowDot(self.id, other.id))
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Var<'g> {
        let x = self.value();
        let (_, _, h, w) = x.dims4();
        let rows = AxisTaps::new(h, out_h);
        let cols = AxisTaps::new(w, out_w);
        let v = resize_forward(&x, &rows, &cols);
        self.graph.unary(
            self.id,
            v,
            Op::Resize {
                x: self.id,
                rows,
                cols,
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'g> {
        let v = (*self.value()).clone().reshape(shape);
        self.graph.unary(self.id, v, Op::Reshape(self.id))
    }

    /// Mean softmax cross-entropy of `[n, k]` logits against class indices.
    pub fn cross_entropy(&self, targets: &[usize]) -> Var<'g> {
        let lv = self.value();
        let (n, k) = lv.dims2();
        assert_eq!(targets.len(), n);
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < k, "target class {t} out of range {k}");
            let row = &lv.data()[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let op = Op::CrossEntropy {
            logits: self.id,
            targets: targets.to_vec(),
        };
        self.graph
            .unary(self.id, Tensor::scalar(total / n as f64), op)
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences against the tape.

    use super::*;

    /// Relative error `|a - b| / max(|a|, |b|, floor)`.
    pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(floor)
    }

    /// Checks `d f / d input[i]` for the given coordinates; returns the worst
    /// relative error.
    pub fn check<F>(input: &Tensor, coords: &[usize], step: f64, f: F) -> f64
    where
        F: Fn(Var<'_>) -> Var<'_>,
    {
        let g = Graph::new();
        let x = g.variable(input.clone());
        let out = f(x);
        let grads = g.backward(out);
        let analytic = grads.get_or_zeros(x);
        let eval = |t: Tensor| {
            let g = Graph::new();
            let x = g.constant(t);
            f(x).value().item()
        };
        coords
            .iter()
            .map(|&i| {
                let mut plus = input.clone();
                plus.data_mut()[i] += step;
                let mut minus = input.clone();
                minus.data_mut()[i] -= step;
                let numeric = (eval(plus) - eval(minus)) / (2.0 * step);
                rel_err(analytic.data()[i], numeric, 1e-6)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::check;
    use super::*;

    fn sample(shape: &[usize], seed: u64) -> Tensor {
        let mut state = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 1.6 - 0.8
        })
    }

    fn all(t: &Tensor) -> Vec<usize> {
        (0..t.len()).collect()
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x = sample(&[2, 2, 3, 3], 1);
        let other = sample(&[2, 2, 3, 3], 2);
        let cases: Vec<Box<dyn Fn(Var<'_>) -> Var<'_>>> = vec![
            Box::new(|v| v.tanh().sum()),
            Box::new(|v| v.sigmoid().mean()),
            Box::new(|v| v.softplus().sum()),
            Box::new(|v| v.scale(0.9).atanh().sum()),
            Box::new(|v| v.add_scalar(2.0).ln().sum()),
            Box::new(|v| v.square().add_scalar(0.1).sqrt().sum()),
            Box::new(|v| v.leaky_relu(0.2).square().sum()),
            Box::new(|v| v.silu().sum()),
            Box::new(|v| v.abs().mean()),
            Box::new(|v| v.clamp(-0.5, 0.5).square().sum()),
            Box::new(|v| v.upsample2x().square().sum()),
            Box::new(|v| v.resize(5, 4).square().sum()),
            Box::new(|v| v.resize(2, 2).square().sum()),
            Box::new(|v| v.normalize_channels().tanh().sum()),
            Box::new(|v| v.global_avg_pool().normalize_rows().tanh().sum()),
        ];
        for (i, f) in cases.iter().enumerate() {
            let err = check(&x, &all(&x), 1e-5, f);
            assert!(err < 1e-5, "case {i}: rel err {err}");
        }
        let err = check(&x, &all(&x), 1e-5, |v| {
            let o = v.graph().constant(other.clone());
            v.mul(o).sub(o.scale(2.0)).add(v).square().sum()
        });
        assert!(err < 1e-6);
    }

    #[test]
    fn conv_and_linear_match_finite_differences() {
        let x = sample(&[2, 3, 6, 6], 3);
        let w = sample(&[4, 3, 3, 3], 4);
        let b = sample(&[4], 5);
        for stride in [1, 2] {
            let err = check(&x, &all(&x), 1e-5, |v| {
                let g = v.graph();
                v.conv2d(
                    g.constant(w.clone()),
                    Some(g.constant(b.clone())),
                    stride,
                    1,
                )
                .tanh()
                .sum()
            });
            assert!(err < 1e-6, "stride {stride}: {err}");
            let err = check(&w, &all(&w), 1e-5, |wv| {
                let g = wv.graph();
                g.constant(x.clone())
                    .conv2d(wv, None, stride, 1)
                    .tanh()
                    .sum()
            });
            assert!(err < 1e-6, "weights, stride {stride}: {err}");
        }
        let err = check(&b, &all(&b), 1e-5, |bv| {
            let g = bv.graph();
            g.constant(x.clone())
                .conv2d(g.constant(w.clone()), Some(bv), 1, 1)
                .avg_pool2()
                .tanh()
                .sum()
        });
        assert!(err < 1e-6);

        let feats = sample(&[3, 5], 6);
        let lw = sample(&[4, 5], 7);
        let err = check(&feats, &all(&feats), 1e-5, |v| {
            let g = v.graph();
            v.linear(g.constant(lw.clone()), None)
                .cross_entropy(&[0, 3, 1])
        });
        assert!(err < 1e-6);
        let err = check(&lw, &all(&lw), 1e-5, |wv| {
            let g = wv.graph();
            let a = g.constant(feats.clone()).linear(wv, None).normalize_rows();
            a.row_dot(a.scale(0.5).add_scalar(0.1)).sum()
        });
        assert!(err < 1e-6);
    }

    #[test]
    fn concat_routes_gradients_to_both_inputs() {
        let g = Graph::new();
        let a = g.variable(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = g.variable(Tensor::full(&[1, 2, 2, 2], 2.0));
        let y = a.concat_channels(b).square().sum();
        let grads = g.backward(y);
        assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 2.0));
        assert!(grads.get(b).unwrap().data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn constants_and_detached_nodes_get_no_gradient() {
        let g = Graph::new();
        let a = g.variable(Tensor::scalar(3.0));
        let c = g.constant(Tensor::scalar(2.0));
        let d = a.detach();
        let y = a.mul(c).add(d.square());
        let grads = g.backward(y);
        assert_eq!(grads.get(a).unwrap().item(), 2.0);
        assert!(grads.get(c).is_none());
        assert!(grads.get(d).is_none());
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let g = Graph::new();
        let x = g.variable(Tensor::new(vec![3], vec![-800.0, 0.0, 800.0]));
        let y = x.softplus();
        let v = y.value();
        assert_eq!(v.data()[0], 0.0);
        assert!((v.data()[1] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(v.data()[2], 800.0);
    }
}
