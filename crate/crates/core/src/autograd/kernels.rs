//! Forward/backward kernels for the heavier graph ops.

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(
            h + 2 * pad >= k && w + 2 * pad >= k,
            "conv kernel {k} larger than padded input {h}x{w} (pad {pad})"
        );
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((c * g.k + ki) * g.k + kj) * p;
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut cols[row + oh * g.wo..row + (oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *d = if iw < 0 || iw >= g.w as isize {
                            0.0
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((c * g.k + ki) * g.k + kj) * p;
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let base = ih as usize * g.w;
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            plane[base + iw as usize] += cols[row + oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] = alpha·a[m×k]·b[k×n] + beta·c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, c, h, wd) = x.dims4();
    let (o, wc, k, k2) = w.dims4();
    assert_eq!(wc, c, "conv weight expects {wc} input channels, got {c}");
    assert_eq!(k, k2, "only square kernels are supported");
    let g = ConvGeom::new(c, h, wd, k, stride, pad);
    let (kk, p) = (g.patch(), g.positions());
    let mut out = Tensor::zeros(&[n, o, g.ho, g.wo]);
    let mut cols = vec![0.0; kk * p];
    let in_per = c * h * wd;
    for s in 0..n {
        im2col(&x.data()[s * in_per..(s + 1) * in_per], &g, &mut cols);
        let dst = &mut out.data_mut()[s * o * p..(s + 1) * o * p];
        gemm(o, kk, p, w.data(), (kk, 1), &cols, (p, 1), 0.0, dst);
        if let Some(b) = b {
            for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                let bias = b.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
    }
    out
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dout: &Tensor,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> ConvGrads {
    let (n, c, h, wd) = x.dims4();
    let (o, _, k, _) = w.dims4();
    let g = ConvGeom::new(c, h, wd, k, stride, pad);
    let (kk, p) = (g.patch(), g.positions());
    let in_per = c * h * wd;
    let mut dx = need.0.then(|| Tensor::zeros(x.shape()));
    let mut dw = need.1.then(|| Tensor::zeros(w.shape()));
    let db = need.2.then(|| {
        let mut db = Tensor::zeros(&[o]);
        for s in 0..n {
            for oc in 0..o {
                let start = (s * o + oc) * p;
                db.data_mut()[oc] += dout.data()[start..start + p].iter().sum::<f64>();
            }
        }
        db
    });
    let mut cols = vec![0.0; kk * p];
    for s in 0..n {
        let d = &dout.data()[s * o * p..(s + 1) * o * p];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[s * in_per..(s + 1) * in_per], &g, &mut cols);
            gemm(o, p, kk, d, (p, 1), &cols, (1, p), 1.0, dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            gemm(kk, o, p, w.data(), (1, kk), d, (p, 1), 0.0, &mut cols);
            col2im(&cols, &g, &mut dx.data_mut()[s * in_per..(s + 1) * in_per]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Per-axis interpolation table for half-pixel-centred bilinear resizing.
#[derive(Clone, Debug)]
pub struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisTaps {
    pub fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(output),
            hi: Vec::with_capacity(output),
            frac: Vec::with_capacity(output),
        };
        for o in 0..output {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(src - lo as f64);
        }
        taps
    }
}

pub fn resize_forward(x: &Tensor, rows: &AxisTaps, cols: &AxisTaps) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (rows.lo.len(), cols.lo.len());
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for i in 0..oh {
            let (r0, r1, fr) = (rows.lo[i], rows.hi[i], rows.frac[i]);
            for j in 0..ow {
                let (c0, c1, fc) = (cols.lo[j], cols.hi[j], cols.frac[j]);
                let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
                let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
                dst[i * ow + j] = top * (1.0 - fr) + bot * fr;
            }
        }
    }
    out
}

pub fn resize_backward(
    dout: &Tensor,
    in_shape: &[usize],
    rows: &AxisTaps,
    cols: &AxisTaps,
) -> Tensor {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (rows.lo.len(), cols.lo.len());
    let planes = in_shape[0] * in_shape[1];
    let mut dx = Tensor::zeros(in_shape);
    for plane in 0..planes {
        let src = &dout.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for i in 0..oh {
            let (r0, r1, fr) = (rows.lo[i], rows.hi[i], rows.frac[i]);
            for j in 0..ow {
                let (c0, c1, fc) = (cols.lo[j], cols.hi[j], cols.frac[j]);
                let g = src[i * ow + j];
                dst[r0 * w + c0] += g * (1.0 - fr) * (1.0 - fc);
                dst[r0 * w + c1] += g * (1.0 - fr) * fc;
                dst[r1 * w + c0] += g * fr * (1.0 - fc);
                dst[r1 * w + c1] += g * fr * fc;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, c, h, wd) = x.dims4();
        let (o, _, k, _) = w.dims4();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        Tensor::from_fn(&[n, o, ho, wo], |idx| {
            let (s, rest) = (idx / (o * ho * wo), idx % (o * ho * wo));
            let (oc, rest) = (rest / (ho * wo), rest % (ho * wo));
            let (i, j) = (rest / wo, rest % wo);
            let mut acc = 0.0;
            for ci in 0..c {
                for a in 0..k {
                    for b in 0..k {
                        let ih = (i * stride + a) as isize - pad as isize;
                        let iw = (j * stride + b) as isize - pad as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                            acc += x.data()[((s * c + ci) * h + ih as usize) * wd + iw as usize]
                                * w.data()[((oc * c + ci) * k + a) * k + b];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = Tensor::from_fn(&[2, 3, 5, 6], |i| ((i * 37 % 11) as f64 - 5.0) / 7.0);
        let w = Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 13 % 7) as f64 - 3.0) / 5.0);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let fast = conv2d_forward(&x, &w, None, stride, pad);
            let slow = naive_conv(&x, &w, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let x = Tensor::from_fn(&[1, 2, 4, 5], |i| i as f64 * 0.1);
        let taps_r = AxisTaps::new(4, 4);
        let taps_c = AxisTaps::new(5, 5);
        assert_eq!(resize_forward(&x, &taps_r, &taps_c), x);
    }
}
