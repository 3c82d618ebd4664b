//! Layer kernels. Images are NCHW, fully connected weights are `[out, in]`.

use super::Tensor;
use crate::error::{Error, Result};
use rand::Rng;

/// `c = a · b (+ c when accumulate)` for row-major `a: m×k`, `b: k×n`.
/// Transposition is expressed through the strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: callers pass buffers covering every strided index; c is m×n row-major
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn of(input: &Tensor, filters: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<ConvGeometry> {
        let (is, fs) = (input.shape(), filters.shape());
        if is.len() != 4 || fs.len() != 4 {
            return Err(Error::Shape(format!("conv2d expects NCHW input and FCKK filters, got {is:?} and {fs:?}")));
        }
        if fs[1] != is[1] || fs[2] != fs[3] || bias.shape() != [fs[0]] {
            return Err(Error::Shape(format!(
                "conv2d operands incompatible: input {is:?}, filters {fs:?}, bias {:?}",
                bias.shape()
            )));
        }
        if stride == 0 || is[2] + 2 * padding < fs[2] || is[3] + 2 * padding < fs[3] {
            return Err(Error::Shape(format!("kernel {} larger than padded input {is:?}", fs[2])));
        }
        Ok(ConvGeometry {
            channels: is[1],
            height: is[2],
            width: is[3],
            filters: fs[0],
            kernel: fs[2],
            stride,
            padding,
        })
    }
}

/// Unfolds one CHW image into `[C·K·K, OH·OW]` columns.
fn im2col(g: &ConvGeometry, img: &[f64], cols: &mut [f64]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let ol = oh * ow;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ol..(row + 1) * ol];
                for oy in 0..oh {
                    let y = (oy * g.stride + ki) as isize - g.padding as isize;
                    for ox in 0..ow {
                        let x = (ox * g.stride + kj) as isize - g.padding as isize;
                        dst[oy * ow + ox] = if y >= 0 && x >= 0 && (y as usize) < g.height && (x as usize) < g.width {
                            plane[y as usize * g.width + x as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into a CHW image (accumulating).
fn col2im(g: &ConvGeometry, cols: &[f64], img: &mut [f64]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let ol = oh * ow;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ol..(row + 1) * ol];
                for oy in 0..oh {
                    let y = (oy * g.stride + ki) as isize - g.padding as isize;
                    if y < 0 || y as usize >= g.height {
                        continue;
                    }
                    for ox in 0..ow {
                        let x = (ox * g.stride + kj) as isize - g.padding as isize;
                        if x >= 0 && (x as usize) < g.width {
                            plane[y as usize * g.width + x as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an NCHW batch with `[F, C, K, K]` filters plus bias.
pub fn conv2d_forward(input: &Tensor, filters: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::of(input, filters, bias, stride, padding)?;
    let n = input.shape()[0];
    let (pl, ol) = (g.patch_len(), g.out_len());
    let mut out = vec![0.0; n * g.filters * ol];
    let mut cols = vec![0.0; pl * ol];
    let in_len = g.channels * g.height * g.width;
    for s in 0..n {
        im2col(&g, &input.data()[s * in_len..(s + 1) * in_len], &mut cols);
        let dst = &mut out[s * g.filters * ol..(s + 1) * g.filters * ol];
        for (f, row) in dst.chunks_mut(ol).enumerate() {
            row.iter_mut().for_each(|v| *v = bias.data()[f]);
        }
        gemm(g.filters, pl, ol, filters.data(), pl as isize, 1, &cols, ol as isize, 1, dst, true);
    }
    Tensor::new(&[n, g.filters, g.out_height(), g.out_width()], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub filters: Tensor,
    pub bias: Tensor,
}

/// Exact gradients of [`conv2d_forward`]. The input gradient is skipped when
/// `need_input` is false (first layer).
pub fn conv2d_backward(
    input: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = ConvGeometry::of(input, filters, bias, stride, padding)?;
    let n = input.shape()[0];
    if grad_out.shape() != [n, g.filters, g.out_height(), g.out_width()] {
        return Err(Error::Shape(format!("conv2d output gradient has shape {:?}", grad_out.shape())));
    }
    let (pl, ol) = (g.patch_len(), g.out_len());
    let in_len = g.channels * g.height * g.width;
    let mut dw = vec![0.0; g.filters * pl];
    let mut db = vec![0.0; g.filters];
    let mut dx = if need_input { vec![0.0; n * in_len] } else { Vec::new() };
    let mut cols = vec![0.0; pl * ol];
    let mut dcols = vec![0.0; pl * ol];
    for s in 0..n {
        let go = &grad_out.data()[s * g.filters * ol..(s + 1) * g.filters * ol];
        for (f, row) in go.chunks(ol).enumerate() {
            db[f] += row.iter().sum::<f64>();
        }
        im2col(&g, &input.data()[s * in_len..(s + 1) * in_len], &mut cols);
        // dW += dY · colsᵀ
        gemm(g.filters, ol, pl, go, ol as isize, 1, &cols, 1, ol as isize, &mut dw, true);
        if need_input {
            // dcols = Wᵀ · dY
            gemm(pl, g.filters, ol, filters.data(), 1, pl as isize, go, ol as isize, 1, &mut dcols, false);
            col2im(&g, &dcols, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        input: if need_input { Some(Tensor::new(input.shape(), dx)?) } else { None },
        filters: Tensor::new(filters.shape(), dw)?,
        bias: Tensor::new(bias.shape(), db)?,
    })
}

fn linear_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "linear operands incompatible: x {xs:?}, w {ws:?}, b {:?}",
            b.shape()
        )));
    }
    Ok((xs[0], ws[1], ws[0]))
}

/// `y = x · wᵀ + b` for `x: [N, I]`, `w: [O, I]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, i, o) = linear_dims(x, w, b)?;
    let mut y = Vec::with_capacity(n * o);
    for _ in 0..n {
        y.extend_from_slice(b.data());
    }
    gemm(n, i, o, x.data(), i as isize, 1, w.data(), 1, i as isize, &mut y, true);
    Tensor::new(&[n, o], y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let (n, i, o) = linear_dims(x, w, b)?;
    if grad_out.shape() != [n, o] {
        return Err(Error::Shape(format!("linear output gradient has shape {:?}", grad_out.shape())));
    }
    let go = grad_out.data();
    let mut dx = vec![0.0; n * i];
    gemm(n, o, i, go, o as isize, 1, w.data(), i as isize, 1, &mut dx, false);
    let mut dw = vec![0.0; o * i];
    gemm(o, n, i, go, 1, o as isize, x.data(), i as isize, 1, &mut dw, false);
    let mut db = vec![0.0; o];
    for row in go.chunks(o) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(&[n, i], dx)?,
        weight: Tensor::new(w.shape(), dw)?,
        bias: Tensor::new(b.shape(), db)?,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient through ReLU given its output.
pub fn relu_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    same_shape(y, grad_out, "relu")?;
    let g = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(y.shape(), g)
}

pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    y
}

/// Gradient through the sigmoid given its output.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    same_shape(y, grad_out, "sigmoid")?;
    let g = y.data().iter().zip(grad_out.data()).map(|(&y, &g)| g * y * (1.0 - y)).collect();
    Tensor::new(y.shape(), g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or 1/(1−rate)); eval mode is the identity.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::RejectedInput(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), vec![1.0; x.len()]));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    let y = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::new(x.shape(), y)?, mask))
}

pub fn dropout_backward(mask: &[f64], grad_out: &Tensor) -> Result<Tensor> {
    if mask.len() != grad_out.len() {
        return Err(Error::Shape("dropout mask does not match gradient".into()));
    }
    let g = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
    Tensor::new(grad_out.shape(), g)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    /// Direct nested-loop cross-correlation.
    fn conv_reference(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let [n, c, h, wd] = x.shape().try_into().unwrap();
        let [f, _, k, _] = w.shape().try_into().unwrap();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * f * oh * ow];
        for s in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[fi];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let y = (oy * stride + ky) as isize - pad as isize;
                                    let xx = (ox * stride + kx) as isize - pad as isize;
                                    if y < 0 || xx < 0 || y as usize >= h || xx as usize >= wd {
                                        continue;
                                    }
                                    acc += w.data()[((fi * c + ci) * k + ky) * k + kx]
                                        * x.data()[((s * c + ci) * h + y as usize) * wd + xx as usize];
                                }
                            }
                        }
                        out[((s * f + fi) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_filter_is_identity() {
        let x = random(&[2, 1, 5, 4], 1);
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn impulse_response_is_plateau() {
        let mut x = Tensor::zeros(&[1, 1, 7, 7]);
        x.data_mut()[3 * 7 + 3] = 1.0;
        let w = Tensor::from_fn(&[1, 1, 3, 3], |_| 1.0);
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                let expect = if (2..=4).contains(&r) && (2..=4).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(y.data()[r * 7 + c], expect);
            }
        }
    }

    #[test]
    fn matches_loop_reference() {
        for (seed, stride, pad) in [(3, 1, 0), (4, 2, 0), (5, 2, 1), (6, 3, 2)] {
            let x = random(&[2, 3, 9, 8], seed);
            let w = random(&[4, 3, 3, 3], seed + 100);
            let b = random(&[4], seed + 200);
            let y = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let r = conv_reference(&x, &w, &b, stride, pad);
            let err = y.data().iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "stride {stride} pad {pad}: {err}");
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dY, conv(X)> is bilinear, so its gradients equal the reference's by finite differences
        let x = random(&[2, 2, 7, 7], 7);
        let w = random(&[3, 2, 3, 3], 8);
        let b = random(&[3], 9);
        let dy = random(&[2, 3, 3, 3], 10);
        let grads = conv2d_backward(&x, &w, &b, &dy, 2, 0, true).unwrap();
        let objective = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            conv_reference(x, w, b, 2, 0).iter().zip(dy.data()).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for i in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.data_mut()[i] += eps;
            wm.data_mut()[i] -= eps;
            let fd = (objective(&x, &wp, &b) - objective(&x, &wm, &b)) / (2.0 * eps);
            assert!((fd - grads.filters.data()[i]).abs() < 1e-8);
        }
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (objective(&xp, &w, &b) - objective(&xm, &w, &b)) / (2.0 * eps);
            assert!((fd - grads.input.as_ref().unwrap().data()[i]).abs() < 1e-8);
        }
        let total: f64 = dy.data()[..9].iter().chain(&dy.data()[27..36]).sum();
        assert!((grads.bias.data()[0] - total).abs() < 1e-12);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 0), Err(Error::Shape(_))));
        let w = Tensor::zeros(&[1, 2, 7, 7]);
        assert!(conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 0).is_err());
    }

    #[test]
    fn linear_matches_loops() {
        let x = random(&[3, 5], 11);
        let w = random(&[4, 5], 12);
        let b = random(&[4], 13);
        let y = linear_forward(&x, &w, &b).unwrap();
        let dy = random(&[3, 4], 14);
        let g = linear_backward(&x, &w, &b, &dy).unwrap();
        for n in 0..3 {
            for o in 0..4 {
                let r: f64 = b.data()[o] + (0..5).map(|i| x.data()[n * 5 + i] * w.data()[o * 5 + i]).sum::<f64>();
                assert!((r - y.data()[n * 4 + o]).abs() < 1e-12);
            }
            for i in 0..5 {
                let r: f64 = (0..4).map(|o| dy.data()[n * 4 + o] * w.data()[o * 5 + i]).sum();
                assert!((r - g.input.data()[n * 5 + i]).abs() < 1e-12);
            }
        }
        for o in 0..4 {
            for i in 0..5 {
                let r: f64 = (0..3).map(|n| dy.data()[n * 4 + o] * x.data()[n * 5 + i]).sum();
                assert!((r - g.weight.data()[o * 5 + i]).abs() < 1e-12);
            }
        }
        assert!(linear_forward(&x, &random(&[4, 6], 1), &b).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) <= 1.0);
        let x = Tensor::new(&[4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let x = random(&[3, 7], 15);
        let (y, _) = dropout(&x, 0.5, Mode::Eval, &mut rng(0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Tensor::from_fn(&[1, 8], |i| 1.0 + i as f64);
        let mut r = rng(16);
        let mut mean = [0.0; 8];
        let trials = 10_000;
        for _ in 0..trials {
            let (y, _) = dropout(&x, 0.5, Mode::Train, &mut r).unwrap();
            for (m, v) in mean.iter_mut().zip(y.data()) {
                *m += v / trials as f64;
            }
        }
        for (m, v) in mean.iter().zip(x.data()) {
            assert!((m - v).abs() / v < 0.02, "{m} vs {v}");
        }
    }

    #[test]
    fn dropout_mask_is_seeded() {
        let x = random(&[2, 16], 17);
        let a = dropout(&x, 0.5, Mode::Train, &mut rng(3)).unwrap();
        let b = dropout(&x, 0.5, Mode::Train, &mut rng(3)).unwrap();
        assert_eq!(a.1, b.1);
    }
}
