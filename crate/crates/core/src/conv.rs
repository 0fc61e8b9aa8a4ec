//! Image kernels on the tape: strided convolution, average pooling and
//! spatial mean, all over `[batch, channels, height, width]` tensors.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    height: usize,
    width: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col<T: Scalar>(&self, image: &[T], col: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let cols = self.col_cols();
        for c in 0..self.in_ch {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        for ox in 0..self.out_w {
                            let ix = (ox * s + kx) as isize - p;
                            dst[oy * self.out_w + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.height
                                && (ix as usize) < self.width
                            {
                                plane[iy as usize * self.width + ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], image: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let cols = self.col_cols();
        for c in 0..self.in_ch {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && (ix as usize) < self.width {
                                plane[iy as usize * self.width + ix as usize] +=
                                    src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    geom: ConvGeom,
}

impl<T: Scalar> Backward<T> for Conv2dOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let g = self.geom;
        let (x, w) = (inputs[0], inputs[1]);
        let (cr, cc) = (g.col_rows(), g.col_cols());
        let in_size = g.in_ch * g.height * g.width;
        let out_size = g.out_ch * cc;
        let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
        let mut dw = needs[1].then(|| vec![T::zero(); w.numel()]);
        let mut db = needs[2].then(|| vec![T::zero(); g.out_ch]);
        let mut col = vec![T::zero(); cr * cc];
        let mut dcol = vec![T::zero(); cr * cc];
        for b in 0..g.batch {
            let gout = &grad.data()[b * out_size..(b + 1) * out_size];
            if let Some(db) = db.as_mut() {
                for (o, row) in gout.chunks(cc).enumerate() {
                    db[o] += row.iter().copied().sum::<T>();
                }
            }
            if let Some(dw) = dw.as_mut() {
                g.im2col(&x.data()[b * in_size..(b + 1) * in_size], &mut col);
                T::gemm(g.out_ch, cc, cr, gout, false, &col, true, dw, true);
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    cr,
                    g.out_ch,
                    cc,
                    w.data(),
                    true,
                    gout,
                    false,
                    &mut dcol,
                    false,
                );
                g.col2im(&dcol, &mut dx[b * in_size..(b + 1) * in_size]);
            }
        }
        vec![
            dx.map(|d| Tensor::from_parts(x.shape(), d)),
            dw.map(|d| Tensor::from_parts(w.shape(), d)),
            db.map(|d| Tensor::from_parts(inputs[2].shape(), d)),
        ]
    }
}

/// 2-D convolution with a square kernel. `weight` is `[out, in, k, k]`,
/// `bias` is `[out]`.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let (xs, ws) = (tape.value(x).shape(), tape.value(weight).shape());
    if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || stride == 0 {
        return Err(Error::Shape(format!("conv2d input {xs:?} weight {ws:?}")));
    }
    let (kernel, out_ch) = (ws[2], ws[0]);
    if xs[2] + 2 * pad < kernel || xs[3] + 2 * pad < kernel {
        return Err(Error::Shape(format!(
            "conv2d kernel {kernel} larger than input {xs:?}"
        )));
    }
    let geom = ConvGeom {
        batch: xs[0],
        in_ch: xs[1],
        height: xs[2],
        width: xs[3],
        out_ch,
        kernel,
        stride,
        pad,
        out_h: (xs[2] + 2 * pad - kernel) / stride + 1,
        out_w: (xs[3] + 2 * pad - kernel) / stride + 1,
    };
    let (cr, cc) = (geom.col_rows(), geom.col_cols());
    let in_size = geom.in_ch * geom.height * geom.width;
    let mut out = vec![T::zero(); geom.batch * out_ch * cc];
    let mut col = vec![T::zero(); cr * cc];
    {
        let (xv, wv, bv) = (
            tape.value(x).data(),
            tape.value(weight).data(),
            tape.value(bias).data(),
        );
        for b in 0..geom.batch {
            geom.im2col(&xv[b * in_size..(b + 1) * in_size], &mut col);
            let dst = &mut out[b * out_ch * cc..(b + 1) * out_ch * cc];
            for (o, row) in dst.chunks_mut(cc).enumerate() {
                row.iter_mut().for_each(|v| *v = bv[o]);
            }
            T::gemm(out_ch, cr, cc, wv, false, &col, false, dst, true);
        }
    }
    let value = Tensor::from_parts(&[geom.batch, out_ch, geom.out_h, geom.out_w], out);
    Ok(tape.custom(&[x, weight, bias], value, Box::new(Conv2dOp { geom })))
}

struct AvgPoolOp {
    factor: usize,
}

impl<T: Scalar> Backward<T> for AvgPoolOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = inputs[0].shape();
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (output.shape()[2], output.shape()[3]);
        let f = self.factor;
        let scale = T::one() / T::of((f * f) as f64);
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for plane in 0..s[0] * s[1] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = grad.data()[(plane * oh + oy) * ow + ox] * scale;
                    for dy in 0..f {
                        let base = (plane * h + oy * f + dy) * w + ox * f;
                        dx[base..base + f].iter_mut().for_each(|v| *v += gv);
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(s, dx))]
    }
}

/// Non-overlapping `factor × factor` average pooling.
pub fn avg_pool<T: Scalar>(tape: &mut Tape<T>, x: Var, factor: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 || factor == 0 || !s[2].is_multiple_of(factor) || !s[3].is_multiple_of(factor) {
        return Err(Error::Shape(format!("avg_pool {factor} of {s:?}")));
    }
    if factor == 1 {
        return Ok(x);
    }
    let (h, w) = (s[2], s[3]);
    let (oh, ow) = (h / factor, w / factor);
    let scale = T::one() / T::of((factor * factor) as f64);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); s[0] * s[1] * oh * ow];
    for plane in 0..s[0] * s[1] {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..factor {
                    let base = (plane * h + oy * factor + dy) * w + ox * factor;
                    acc += xv[base..base + factor].iter().copied().sum::<T>();
                }
                out[(plane * oh + oy) * ow + ox] = acc * scale;
            }
        }
    }
    let value = Tensor::from_parts(&[s[0], s[1], oh, ow], out);
    Ok(tape.custom(&[x], value, Box::new(AvgPoolOp { factor })))
}

struct SpatialMeanOp;

impl<T: Scalar> Backward<T> for SpatialMeanOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = inputs[0].shape();
        let area = s[2] * s[3];
        let inv = T::one() / T::of(area as f64);
        let mut dx = Vec::with_capacity(inputs[0].numel());
        for &g in grad.data() {
            dx.extend(core::iter::repeat_n(g * inv, area));
        }
        vec![Some(Tensor::from_parts(s, dx))]
    }
}

/// `[B, C, H, W] → [B, C]` mean over the spatial dimensions.
pub fn spatial_mean<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("spatial_mean of {s:?}")));
    }
    let area = s[2] * s[3];
    let inv = T::one() / T::of(area as f64);
    let out: Vec<T> = tape
        .value(x)
        .data()
        .chunks(area)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    let value = Tensor::from_parts(&[s[0], s[1]], out);
    Ok(tape.custom(&[x], value, Box::new(SpatialMeanOp)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::numeric_gradient;

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i * 7919) % 13) as f64 * scale - 0.3)
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = ramp(&[1, 2, 5, 5], 0.1);
        let w = ramp(&[3, 2, 3, 3], 0.05);
        let b = Tensor::from_f64(&[3], &[0.1, 0.0, -0.2]).unwrap();
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            tape.constant(b.clone()),
        );
        let y = conv2d(&mut tape, xv, wv, bv, 2, 1).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[1, 3, 3, 3]);
        for o in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = b.data()[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    acc += x.data()[(c * 5 + iy as usize) * 5 + ix as usize]
                                        * w.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                    }
                    let got = out.data()[(o * 3 + oy) * 3 + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_pool_gradients_match_finite_differences() {
        let x0 = ramp(&[2, 2, 8, 8], 0.1);
        let w0 = ramp(&[3, 2, 3, 3], 0.07);
        let b0 = Tensor::from_f64(&[3], &[0.1, 0.0, -0.2]).unwrap();
        let coeff = ramp(&[2, 3], 0.3);
        let forward = |x: &Tensor<f64>, w: &Tensor<f64>, grads: bool| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b0.clone());
            let p = avg_pool(&mut tape, xv, 2).unwrap();
            let y = conv2d(&mut tape, p, wv, bv, 2, 1).unwrap();
            let y = tape.leaky_relu(y, 0.2);
            let m = spatial_mean(&mut tape, y).unwrap();
            let c = tape.constant(coeff.clone());
            let m = tape.mul(m, c).unwrap();
            let loss = tape.sum(m);
            let value = tape.value(loss).item();
            let g = grads.then(|| {
                let g = tape.backward(loss);
                (g.get(xv).unwrap().clone(), g.get(wv).unwrap().clone())
            });
            (value, g)
        };
        let (_, g) = forward(&x0, &w0, true);
        let (gx, gw) = g.unwrap();
        let nx = numeric_gradient(&x0, 1e-6, |x| forward(x, &w0, false).0);
        let nw = numeric_gradient(&w0, 1e-6, |w| forward(&x0, w, false).0);
        for (a, n) in gx.data().iter().zip(&nx).chain(gw.data().iter().zip(&nw)) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
    }
}
