//! Placement parameters, the regression head, and differentiable affine
//! composition of a foreground onto a background.
//!
//! Sampling grid convention: output pixel `(i, j)` of an `H × W` plane sits
//! at normalized coordinates `x = (2j + 1)/W − 1`, `y = (2i + 1)/H − 1`
//! (pixel centers, corners not aligned). The affine map sends these to source
//! coordinates which are read back with bilinear interpolation; taps outside
//! the source plane read as zero.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pole guard added to the scale before inverting it.
pub const SCALE_EPS: f64 = 1e-6;

/// `t = [t_r, t_x, t_y]`: scale along the limiting background dimension and
/// translation normalized by the remaining slack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    pub t_r: f64,
    pub t_x: f64,
    pub t_y: f64,
}

impl PlacementParams {
    pub fn new(t_r: f64, t_x: f64, t_y: f64) -> Result<Self> {
        let t = Self { t_r, t_x, t_y };
        if t.to_array().iter().all(|v| *v > 0.0 && *v < 1.0) {
            Ok(t)
        } else {
            Err(Error::Domain(format!("placement {t:?} outside (0, 1)")))
        }
    }

    pub fn from_array(a: [f64; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.t_r, self.t_x, self.t_y]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub d_noise: usize,
    pub hidden: [usize; 2],
    /// Scale applied to the initial weights reading the noise vector.
    pub noise_gain: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            d_noise: 2048,
            hidden: [512, 256],
            noise_gain: 0.1,
        }
    }
}

impl RegressorConfig {
    /// Hidden layers use Glorot init; the output layer starts near zero so
    /// early predictions sit around the center of the canvas.
    pub fn init_params<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        prefix: &str,
        d_att: usize,
        rng: &mut impl Rng,
    ) {
        let [h1, h2] = self.hidden;
        let first = format!("{prefix}.0");
        store.init_linear(&first, d_att + self.d_noise, h1, true, rng);
        let w = store
            .get_mut(&format!("{first}.weight"))
            .expect("just created");
        for v in &mut w.data_mut()[d_att * h1..] {
            *v *= T::of(self.noise_gain);
        }
        store.init_linear(&format!("{prefix}.1"), h1, h2, true, rng);
        store.init_uniform(&format!("{prefix}.2.weight"), &[h2, 3], 1e-3, rng);
        store.init_const(&format!("{prefix}.2.bias"), &[3], 0.0);
    }
}

/// `t = ½·tanh(R([f_att ∥ z])) + ½` for every row; returns `B × 3`.
pub fn regress_params<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    features: Var,
    noise: Var,
) -> Result<Var> {
    let x = tape.concat_cols(&[features, noise])?;
    let h = nn::linear(tape, store, &format!("{prefix}.0"), x)?;
    let h = tape.relu(h);
    let h = nn::linear(tape, store, &format!("{prefix}.1"), h)?;
    let h = tape.relu(h);
    let out = nn::linear(tape, store, &format!("{prefix}.2"), h)?;
    let squashed = tape.tanh(out);
    Ok(tape.affine(squashed, 0.5, 0.5))
}

/// Row-major `2 × 3` sampling matrix mapping output to source coordinates.
/// `fg_extent` is the object's size as a fraction of the plane, `(b_w/W, b_h/H)`.
pub fn affine_matrix(t: &PlacementParams, fg_extent: (f64, f64), eps: f64) -> [[f64; 3]; 2] {
    let s = 1.0 / (t.t_r + eps);
    [
        [s, 0.0, (1.0 - 2.0 * t.t_x) * (s - fg_extent.0)],
        [0.0, s, (1.0 - 2.0 * t.t_y) * (s - fg_extent.1)],
    ]
}

/// A `channels × height × width` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} plane",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(String::from("image plane")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f32) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn flipped_horizontally(&self) -> Self {
        Self::from_fn(self.channels, self.height, self.width, |c, i, j| {
            self.get(c, i, self.width - 1 - j)
        })
    }

    /// Box-filter reduction by an integer `factor` that divides both sides.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(Error::Shape(format!(
                "cannot reduce a {}x{} plane by {factor}",
                self.height, self.width
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let norm = 1.0 / (factor * factor) as f32;
        let mut data = vec![0.0f32; self.channels * h * w];
        for c in 0..self.channels {
            let src = self.channel(c);
            let dst = &mut data[c * h * w..(c + 1) * h * w];
            for i in 0..self.height {
                let row = &src[i * self.width..(i + 1) * self.width];
                let out = &mut dst[(i / factor) * w..(i / factor + 1) * w];
                for (j, v) in row.iter().enumerate() {
                    out[j / factor] += v;
                }
            }
            for v in dst.iter_mut() {
                *v *= norm;
            }
        }
        Ok(Self {
            channels: self.channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Bilinear value at continuous pixel coordinates (pixel centers at
    /// integers); taps outside the plane read as zero.
    pub fn sample(&self, c: usize, v: f64, u: f64) -> f64 {
        bilinear(self.channel(c), self.height, self.width, v, u).0
    }

    /// Aspect-preserving fit into an `out_h × out_w` canvas, centered, with
    /// zero borders. Returns the fitted plane and the content size in pixels.
    pub fn fit_centered(&self, out_h: usize, out_w: usize) -> (Self, (f64, f64)) {
        let scale = (out_w as f64 / self.width as f64).min(out_h as f64 / self.height as f64);
        let (cw, ch) = (self.width as f64 * scale, self.height as f64 * scale);
        let (ox, oy) = ((out_w as f64 - cw) / 2.0, (out_h as f64 - ch) / 2.0);
        let plane = Self::from_fn(self.channels, out_h, out_w, |c, i, j| {
            let (x, y) = (j as f64 + 0.5 - ox, i as f64 + 0.5 - oy);
            if x < 0.0 || y < 0.0 || x > cw || y > ch {
                return 0.0;
            }
            let u = (x / scale - 0.5).clamp(0.0, (self.width - 1) as f64);
            let v = (y / scale - 0.5).clamp(0.0, (self.height - 1) as f64);
            self.sample(c, v, u) as f32
        });
        (plane, (cw, ch))
    }
}

/// Bilinear read with zero padding. Returns the value and its derivatives
/// with respect to the row (`v`) and column (`u`) coordinates.
fn bilinear<S: Copy + Into<f64>>(
    plane: &[S],
    h: usize,
    w: usize,
    v: f64,
    u: f64,
) -> (f64, f64, f64) {
    let (u0, v0) = (num_traits::Float::floor(u), num_traits::Float::floor(v));
    let (fu, fv) = (u - u0, v - v0);
    let (u0, v0) = (u0 as i64, v0 as i64);
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            plane[r as usize * w + c as usize].into()
        }
    };
    let (p00, p01, p10, p11) = (
        at(v0, u0),
        at(v0, u0 + 1),
        at(v0 + 1, u0),
        at(v0 + 1, u0 + 1),
    );
    let value = (1.0 - fv) * ((1.0 - fu) * p00 + fu * p01) + fv * ((1.0 - fu) * p10 + fu * p11);
    let dv = (1.0 - fu) * (p10 - p00) + fu * (p11 - p01);
    let du = (1.0 - fv) * (p01 - p00) + fv * (p11 - p10);
    (value, dv, du)
}

/// Geometry of one composition: parameters and foreground extent.
#[derive(Clone, Copy, Debug)]
struct Warp {
    t: [f64; 3],
    extent: (f64, f64),
    eps: f64,
}

impl Warp {
    /// Source pixel coordinates `(v, u)` of output pixel `(i, j)`.
    fn source(&self, i: usize, j: usize, h: usize, w: usize) -> (f64, f64, f64, f64) {
        let s = 1.0 / (self.t[0] + self.eps);
        let xo = (2.0 * j as f64 + 1.0) / w as f64 - 1.0;
        let yo = (2.0 * i as f64 + 1.0) / h as f64 - 1.0;
        let xs = s * xo + (1.0 - 2.0 * self.t[1]) * (s - self.extent.0);
        let ys = s * yo + (1.0 - 2.0 * self.t[2]) * (s - self.extent.1);
        let u = ((xs + 1.0) * w as f64 - 1.0) / 2.0;
        let v = ((ys + 1.0) * h as f64 - 1.0) / 2.0;
        (v, u, xo, yo)
    }

    /// `∂(u, v)/∂t` at output pixel with normalized coordinates `(xo, yo)`.
    fn jacobian(&self, xo: f64, yo: f64, h: usize, w: usize) -> ([f64; 3], [f64; 3]) {
        let s = 1.0 / (self.t[0] + self.eps);
        let ds = -s * s;
        let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
        let du = [
            hw * (xo + 1.0 - 2.0 * self.t[1]) * ds,
            hw * -2.0 * (s - self.extent.0),
            0.0,
        ];
        let dv = [
            hh * (yo + 1.0 - 2.0 * self.t[2]) * ds,
            0.0,
            hh * -2.0 * (s - self.extent.1),
        ];
        (du, dv)
    }
}

/// Composes one sample. `bg`, `fg` are `3 × h × w`, `mask` is `h × w`;
/// `out` receives `4 × h × w` (RGB composite, then the warped mask).
/// When `upstream` is given, returns `Σ upstream · ∂out/∂t`.
#[allow(clippy::too_many_arguments)]
fn compose_kernel<S: Copy + Into<f64>>(
    bg: &[S],
    fg: &[S],
    mask: &[S],
    h: usize,
    w: usize,
    warp: Warp,
    mut out: Option<&mut [f64]>,
    upstream: Option<&[f64]>,
) -> [f64; 3] {
    let n = h * w;
    let mut dt = [0.0; 3];
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let (v, u, xo, yo) = warp.source(i, j, h, w);
            let (m, m_dv, m_du) = bilinear(mask, h, w, v, u);
            let mut g_v = 0.0;
            let mut g_u = 0.0;
            for c in 0..3 {
                let (f, f_dv, f_du) = bilinear(&fg[c * n..(c + 1) * n], h, w, v, u);
                let b: f64 = bg[c * n + p].into();
                if let Some(out) = out.as_deref_mut() {
                    out[c * n + p] = m * f + (1.0 - m) * b;
                }
                if let Some(up) = upstream {
                    let g = up[c * n + p];
                    g_v += g * (m_dv * (f - b) + m * f_dv);
                    g_u += g * (m_du * (f - b) + m * f_du);
                }
            }
            if let Some(out) = out.as_deref_mut() {
                out[3 * n + p] = m;
            }
            if let Some(up) = upstream {
                let g = up[3 * n + p];
                g_v += g * m_dv;
                g_u += g * m_du;
                if g_v != 0.0 || g_u != 0.0 {
                    let (du, dv) = warp.jacobian(xo, yo, h, w);
                    for k in 0..3 {
                        dt[k] += g_u * du[k] + g_v * dv[k];
                    }
                }
            }
        }
    }
    dt
}

fn check_planes(bg: &ImagePlane, fg: &ImagePlane, mask: &ImagePlane) -> Result<()> {
    let dims = |p: &ImagePlane| (p.height, p.width);
    if bg.channels != 3 || fg.channels != 3 || mask.channels != 1 {
        return Err(Error::Shape(format!(
            "expected 3/3/1 channels, got {}/{}/{}",
            bg.channels, fg.channels, mask.channels
        )));
    }
    if dims(bg) != dims(fg) || dims(bg) != dims(mask) {
        return Err(Error::Shape(format!(
            "plane sizes differ: bg {:?}, fg {:?}, mask {:?}",
            dims(bg),
            dims(fg),
            dims(mask)
        )));
    }
    Ok(())
}

/// Warps `fg` and `mask` by `t` and alpha-blends onto `bg`. Returns the RGB
/// composite and the warped mask.
pub fn compose(
    bg: &ImagePlane,
    fg: &ImagePlane,
    mask: &ImagePlane,
    t: &PlacementParams,
    fg_extent: (f64, f64),
) -> Result<(ImagePlane, ImagePlane)> {
    check_planes(bg, fg, mask)?;
    let (h, w) = (bg.height, bg.width);
    let mut out = vec![0.0; 4 * h * w];
    let warp = Warp {
        t: t.to_array(),
        extent: fg_extent,
        eps: SCALE_EPS,
    };
    compose_kernel(
        &bg.data,
        &fg.data,
        &mask.data,
        h,
        w,
        warp,
        Some(&mut out),
        None,
    );
    let n = h * w;
    let to_f32 = |s: &[f64]| s.iter().map(|&v| v as f32).collect::<Vec<_>>();
    Ok((
        ImagePlane::new(3, h, w, to_f32(&out[..3 * n]))?,
        ImagePlane::new(1, h, w, to_f32(&out[3 * n..]))?,
    ))
}

/// One training sample's images, already on the shared canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposeInput<'a> {
    pub bg: &'a ImagePlane,
    pub fg: &'a ImagePlane,
    pub mask: &'a ImagePlane,
    pub fg_extent: (f64, f64),
}

struct ComposeOp {
    planes: Vec<(Vec<f32>, Vec<f32>, Vec<f32>, (f64, f64))>,
    h: usize,
    w: usize,
}

impl<T: Scalar> Backward<T> for ComposeOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let t = inputs[0];
        let per = 4 * self.h * self.w;
        let mut dt = Vec::with_capacity(t.numel());
        let mut up = vec![0.0; per];
        for (b, (bg, fg, mask, extent)) in self.planes.iter().enumerate() {
            for (u, g) in up.iter_mut().zip(&grad.data()[b * per..(b + 1) * per]) {
                *u = g.f64();
            }
            let warp = Warp {
                t: [t.get2(b, 0).f64(), t.get2(b, 1).f64(), t.get2(b, 2).f64()],
                extent: *extent,
                eps: SCALE_EPS,
            };
            let g = compose_kernel(bg, fg, mask, self.h, self.w, warp, None, Some(&up));
            dt.extend(g.iter().map(|&v| T::of(v)));
        }
        vec![Some(Tensor::from_parts(t.shape(), dt))]
    }
}

/// Differentiable batch composition. `t` is `B × 3`; the result is
/// `B × 4 × H × W` holding RGB composites followed by the warped masks.
pub fn compose_batch<T: Scalar>(
    tape: &mut Tape<T>,
    t: Var,
    samples: &[ComposeInput<'_>],
) -> Result<Var> {
    let tv = tape.value(t);
    if tv.shape() != [samples.len(), 3] {
        return Err(Error::Shape(format!(
            "parameters {:?} for {} samples",
            tv.shape(),
            samples.len()
        )));
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::Shape(String::from("empty composition batch")))?;
    let (h, w) = (first.bg.height, first.bg.width);
    let per = 4 * h * w;
    let mut data = Vec::with_capacity(samples.len() * per);
    let mut buf = vec![0.0; per];
    let mut planes = Vec::with_capacity(samples.len());
    for (b, s) in samples.iter().enumerate() {
        check_planes(s.bg, s.fg, s.mask)?;
        if (s.bg.height, s.bg.width) != (h, w) {
            return Err(Error::Shape(format!("sample {b} is not {h}x{w}")));
        }
        let warp = Warp {
            t: [
                tv.get2(b, 0).f64(),
                tv.get2(b, 1).f64(),
                tv.get2(b, 2).f64(),
            ],
            extent: s.fg_extent,
            eps: SCALE_EPS,
        };
        compose_kernel(
            &s.bg.data,
            &s.fg.data,
            &s.mask.data,
            h,
            w,
            warp,
            Some(&mut buf),
            None,
        );
        data.extend(buf.iter().map(|&v| T::of(v)));
        planes.push((
            s.bg.data.clone(),
            s.fg.data.clone(),
            s.mask.data.clone(),
            s.fg_extent,
        ));
    }
    let value = Tensor::from_parts(&[samples.len(), 4, h, w], data);
    Ok(tape.custom(&[t], value, Box::new(ComposeOp { planes, h, w })))
}

/// Analytic `∂(Σ composite RGB)/∂t`.
pub fn composite_sum_gradient(
    bg: &ImagePlane,
    fg: &ImagePlane,
    mask: &ImagePlane,
    t: &PlacementParams,
    fg_extent: (f64, f64),
) -> Result<[f64; 3]> {
    check_planes(bg, fg, mask)?;
    let (h, w) = (bg.height, bg.width);
    let mut up = vec![1.0; 4 * h * w];
    for g in &mut up[3 * h * w..] {
        *g = 0.0;
    }
    let warp = Warp {
        t: t.to_array(),
        extent: fg_extent,
        eps: SCALE_EPS,
    };
    Ok(compose_kernel(
        &bg.data,
        &fg.data,
        &mask.data,
        h,
        w,
        warp,
        None,
        Some(&up),
    ))
}

fn composite_sum(
    bg: &ImagePlane,
    fg: &ImagePlane,
    mask: &ImagePlane,
    t: [f64; 3],
    fg_extent: (f64, f64),
) -> f64 {
    let (h, w) = (bg.height, bg.width);
    let mut out = vec![0.0; 4 * h * w];
    let warp = Warp {
        t,
        extent: fg_extent,
        eps: SCALE_EPS,
    };
    compose_kernel(
        &bg.data,
        &fg.data,
        &mask.data,
        h,
        w,
        warp,
        Some(&mut out),
        None,
    );
    out[..3 * h * w].iter().sum()
}

/// Largest relative disagreement between the analytic gradient of the
/// composite's pixel sum and central differences with the given `step`.
/// Relative error is taken against `max(|analytic|, |numeric|, 1)`.
pub fn composition_gradient_check(
    bg: &ImagePlane,
    fg: &ImagePlane,
    mask: &ImagePlane,
    t: &PlacementParams,
    fg_extent: (f64, f64),
    step: f64,
) -> Result<f64> {
    let analytic = composite_sum_gradient(bg, fg, mask, t, fg_extent)?;
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let (mut plus, mut minus) = (t.to_array(), t.to_array());
        plus[k] += step;
        minus[k] -= step;
        let numeric = (composite_sum(bg, fg, mask, plus, fg_extent)
            - composite_sum(bg, fg, mask, minus, fg_extent))
            / (2.0 * step);
        let scale = analytic[k].abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(channels: usize, n: usize, phase: f32) -> ImagePlane {
        ImagePlane::from_fn(channels, n, n, |c, i, j| {
            let (x, y) = (j as f32 / n as f32, i as f32 / n as f32);
            0.5 + 0.4 * ((3.0 * x + phase + c as f32).sin() * (2.0 * y - phase).cos())
        })
    }

    fn blob(n: usize) -> ImagePlane {
        ImagePlane::from_fn(1, n, n, |_, i, j| {
            let (x, y) = (j as f32 / n as f32 - 0.5, i as f32 / n as f32 - 0.5);
            (-(x * x + y * y) * 8.0).exp()
        })
    }

    #[test]
    fn centered_placement_has_no_translation() {
        let m = affine_matrix(
            &PlacementParams::new(0.5, 0.5, 0.5).unwrap(),
            (0.7, 0.3),
            SCALE_EPS,
        );
        assert_eq!(m[0][2], 0.0);
        assert_eq!(m[1][2], 0.0);
        assert_eq!(m[0][0], 1.0 / (0.5 + SCALE_EPS));
        let wider = affine_matrix(
            &PlacementParams::new(0.5, 0.5, 0.5).unwrap(),
            (0.7, 0.3),
            1e-3,
        );
        assert!(wider[0][0] < m[0][0]);
    }

    #[test]
    fn full_scale_translation_vanishes() {
        let m = affine_matrix(
            &PlacementParams::new(1.0 - 1e-9, 0.2, 0.5).unwrap(),
            (1.0, 1.0),
            SCALE_EPS,
        );
        assert!(m[0][2].abs() < 1e-5);
    }

    #[test]
    fn alpha_identities() {
        let (bg, fg) = (smooth(3, 16, 0.1), smooth(3, 16, 1.3));
        let t = PlacementParams::new(0.5, 0.3, 0.6).unwrap();
        let empty = ImagePlane::filled(1, 16, 16, 0.0);
        let (c, m) = compose(&bg, &fg, &empty, &t, (1.0, 1.0)).unwrap();
        assert_eq!(c, bg);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_mask_shows_warped_foreground() {
        // Identity warp: t_r = 1 − ε, extent 1 keeps the foreground in place.
        let (bg, fg) = (smooth(3, 8, 0.1), smooth(3, 8, 1.3));
        let mask = ImagePlane::filled(1, 8, 8, 1.0);
        let t = PlacementParams::new(1.0 - SCALE_EPS, 0.5, 0.5).unwrap();
        let (c, m) = compose(&bg, &fg, &mask, &t, (1.0, 1.0)).unwrap();
        for (a, b) in c.data().iter().zip(fg.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(m.data().iter().all(|&v| (v - 1.0).abs() < 1e-5));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (bg, fg, mask) = (smooth(3, 32, 0.2), smooth(3, 32, 0.9), blob(32));
        let t = PlacementParams::new(0.4137, 0.3719, 0.6271).unwrap();
        let err = composition_gradient_check(&bg, &fg, &mask, &t, (0.8, 0.6), 1e-4).unwrap();
        assert!(err < 1e-2, "{err}");
    }

    #[test]
    fn fit_centered_letterboxes() {
        let img = ImagePlane::filled(1, 10, 20, 1.0);
        let (fit, (w, h)) = img.fit_centered(32, 32);
        assert_eq!((w, h), (32.0, 16.0));
        assert_eq!(fit.get(0, 0, 16), 0.0);
        assert_eq!(fit.get(0, 16, 16), 1.0);
    }
}
