//! Foreground-conditioned multi-head attention over enhanced scene features,
//! with learned positional offsets added to keys and values.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Backward, Tape, Var};
use crate::embedding::EMBED_DIM;
use crate::error::{Error, Result};
use crate::nn::{self, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossAttentionConfig {
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    /// Width of the foreground embedding; set from the model, not from files.
    #[serde(skip)]
    pub d_query: usize,
    /// Width of the enhanced scene features; set from the model.
    #[serde(skip)]
    pub d_model: usize,
    /// Largest graph the positional tables can index.
    pub n_max: usize,
    pub use_position_encoding: bool,
    pub use_residual: bool,
}

impl Default for CrossAttentionConfig {
    fn default() -> Self {
        Self {
            heads: 8,
            d_k: 64,
            d_v: 64,
            d_query: EMBED_DIM,
            d_model: 512,
            n_max: 30,
            use_position_encoding: true,
            use_residual: true,
        }
    }
}

impl CrossAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_query", self.d_query),
            ("d_model", self.d_model),
            ("n_max", self.n_max),
        ] {
            if v == 0 {
                problems.push(format!("attention.{name} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn init_params<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) {
        let (h, dm) = (self.heads, self.d_model);
        store.init_linear(&format!("{prefix}.proj_f"), self.d_query, dm, true, rng);
        store.init_matrix(&format!("{prefix}.wq"), dm, h * self.d_k, rng);
        store.init_matrix(&format!("{prefix}.wk"), dm, h * self.d_k, rng);
        store.init_matrix(&format!("{prefix}.wv"), dm, h * self.d_v, rng);
        store.init_matrix(&format!("{prefix}.wo"), h * self.d_v, dm, rng);
        if self.use_position_encoding {
            store.init_normal(
                &format!("{prefix}.pe_k"),
                &[h, self.n_max, self.d_k],
                0.02,
                rng,
            );
            store.init_normal(
                &format!("{prefix}.pe_v"),
                &[h, self.n_max, self.d_v],
                0.02,
                rng,
            );
        }
        store.init_layer_norm(&format!("{prefix}.norm"), dm);
    }
}

/// Output of [`cross_attend`] for a batch of queries.
#[derive(Clone, Debug)]
pub struct AttentionResult {
    /// `B × d_model` attended features.
    pub features: Var,
    /// `weights[b][h]` holds the distribution of head `h` over the nodes of
    /// scene `b`.
    pub weights: Vec<Vec<Vec<f64>>>,
}

/// `ĉ_f = P_f(c_f)` for each row of `query` (`B × d_query`).
pub fn project_foreground<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    query: Var,
) -> Result<Var> {
    nn::linear(tape, store, &format!("{prefix}.proj_f"), query)
}

struct CrossOp<T> {
    segments: Vec<Range<usize>>,
    heads: usize,
    d_k: usize,
    d_v: usize,
    n_max: usize,
    positional: bool,
    alpha: Vec<Vec<T>>,
}

impl<T: Scalar> CrossOp<T> {
    fn key<'a>(
        &self,
        k: &'a Tensor<T>,
        pe: Option<&'a Tensor<T>>,
        h: usize,
        j: usize,
        pos: usize,
        buf: &mut [T],
    ) {
        let hs = h * self.d_k..(h + 1) * self.d_k;
        buf.copy_from_slice(&k.row(j)[hs]);
        if let Some(pe) = pe {
            let off = (h * self.n_max + pos) * self.d_k;
            for (b, &p) in buf.iter_mut().zip(&pe.data()[off..off + self.d_k]) {
                *b += p;
            }
        }
    }

    fn value<'a>(
        &self,
        v: &'a Tensor<T>,
        pe: Option<&'a Tensor<T>>,
        h: usize,
        j: usize,
        pos: usize,
        buf: &mut [T],
    ) {
        let hs = h * self.d_v..(h + 1) * self.d_v;
        buf.copy_from_slice(&v.row(j)[hs]);
        if let Some(pe) = pe {
            let off = (h * self.n_max + pos) * self.d_v;
            for (b, &p) in buf.iter_mut().zip(&pe.data()[off..off + self.d_v]) {
                *b += p;
            }
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl<T: Scalar> Backward<T> for CrossOp<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let (pek, pev) = if self.positional {
            (Some(inputs[3]), Some(inputs[4]))
        } else {
            (None, None)
        };
        let scale = T::one() / T::of(self.d_k as f64).sqrt();
        let mut dq = vec![T::zero(); q.numel()];
        let mut dk = vec![T::zero(); k.numel()];
        let mut dv = vec![T::zero(); v.numel()];
        let mut dpek = vec![T::zero(); pek.map_or(0, Tensor::numel)];
        let mut dpev = vec![T::zero(); pev.map_or(0, Tensor::numel)];
        let (wk, wv) = (q.cols(), v.cols());
        let mut kbuf = vec![T::zero(); self.d_k];
        let mut vbuf = vec![T::zero(); self.d_v];
        for (b, seg) in self.segments.iter().enumerate() {
            let n = seg.len();
            for h in 0..self.heads {
                let alpha = &self.alpha[b][h * n..(h + 1) * n];
                let g = &grad.row(b)[h * self.d_v..(h + 1) * self.d_v];
                let qh = &q.row(b)[h * self.d_k..(h + 1) * self.d_k];
                let mut dalpha = Vec::with_capacity(n);
                for (pos, j) in seg.clone().enumerate() {
                    self.value(v, pev, h, j, pos, &mut vbuf);
                    dalpha.push(dot(g, &vbuf));
                    let a = alpha[pos];
                    for t in 0..self.d_v {
                        dv[j * wv + h * self.d_v + t] += a * g[t];
                        if pev.is_some() {
                            dpev[(h * self.n_max + pos) * self.d_v + t] += a * g[t];
                        }
                    }
                }
                let mean = alpha
                    .iter()
                    .zip(&dalpha)
                    .fold(T::zero(), |acc, (&a, &d)| acc + a * d);
                for (pos, j) in seg.clone().enumerate() {
                    let ds = alpha[pos] * (dalpha[pos] - mean) * scale;
                    self.key(k, pek, h, j, pos, &mut kbuf);
                    for t in 0..self.d_k {
                        dq[b * wk + h * self.d_k + t] += ds * kbuf[t];
                        dk[j * wk + h * self.d_k + t] += ds * qh[t];
                        if pek.is_some() {
                            dpek[(h * self.n_max + pos) * self.d_k + t] += ds * qh[t];
                        }
                    }
                }
            }
        }
        let mut out = vec![
            Some(Tensor::from_parts(q.shape(), dq)),
            Some(Tensor::from_parts(k.shape(), dk)),
            Some(Tensor::from_parts(v.shape(), dv)),
        ];
        if let (Some(pk), Some(pv)) = (pek, pev) {
            out.push(Some(Tensor::from_parts(pk.shape(), dpek)));
            out.push(Some(Tensor::from_parts(pv.shape(), dpev)));
        }
        out
    }
}

/// Attends the projected query of scene `b` (row `b` of `query`) over the
/// rows `segments[b]` of `scene`, head by head, then applies the output
/// projection, the optional residual and LayerNorm.
pub fn cross_attend<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    config: &CrossAttentionConfig,
    query: Var,
    scene: Var,
    segments: &[Range<usize>],
) -> Result<AttentionResult> {
    let b = tape.value(query).rows();
    if segments.len() != b {
        return Err(Error::Shape(format!(
            "{b} queries for {} scenes",
            segments.len()
        )));
    }
    let total = tape.value(scene).rows();
    for seg in segments {
        if seg.is_empty() || seg.end > total {
            return Err(Error::Shape(format!(
                "scene rows {seg:?} outside 0..{total}"
            )));
        }
        if seg.len() > config.n_max {
            return Err(Error::Capacity {
                n: seg.len(),
                max: config.n_max,
            });
        }
    }
    let param = |tape: &mut Tape<T>, name: &str| tape.param(store, &format!("{prefix}.{name}"));
    let (wq, wk, wv, wo) = (
        param(tape, "wq")?,
        param(tape, "wk")?,
        param(tape, "wv")?,
        param(tape, "wo")?,
    );
    let q = tape.matmul(query, wq)?;
    let k = tape.matmul(scene, wk)?;
    let v = tape.matmul(scene, wv)?;
    let mut inputs = vec![q, k, v];
    let positional = config.use_position_encoding;
    if positional {
        inputs.push(param(tape, "pe_k")?);
        inputs.push(param(tape, "pe_v")?);
    } else if store.contains(&format!("{prefix}.pe_k")) {
        return Err(Error::Config(format!(
            "{prefix}: positional tables present but disabled"
        )));
    }
    let mut op = CrossOp {
        segments: segments.to_vec(),
        heads: config.heads,
        d_k: config.d_k,
        d_v: config.d_v,
        n_max: config.n_max,
        positional,
        alpha: Vec::with_capacity(b),
    };
    let width = config.heads * config.d_v;
    let mut out = vec![T::zero(); b * width];
    {
        let (qv, kv, vv) = (tape.value(q), tape.value(k), tape.value(v));
        let (pek, pev) = if positional {
            (Some(tape.value(inputs[3])), Some(tape.value(inputs[4])))
        } else {
            (None, None)
        };
        let scale = T::one() / T::of(config.d_k as f64).sqrt();
        let mut kbuf = vec![T::zero(); config.d_k];
        let mut vbuf = vec![T::zero(); config.d_v];
        for (bi, seg) in segments.iter().enumerate() {
            let n = seg.len();
            let mut alpha = vec![T::zero(); config.heads * n];
            for h in 0..config.heads {
                let qh = &qv.row(bi)[h * config.d_k..(h + 1) * config.d_k];
                let logits = &mut alpha[h * n..(h + 1) * n];
                for (pos, j) in seg.clone().enumerate() {
                    op.key(kv, pek, h, j, pos, &mut kbuf);
                    logits[pos] = dot(qh, &kbuf) * scale;
                }
                let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for l in logits.iter_mut() {
                    *l = (*l - max).exp();
                    z += *l;
                }
                for l in logits.iter_mut() {
                    *l /= z;
                }
                let dst = &mut out[bi * width + h * config.d_v..bi * width + (h + 1) * config.d_v];
                for (pos, j) in seg.clone().enumerate() {
                    op.value(vv, pev, h, j, pos, &mut vbuf);
                    for (o, &x) in dst.iter_mut().zip(&vbuf) {
                        *o += alpha[h * n + pos] * x;
                    }
                }
            }
            op.alpha.push(alpha);
        }
    }
    let weights = op
        .alpha
        .iter()
        .zip(segments)
        .map(|(a, seg)| {
            a.chunks(seg.len())
                .map(|head| head.iter().map(|w| w.f64()).collect())
                .collect()
        })
        .collect();
    let heads_out = tape.custom(&inputs, Tensor::from_parts(&[b, width], out), Box::new(op));
    let mut x = tape.matmul(heads_out, wo)?;
    if config.use_residual {
        x = tape.add(x, query)?;
    }
    let features = nn::layer_norm(tape, store, &format!("{prefix}.norm"), x)?;
    Ok(AttentionResult { features, weights })
}
