//! Edge-aware multi-head graph transformer.
//!
//! Each layer projects node features to queries, keys and values and edge
//! features to per-head edge vectors. Node `i` attends to itself and to every
//! `j` with an edge `i → j`; the edge vector enters the logit through
//! `q·k + q·e + e·k`. Aggregated messages pass through a two-layer MLP and a
//! residual LayerNorm. Batches are packed block-diagonally: graphs are
//! concatenated and never attend across each other.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

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
pub struct GtnConfig {
    pub num_layers: usize,
    pub heads: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub mlp_hidden: usize,
}

impl Default for GtnConfig {
    fn default() -> Self {
        Self {
            num_layers: 5,
            heads: 8,
            d_in: EMBED_DIM,
            d_out: 256,
            mlp_hidden: 512,
        }
    }
}

impl GtnConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_layers == 0 {
            problems.push("gtn.num_layers must be at least 1".into());
        }
        if self.heads == 0 {
            problems.push("gtn.heads must be at least 1".into());
        } else if !self.d_out.is_multiple_of(self.heads) {
            problems.push(format!(
                "gtn.d_out ({}) must be divisible by gtn.heads ({})",
                self.d_out, self.heads
            ));
        }
        if self.d_in == 0 || self.d_out == 0 || self.mlp_hidden == 0 {
            problems.push("gtn dimensions must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_out / self.heads
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.d_in
        } else {
            self.d_out
        }
    }

    /// Registers the parameters of every layer under `{prefix}.{layer}.*`.
    pub fn init_params<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) {
        for l in 0..self.num_layers {
            let d_in = self.layer_input_dim(l);
            let p = format!("{prefix}.{l}");
            for w in ["wq", "wk", "wv", "we"] {
                store.init_matrix(&format!("{p}.{w}"), d_in, self.d_out, rng);
            }
            if d_in != self.d_out {
                store.init_matrix(&format!("{p}.wres"), d_in, self.d_out, rng);
            }
            store.init_linear(&format!("{p}.mlp1"), self.d_out, self.mlp_hidden, true, rng);
            store.init_linear(&format!("{p}.mlp2"), self.mlp_hidden, self.d_out, true, rng);
            store.init_layer_norm(&format!("{p}.norm"), self.d_out);
        }
    }
}

/// `(q·k + q·e + e·k) / √d` for one head.
pub fn edge_attention_scores(q: &[f64], k: &[f64], e: &[f64]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    (dot(q, k) + dot(q, e) + dot(e, k)) / (q.len() as f64).sqrt()
}

/// Masked score matrix of one head: edge scores where `adjacency[i][j]`,
/// self scores on the diagonal and `-∞` elsewhere.
pub fn attention_matrix(
    edge_scores: &[Vec<f64>],
    self_scores: &[f64],
    adjacency: &[Vec<bool>],
) -> Vec<Vec<f64>> {
    let n = self_scores.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        self_scores[i]
                    } else if adjacency[i][j] {
                        edge_scores[i][j]
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect()
}

/// Row softmax; `-∞` entries become exactly zero.
pub fn softmax_rows(scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
    scores
        .iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row
                .iter()
                .map(|&s| {
                    if s == f64::NEG_INFINITY {
                        0.0
                    } else {
                        num_traits::Float::exp(s - max)
                    }
                })
                .collect();
            let z: f64 = exps.iter().sum();
            exps.iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Packed connectivity of a batch of graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphStructure {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    graph_ptr: Vec<usize>,
    /// Attention support of node `i` is `entries[row_ptr[i]..row_ptr[i+1]]`;
    /// the first entry is the node itself.
    row_ptr: Vec<usize>,
    entries: Vec<Entry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    target: usize,
    edge: Option<usize>,
}

impl GraphStructure {
    /// `graphs[b] = (node count, local directed edges)`; edge `k` of the packed
    /// batch is the `k`-th edge in iteration order.
    pub fn new(graphs: &[(usize, Vec<(usize, usize)>)]) -> Result<Self> {
        let mut graph_ptr = vec![0];
        let mut edges = Vec::new();
        for (n, local) in graphs {
            let base = *graph_ptr.last().expect("non-empty");
            for &(s, d) in local {
                if s >= *n || d >= *n || s == d {
                    return Err(Error::Shape(format!(
                        "edge ({s}, {d}) invalid for {n} nodes"
                    )));
                }
                edges.push((base + s, base + d));
            }
            graph_ptr.push(base + n);
        }
        let num_nodes = *graph_ptr.last().expect("non-empty");
        let mut out: Vec<Vec<Entry>> = (0..num_nodes)
            .map(|i| {
                vec![Entry {
                    target: i,
                    edge: None,
                }]
            })
            .collect();
        for (k, &(s, d)) in edges.iter().enumerate() {
            out[s].push(Entry {
                target: d,
                edge: Some(k),
            });
        }
        let mut row_ptr = vec![0];
        let mut entries = Vec::with_capacity(num_nodes + edges.len());
        for row in out {
            entries.extend(row);
            row_ptr.push(entries.len());
        }
        Ok(Self {
            num_nodes,
            edges,
            graph_ptr,
            row_ptr,
            entries,
        })
    }

    pub fn single(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(&[(n, edges)])
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_graphs(&self) -> usize {
        self.graph_ptr.len() - 1
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Packed node range of graph `b`.
    pub fn graph_range(&self, b: usize) -> core::ops::Range<usize> {
        self.graph_ptr[b]..self.graph_ptr[b + 1]
    }

    /// Boolean adjacency of graph `b` in local indices.
    pub fn adjacency(&self, b: usize) -> Vec<Vec<bool>> {
        let r = self.graph_range(b);
        let n = r.len();
        let mut adj = vec![vec![false; n]; n];
        for &(s, d) in &self.edges {
            if r.contains(&s) {
                adj[s - r.start][d - r.start] = true;
            }
        }
        adj
    }
}

/// Node or edge features entering a layer: either a matrix on the tape or
/// rows gathered from a (usually small) table of label embeddings.
#[derive(Clone, Debug)]
pub enum Features {
    Dense(Var),
    Indexed { table: Var, index: Vec<usize> },
}

impl Features {
    /// `features · weight` without materialising gathered rows.
    fn project<T: Scalar>(&self, tape: &mut Tape<T>, weight: Var) -> Result<Var> {
        match self {
            Features::Dense(x) => tape.matmul(*x, weight),
            Features::Indexed { table, index } => {
                let p = tape.matmul(*table, weight)?;
                tape.gather_rows(p, index)
            }
        }
    }

    fn materialise<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        match self {
            Features::Dense(x) => Ok(*x),
            Features::Indexed { table, index } => tape.gather_rows(*table, index),
        }
    }

    fn width<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        match self {
            Features::Dense(x) => tape.value(*x).cols(),
            Features::Indexed { table, .. } => tape.value(*table).cols(),
        }
    }

    fn rows<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        match self {
            Features::Dense(x) => tape.value(*x).rows(),
            Features::Indexed { index, .. } => index.len(),
        }
    }

    fn is_finite<T: Scalar>(&self, tape: &Tape<T>) -> bool {
        match self {
            Features::Dense(x) | Features::Indexed { table: x, .. } => tape.value(*x).is_finite(),
        }
    }
}

/// Node features `X`, edge features `E` and the packed connectivity.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub nodes: Features,
    pub edges: Features,
    pub structure: Rc<GraphStructure>,
}

/// Softmax weights of one layer, aligned with the structure's entries.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    heads: usize,
    structure: Rc<GraphStructure>,
    weights: Vec<f64>,
}

impl AttentionTrace {
    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Dense `n × n` weights of `head` for graph `b` (zeros off the support).
    pub fn dense(&self, b: usize, head: usize) -> Vec<Vec<f64>> {
        let s = &self.structure;
        let r = s.graph_range(b);
        let nnz = s.entries.len();
        let mut out = vec![vec![0.0; r.len()]; r.len()];
        for i in r.clone() {
            for p in s.row_ptr[i]..s.row_ptr[i + 1] {
                let e = s.entries[p];
                out[i - r.start][e.target - r.start] = self.weights[head * nnz + p];
            }
        }
        out
    }
}

struct EdgeAttentionOp<T> {
    structure: Rc<GraphStructure>,
    heads: usize,
    alpha: Vec<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Fused edge-aware attention: inputs `q, k, v: [N, H·d]`, `e: [M, H·d]`,
/// output `[N, H·d]` of aggregated values.
fn edge_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    e: Var,
    structure: &Rc<GraphStructure>,
    heads: usize,
) -> Result<(Var, Vec<T>)> {
    let s = structure.as_ref();
    let width = tape.value(q).cols();
    let dh = width / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let nnz = s.entries.len();
    let mut alpha = vec![T::zero(); heads * nnz];
    let mut out = vec![T::zero(); s.num_nodes * width];
    {
        let (qv, kv, vv, ev) = (tape.value(q), tape.value(k), tape.value(v), tape.value(e));
        let mut logits = Vec::new();
        for i in 0..s.num_nodes {
            let row = &s.entries[s.row_ptr[i]..s.row_ptr[i + 1]];
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                let qi = &qv.row(i)[hs.clone()];
                logits.clear();
                for entry in row {
                    let kj = &kv.row(entry.target)[hs.clone()];
                    let mut score = dot(qi, kj);
                    if let Some(m) = entry.edge {
                        let em = &ev.row(m)[hs.clone()];
                        score += dot(qi, em) + dot(em, kj);
                    }
                    logits.push(score * scale);
                }
                let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for l in logits.iter_mut() {
                    *l = (*l - max).exp();
                    z += *l;
                }
                let dst = &mut out[i * width + h * dh..i * width + (h + 1) * dh];
                for (p, entry) in row.iter().enumerate() {
                    let a = logits[p] / z;
                    alpha[h * nnz + s.row_ptr[i] + p] = a;
                    for (o, &x) in dst.iter_mut().zip(&vv.row(entry.target)[hs.clone()]) {
                        *o += a * x;
                    }
                }
            }
        }
    }
    let value = Tensor::from_parts(&[s.num_nodes, width], out);
    let op = EdgeAttentionOp {
        structure: Rc::clone(structure),
        heads,
        alpha: alpha.clone(),
    };
    Ok((tape.custom(&[q, k, v, e], value, Box::new(op)), alpha))
}

impl<T: Scalar> Backward<T> for EdgeAttentionOp<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = self.structure.as_ref();
        let (qv, kv, vv, ev) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let width = qv.cols();
        let dh = width / self.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let nnz = s.entries.len();
        let mut dq = vec![T::zero(); qv.numel()];
        let mut dk = vec![T::zero(); kv.numel()];
        let mut dv = vec![T::zero(); vv.numel()];
        let mut de = vec![T::zero(); ev.numel()];
        let mut dalpha = Vec::new();
        for i in 0..s.num_nodes {
            let (lo, hi) = (s.row_ptr[i], s.row_ptr[i + 1]);
            let row = &s.entries[lo..hi];
            for h in 0..self.heads {
                let hs = h * dh..(h + 1) * dh;
                let gi = &grad.row(i)[hs.clone()];
                let alpha = &self.alpha[h * nnz + lo..h * nnz + hi];
                dalpha.clear();
                for (entry, &a) in row.iter().zip(alpha) {
                    let j = entry.target;
                    dalpha.push(dot(gi, &vv.row(j)[hs.clone()]));
                    for (d, &g) in dv[j * width + hs.start..j * width + hs.end]
                        .iter_mut()
                        .zip(gi)
                    {
                        *d += a * g;
                    }
                }
                let mean = alpha
                    .iter()
                    .zip(&dalpha)
                    .fold(T::zero(), |acc, (&a, &d)| acc + a * d);
                let qi = &qv.row(i)[hs.clone()];
                for ((entry, &a), &da) in row.iter().zip(alpha).zip(&dalpha) {
                    let ds = a * (da - mean) * scale;
                    let j = entry.target;
                    let kj = &kv.row(j)[hs.clone()];
                    match entry.edge {
                        None => {
                            for t in 0..dh {
                                dq[i * width + hs.start + t] += ds * kj[t];
                                dk[j * width + hs.start + t] += ds * qi[t];
                            }
                        }
                        Some(m) => {
                            let em = &ev.row(m)[hs.clone()];
                            for t in 0..dh {
                                dq[i * width + hs.start + t] += ds * (kj[t] + em[t]);
                                dk[j * width + hs.start + t] += ds * (qi[t] + em[t]);
                                de[m * width + hs.start + t] += ds * (qi[t] + kj[t]);
                            }
                        }
                    }
                }
            }
        }
        vec![
            Some(Tensor::from_parts(qv.shape(), dq)),
            Some(Tensor::from_parts(kv.shape(), dk)),
            Some(Tensor::from_parts(vv.shape(), dv)),
            Some(Tensor::from_parts(ev.shape(), de)),
        ]
    }
}

/// One graph-transformer layer. Returns the updated batch (dense node
/// features `N × d_out`, projected edge features `M × d_out`) and the
/// attention weights it used.
pub fn gtn_layer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    config: &GtnConfig,
    batch: &GraphBatch,
) -> Result<(GraphBatch, AttentionTrace)> {
    if !batch.nodes.is_finite(tape) || !batch.edges.is_finite(tape) {
        return Err(Error::NonFinite(format!("{prefix} input features")));
    }
    let s = &batch.structure;
    if batch.nodes.rows(tape) != s.num_nodes() || batch.edges.rows(tape) != s.num_edges() {
        return Err(Error::Shape(format!(
            "{prefix}: {} node rows / {} edge rows for a structure with {} nodes / {} edges",
            batch.nodes.rows(tape),
            batch.edges.rows(tape),
            s.num_nodes(),
            s.num_edges()
        )));
    }
    let d_in = batch.nodes.width(tape);
    let param = |tape: &mut Tape<T>, name: &str| tape.param(store, &format!("{prefix}.{name}"));
    let wq = param(tape, "wq")?;
    if tape.value(wq).rows() != d_in {
        return Err(Error::Shape(format!(
            "{prefix}: features have width {d_in}, projections expect {}",
            tape.value(wq).rows()
        )));
    }
    let (wk, wv, we) = (param(tape, "wk")?, param(tape, "wv")?, param(tape, "we")?);
    let q = batch.nodes.project(tape, wq)?;
    let k = batch.nodes.project(tape, wk)?;
    let v = batch.nodes.project(tape, wv)?;
    let e = batch.edges.project(tape, we)?;
    let (messages, alpha) = edge_attention(tape, q, k, v, e, s, config.heads)?;
    let h = nn::linear(tape, store, &format!("{prefix}.mlp1"), messages)?;
    let h = tape.relu(h);
    let h = nn::linear(tape, store, &format!("{prefix}.mlp2"), h)?;
    let residual = if store.contains(&format!("{prefix}.wres")) {
        let w = param(tape, "wres")?;
        batch.nodes.project(tape, w)?
    } else {
        batch.nodes.materialise(tape)?
    };
    let x = tape.add(residual, h)?;
    let x = nn::layer_norm(tape, store, &format!("{prefix}.norm"), x)?;
    let trace = AttentionTrace {
        heads: config.heads,
        structure: Rc::clone(s),
        weights: alpha.iter().map(|a| a.f64()).collect(),
    };
    Ok((
        GraphBatch {
            nodes: Features::Dense(x),
            edges: Features::Dense(e),
            structure: Rc::clone(s),
        },
        trace,
    ))
}

/// All layers in sequence; returns final node features `N × d_out`.
pub fn gtn_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    config: &GtnConfig,
    batch: GraphBatch,
) -> Result<(Var, Vec<AttentionTrace>)> {
    config.validate()?;
    let layers_present = (0..)
        .take_while(|l| store.contains(&format!("{prefix}.{l}.wq")))
        .count();
    if layers_present != config.num_layers {
        return Err(Error::Config(format!(
            "configured for {} layers but parameters exist for {layers_present}",
            config.num_layers
        )));
    }
    let mut batch = batch;
    let mut traces = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let (next, trace) =
            gtn_layer_forward(tape, store, &format!("{prefix}.{l}"), config, &batch)?;
        batch = next;
        traces.push(trace);
    }
    match batch.nodes {
        Features::Dense(x) => Ok((x, traces)),
        Features::Indexed { .. } => unreachable!("layers always emit dense features"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_score_examples() {
        assert_eq!(edge_attention_scores(&[1.0], &[1.0], &[1.0]), 3.0);
        let (q, k) = ([0.5, -1.0, 2.0, 0.1], [1.0, 0.3, -0.2, 0.7]);
        let plain = q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / 2.0;
        assert_eq!(edge_attention_scores(&q, &k, &[0.0; 4]), plain);
        assert_eq!(edge_attention_scores(&[0.0; 4], &k, &[0.0; 4]), 0.0);
    }

    #[test]
    fn single_node_matrix() {
        let m = attention_matrix(&[vec![0.0]], &[2.5], &[vec![false]]);
        assert_eq!(m, vec![vec![2.5]]);
        assert_eq!(softmax_rows(&m), vec![vec![1.0]]);
    }

    #[test]
    fn uniform_scores_give_uniform_rows() {
        let adj = vec![
            vec![false, true, true],
            vec![true, false, true],
            vec![true, true, false],
        ];
        let m = attention_matrix(&[vec![0.7; 3], vec![0.7; 3], vec![0.7; 3]], &[0.7; 3], &adj);
        for row in softmax_rows(&m) {
            for w in row {
                assert!((w - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_edge_support() {
        let adj = vec![vec![false, true, false], vec![false; 3], vec![false; 3]];
        let scores = vec![
            vec![0.3, 1.2, -0.4],
            vec![0.5, 0.1, 0.9],
            vec![2.0, -1.0, 0.2],
        ];
        let w = softmax_rows(&attention_matrix(&scores, &[0.1, 0.2, 0.3], &adj));
        assert!(w[0][0] > 0.0 && w[0][1] > 0.0 && w[0][2] == 0.0);
        assert_eq!(w[1], vec![0.0, 1.0, 0.0]);
        assert_eq!(w[2], vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn structure_packing() {
        let s = GraphStructure::new(&[(2, vec![(0, 1)]), (3, vec![(2, 0), (1, 2)])]).unwrap();
        assert_eq!(s.num_nodes(), 5);
        assert_eq!(s.edges(), &[(0, 1), (4, 2), (3, 4)]);
        assert_eq!(s.graph_range(1), 2..5);
        assert!(s.adjacency(1)[2][0]);
        assert!(GraphStructure::single(2, vec![(0, 0)]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GtnConfig::default().validate().is_ok());
        let bad = GtnConfig {
            heads: 3,
            ..GtnConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
