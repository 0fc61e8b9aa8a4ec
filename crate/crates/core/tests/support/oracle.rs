//! Loop-based reference implementations used to check the fused kernels.
//! Nothing here calls into the tape or the fused operations.
#![allow(dead_code)]

use placement_core::nn::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(store: &ParamStore<f64>, name: &str) -> Mat {
    let t = store.get(name).unwrap_or_else(|| panic!("missing {name}"));
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn vector(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store
        .get(name)
        .unwrap_or_else(|| panic!("missing {name}"))
        .data()
        .to_vec()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * gamma[j] + beta[j])
        .collect()
}

fn affine(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|j| {
            b[j] + x
                .iter()
                .enumerate()
                .map(|(i, xi)| xi * w[i][j])
                .sum::<f64>()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub struct GtnLayerRef {
    pub x: Mat,
    pub e: Mat,
    /// `attention[h][i][j]`
    pub attention: Vec<Mat>,
}

/// One graph-transformer layer for a single graph, materialising the full
/// `n × n` score matrix of every head.
pub fn gtn_layer(
    store: &ParamStore<f64>,
    prefix: &str,
    heads: usize,
    x: &Mat,
    e: &Mat,
    edges: &[(usize, usize)],
) -> GtnLayerRef {
    let n = x.len();
    let p = |s: &str| format!("{prefix}.{s}");
    let q = matmul(x, &mat(store, &p("wq")));
    let k = matmul(x, &mat(store, &p("wk")));
    let v = matmul(x, &mat(store, &p("wv")));
    let ep = if e.is_empty() {
        Vec::new()
    } else {
        matmul(e, &mat(store, &p("we")))
    };
    let d_out = q[0].len();
    let dh = d_out / heads;
    let mut msg = vec![vec![0.0; d_out]; n];
    let mut attention = Vec::new();
    for h in 0..heads {
        let sl = |row: &Vec<f64>| row[h * dh..(h + 1) * dh].to_vec();
        let mut scores = vec![vec![f64::NEG_INFINITY; n]; n];
        for i in 0..n {
            scores[i][i] = dot(&sl(&q[i]), &sl(&k[i])) / (dh as f64).sqrt();
        }
        for (m, &(i, j)) in edges.iter().enumerate() {
            let (qi, kj, em) = (sl(&q[i]), sl(&k[j]), sl(&ep[m]));
            scores[i][j] = (dot(&qi, &kj) + dot(&qi, &em) + dot(&em, &kj)) / (dh as f64).sqrt();
        }
        let mut weights = vec![vec![0.0; n]; n];
        for i in 0..n {
            let max = scores[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores[i].iter().map(|s| (s - max).exp()).sum();
            for j in 0..n {
                weights[i][j] = (scores[i][j] - max).exp() / z;
                for t in 0..dh {
                    msg[i][h * dh + t] += weights[i][j] * v[j][h * dh + t];
                }
            }
        }
        attention.push(weights);
    }
    let residual = if store.contains(&p("wres")) {
        matmul(x, &mat(store, &p("wres")))
    } else {
        x.clone()
    };
    let out = (0..n)
        .map(|i| {
            let h1: Vec<f64> = affine(
                &msg[i],
                &mat(store, &p("mlp1.weight")),
                &vector(store, &p("mlp1.bias")),
            )
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
            let h2 = affine(
                &h1,
                &mat(store, &p("mlp2.weight")),
                &vector(store, &p("mlp2.bias")),
            );
            let pre: Vec<f64> = residual[i].iter().zip(&h2).map(|(a, b)| a + b).collect();
            layer_norm(
                &pre,
                &vector(store, &p("norm.gamma")),
                &vector(store, &p("norm.beta")),
            )
        })
        .collect();
    GtnLayerRef {
        x: out,
        e: ep,
        attention,
    }
}

pub struct CrossRef {
    pub f_att: Vec<f64>,
    /// `weights[h][j]`
    pub weights: Vec<Vec<f64>>,
}

/// Cross attention of one foreground query over `n` scene rows, head by head.
pub fn cross_attention(
    store: &ParamStore<f64>,
    prefix: &str,
    heads: usize,
    d_k: usize,
    d_v: usize,
    c_f: &[f64],
    scene: &Mat,
    positional: bool,
    residual: bool,
) -> CrossRef {
    let p = |s: &str| format!("{prefix}.{s}");
    let c_hat = affine(
        c_f,
        &mat(store, &p("proj_f.weight")),
        &vector(store, &p("proj_f.bias")),
    );
    let q = matmul(&vec![c_hat.clone()], &mat(store, &p("wq")))[0].clone();
    let k = matmul(scene, &mat(store, &p("wk")));
    let v = matmul(scene, &mat(store, &p("wv")));
    let n = scene.len();
    let (pek, pev) = if positional {
        (vector(store, &p("pe_k")), vector(store, &p("pe_v")))
    } else {
        (Vec::new(), Vec::new())
    };
    let n_max = if positional {
        pek.len() / (heads * d_k)
    } else {
        0
    };
    let mut concat = Vec::new();
    let mut all_weights = Vec::new();
    for h in 0..heads {
        let mut logits = Vec::new();
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..d_k {
                let pos = if positional {
                    pek[(h * n_max + j) * d_k + t]
                } else {
                    0.0
                };
                s += q[h * d_k + t] * (k[j][h * d_k + t] + pos);
            }
            logits.push(s / (d_k as f64).sqrt());
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();
        for t in 0..d_v {
            let mut acc = 0.0;
            for j in 0..n {
                let pos = if positional {
                    pev[(h * n_max + j) * d_v + t]
                } else {
                    0.0
                };
                acc += weights[j] * (v[j][h * d_v + t] + pos);
            }
            concat.push(acc);
        }
        all_weights.push(weights);
    }
    let mut out = matmul(&vec![concat], &mat(store, &p("wo")))[0].clone();
    if residual {
        for (o, c) in out.iter_mut().zip(&c_hat) {
            *o += c;
        }
    }
    let f_att = layer_norm(
        &out,
        &vector(store, &p("norm.gamma")),
        &vector(store, &p("norm.beta")),
    );
    CrossRef {
        f_att,
        weights: all_weights,
    }
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}
