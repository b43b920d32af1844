use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::Tensor;
use crate::error::{shape_err, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn last_dim(t: &Tensor, op: &str) -> Result<usize> {
    t.shape()
        .last()
        .copied()
        .ok_or_else(|| shape_err!("{op}: scalar input"))
}

impl Tensor {
    /// Standardizes each slice along the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = last_dim(self, "layer_norm")?;
        if gamma.numel() != d || beta.numel() != d {
            return Err(shape_err!(
                "layer_norm: width {d}, gamma {:?}, beta {:?}",
                gamma.shape(),
                beta.shape()
            ));
        }
        let rows = self.numel() / d;
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for i in 0..d {
                let xh = if inv.is_finite() { (row[i] - mean) * inv } else { 0.0 };
                xhat[r * d + i] = xh;
                out[r * d + i] = gm[i] * xh + bt[i];
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            "layer_norm",
            move |g, inp, _| {
                let gm = inp[1].data();
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut mean_gxh = 0.0;
                    let mut mean_gxh_xh = 0.0;
                    for i in 0..d {
                        gg[i] += gr[i] * xr[i];
                        gb[i] += gr[i];
                        let gxh = gr[i] * gm[i];
                        mean_gxh += gxh;
                        mean_gxh_xh += gxh * xr[i];
                    }
                    mean_gxh /= d as f64;
                    mean_gxh_xh /= d as f64;
                    let inv = if inv_std[r].is_finite() { inv_std[r] } else { 0.0 };
                    for i in 0..d {
                        gx[r * d + i] = inv * (gr[i] * gm[i] - mean_gxh - xr[i] * mean_gxh_xh);
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            },
        ))
    }

    /// Softmax along the last axis, computed in max-shifted form.
    pub fn softmax(&self) -> Result<Tensor> {
        let d = last_dim(self, "softmax")?;
        let mut out = self.to_vec();
        out.chunks_mut(d).for_each(softmax_in_place);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            "softmax",
            move |g, _, y| {
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for i in 0..d {
                        out[i] = yr[i] * (gr[i] - dot);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        let out = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], "gelu", |g, inp, _| {
            let gx = g
                .iter()
                .zip(inp[0].data())
                .map(|(&g, &x)| {
                    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    g * (0.5 * (1.0 + t) + 0.5 * x * dt)
                })
                .collect();
            vec![Some(gx)]
        })
    }

    /// Inverted dropout: zeroes each element with probability `p` and rescales
    /// survivors by `1 / (1 - p)`. Identity outside training.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, training: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(shape_err!("dropout: probability {p} outside [0, 1)"));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            "dropout",
            move |g, _, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())],
        ))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// A partition of token indices into attention groups.
#[derive(Debug, Clone)]
pub struct AttentionGroups {
    groups: Arc<Vec<Vec<usize>>>,
    tokens: usize,
}

impl AttentionGroups {
    /// Every token in `0..tokens` must appear in exactly one group.
    pub fn new(groups: Vec<Vec<usize>>, tokens: usize) -> Result<Self> {
        let mut seen = vec![false; tokens];
        for g in &groups {
            if g.is_empty() {
                return Err(shape_err!("attention group is empty"));
            }
            for &t in g {
                if t >= tokens || std::mem::replace(&mut seen[t], true) {
                    return Err(shape_err!("token {t} out of range or in two groups"));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(shape_err!("attention groups do not cover all {tokens} tokens"));
        }
        Ok(Self {
            groups: Arc::new(groups),
            tokens,
        })
    }

    /// One group holding every token.
    pub fn global(tokens: usize) -> Self {
        Self {
            groups: Arc::new(vec![(0..tokens).collect()]),
            tokens,
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }
}

struct GroupAttn {
    out: Vec<f64>,
    probs: Vec<f64>, // heads * n * n
}

fn gather_rows(src: &[f64], idx: &[usize], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * d);
    for &t in idx {
        out.extend_from_slice(&src[t * d..(t + 1) * d]);
    }
    out
}

fn attend_group(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize, heads: usize) -> GroupAttn {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; n * d];
    let mut probs = vec![0.0; heads * n * n];
    for h in 0..heads {
        let off = h * dh;
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + dh];
            let row = &mut p[i * n..(i + 1) * n];
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_in_place(row);
            let oi = &mut out[i * d + off..i * d + off + dh];
            for (j, &pij) in row.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + dh];
                oi.iter_mut().zip(vj).for_each(|(o, vv)| *o += pij * vv);
            }
        }
    }
    GroupAttn { out, probs }
}

/// Gradients of one group: (dq, dk, dv), each `[n, d]`.
#[allow(clippy::too_many_arguments)]
fn attend_group_backward(
    go: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut ds = vec![0.0; n];
    for h in 0..heads {
        let off = h * dh;
        let p = &probs[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let goi = &go[i * d + off..i * d + off + dh];
            let prow = &p[i * n..(i + 1) * n];
            // dP_ij = dO_i . V_j ; dS = P * (dP - sum_j P dP)
            let mut dot = 0.0;
            for j in 0..n {
                let vj = &v[j * d + off..j * d + off + dh];
                let dp: f64 = goi.iter().zip(vj).map(|(a, b)| a * b).sum();
                ds[j] = dp;
                dot += prow[j] * dp;
                let dvj = &mut dv[j * d + off..j * d + off + dh];
                dvj.iter_mut().zip(goi).for_each(|(a, g)| *a += prow[j] * g);
            }
            for j in 0..n {
                let s = prow[j] * (ds[j] - dot) * scale;
                if s == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + off + c] += s * k[j * d + off + c];
                    dk[j * d + off + c] += s * q[i * d + off + c];
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Multi-head scaled dot-product attention restricted to token groups.
/// `q`, `k`, `v` are `[N, D]`; the result is `[N, D]`.
pub fn grouped_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    groups: &AttentionGroups,
    heads: usize,
) -> Result<Tensor> {
    let [n, d] = *q.shape() else {
        return Err(shape_err!("attention: q must be [N, D], got {:?}", q.shape()));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(shape_err!("attention: q/k/v shapes differ"));
    }
    if heads == 0 || d % heads != 0 {
        return Err(shape_err!("attention: {heads} heads do not divide width {d}"));
    }
    if groups.tokens() != n {
        return Err(shape_err!(
            "attention: groups cover {} tokens, input has {n}",
            groups.tokens()
        ));
    }
    let gs = groups.groups.clone();
    let results: Vec<GroupAttn> = gs
        .par_iter()
        .map(|idx| {
            let qg = gather_rows(q.data(), idx, d);
            let kg = gather_rows(k.data(), idx, d);
            let vg = gather_rows(v.data(), idx, d);
            attend_group(&qg, &kg, &vg, idx.len(), d, heads)
        })
        .collect();
    let mut out = vec![0.0; n * d];
    for (idx, r) in gs.iter().zip(&results) {
        for (row, &t) in idx.iter().enumerate() {
            out[t * d..(t + 1) * d].copy_from_slice(&r.out[row * d..(row + 1) * d]);
        }
    }
    let probs: Arc<Vec<Vec<f64>>> = Arc::new(results.into_iter().map(|r| r.probs).collect());
    Ok(Tensor::from_op(
        vec![n, d],
        out,
        vec![q.clone(), k.clone(), v.clone()],
        "grouped_attention",
        move |g, inp, _| {
            let parts: Vec<_> = gs
                .par_iter()
                .zip(probs.par_iter())
                .map(|(idx, p)| {
                    let go = gather_rows(g, idx, d);
                    let qg = gather_rows(inp[0].data(), idx, d);
                    let kg = gather_rows(inp[1].data(), idx, d);
                    let vg = gather_rows(inp[2].data(), idx, d);
                    attend_group_backward(&go, &qg, &kg, &vg, p, idx.len(), d, heads)
                })
                .collect();
            let mut gq = vec![0.0; n * d];
            let mut gk = vec![0.0; n * d];
            let mut gv = vec![0.0; n * d];
            for (idx, (dq, dk, dv)) in gs.iter().zip(&parts) {
                for (row, &t) in idx.iter().enumerate() {
                    let src = row * d..(row + 1) * d;
                    gq[t * d..(t + 1) * d].copy_from_slice(&dq[src.clone()]);
                    gk[t * d..(t + 1) * d].copy_from_slice(&dk[src.clone()]);
                    gv[t * d..(t + 1) * d].copy_from_slice(&dv[src]);
                }
            }
            vec![Some(gq), Some(gk), Some(gv)]
        },
    ))
}
