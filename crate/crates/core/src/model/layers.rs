//! Parameterized layers, written as functions over a [`ParamStore`] and a
//! name prefix. Each has a matching `*_specs` function listing its
//! parameters so that counts and initialization share one source.

use rand::RngCore;

use super::params::{Init, ParamSpec, ParamStore};
use crate::error::{shape_err, Result};
use crate::tensor::{grouped_attention, AttentionGroups, PadMode, Tensor};

pub const LN_EPS: f64 = 1e-5;

fn spec(name: String, shape: Vec<usize>, init: Init, spectral: bool) -> ParamSpec {
    ParamSpec {
        name,
        shape,
        init,
        spectral,
    }
}

fn fan_in_bound(fan_in: usize) -> Init {
    Init::Uniform(1.0 / (fan_in as f64).sqrt())
}

/// Per-call forward options. `rng` is `Some` only in training mode.
pub struct Mode<'a> {
    pub dropout: f64,
    pub rng: Option<&'a mut dyn RngCore>,
}

impl Mode<'_> {
    pub fn eval() -> Mode<'static> {
        Mode {
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn dropout(&mut self, x: &Tensor) -> Result<Tensor> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => x.dropout(self.dropout, true, rng),
            _ => Ok(x.clone()),
        }
    }
}

pub fn linear_specs(prefix: &str, din: usize, dout: usize) -> Vec<ParamSpec> {
    vec![
        spec(format!("{prefix}.weight"), vec![din, dout], fan_in_bound(din), true),
        spec(format!("{prefix}.bias"), vec![dout], Init::Zeros, false),
    ]
}

/// `x W + b` on `[N, Din]` tokens.
pub fn linear(ps: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = ps.weight(&format!("{prefix}.weight"))?;
    let b = ps.weight(&format!("{prefix}.bias"))?;
    x.matmul(&w)?.add_row_bias(&b)
}

pub fn conv_specs(prefix: &str, cin: usize, cout: usize, k: usize) -> Vec<ParamSpec> {
    vec![
        spec(format!("{prefix}.weight"), vec![cout, cin, k, k], fan_in_bound(cin * k * k), true),
        spec(format!("{prefix}.bias"), vec![cout], Init::Zeros, false),
    ]
}

/// Same-coverage mirror-padded convolution.
pub fn conv(ps: &ParamStore, prefix: &str, x: &Tensor, stride: usize) -> Result<Tensor> {
    let w = ps.weight(&format!("{prefix}.weight"))?;
    let b = ps.weight(&format!("{prefix}.bias"))?;
    x.conv2d(&w, Some(&b), stride, PadMode::Mirror)
}

pub fn conv_transpose_specs(prefix: &str, cin: usize, cout: usize, k: usize) -> Vec<ParamSpec> {
    vec![
        spec(format!("{prefix}.weight"), vec![cin, cout, k, k], fan_in_bound(cout * k * k), true),
        spec(format!("{prefix}.bias"), vec![cout], Init::Zeros, false),
    ]
}

pub fn conv_transpose(
    ps: &ParamStore,
    prefix: &str,
    x: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let w = ps.weight(&format!("{prefix}.weight"))?;
    let b = ps.weight(&format!("{prefix}.bias"))?;
    x.conv_transpose2d(&w, Some(&b), stride, padding)
}

pub fn norm_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    vec![
        spec(format!("{prefix}.gamma"), vec![d], Init::Ones, false),
        spec(format!("{prefix}.beta"), vec![d], Init::Zeros, false),
    ]
}

pub fn norm(ps: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let g = ps.weight(&format!("{prefix}.gamma"))?;
    let b = ps.weight(&format!("{prefix}.beta"))?;
    x.layer_norm(&g, &b, LN_EPS)
}

pub fn ffn_specs(prefix: &str, d: usize, expansion: usize) -> Vec<ParamSpec> {
    let mut v = linear_specs(&format!("{prefix}.fc1"), d, d * expansion);
    v.extend(linear_specs(&format!("{prefix}.fc2"), d * expansion, d));
    v
}

pub fn ffn(ps: &ParamStore, prefix: &str, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
    let h = linear(ps, &format!("{prefix}.fc1"), x)?.gelu();
    let y = linear(ps, &format!("{prefix}.fc2"), &h)?;
    mode.dropout(&y)
}

/// `[D, h, w]` to `[h*w, D]`.
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let [d, h, w] = *x.shape() else {
        return Err(shape_err!("to_tokens: expected [D, H, W], got {:?}", x.shape()));
    };
    x.reshape(vec![d, h * w])?.transpose2d()
}

/// `[h*w, D]` to `[D, h, w]`.
pub fn from_tokens(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, d] = *t.shape() else {
        return Err(shape_err!("from_tokens: expected [N, D], got {:?}", t.shape()));
    };
    if n != h * w {
        return Err(shape_err!("from_tokens: {n} tokens for a {h}x{w} grid"));
    }
    t.transpose2d()?.reshape(vec![d, h, w])
}

/// Attention pattern over an `h x w` token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Non-overlapping `g x g` windows.
    Short(usize),
    /// Sites sharing `(row mod i, col mod i)`.
    Long(usize),
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

/// Padded grid size, row map from padded tokens to source tokens, and the
/// attention groups on the padded grid.
pub fn attention_layout(pattern: Pattern, h: usize, w: usize) -> Result<(usize, usize, Vec<usize>, AttentionGroups)> {
    let (size, long) = match pattern {
        Pattern::Short(g) => (g, false),
        Pattern::Long(i) => (i, true),
    };
    if size == 0 {
        return Err(shape_err!("attention window must be positive"));
    }
    // Windows never exceed the grid, which keeps the mirror padding legal.
    let (sh, sw) = (size.min(h), size.min(w));
    let ph = h.div_ceil(sh) * sh;
    let pw = w.div_ceil(sw) * sw;
    let rows: Vec<usize> = (0..ph)
        .flat_map(|r| (0..pw).map(move |c| reflect(r, h) * w + reflect(c, w)))
        .collect();
    let mut groups = Vec::new();
    if long {
        for a in 0..sh {
            for b in 0..sw {
                let g = (0..ph / sh)
                    .flat_map(|i| (0..pw / sw).map(move |j| (a + i * sh) * pw + b + j * sw))
                    .collect();
                groups.push(g);
            }
        }
    } else {
        for bi in 0..ph / sh {
            for bj in 0..pw / sw {
                let g = (0..sh)
                    .flat_map(|i| (0..sw).map(move |j| (bi * sh + i) * pw + bj * sw + j))
                    .collect();
                groups.push(g);
            }
        }
    }
    Ok((ph, pw, rows, AttentionGroups::new(groups, ph * pw)?))
}

pub fn attention_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    ["q", "k", "v", "out"]
        .iter()
        .flat_map(|p| linear_specs(&format!("{prefix}.{p}"), d, d))
        .collect()
}

/// Multi-head self-attention of `[h*w, D]` tokens restricted to `pattern`.
/// The grid is mirror-padded on the bottom/right to a whole number of
/// windows and cropped back afterwards.
pub fn attention(
    ps: &ParamStore,
    prefix: &str,
    tokens: &Tensor,
    h: usize,
    w: usize,
    pattern: Pattern,
    heads: usize,
    mode: &mut Mode,
) -> Result<Tensor> {
    let (ph, pw, rows, groups) = attention_layout(pattern, h, w)?;
    let padded = ph != h || pw != w;
    let project = |name: &str| -> Result<Tensor> {
        let t = linear(ps, &format!("{prefix}.{name}"), tokens)?;
        if padded {
            t.gather_rows(&rows)
        } else {
            Ok(t)
        }
    };
    let (q, k, v) = (project("q")?, project("k")?, project("v")?);
    let mut out = grouped_attention(&q, &k, &v, &groups, heads)?;
    if padded {
        let keep: Vec<usize> = (0..h).flat_map(|r| (0..w).map(move |c| r * pw + c)).collect();
        out = out.gather_rows(&keep)?;
    }
    let y = linear(ps, &format!("{prefix}.out"), &out)?;
    mode.dropout(&y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_layout_pads_to_whole_windows() {
        let (ph, pw, rows, groups) = attention_layout(Pattern::Short(5), 8, 6).unwrap();
        assert_eq!((ph, pw), (10, 10));
        assert_eq!(groups.groups().len(), 4);
        assert!(groups.groups().iter().all(|g| g.len() == 25));
        // padded row 8 reflects to row 6, padded col 7 reflects to col 3
        assert_eq!(rows[8 * 10 + 7], 6 * 6 + 3);
    }

    #[test]
    fn long_layout_groups_by_phase() {
        let (ph, pw, _, groups) = attention_layout(Pattern::Long(2), 4, 4).unwrap();
        assert_eq!((ph, pw), (4, 4));
        assert_eq!(groups.groups()[0], vec![0, 2, 8, 10]);
        assert_eq!(groups.groups()[3], vec![5, 7, 13, 15]);
    }

    #[test]
    fn windows_clamp_to_small_grids() {
        let (ph, pw, _, groups) = attention_layout(Pattern::Short(5), 2, 1).unwrap();
        assert_eq!((ph, pw), (2, 1));
        assert_eq!(groups.groups().len(), 1);
    }
}
