use rayon::prelude::*;

use super::{numel_of, Tensor};
use crate::error::{shape_err, Result};

const PAR_MIN_WORK: usize = 1 << 15;

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn scalar_operand(s: &Tensor, op: &str) -> Result<f64> {
    if s.numel() != 1 {
        return Err(shape_err!("{op}: expected a scalar, got {:?}", s.shape()));
    }
    Ok(s.data()[0])
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            "add",
            |g, _, _| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            "sub",
            |g, _, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            "mul",
            |g, inp, _| {
                let ga = inp[0].requires_grad().then(|| {
                    g.iter().zip(inp[1].data()).map(|(g, b)| g * b).collect()
                });
                let gb = inp[1].requires_grad().then(|| {
                    g.iter().zip(inp[0].data()).map(|(g, a)| g * a).collect()
                });
                vec![ga, gb]
            },
        ))
    }

    /// Elementwise quotient.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "div")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a / b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            "div",
            |g, inp, out| {
                let b = inp[1].data();
                let ga = Some(g.iter().zip(b).map(|(g, b)| g / b).collect());
                let gb = Some(
                    g.iter()
                        .zip(b)
                        .zip(out)
                        .map(|((g, b), q)| -g * q / b)
                        .collect(),
                );
                vec![ga, gb]
            },
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            "scale",
            move |g, _, _| vec![Some(g.iter().map(|v| v * factor).collect())],
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, value: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + value).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            "add_scalar",
            |g, _, _| vec![Some(g.to_vec())],
        )
    }

    /// Multiplies every element by a one-element tensor.
    pub fn mul_scalar_tensor(&self, s: &Tensor) -> Result<Tensor> {
        let k = scalar_operand(s, "mul_scalar_tensor")?;
        let data = self.data().iter().map(|v| v * k).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            "mul_scalar_tensor",
            |g, inp, _| {
                let k = inp[1].data()[0];
                let gx = Some(g.iter().map(|v| v * k).collect());
                let gs = inp[1]
                    .requires_grad()
                    .then(|| vec![g.iter().zip(inp[0].data()).map(|(g, x)| g * x).sum()]);
                vec![gx, gs]
            },
        ))
    }

    /// Adds a one-element tensor to every element.
    pub fn add_scalar_tensor(&self, s: &Tensor) -> Result<Tensor> {
        let k = scalar_operand(s, "add_scalar_tensor")?;
        let data = self.data().iter().map(|v| v + k).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            "add_scalar_tensor",
            |g, _, _| vec![Some(g.to_vec()), Some(vec![g.iter().sum()])],
        ))
    }

    pub fn square(&self) -> Tensor {
        let data = self.data().iter().map(|v| v * v).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            "square",
            |g, inp, _| {
                vec![Some(
                    g.iter().zip(inp[0].data()).map(|(g, x)| 2.0 * g * x).collect(),
                )]
            },
        )
    }

    /// `max(x, 0)`; the subgradient at 0 is taken as 0.
    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            "relu",
            |g, inp, _| {
                vec![Some(
                    g.iter()
                        .zip(inp[0].data())
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                )]
            },
        )
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], "sum", move |g, _, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let m = self.data().iter().sum::<f64>() / n as f64;
        Tensor::from_op(vec![1], vec![m], vec![self.clone()], "mean", move |g, _, _| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean_over_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(shape_err!("mean_over_axis: axis {axis} out of range for {shape:?}"));
        }
        let outer = numel_of(&shape[..axis]);
        let len = shape[axis];
        let inner = numel_of(&shape[axis + 1..]);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            "mean_over_axis",
            move |g, _, _| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        for i in 0..inner {
                            gx[base + i] = g[o * inner + i] / len as f64;
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if numel_of(&shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape()
            ));
        }
        Ok(Tensor::from_op(
            shape,
            self.to_vec(),
            vec![self.clone()],
            "reshape",
            |g, _, _| vec![Some(g.to_vec())],
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose2d(&self) -> Result<Tensor> {
        let [m, n] = self.shape() else {
            return Err(shape_err!("transpose2d: expected 2-D, got {:?}", self.shape()));
        };
        let (m, n) = (*m, *n);
        let out = transpose_raw(self.data(), m, n);
        Ok(Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone()],
            "transpose2d",
            move |g, _, _| vec![Some(transpose_raw(g, n, m))],
        ))
    }

    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let ([m, k], [k2, n]) = (self.shape(), other.shape()) else {
            return Err(shape_err!(
                "matmul: expected 2-D operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            ));
        };
        if k != k2 {
            return Err(shape_err!(
                "matmul: inner dims differ ({:?} x {:?})",
                self.shape(),
                other.shape()
            ));
        }
        let (m, k, n) = (*m, *k, *n);
        let out = matmul_raw(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            "matmul",
            move |g, inp, _| {
                // dA = G B^T, dB = A^T G
                let ga = inp[0].requires_grad().then(|| {
                    let bt = transpose_raw(inp[1].data(), k, n);
                    matmul_raw(g, &bt, m, n, k)
                });
                let gb = inp[1].requires_grad().then(|| {
                    let at = transpose_raw(inp[0].data(), m, k);
                    matmul_raw(&at, g, k, m, n)
                });
                vec![ga, gb]
            },
        ))
    }

    /// Adds a `[D]` bias to every row of a `[N, D]` tensor.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let [n, d] = self.shape() else {
            return Err(shape_err!("add_row_bias: expected [N,D], got {:?}", self.shape()));
        };
        let (n, d) = (*n, *d);
        if bias.numel() != d {
            return Err(shape_err!("add_row_bias: bias {:?} vs width {d}", bias.shape()));
        }
        let b = bias.data();
        let mut out = self.to_vec();
        for row in out.chunks_mut(d) {
            row.iter_mut().zip(b).for_each(|(x, b)| *x += b);
        }
        Ok(Tensor::from_op(
            vec![n, d],
            out,
            vec![self.clone(), bias.clone()],
            "add_row_bias",
            move |g, _, _| {
                let mut gb = vec![0.0; d];
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![Some(g.to_vec()), Some(gb)]
            },
        ))
    }

    /// Per-channel constant affine map on a `[C, ...]` tensor: `x * scale[c] + shift[c]`.
    pub fn channel_affine(&self, scale: &[f64], shift: &[f64]) -> Result<Tensor> {
        let c = self.shape()[0];
        if scale.len() != c || shift.len() != c {
            return Err(shape_err!(
                "channel_affine: {c} channels but {} scales / {} shifts",
                scale.len(),
                shift.len()
            ));
        }
        let plane = self.numel() / c;
        let mut out = self.to_vec();
        for (ch, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = *v * scale[ch] + shift[ch]);
        }
        let scale = scale.to_vec();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            "channel_affine",
            move |g, _, _| {
                let mut gx = g.to_vec();
                for (ch, chunk) in gx.chunks_mut(plane).enumerate() {
                    chunk.iter_mut().for_each(|v| *v *= scale[ch]);
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Concatenates along axis 0; trailing extents must agree.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("concat_channels: no inputs"))?;
        let tail = &first.shape()[1..];
        let mut channels = 0;
        for p in parts {
            if &p.shape()[1..] != tail {
                return Err(shape_err!(
                    "concat_channels: trailing shape {:?} vs {:?}",
                    &p.shape()[1..],
                    tail
                ));
            }
            channels += p.shape()[0];
        }
        let mut data = Vec::with_capacity(channels * numel_of(tail));
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(tail);
        let sizes: Vec<usize> = parts.iter().map(Tensor::numel).collect();
        Ok(Tensor::from_op(
            shape,
            data,
            parts.to_vec(),
            "concat_channels",
            move |g, _, _| {
                let mut offset = 0;
                sizes
                    .iter()
                    .map(|&n| {
                        let part = g[offset..offset + n].to_vec();
                        offset += n;
                        Some(part)
                    })
                    .collect()
            },
        ))
    }

    /// Channels `start..end` along axis 0.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let c = self.shape()[0];
        if start >= end || end > c {
            return Err(shape_err!("slice_channels: range {start}..{end} of {c}"));
        }
        let plane = self.numel() / c;
        let data = self.data()[start * plane..end * plane].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        let total = self.numel();
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            "slice_channels",
            move |g, _, _| {
                let mut gx = vec![0.0; total];
                gx[start * plane..end * plane].copy_from_slice(g);
                vec![Some(gx)]
            },
        ))
    }
}

pub(crate) fn transpose_raw(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

/// Row-major `[m,k] x [k,n]`; rows computed independently so the result does
/// not depend on the thread partitioning.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let row = |(i, orow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, &bv)| *o += av * bv);
        }
    };
    if m * k * n >= PAR_MIN_WORK && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{assert_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let i3 = Tensor::new(vec![3, 3], eye).unwrap();
        assert_eq!(a.matmul(&i3).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_tensor(&mut rng, &[7, 5]);
        let b = random_tensor(&mut rng, &[5, 4]);
        let c = a.matmul(&b).unwrap();
        for i in 0..7 {
            for j in 0..4 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.data()[i * 5 + p] * b.data()[p * 4 + j];
                }
                assert!((c.data()[i * 4 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_then_slice_restores_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_tensor(&mut rng, &[2, 3, 4]);
        let b = random_tensor(&mut rng, &[3, 3, 4]);
        let c = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[5, 3, 4]);
        assert_eq!(c.slice_channels(0, 2).unwrap().data(), a.data());
        assert_eq!(c.slice_channels(2, 5).unwrap().data(), b.data());
    }

    #[test]
    fn mean_over_axis_values() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(x.mean_over_axis(0).unwrap().data(), &[2.5, 3.5, 4.5]);
        assert_eq!(x.mean_over_axis(1).unwrap().data(), &[2.0, 5.0]);
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_tensor(&mut rng, &[3, 4]);
        let s = random_tensor(&mut rng, &[1]);
        assert_gradients(&mut rng, &[3, 4], |x| x.mul(&b).unwrap().add(&x.square()).unwrap());
        assert_gradients(&mut rng, &[3, 4], |x| x.div(&b.square().add_scalar(1.0)).unwrap());
        assert_gradients(&mut rng, &[3, 4], |x| x.sub(&b).unwrap().scale(-1.5));
        assert_gradients(&mut rng, &[3, 4], |x| x.mul_scalar_tensor(&s).unwrap());
        assert_gradients(&mut rng, &[1], |x| b.mul_scalar_tensor(x).unwrap());
        assert_gradients(&mut rng, &[1], |x| b.add_scalar_tensor(x).unwrap());
        assert_gradients(&mut rng, &[3, 4], |x| x.mean_over_axis(1).unwrap());
        assert_gradients(&mut rng, &[3, 4], |x| x.transpose2d().unwrap());
        assert_gradients(&mut rng, &[3, 4], |x| {
            x.channel_affine(&[1.0, -2.0, 0.5], &[0.1, 0.2, 0.3]).unwrap()
        });
        assert_gradients(&mut rng, &[4, 3], |x| x.matmul(&b).unwrap());
        assert_gradients(&mut rng, &[4, 5], |x| b.matmul(x).unwrap());
        assert_gradients(&mut rng, &[4], |x| b.add_row_bias(x).unwrap());
        assert_gradients(&mut rng, &[4, 3], |x| {
            Tensor::concat_channels(&[x.clone(), b.transpose2d().unwrap()])
                .unwrap()
                .slice_channels(2, 6)
                .unwrap()
        });
    }
}
