use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{split_chw, split_hw, Tensor};
use crate::error::{shape_err, Result};

const PAR_MIN_WORK: usize = 1 << 14;

/// Boundary treatment for spatial padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    /// Reflection about the edge sample, which is not repeated.
    #[default]
    Mirror,
    Zero,
}

/// Source index for output position `i` of an axis padded by `before`, or
/// `None` for a zero-filled slot.
fn pad_index(i: usize, before: usize, len: usize, mode: PadMode) -> Option<usize> {
    let j = i as isize - before as isize;
    let n = len as isize;
    if (0..n).contains(&j) {
        return Some(j as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Mirror => {
            let r = if j < 0 { -j } else { 2 * (n - 1) - j };
            Some(r as usize)
        }
    }
}

/// Gathers `out[k] = x[map[k]]`, scattering back in the backward pass.
pub(super) fn gather(x: &Tensor, shape: Vec<usize>, map: Vec<Option<usize>>, name: &'static str) -> Tensor {
    let src = x.data();
    let data = map.iter().map(|m| m.map_or(0.0, |i| src[i])).collect();
    let n_in = x.numel();
    let map = Arc::new(map);
    Tensor::from_op(shape, data, vec![x.clone()], name, move |g, _, _| {
        let mut gx = vec![0.0; n_in];
        for (gv, m) in g.iter().zip(map.iter()) {
            if let Some(i) = m {
                gx[*i] += gv;
            }
        }
        vec![Some(gx)]
    })
}

impl Tensor {
    /// Rows of a `[N, D]` tensor in the given order; rows may repeat or be
    /// dropped.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let [n, d] = *self.shape() else {
            return Err(shape_err!("gather_rows: expected [N, D], got {:?}", self.shape()));
        };
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(shape_err!("gather_rows: row index out of range for {n} rows"));
        }
        let map = rows
            .iter()
            .flat_map(|&r| (0..d).map(move |j| Some(r * d + j)))
            .collect();
        Ok(gather(self, vec![rows.len(), d], map, "gather_rows"))
    }

    /// Pads the two trailing axes by the given amounts.
    pub fn pad2d(
        &self,
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
        mode: PadMode,
    ) -> Result<Tensor> {
        let (outer, h, w) = split_hw(self.shape(), "pad2d")?;
        if mode == PadMode::Mirror && (top.max(bottom) >= h || left.max(right) >= w) {
            return Err(shape_err!(
                "mirror pad ({top},{bottom},{left},{right}) too large for extent {h}x{w}"
            ));
        }
        if top + bottom + left + right == 0 {
            return Ok(self.clone());
        }
        let (ho, wo) = (h + top + bottom, w + left + right);
        let rows: Vec<Option<usize>> = (0..ho).map(|i| pad_index(i, top, h, mode)).collect();
        let cols: Vec<Option<usize>> = (0..wo).map(|j| pad_index(j, left, w, mode)).collect();
        let mut map = Vec::with_capacity(outer * ho * wo);
        for o in 0..outer {
            for r in &rows {
                for c in &cols {
                    map.push(match (r, c) {
                        (Some(r), Some(c)) => Some(o * h * w + r * w + c),
                        _ => None,
                    });
                }
            }
        }
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = ho;
        shape[n - 1] = wo;
        Ok(gather(self, shape, map, "pad2d"))
    }

    /// Symmetric reflection padding of `p` samples on both spatial axes.
    pub fn mirror_pad(&self, p: usize) -> Result<Tensor> {
        self.pad2d(p, p, p, p, PadMode::Mirror)
    }

    /// Spatial window `[top..top+h, left..left+w]` of the trailing axes.
    pub fn crop2d(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        let (outer, hi, wi) = split_hw(self.shape(), "crop2d")?;
        if top + h > hi || left + w > wi || h == 0 || w == 0 {
            return Err(shape_err!(
                "crop2d: window {h}x{w} at ({top},{left}) outside {hi}x{wi}"
            ));
        }
        if h == hi && w == wi {
            return Ok(self.clone());
        }
        let mut map = Vec::with_capacity(outer * h * w);
        for o in 0..outer {
            for r in 0..h {
                for c in 0..w {
                    map.push(Some(o * hi * wi + (top + r) * wi + left + c));
                }
            }
        }
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = h;
        shape[n - 1] = w;
        Ok(gather(self, shape, map, "crop2d"))
    }

    /// Unpadded cross-correlation. `x: [.., Cin, H, W]`, `w: [Cout, Cin, kh, kw]`.
    pub fn conv2d_valid(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize) -> Result<Tensor> {
        let (batch, cin, h, w) = split_chw(self.shape(), "conv2d")?;
        let [cout, wcin, kh, kw] = *weight.shape() else {
            return Err(shape_err!("conv2d: weight must be 4-D, got {:?}", weight.shape()));
        };
        if wcin != cin {
            return Err(shape_err!("conv2d: input has {cin} channels, weight expects {wcin}"));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d: stride must be positive"));
        }
        if kh > h || kw > w {
            return Err(shape_err!("conv2d: kernel {kh}x{kw} larger than input {h}x{w}"));
        }
        if let Some(b) = bias {
            if b.numel() != cout {
                return Err(shape_err!("conv2d: bias {:?} for {cout} outputs", b.shape()));
            }
        }
        let geom = ConvGeom {
            batch,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
            stride,
            ho: (h - kh) / stride + 1,
            wo: (w - kw) / stride + 1,
        };
        let out = geom.forward(self.data(), weight.data(), bias.map(Tensor::data));
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 3] = cout;
        shape[n - 2] = geom.ho;
        shape[n - 1] = geom.wo;
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(shape, out, inputs, "conv2d", move |g, inp, _| {
            let gx = inp[0]
                .requires_grad()
                .then(|| geom.grad_input(g, inp[1].data()));
            let gw = inp[1]
                .requires_grad()
                .then(|| geom.grad_weight(g, inp[0].data()));
            let mut grads = vec![gx, gw];
            if inp.len() == 3 {
                grads.push(Some(geom.grad_bias(g)));
            }
            grads
        }))
    }

    /// Convolution with "same" coverage: the output has `ceil(H / stride)` rows.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: PadMode,
    ) -> Result<Tensor> {
        let (_, _, h, w) = split_chw(self.shape(), "conv2d")?;
        let [_, _, kh, kw] = *weight.shape() else {
            return Err(shape_err!("conv2d: weight must be 4-D, got {:?}", weight.shape()));
        };
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(shape_err!("conv2d: stride and kernel must be positive"));
        }
        let (top, bottom) = same_padding(h, kh, stride);
        let (left, right) = same_padding(w, kw, stride);
        let padded = self.pad2d(top, bottom, left, right, pad)?;
        padded.conv2d_valid(weight, bias, stride)
    }

    /// Transposed convolution. `x: [.., Cin, H, W]`, `w: [Cin, Cout, k, k]`;
    /// output extent `(H - 1) * stride - 2 * padding + k`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (batch, cin, h, w) = split_chw(self.shape(), "conv_transpose2d")?;
        let [wcin, cout, kh, kw] = *weight.shape() else {
            return Err(shape_err!("conv_transpose2d: weight must be 4-D"));
        };
        if wcin != cin {
            return Err(shape_err!(
                "conv_transpose2d: input has {cin} channels, weight expects {wcin}"
            ));
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if stride == 0 || 2 * padding >= full_h || 2 * padding >= full_w {
            return Err(shape_err!("conv_transpose2d: invalid stride/padding"));
        }
        let geom = TransposeGeom {
            batch,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            ho: full_h - 2 * padding,
            wo: full_w - 2 * padding,
        };
        let out = geom.forward(self.data(), weight.data(), bias.map(Tensor::data));
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 3] = cout;
        shape[n - 2] = geom.ho;
        shape[n - 1] = geom.wo;
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(shape, out, inputs, "conv_transpose2d", move |g, inp, _| {
            let gx = inp[0]
                .requires_grad()
                .then(|| geom.grad_input(g, inp[1].data()));
            let gw = inp[1]
                .requires_grad()
                .then(|| geom.grad_weight(g, inp[0].data()));
            let mut grads = vec![gx, gw];
            if inp.len() == 3 {
                let plane = geom.ho * geom.wo;
                let mut gb = vec![0.0; geom.cout];
                for (i, chunk) in g.chunks(plane).enumerate() {
                    gb[i % geom.cout] += chunk.iter().sum::<f64>();
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }

    /// `[.., C*r*r, H, W] -> [.., C, rH, rW]` with
    /// `out[c, r*h + i, r*w + j] = in[c*r*r + i*r + j, h, w]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor> {
        let (batch, cin, h, w) = split_chw(self.shape(), "pixel_shuffle")?;
        if r == 0 || cin % (r * r) != 0 {
            return Err(shape_err!(
                "pixel_shuffle: {cin} channels not divisible by {r}^2"
            ));
        }
        let c = cin / (r * r);
        let (ho, wo) = (h * r, w * r);
        let mut map = Vec::with_capacity(self.numel());
        for b in 0..batch {
            for ch in 0..c {
                for y in 0..ho {
                    for x in 0..wo {
                        let src_c = ch * r * r + (y % r) * r + (x % r);
                        map.push(Some(((b * cin + src_c) * h + y / r) * w + x / r));
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 3] = c;
        shape[n - 2] = ho;
        shape[n - 1] = wo;
        Ok(gather(self, shape, map, "pixel_shuffle"))
    }

    /// Inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor> {
        let (batch, c, hi, wi) = split_chw(self.shape(), "pixel_unshuffle")?;
        if r == 0 || hi % r != 0 || wi % r != 0 {
            return Err(shape_err!(
                "pixel_unshuffle: extent {hi}x{wi} not divisible by {r}"
            ));
        }
        let (h, w) = (hi / r, wi / r);
        let cout = c * r * r;
        let mut map = Vec::with_capacity(self.numel());
        for b in 0..batch {
            for oc in 0..cout {
                let (ch, i, j) = (oc / (r * r), (oc % (r * r)) / r, oc % r);
                for y in 0..h {
                    for x in 0..w {
                        map.push(Some(((b * c + ch) * hi + r * y + i) * wi + r * x + j));
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 3] = cout;
        shape[n - 2] = h;
        shape[n - 1] = w;
        Ok(gather(self, shape, map, "pixel_unshuffle"))
    }

    /// Bilinear upsampling by an integer factor (half-pixel centres, edge clamped).
    pub fn upsample_bilinear(&self, r: usize) -> Result<Tensor> {
        let (outer, h, w) = split_hw(self.shape(), "upsample_bilinear")?;
        if r == 0 {
            return Err(shape_err!("upsample_bilinear: factor must be positive"));
        }
        let rows = interp_taps(h, r);
        let cols = interp_taps(w, r);
        let (ho, wo) = (h * r, w * r);
        let x = self.data();
        let mut out = vec![0.0; outer * ho * wo];
        for o in 0..outer {
            let src = &x[o * h * w..(o + 1) * h * w];
            let dst = &mut out[o * ho * wo..(o + 1) * ho * wo];
            for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (xo, &(x0, x1, fx)) in cols.iter().enumerate() {
                    dst[y * wo + xo] = (1.0 - fy) * ((1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1])
                        + fy * ((1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = ho;
        shape[n - 1] = wo;
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            "upsample_bilinear",
            move |g, _, _| {
                let mut gx = vec![0.0; outer * h * w];
                for o in 0..outer {
                    let gs = &g[o * ho * wo..(o + 1) * ho * wo];
                    let dst = &mut gx[o * h * w..(o + 1) * h * w];
                    for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
                        for (xo, &(x0, x1, fx)) in cols.iter().enumerate() {
                            let v = gs[y * wo + xo];
                            dst[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * v;
                            dst[y0 * w + x1] += (1.0 - fy) * fx * v;
                            dst[y1 * w + x0] += fy * (1.0 - fx) * v;
                            dst[y1 * w + x1] += fy * fx * v;
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}

/// (before, after) padding giving `ceil(n / stride)` outputs for kernel `k`.
pub(crate) fn same_padding(n: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = n.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(n);
    (total / 2, total - total / 2)
}

fn interp_taps(n: usize, r: usize) -> Vec<(usize, usize, f64)> {
    (0..n * r)
        .map(|i| {
            let src = ((i as f64 + 0.5) / r as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn work(&self) -> usize {
        self.batch * self.cout * self.cin * self.kh * self.kw * self.ho * self.wo
    }

    fn forward(&self, x: &[f64], wt: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let g = *self;
        let plane_out = g.ho * g.wo;
        let mut out = vec![0.0; g.batch * g.cout * plane_out];
        let kernel = |(idx, o): (usize, &mut [f64])| {
            let (b, co) = (idx / g.cout, idx % g.cout);
            if let Some(bias) = bias {
                o.fill(bias[co]);
            }
            for ci in 0..g.cin {
                let xp = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                let wp = &wt[(co * g.cin + ci) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wp[ky * g.kw + kx];
                        for oy in 0..g.ho {
                            let xrow = &xp[(oy * g.stride + ky) * g.w + kx..];
                            let orow = &mut o[oy * g.wo..(oy + 1) * g.wo];
                            if g.stride == 1 {
                                orow.iter_mut().zip(xrow).for_each(|(o, &xv)| *o += wv * xv);
                            } else {
                                for (ox, ov) in orow.iter_mut().enumerate() {
                                    *ov += wv * xrow[ox * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        };
        if g.work() >= PAR_MIN_WORK {
            out.par_chunks_mut(plane_out).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(plane_out).enumerate().for_each(kernel);
        }
        out
    }

    fn grad_input(&self, gout: &[f64], wt: &[f64]) -> Vec<f64> {
        let g = *self;
        let plane_in = g.h * g.w;
        let mut gx = vec![0.0; g.batch * g.cin * plane_in];
        let kernel = |(idx, gxp): (usize, &mut [f64])| {
            let (b, ci) = (idx / g.cin, idx % g.cin);
            for co in 0..g.cout {
                let gp = &gout[(b * g.cout + co) * g.ho * g.wo..][..g.ho * g.wo];
                let wp = &wt[(co * g.cin + ci) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wp[ky * g.kw + kx];
                        for oy in 0..g.ho {
                            let grow = &gp[oy * g.wo..(oy + 1) * g.wo];
                            let base = (oy * g.stride + ky) * g.w + kx;
                            for (ox, gv) in grow.iter().enumerate() {
                                gxp[base + ox * g.stride] += wv * gv;
                            }
                        }
                    }
                }
            }
        };
        if g.work() >= PAR_MIN_WORK {
            gx.par_chunks_mut(plane_in).enumerate().for_each(kernel);
        } else {
            gx.chunks_mut(plane_in).enumerate().for_each(kernel);
        }
        gx
    }

    fn grad_weight(&self, gout: &[f64], x: &[f64]) -> Vec<f64> {
        let g = *self;
        let per_out = g.cin * g.kh * g.kw;
        let mut gw = vec![0.0; g.cout * per_out];
        let kernel = |(co, gwc): (usize, &mut [f64])| {
            for b in 0..g.batch {
                let gp = &gout[(b * g.cout + co) * g.ho * g.wo..][..g.ho * g.wo];
                for ci in 0..g.cin {
                    let xp = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let mut acc = 0.0;
                            for oy in 0..g.ho {
                                let grow = &gp[oy * g.wo..(oy + 1) * g.wo];
                                let xrow = &xp[(oy * g.stride + ky) * g.w + kx..];
                                if g.stride == 1 {
                                    acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                                } else {
                                    for (ox, gv) in grow.iter().enumerate() {
                                        acc += gv * xrow[ox * g.stride];
                                    }
                                }
                            }
                            gwc[(ci * g.kh + ky) * g.kw + kx] += acc;
                        }
                    }
                }
            }
        };
        if g.work() >= PAR_MIN_WORK {
            gw.par_chunks_mut(per_out).enumerate().for_each(kernel);
        } else {
            gw.chunks_mut(per_out).enumerate().for_each(kernel);
        }
        gw
    }

    fn grad_bias(&self, gout: &[f64]) -> Vec<f64> {
        let plane = self.ho * self.wo;
        let mut gb = vec![0.0; self.cout];
        for (i, chunk) in gout.chunks(plane).enumerate() {
            gb[i % self.cout] += chunk.iter().sum::<f64>();
        }
        gb
    }
}

#[derive(Debug, Clone, Copy)]
struct TransposeGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl TransposeGeom {
    /// Output coordinate for input `i` and kernel tap `k`, if inside the crop.
    fn target(&self, i: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (i * self.stride + k) as isize - self.padding as isize;
        (0..extent as isize).contains(&pos).then_some(pos as usize)
    }

    fn forward(&self, x: &[f64], wt: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let g = *self;
        let plane_out = g.ho * g.wo;
        let mut out = vec![0.0; g.batch * g.cout * plane_out];
        out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, o)| {
            let (b, co) = (idx / g.cout, idx % g.cout);
            if let Some(bias) = bias {
                o.fill(bias[co]);
            }
            for ci in 0..g.cin {
                let xp = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wt[((ci * g.cout + co) * g.kh + ky) * g.kw + kx];
                        for iy in 0..g.h {
                            let Some(oy) = g.target(iy, ky, g.ho) else { continue };
                            for ix in 0..g.w {
                                if let Some(ox) = g.target(ix, kx, g.wo) {
                                    o[oy * g.wo + ox] += wv * xp[iy * g.w + ix];
                                }
                            }
                        }
                    }
                }
            }
        });
        out
    }

    fn grad_input(&self, gout: &[f64], wt: &[f64]) -> Vec<f64> {
        let g = *self;
        let plane_in = g.h * g.w;
        let mut gx = vec![0.0; g.batch * g.cin * plane_in];
        gx.par_chunks_mut(plane_in).enumerate().for_each(|(idx, gxp)| {
            let (b, ci) = (idx / g.cin, idx % g.cin);
            for co in 0..g.cout {
                let gp = &gout[(b * g.cout + co) * g.ho * g.wo..][..g.ho * g.wo];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wt[((ci * g.cout + co) * g.kh + ky) * g.kw + kx];
                        for iy in 0..g.h {
                            let Some(oy) = g.target(iy, ky, g.ho) else { continue };
                            for ix in 0..g.w {
                                if let Some(ox) = g.target(ix, kx, g.wo) {
                                    gxp[iy * g.w + ix] += wv * gp[oy * g.wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        gx
    }

    fn grad_weight(&self, gout: &[f64], x: &[f64]) -> Vec<f64> {
        let g = *self;
        let per_in = g.cout * g.kh * g.kw;
        let mut gw = vec![0.0; g.cin * per_in];
        gw.par_chunks_mut(per_in).enumerate().for_each(|(ci, gwc)| {
            for b in 0..g.batch {
                let xp = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for co in 0..g.cout {
                    let gp = &gout[(b * g.cout + co) * g.ho * g.wo..][..g.ho * g.wo];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let mut acc = 0.0;
                            for iy in 0..g.h {
                                let Some(oy) = g.target(iy, ky, g.ho) else { continue };
                                for ix in 0..g.w {
                                    if let Some(ox) = g.target(ix, kx, g.wo) {
                                        acc += xp[iy * g.w + ix] * gp[oy * g.wo + ox];
                                    }
                                }
                            }
                            gwc[(co * g.kh + ky) * g.kw + kx] += acc;
                        }
                    }
                }
            }
        });
        gw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{assert_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reflect(i: isize, n: isize) -> usize {
        let r = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
        r as usize
    }

    #[test]
    fn mirror_pad_row() {
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.pad2d(0, 0, 1, 1, PadMode::Mirror).unwrap();
        assert_eq!(y.data(), &[2.0, 1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn mirror_pad_constant_field() {
        let x = Tensor::full(vec![2, 4, 5], 3.25);
        let y = x.mirror_pad(2).unwrap();
        assert_eq!(y.shape(), &[2, 8, 9]);
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn mirror_pad_matches_index_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, &[1, 4, 5]);
        let y = x.mirror_pad(2).unwrap();
        for i in 0..8 {
            for j in 0..9 {
                let si = reflect(i as isize - 2, 4);
                let sj = reflect(j as isize - 2, 5);
                assert_eq!(y.data()[i * 9 + j], x.data()[si * 5 + sj]);
            }
        }
    }

    #[test]
    fn mirror_pad_too_large() {
        let x = Tensor::zeros(vec![1, 3, 3]);
        assert!(x.mirror_pad(3).is_err());
        assert!(x.pad2d(3, 3, 3, 3, PadMode::Zero).is_ok());
    }

    #[test]
    fn identity_kernel_leaves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, &[3, 6, 7]);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let w = Tensor::new(vec![3, 3, 1, 1], w).unwrap();
        let y = x.conv2d(&w, None, 1, PadMode::Mirror).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_on_constant_field() {
        let x = Tensor::full(vec![1, 5, 6], 1.5);
        let w = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let y = x.conv2d(&w, None, 1, PadMode::Mirror).unwrap();
        assert_eq!(y.shape(), &[1, 5, 6]);
        assert!(y.data().iter().all(|&v| (v - 13.5).abs() < 1e-12));
    }

    /// Direct nested-loop convolution on an explicitly padded input.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Vec<f64> {
        let (bsz, cin, h, wd) = split_chw(x.shape(), "oracle").unwrap();
        let [cout, _, k, _] = *w.shape() else { unreachable!() };
        let ho = h.div_ceil(stride);
        let wo = wd.div_ceil(stride);
        let (pt, _) = same_padding(h, k, stride);
        let (pl, _) = same_padding(wd, k, stride);
        let mut out = vec![0.0; bsz * cout * ho * wo];
        for bi in 0..bsz {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = reflect((oy * stride + ky) as isize - pt as isize, h as isize);
                                    let ix = reflect((ox * stride + kx) as isize - pl as isize, wd as isize);
                                    s += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                        * x.data()[((bi * cin + ci) * h + iy) * wd + ix];
                                }
                            }
                        }
                        out[((bi * cout + co) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&mut rng, &[2, 3, 8, 8]);
        for (k, stride) in [(3, 1), (4, 2), (5, 2), (2, 1)] {
            let w = random_tensor(&mut rng, &[4, 3, k, k]);
            let b = random_tensor(&mut rng, &[4]);
            let y = x.conv2d(&w, Some(&b), stride, PadMode::Mirror).unwrap();
            let expect = conv_oracle(&x, &w, &b, stride);
            assert_eq!(y.shape(), &[2, 4, 8usize.div_ceil(stride), 8usize.div_ceil(stride)]);
            for (a, e) in y.data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12, "k={k} s={stride}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(vec![2, 4, 4]);
        let w = Tensor::zeros(vec![1, 3, 1, 1]);
        assert!(x.conv2d(&w, None, 1, PadMode::Mirror).is_err());
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = random_tensor(&mut rng, &[3]);
        let x = random_tensor(&mut rng, &[2, 7, 6]);
        assert_gradients(&mut rng, &[2, 7, 6], |x| x.conv2d(&w, Some(&b), 2, PadMode::Mirror).unwrap());
        assert_gradients(&mut rng, &[3, 2, 3, 3], |w| x.conv2d(w, Some(&b), 1, PadMode::Zero).unwrap());
        assert_gradients(&mut rng, &[3], |b| x.conv2d(&w, Some(b), 2, PadMode::Mirror).unwrap());
    }

    #[test]
    fn conv_transpose_shape_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_tensor(&mut rng, &[3, 2, 4, 4]);
        let b = random_tensor(&mut rng, &[2]);
        let x = random_tensor(&mut rng, &[3, 3, 5]);
        let y = x.conv_transpose2d(&w, Some(&b), 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 6, 10]);
        assert_gradients(&mut rng, &[3, 3, 5], |x| x.conv_transpose2d(&w, Some(&b), 2, 1).unwrap());
        assert_gradients(&mut rng, &[3, 2, 4, 4], |w| x.conv_transpose2d(w, Some(&b), 2, 1).unwrap());
        assert_gradients(&mut rng, &[2], |b| x.conv_transpose2d(&w, Some(b), 2, 1).unwrap());
    }

    #[test]
    fn conv_transpose_single_tap_scatter() {
        // One input site, k = stride, no padding: output block equals the kernel.
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.conv_transpose2d(&w, None, 2, 0).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn pixel_shuffle_single_site() {
        let x = Tensor::new(vec![4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_shuffle_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&mut rng, &[8, 3, 5]);
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), &[2, 6, 10]);
        for c in 0..2 {
            for h in 0..3 {
                for w in 0..5 {
                    for i in 0..2 {
                        for j in 0..2 {
                            let out = y.data()[(c * 6 + 2 * h + i) * 10 + 2 * w + j];
                            let inp = x.data()[((c * 4 + i * 2 + j) * 3 + h) * 5 + w];
                            assert_eq!(out, inp);
                        }
                    }
                }
            }
        }
        let back = y.pixel_unshuffle(2).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn pixel_shuffle_errors() {
        assert!(Tensor::zeros(vec![6, 2, 2]).pixel_shuffle(2).is_err());
        assert!(Tensor::zeros(vec![1, 3, 4]).pixel_unshuffle(2).is_err());
    }

    #[test]
    fn bilinear_preserves_constants_and_gradients() {
        let x = Tensor::full(vec![2, 3, 4], -0.75);
        let y = x.upsample_bilinear(2).unwrap();
        assert_eq!(y.shape(), &[2, 6, 8]);
        assert!(y.data().iter().all(|&v| (v + 0.75).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        assert_gradients(&mut rng, &[2, 3, 4], |x| x.upsample_bilinear(4).unwrap());
    }

    #[test]
    fn pad_crop_shuffle_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_gradients(&mut rng, &[2, 4, 5], |x| x.pad2d(1, 2, 3, 0, PadMode::Mirror).unwrap());
        assert_gradients(&mut rng, &[2, 4, 5], |x| x.crop2d(1, 1, 2, 3).unwrap());
        assert_gradients(&mut rng, &[8, 2, 3], |x| x.pixel_shuffle(2).unwrap());
        assert_gradients(&mut rng, &[2, 4, 6], |x| x.pixel_unshuffle(2).unwrap());
        assert_gradients(&mut rng, &[4, 3], |x| x.gather_rows(&[3, 0, 0, 2]).unwrap());
    }

    #[test]
    fn gather_rows_picks_rows() {
        let x = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = x.gather_rows(&[2, 2, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[5.0, 6.0, 5.0, 6.0, 1.0, 2.0]);
        assert!(x.gather_rows(&[3]).is_err());
    }
}
