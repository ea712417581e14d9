//! Raw forward/backward kernels over flat row-major buffers.
//!
//! Convolutions with a long reduction are lowered to GEMM through a
//! per-sample im2col buffer; short ones run as direct loops. Transposed convolution reuses the same plan: its forward pass
//! is the input-gradient of the matching convolution and vice versa, so the
//! two are exact adjoints of each other.

use crate::error::{config_err, shape_err, Result};

/// Stride, zero padding and channel grouping for a convolution over
/// `(depth, height, width)`. 2D convolutions use depth 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(stride: [usize; 3], padding: [usize; 3], groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }

    pub fn unit() -> Self {
        Self::new([1, 1, 1], [0, 0, 0], 1)
    }

    /// 2D geometry (depth axis untouched).
    pub fn planar(stride: usize, padding: usize) -> Self {
        Self::new([1, stride, stride], [0, padding, padding], 1)
    }
}

/// Pooling window and stride over `(depth, height, width)`; floor mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub window: [usize; 3],
    pub stride: [usize; 3],
}

impl PoolGeometry {
    pub fn planar(window: usize, stride: usize) -> Self {
        Self {
            window: [1, window, window],
            stride: [1, stride, stride],
        }
    }
}

/// Output length of a strided window sweep: floor((d + 2p - k) / s) + 1.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution: (d - 1)s - 2p + k + output_padding.
pub fn conv_transpose_out_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    let grown = (input.checked_sub(1)?) * stride + kernel + output_padding;
    grown.checked_sub(2 * padding).filter(|&d| d > 0)
}

/// Everything needed to lower one convolution to GEMM.
#[derive(Clone, Debug)]
pub(crate) struct ConvPlan {
    pub batch: usize,
    pub c_in: usize,
    pub in_dims: [usize; 3],
    pub c_out: usize,
    pub groups: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub out_dims: [usize; 3],
}

impl ConvPlan {
    /// Plan for `input [N, C_in, D, H, W]` convolved with
    /// `weight [C_out, C_in / groups, kD, kH, kW]`.
    pub fn new(input: &[usize], weight: &[usize], geom: &ConvGeometry) -> Result<Self> {
        if input.len() != 5 || weight.len() != 5 {
            return shape_err(format!(
                "convolution expects 5D input and weight, got {input:?} and {weight:?}"
            ));
        }
        let groups = geom.groups;
        if groups == 0 || input[1] % groups != 0 || weight[0] % groups != 0 {
            return config_err(format!(
                "groups={groups} must divide input channels {} and output channels {}",
                input[1], weight[0]
            ));
        }
        if weight[1] != input[1] / groups {
            return shape_err(format!(
                "weight expects {} input channels per group, input provides {}",
                weight[1],
                input[1] / groups
            ));
        }
        let mut out_dims = [0; 3];
        for axis in 0..3 {
            out_dims[axis] = conv_out_len(
                input[2 + axis],
                weight[2 + axis],
                geom.stride[axis],
                geom.padding[axis],
            )
            .ok_or_else(|| {
                crate::Error::Shape(format!(
                    "kernel {:?} does not fit input {:?} with padding {:?}",
                    &weight[2..],
                    &input[2..],
                    geom.padding
                ))
            })?;
        }
        Ok(Self {
            batch: input[0],
            c_in: input[1],
            in_dims: [input[2], input[3], input[4]],
            c_out: weight[0],
            groups,
            kernel: [weight[2], weight[3], weight[4]],
            stride: geom.stride,
            padding: geom.padding,
            out_dims,
        })
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn k_len(&self) -> usize {
        self.cin_g() * self.kernel.iter().product::<usize>()
    }

    pub fn in_spatial(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_spatial(&self) -> usize {
        self.out_dims.iter().product()
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.c_out,
            self.out_dims[0],
            self.out_dims[1],
            self.out_dims[2],
        ]
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.k_len()
    }

    /// Source index along one axis for output position `o` and kernel tap `k`.
    #[inline]
    fn src(&self, axis: usize, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.stride[axis] + k) as isize - self.padding[axis] as isize;
        if pos >= 0 && (pos as usize) < self.in_dims[axis] {
            Some(pos as usize)
        } else {
            None
        }
    }

    /// Output positions `lo..hi` along `axis` whose tap `k` lands inside the input.
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let n = self.out_dims[axis];
        let lo = (0..n).find(|&o| self.src(axis, o, k).is_some()).unwrap_or(n);
        let hi = (lo..n).find(|&o| self.src(axis, o, k).is_none()).unwrap_or(n);
        (lo, hi)
    }

    /// Column matrix `[K, P]` of sample `n`, group `g`, written into `col`.
    fn im2col(&self, x: &[f64], n: usize, g: usize, col: &mut [f64]) {
        let [kd, kh, kw] = self.kernel;
        let [od_n, oh_n, ow_n] = self.out_dims;
        let [_, ih_n, iw_n] = self.in_dims;
        let (sw, pw) = (self.stride[2], self.padding[2]);
        let p = self.out_spatial();
        let in_sp = self.in_spatial();
        let mut row = 0;
        for ci in 0..self.cin_g() {
            let base = (n * self.c_in + g * self.cin_g() + ci) * in_sp;
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let (lo, hi) = self.valid_range(2, c);
                        let dst = &mut col[row * p..(row + 1) * p];
                        dst.fill(0.0);
                        for od in 0..od_n {
                            let Some(id) = self.src(0, od, a) else { continue };
                            for oh in 0..oh_n {
                                let Some(ih) = self.src(1, oh, b) else { continue };
                                let src_row = base + (id * ih_n + ih) * iw_n;
                                let out_row = (od * oh_n + oh) * ow_n;
                                let dst = &mut dst[out_row + lo..out_row + hi];
                                if sw == 1 {
                                    let start = src_row + lo + c - pw;
                                    dst.copy_from_slice(&x[start..start + hi - lo]);
                                } else {
                                    for (k, d) in dst.iter_mut().enumerate() {
                                        *d = x[src_row + (lo + k) * sw + c - pw];
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Scatter-add the `[K, P]` column matrix of sample `n`, group `g` into `dx`.
    fn col2im(&self, col: &[f64], n: usize, g: usize, dx: &mut [f64]) {
        let [kd, kh, kw] = self.kernel;
        let [od_n, oh_n, ow_n] = self.out_dims;
        let [_, ih_n, iw_n] = self.in_dims;
        let (sw, pw) = (self.stride[2], self.padding[2]);
        let p = self.out_spatial();
        let in_sp = self.in_spatial();
        let mut row = 0;
        for ci in 0..self.cin_g() {
            let base = (n * self.c_in + g * self.cin_g() + ci) * in_sp;
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let (lo, hi) = self.valid_range(2, c);
                        let src_row = &col[row * p..(row + 1) * p];
                        for od in 0..od_n {
                            let Some(id) = self.src(0, od, a) else { continue };
                            for oh in 0..oh_n {
                                let Some(ih) = self.src(1, oh, b) else { continue };
                                let dst_row = base + (id * ih_n + ih) * iw_n;
                                let out_row = (od * oh_n + oh) * ow_n;
                                let src = &src_row[out_row + lo..out_row + hi];
                                if sw == 1 {
                                    let start = dst_row + lo + c - pw;
                                    for (d, v) in dx[start..start + hi - lo].iter_mut().zip(src) {
                                        *d += v;
                                    }
                                } else {
                                    for (k, v) in src.iter().enumerate() {
                                        dx[dst_row + (lo + k) * sw + c - pw] += v;
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Offset of the `[cout_g, P]` output block of sample `n`, group `g`.
    fn out_block(&self, n: usize, g: usize) -> usize {
        (n * self.c_out + g * self.cout_g()) * self.out_spatial()
    }

    /// Reductions at most this long run as direct loops; the im2col buffer
    /// and GEMM packing cost more than they save there.
    const DIRECT_MAX_K: usize = 64;

    fn direct(&self) -> bool {
        self.k_len() <= Self::DIRECT_MAX_K
    }

    /// Convolution without bias: `[N, C_in, in] -> [N, C_out, out]`.
    pub fn apply(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        if self.direct() {
            self.apply_direct(x, w)
        } else {
            self.apply_gemm(x, w)
        }
    }

    /// Adjoint of [`apply`](Self::apply) in its input: `[N, C_out, out] -> [N, C_in, in]`.
    pub fn input_grad(&self, w: &[f64], dy: &[f64]) -> Vec<f64> {
        if self.direct() {
            self.input_grad_direct(w, dy)
        } else {
            self.input_grad_gemm(w, dy)
        }
    }

    /// Gradient of `<dy, apply(x, w)>` with respect to `w`.
    pub fn weight_grad(&self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        if self.direct() {
            self.weight_grad_direct(x, dy)
        } else {
            self.weight_grad_gemm(x, dy)
        }
    }

    /// Calls `f(widx, out_start, in_start, len)` for every run of `len`
    /// outputs starting at flat offset `out_start` that one kernel tap (flat
    /// weight index `widx`) connects to inputs `in_start + k * stride_w`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [kd, kh, kw] = self.kernel;
        let [od_n, oh_n, ow_n] = self.out_dims;
        let [_, ih_n, iw_n] = self.in_dims;
        let (sw, pw) = (self.stride[2], self.padding[2]);
        let (cin_g, cout_g) = (self.cin_g(), self.cout_g());
        let (in_sp, out_sp) = (self.in_spatial(), self.out_spatial());
        let k_len = self.k_len();
        let ranges: Vec<(usize, usize)> = (0..kw).map(|c| self.valid_range(2, c)).collect();
        for n in 0..self.batch {
            for co_all in 0..self.c_out {
                let g = co_all / cout_g;
                let y_base = (n * self.c_out + co_all) * out_sp;
                for ci in 0..cin_g {
                    let x_base = (n * self.c_in + g * cin_g + ci) * in_sp;
                    for od in 0..od_n {
                        for a in 0..kd {
                            let Some(id) = self.src(0, od, a) else { continue };
                            for oh in 0..oh_n {
                                let out_row = y_base + (od * oh_n + oh) * ow_n;
                                for b in 0..kh {
                                    let Some(ih) = self.src(1, oh, b) else { continue };
                                    let in_row = x_base + (id * ih_n + ih) * iw_n;
                                    let w_row = co_all * k_len + ((ci * kd + a) * kh + b) * kw;
                                    for (c, &(lo, hi)) in ranges.iter().enumerate() {
                                        if lo < hi {
                                            f(w_row + c, out_row + lo, in_row + lo * sw + c - pw, hi - lo);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn apply_direct(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let sw = self.stride[2];
        let mut y = vec![0.0; self.batch * self.c_out * self.out_spatial()];
        self.for_each_run(|wi, o, i, len| {
            let wv = w[wi];
            let out = &mut y[o..o + len];
            if sw == 1 {
                out.iter_mut().zip(&x[i..i + len]).for_each(|(d, v)| *d += wv * v);
            } else {
                out.iter_mut().enumerate().for_each(|(k, d)| *d += wv * x[i + k * sw]);
            }
        });
        y
    }

    fn input_grad_direct(&self, w: &[f64], dy: &[f64]) -> Vec<f64> {
        let sw = self.stride[2];
        let mut dx = vec![0.0; self.batch * self.c_in * self.in_spatial()];
        self.for_each_run(|wi, o, i, len| {
            let wv = w[wi];
            let g = &dy[o..o + len];
            if sw == 1 {
                dx[i..i + len].iter_mut().zip(g).for_each(|(d, v)| *d += wv * v);
            } else {
                g.iter().enumerate().for_each(|(k, v)| dx[i + k * sw] += wv * v);
            }
        });
        dx
    }

    fn weight_grad_direct(&self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let sw = self.stride[2];
        let mut dw = vec![0.0; self.weight_len()];
        self.for_each_run(|wi, o, i, len| {
            let g = &dy[o..o + len];
            dw[wi] += if sw == 1 {
                dot(g, &x[i..i + len])
            } else {
                g.iter().enumerate().map(|(k, v)| v * x[i + k * sw]).sum::<f64>()
            };
        });
        dw
    }

    fn apply_gemm(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let (k, p, cg) = (self.k_len(), self.out_spatial(), self.cout_g());
        let mut y = vec![0.0; self.batch * self.c_out * p];
        let mut col = vec![0.0; k * p];
        for n in 0..self.batch {
            for g in 0..self.groups {
                self.im2col(x, n, g, &mut col);
                let wg = &w[g * cg * k..(g + 1) * cg * k];
                let o = self.out_block(n, g);
                gemm(cg, k, p, wg, k, 1, &col, p, 1, &mut y[o..o + cg * p], p, 1, 0.0);
            }
        }
        y
    }

    fn input_grad_gemm(&self, w: &[f64], dy: &[f64]) -> Vec<f64> {
        let (k, p, cg) = (self.k_len(), self.out_spatial(), self.cout_g());
        let mut dx = vec![0.0; self.batch * self.c_in * self.in_spatial()];
        let mut dcol = vec![0.0; k * p];
        for n in 0..self.batch {
            for g in 0..self.groups {
                let wg = &w[g * cg * k..(g + 1) * cg * k];
                let o = self.out_block(n, g);
                // dcol[K, P] = W_g^T [K, cg] * dy [cg, P]
                gemm(k, cg, p, wg, 1, k, &dy[o..o + cg * p], p, 1, &mut dcol, p, 1, 0.0);
                self.col2im(&dcol, n, g, &mut dx);
            }
        }
        dx
    }

    fn weight_grad_gemm(&self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let (k, p, cg) = (self.k_len(), self.out_spatial(), self.cout_g());
        let mut dw = vec![0.0; self.weight_len()];
        let mut col = vec![0.0; k * p];
        for n in 0..self.batch {
            for g in 0..self.groups {
                self.im2col(x, n, g, &mut col);
                let o = self.out_block(n, g);
                let dwg = &mut dw[g * cg * k..(g + 1) * cg * k];
                // dW_g[cg, K] += dy [cg, P] * col^T [P, K]
                gemm(cg, p, k, &dy[o..o + cg * p], p, 1, &col, 1, p, dwg, k, 1, 1.0);
            }
        }
        dw
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c = a * b + beta * c` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: lhs out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: output out of bounds");
    // SAFETY: every index the kernel touches lies within the slices, as
    // asserted above; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Adds `bias[c]` to every element of channel `c` in `[N, C, S]`.
pub(crate) fn add_channel_bias(y: &mut [f64], bias: &[f64], batch: usize, spatial: usize) {
    let channels = bias.len();
    for n in 0..batch {
        for (c, &b) in bias.iter().enumerate() {
            let start = (n * channels + c) * spatial;
            y[start..start + spatial].iter_mut().for_each(|v| *v += b);
        }
    }
}

/// Per-channel sums of `[N, C, S]`.
pub(crate) fn channel_sums(y: &[f64], batch: usize, channels: usize, spatial: usize) -> Vec<f64> {
    let mut sums = vec![0.0; channels];
    for n in 0..batch {
        for (c, s) in sums.iter_mut().enumerate() {
            let start = (n * channels + c) * spatial;
            *s += y[start..start + spatial].iter().sum::<f64>();
        }
    }
    sums
}

/// Floor-mode max pooling over `[N, C, D, H, W]`. Returns the pooled values
/// and, per output, the flat input index that won (first maximum).
pub(crate) fn max_pool_forward(
    x: &[f64],
    shape: &[usize],
    geom: &PoolGeometry,
) -> Result<(Vec<f64>, Vec<usize>, Vec<usize>)> {
    if shape.len() != 5 {
        return shape_err(format!("pooling expects a 5D view, got {shape:?}"));
    }
    let mut out_dims = [0; 3];
    for axis in 0..3 {
        let d = shape[2 + axis];
        let w = geom.window[axis];
        if w == 0 || w > d {
            return shape_err(format!(
                "pool window {:?} larger than input {:?}",
                geom.window,
                &shape[2..]
            ));
        }
        out_dims[axis] = (d - w) / geom.stride[axis] + 1;
    }
    let (nc, [d, h, w]) = (shape[0] * shape[1], [shape[2], shape[3], shape[4]]);
    let in_sp = d * h * w;
    let out_sp: usize = out_dims.iter().product();
    let mut out = vec![0.0; nc * out_sp];
    let mut arg = vec![0usize; nc * out_sp];
    let [sd, sh, sw] = geom.stride;
    let [wd, wh, ww] = geom.window;
    for plane in 0..nc {
        let base = plane * in_sp;
        let mut o = plane * out_sp;
        for od in 0..out_dims[0] {
            for oh in 0..out_dims[1] {
                for ow in 0..out_dims[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for a in 0..wd {
                        for b in 0..wh {
                            let row = base + ((od * sd + a) * h + oh * sh + b) * w + ow * sw;
                            for c in 0..ww {
                                let v = x[row + c];
                                if v > best {
                                    best = v;
                                    best_idx = row + c;
                                }
                            }
                        }
                    }
                    out[o] = best;
                    arg[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    let out_shape = vec![shape[0], shape[1], out_dims[0], out_dims[1], out_dims[2]];
    Ok((out, arg, out_shape))
}

/// Batch statistics for `[N, C, S]`: per-channel mean and biased variance.
pub(crate) fn channel_moments(
    x: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>) {
    let count = (batch * spatial) as f64;
    let mean: Vec<f64> = channel_sums(x, batch, channels, spatial)
        .into_iter()
        .map(|s| s / count)
        .collect();
    let mut var = vec![0.0; channels];
    for n in 0..batch {
        for c in 0..channels {
            let start = (n * channels + c) * spatial;
            let m = mean[c];
            var[c] += x[start..start + spatial]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_formulas() {
        assert_eq!(conv_out_len(54, 3, 1, 1), Some(54));
        assert_eq!(conv_out_len(5, 3, 1, 0), Some(3));
        assert_eq!(conv_out_len(27, 2, 2, 0), Some(13));
        assert_eq!(conv_out_len(2, 3, 1, 0), None);
        assert_eq!(conv_transpose_out_len(6, 4, 2, 1, 0), Some(12));
        assert_eq!(conv_transpose_out_len(1, 2, 2, 0, 0), Some(2));
        assert_eq!(conv_transpose_out_len(1, 1, 1, 1, 0), None);
    }

    #[test]
    fn plan_rejects_bad_groups() {
        let g = ConvGeometry::new([1, 1, 1], [0, 0, 0], 2);
        assert!(matches!(
            ConvPlan::new(&[1, 3, 1, 4, 4], &[4, 1, 1, 1, 1], &g),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn apply_matches_direct_loop() {
        // direct 2D convolution, 1 sample, 2 -> 3 channels, pad 1, stride 2
        let (c_in, c_out, h, w, k) = (2, 3, 5, 6, 3);
        let x: Vec<f64> = (0..c_in * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..c_out * c_in * k * k).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let geom = ConvGeometry::planar(2, 1);
        let plan = ConvPlan::new(&[1, c_in, 1, h, w], &[c_out, c_in, 1, k, k], &geom).unwrap();
        let y = plan.apply(&x, &wt);
        let [_, oh, ow] = plan.out_dims;
        for co in 0..c_out {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for a in 0..k {
                            for b in 0..k {
                                let r = (i * 2 + a) as isize - 1;
                                let c = (j * 2 + b) as isize - 1;
                                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                                    continue;
                                }
                                acc += x[(ci * h + r as usize) * w + c as usize]
                                    * wt[((co * c_in + ci) * k + a) * k + b];
                            }
                        }
                    }
                    assert_eq!(y[(co * oh + i) * ow + j], acc);
                }
            }
        }
    }

    #[test]
    fn direct_and_gemm_paths_agree() {
        let cases: [(&[usize], &[usize], ConvGeometry); 4] = [
            (&[2, 3, 4, 7, 6], &[4, 3, 3, 3, 3], ConvGeometry::new([1, 1, 1], [0, 1, 1], 1)),
            (&[2, 4, 3, 9, 8], &[6, 2, 2, 3, 3], ConvGeometry::new([1, 2, 2], [1, 0, 1], 2)),
            (&[3, 2, 1, 5, 5], &[3, 2, 1, 4, 4], ConvGeometry::planar(2, 1)),
            (&[1, 5, 1, 6, 6], &[2, 5, 1, 1, 1], ConvGeometry::unit()),
        ];
        for (xs, ws, geom) in cases {
            let plan = ConvPlan::new(xs, ws, &geom).unwrap();
            let x: Vec<f64> = (0..xs.iter().product::<usize>()).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
            let w: Vec<f64> = (0..plan.weight_len()).map(|i| ((i * 5) % 9) as f64 - 4.0).collect();
            let out_len = plan.out_shape().iter().product::<usize>();
            let dy: Vec<f64> = (0..out_len).map(|i| ((i * 3) % 11) as f64 - 5.0).collect();
            assert_eq!(plan.apply_direct(&x, &w), plan.apply_gemm(&x, &w));
            assert_eq!(plan.input_grad_direct(&w, &dy), plan.input_grad_gemm(&w, &dy));
            assert_eq!(plan.weight_grad_direct(&x, &dy), plan.weight_grad_gemm(&x, &dy));
        }
    }

    #[test]
    fn pool_window_too_large() {
        let x = vec![0.0; 4];
        assert!(max_pool_forward(&x, &[1, 1, 1, 2, 2], &PoolGeometry::planar(3, 1)).is_err());
    }
}
