//! Untaped numerical kernels.
//!
//! The tape calls into these for both forward values and backward passes,
//! and tests use them directly. All reductions run in a fixed left-to-right
//! order.

use std::borrow::Cow;

use super::{check_perm, strides_of, Tensor};
use crate::error::{Error, Result};

/// `c = a·b + beta·c` for row-major `a: m×k`, `b: k×n`, with optional
/// transposition of either operand (the slices keep their stored layout).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserted lengths cover every index reachable through the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return data.to_vec();
    }
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn permuted<'a>(t: &'a Tensor, perm: &[usize]) -> Cow<'a, [f64]> {
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        Cow::Borrowed(t.data())
    } else {
        Cow::Owned(permute_data(t.data(), t.shape(), perm))
    }
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    contract(a, b, &[(1, 0)])
}

/// Precomputed layout for a pairwise tensor contraction.
///
/// Both operands are permuted into `[free, contracted]` / `[contracted, free]`
/// order so the contraction becomes one matrix product.
#[derive(Clone, Debug)]
pub(crate) struct ContractPlan {
    perm_a: Vec<usize>,
    perm_b: Vec<usize>,
    /// `a` dims after permutation.
    shape_a_perm: Vec<usize>,
    shape_b_perm: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
    pub out_shape: Vec<usize>,
}

impl ContractPlan {
    pub fn new(shape_a: &[usize], shape_b: &[usize], pairs: &[(usize, usize)]) -> Result<Self> {
        let mut used_a = vec![false; shape_a.len()];
        let mut used_b = vec![false; shape_b.len()];
        for &(i, j) in pairs {
            if i >= shape_a.len() || j >= shape_b.len() {
                return Err(Error::shape(
                    "contract",
                    format!("axis pair ({i},{j}) out of range for {shape_a:?} × {shape_b:?}"),
                ));
            }
            if used_a[i] || used_b[j] {
                return Err(Error::shape(
                    "contract",
                    format!("axis repeated in {pairs:?}"),
                ));
            }
            if shape_a[i] != shape_b[j] {
                return Err(Error::shape(
                    "contract",
                    format!(
                        "axis {i} of {shape_a:?} (size {}) vs axis {j} of {shape_b:?} (size {})",
                        shape_a[i], shape_b[j]
                    ),
                ));
            }
            used_a[i] = true;
            used_b[j] = true;
        }
        let free_a: Vec<usize> = (0..shape_a.len()).filter(|&i| !used_a[i]).collect();
        let free_b: Vec<usize> = (0..shape_b.len()).filter(|&j| !used_b[j]).collect();
        let perm_a: Vec<usize> = free_a
            .iter()
            .copied()
            .chain(pairs.iter().map(|p| p.0))
            .collect();
        let perm_b: Vec<usize> = pairs
            .iter()
            .map(|p| p.1)
            .chain(free_b.iter().copied())
            .collect();
        let m = free_a.iter().map(|&i| shape_a[i]).product();
        let k = pairs.iter().map(|p| shape_a[p.0]).product();
        let n = free_b.iter().map(|&j| shape_b[j]).product();
        let out_shape = free_a
            .iter()
            .map(|&i| shape_a[i])
            .chain(free_b.iter().map(|&j| shape_b[j]))
            .collect();
        Ok(Self {
            shape_a_perm: perm_a.iter().map(|&p| shape_a[p]).collect(),
            shape_b_perm: perm_b.iter().map(|&p| shape_b[p]).collect(),
            perm_a,
            perm_b,
            m,
            k,
            n,
            out_shape,
        })
    }

    pub fn forward(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let pa = permuted(a, &self.perm_a);
        let pb = permuted(b, &self.perm_b);
        let mut out = vec![0.0; self.m * self.n];
        gemm(
            self.m, self.k, self.n, &pa, false, &pb, false, 0.0, &mut out,
        );
        Tensor::from_parts(self.out_shape.clone(), out)
    }

    /// Gradient with respect to `a` given the output gradient.
    pub fn grad_a(&self, grad: &Tensor, b: &Tensor) -> Tensor {
        let pb = permuted(b, &self.perm_b);
        let mut ga = vec![0.0; self.m * self.k];
        gemm(
            self.m,
            self.n,
            self.k,
            grad.data(),
            false,
            &pb,
            true,
            0.0,
            &mut ga,
        );
        let inv = invert_perm(&self.perm_a);
        Tensor::from_parts(
            inv.iter().map(|&i| self.shape_a_perm[i]).collect(),
            permute_data(&ga, &self.shape_a_perm, &inv),
        )
    }

    pub fn grad_b(&self, grad: &Tensor, a: &Tensor) -> Tensor {
        let pa = permuted(a, &self.perm_a);
        let mut gb = vec![0.0; self.k * self.n];
        gemm(
            self.k,
            self.m,
            self.n,
            &pa,
            true,
            grad.data(),
            false,
            0.0,
            &mut gb,
        );
        let inv = invert_perm(&self.perm_b);
        Tensor::from_parts(
            inv.iter().map(|&i| self.shape_b_perm[i]).collect(),
            permute_data(&gb, &self.shape_b_perm, &inv),
        )
    }
}

/// Contracts `a` and `b` over the paired axes `(axis of a, axis of b)`.
///
/// The output axes are the uncontracted axes of `a` followed by those of `b`.
/// An empty pairing gives the outer product.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    Ok(ContractPlan::new(a.shape(), b.shape(), pairs)?.forward(a, b))
}

/// Batched matrix product `[B, M, K] × [B, K, N] -> [B, M, N]`.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (bt, m, k, n) = bmm_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; bt * m * n];
    for i in 0..bt {
        gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            false,
            &b.data()[i * k * n..(i + 1) * k * n],
            false,
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Ok(Tensor::from_parts(vec![bt, m, n], out))
}

pub(crate) fn bmm_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] || a[2] != b[1] {
        return Err(Error::shape("bmm", format!("{a:?} × {b:?}")));
    }
    Ok((a[0], a[1], a[2], b[2]))
}

/// Softmax of one row; `-inf` entries map to exact zeros.
pub fn softmax_row(x: &[f64]) -> Vec<f64> {
    let max = x
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![1.0 / x.len() as f64; x.len()];
    }
    let mut out: Vec<f64> = x
        .iter()
        .map(|&v| {
            if v == f64::NEG_INFINITY {
                0.0
            } else {
                (v - max).exp()
            }
        })
        .collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Exact 1.5-entmax of one row via the sort-based threshold search.
///
/// Returns `p_i = max(0, x_i/2 - tau)^2` with `tau` chosen so that the
/// output sums to one.
pub fn entmax15_row(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: Vec<f64> = x.iter().map(|&v| (v - max) / 2.0).collect();
    let mut sorted = z.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut tau_star = sorted[0] - 1.0;
    for (i, &v) in sorted.iter().enumerate() {
        let rho = (i + 1) as f64;
        sum += v;
        sum_sq += v * v;
        let mean = sum / rho;
        let mean_sq = sum_sq / rho;
        let ss = rho * (mean_sq - mean * mean);
        let delta = ((1.0 - ss) / rho).max(0.0);
        let tau = mean - delta.sqrt();
        if tau <= v {
            tau_star = tau;
        } else {
            break;
        }
    }
    let mut p: Vec<f64> = z.iter().map(|&v| (v - tau_star).max(0.0).powi(2)).collect();
    // Rounding can leave the sum a few ulps away from one.
    let s: f64 = p.iter().sum();
    if n > 0 && s > 0.0 {
        p.iter_mut().for_each(|v| *v /= s);
    }
    p
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn signed_sqrt(x: f64) -> f64 {
    x.signum() * x.abs().sqrt() * if x == 0.0 { 0.0 } else { 1.0 }
}

pub const L2_NORM_FLOOR: f64 = 1e-12;

/// Divides a row by its L2 norm; rows with norm below [`L2_NORM_FLOOR`] pass through.
pub fn l2_normalize_row(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < L2_NORM_FLOOR {
        x.to_vec()
    } else {
        x.iter().map(|v| v / norm).collect()
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Applies `f` to each row along the last axis.
pub fn map_rows(t: &Tensor, f: impl Fn(&[f64]) -> Vec<f64>) -> Tensor {
    let cols = *t.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks(cols) {
        out.extend(f(row));
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

pub fn softmax(t: &Tensor) -> Tensor {
    map_rows(t, softmax_row)
}

pub fn entmax15(t: &Tensor) -> Tensor {
    map_rows(t, entmax15_row)
}

/// Geometry of a 2-d convolution over `[N, C, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[1] != kernel[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input {input:?}, kernels {kernel:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let (h, w, kh, kw) = (input[2], input[3], kernel[2], kernel[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "non-positive output size for input {input:?}, kernel {kh}×{kw}, pad {pad}"
                ),
            ));
        }
        Ok(Self {
            n: input[0],
            c: input[1],
            h,
            w,
            out_c: kernel[0],
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn spatial(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image `[C, H, W]` into `[C·KH·KW, OH·OW]`.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let sp = self.spatial();
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * sp..(row + 1) * sp];
                    for oh in 0..self.oh {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oh * self.ow..(oh + 1) * self.ow];
                        if ih < 0 || ih >= self.h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for (ow, v) in line.iter_mut().enumerate() {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            *v = if iw < 0 || iw >= self.w as isize {
                                0.0
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], img: &mut [f64]) {
        let sp = self.spatial();
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * sp..(row + 1) * sp];
                    for oh in 0..self.oh {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for ow in 0..self.ow {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            if iw >= 0 && iw < self.w as isize {
                                dst[iw as usize] += src[oh * self.ow + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `[N, C, H, W]` input with `[O, C, KH, KW]` kernels.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), kernels.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_c] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} for {} kernels", b.shape(), g.out_c),
            ));
        }
    }
    Ok(conv2d_forward(
        &g,
        input.data(),
        kernels.data(),
        bias.map(|b| b.data()),
    ))
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Tensor {
    let (k, sp) = (g.k(), g.spatial());
    let img_len = g.c * g.h * g.w;
    let mut cols = vec![0.0; k * sp];
    let mut out = vec![0.0; g.n * g.out_c * sp];
    for i in 0..g.n {
        g.im2col(&x[i * img_len..(i + 1) * img_len], &mut cols);
        let o = &mut out[i * g.out_c * sp..(i + 1) * g.out_c * sp];
        if let Some(b) = b {
            for (oc, chunk) in o.chunks_mut(sp).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[oc]);
            }
        }
        gemm(
            g.out_c,
            k,
            sp,
            w,
            false,
            &cols,
            false,
            if b.is_some() { 1.0 } else { 0.0 },
            o,
        );
    }
    Tensor::from_parts(vec![g.n, g.out_c, g.oh, g.ow], out)
}

/// Gradients of a convolution: `(d_input if requested, d_kernels, d_bias)`.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    grad: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (k, sp) = (g.k(), g.spatial());
    let img_len = g.c * g.h * g.w;
    let mut cols = vec![0.0; k * sp];
    let mut dcols = if need_input {
        vec![0.0; k * sp]
    } else {
        Vec::new()
    };
    let mut dx = if need_input {
        Some(vec![0.0; x.len()])
    } else {
        None
    };
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.out_c];
    for i in 0..g.n {
        let go = &grad[i * g.out_c * sp..(i + 1) * g.out_c * sp];
        g.im2col(&x[i * img_len..(i + 1) * img_len], &mut cols);
        gemm(g.out_c, sp, k, go, false, &cols, true, 1.0, &mut dw);
        for (oc, chunk) in go.chunks(sp).enumerate() {
            db[oc] += chunk.iter().sum::<f64>();
        }
        if let Some(dx) = dx.as_mut() {
            gemm(k, g.out_c, sp, w, true, go, false, 0.0, &mut dcols);
            g.col2im_add(&dcols, &mut dx[i * img_len..(i + 1) * img_len]);
        }
    }
    (dx, dw, db)
}

/// Max pooling over `[N, C, H, W]`; returns the pooled tensor and, for each
/// output element, the flat input index it was taken from (first maximum wins).
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 4 || window == 0 || stride == 0 {
        return Err(Error::shape(
            "maxpool2d",
            format!("input {s:?}, window {window}, stride {stride}"),
        ));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h < window || w < window {
        return Err(Error::shape(
            "maxpool2d",
            format!("non-positive output size for {h}×{w} input and window {window}"),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + i * stride * w + j * stride;
                for di in 0..window {
                    let row = base + (i * stride + di) * w + j * stride;
                    for (dj, &v) in x[row..row + window].iter().enumerate() {
                        if v > best {
                            best = v;
                            best_idx = row + dj;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), arg))
}

/// Checks that `perm` is a permutation of `0..rank`.
pub fn validate_perm(perm: &[usize], rank: usize) -> Result<()> {
    check_perm(perm, rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_contracts_to_vector() {
        let v = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let out = contract(&Tensor::eye(3), &v, &[(1, 0)]).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn single_expert_contraction_collapses() {
        let w = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let wa = contract(&w, &Tensor::vector(vec![1.0]), &[(0, 0)]).unwrap();
        let out = contract(&wa, &Tensor::vector(vec![5.0, 7.0]), &[(0, 0)]).unwrap();
        assert_eq!(out.data(), &[5.0, 7.0]);
    }

    #[test]
    fn outer_product_with_no_axes() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 4.0, 5.0]);
        let o = contract(&a, &b, &[]).unwrap();
        assert_eq!(o.shape(), &[2, 3]);
        assert_eq!(o.data(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn contraction_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4]);
        assert!(contract(&a, &b, &[(1, 0)]).is_err());
        assert!(contract(&a, &b, &[(5, 0)]).is_err());
    }

    #[test]
    fn softmax_with_negative_infinity() {
        let p = softmax_row(&[f64::NEG_INFINITY, 2.0, 3.0, 4.0]);
        assert_eq!(p[0], 0.0);
        assert_abs_diff_eq!(p[1], 0.0900, epsilon = 1e-4);
        assert_abs_diff_eq!(p[2], 0.2447, epsilon = 1e-4);
        assert_abs_diff_eq!(p[3], 0.6652, epsilon = 1e-4);
    }

    #[test]
    fn entmax_examples() {
        assert_eq!(entmax15_row(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(entmax15_row(&[10.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn softplus_and_guards() {
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(softplus(800.0), 800.0, epsilon = 1e-9);
        assert_eq!(l2_normalize_row(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(signed_sqrt(-4.0), -2.0);
        assert_eq!(signed_sqrt(0.0), 0.0);
    }

    #[test]
    fn conv_and_pool_basics() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 1, 1], 2.0);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));

        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        assert!(conv2d(
            &Tensor::zeros(&[1, 1, 2, 2]),
            &Tensor::zeros(&[1, 1, 3, 3]),
            None,
            1,
            0
        )
        .is_err());
    }

    #[test]
    fn conv_matches_direct_loop() {
        let x = Tensor::from_fn(&[2, 2, 5, 4], |i| ((i * 37) % 11) as f64 - 5.0);
        let w = Tensor::from_fn(&[3, 2, 3, 2], |i| ((i * 13) % 7) as f64 * 0.1 - 0.3);
        let b = Tensor::vector(vec![0.5, -1.0, 0.25]);
        let (stride, pad) = (2, 1);
        let y = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
        let (oh, ow) = (y.shape()[2], y.shape()[3]);
        for n in 0..2 {
            for o in 0..3 {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b.data()[o];
                        for c in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..2 {
                                    let ih = (i * stride + ki) as isize - pad as isize;
                                    let iw = (j * stride + kj) as isize - pad as isize;
                                    if (0..5).contains(&ih) && (0..4).contains(&iw) {
                                        acc += w.get(&[o, c, ki, kj])
                                            * x.get(&[n, c, ih as usize, iw as usize]);
                                    }
                                }
                            }
                        }
                        assert_abs_diff_eq!(y.get(&[n, o, i, j]), acc, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let a = Tensor::from_fn(&[3, 2, 4], |i| i as f64 * 0.5);
        let b = Tensor::from_fn(&[3, 4, 5], |i| 1.0 - i as f64 * 0.1);
        let c = bmm(&a, &b).unwrap();
        for t in 0..3 {
            for i in 0..2 {
                for j in 0..5 {
                    let s: f64 = (0..4).map(|k| a.get(&[t, i, k]) * b.get(&[t, k, j])).sum();
                    assert_abs_diff_eq!(c.get(&[t, i, j]), s, epsilon = 1e-12);
                }
            }
        }
    }
}
