//! Raw numeric kernels behind the tape operations.
//!
//! Everything here works on flat `f64` slices plus explicit dimensions, so the
//! same code serves forward evaluation and the hand-derived backward rules in
//! `tape`. Layout is row-major throughout; images are `(H, W, C)` with the
//! channel index fastest.

/// Regularizer added under every square root so norms stay differentiable at
/// the origin.
pub const NORM_EPS: f64 = 1e-9;

// ── matrix products ──────────────────────────────────────────────────

/// `out (m×n) = a (m×k) · b (k×n)`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (l, &av) in a_row.iter().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out (m×n) = a (m×k) · b (n×k)ᵀ` — row-by-row dot products.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `out (k×n) = a (m×k)ᵀ · b (m×n)`
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (l, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

// ── convolution ──────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaddingKind {
    /// Zero-pad so that stride 1 preserves the spatial size.
    Same,
    /// No padding; the kernel must fit inside the input.
    Valid,
}

/// Resolved convolution geometry for one (possibly batched) input.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    /// Output positions per batch element.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn same_padding(extent: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = extent.div_ceil(stride);
    let needed = ((out - 1) * stride + kernel).saturating_sub(extent);
    (out, needed / 2)
}

/// Computes output extents and padding offsets, or `None` when a valid-padding
/// kernel does not fit.
#[allow(clippy::too_many_arguments)]
pub fn conv_geometry(
    batch: usize,
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: PaddingKind,
) -> Option<ConvGeom> {
    let (out_h, pad_top, out_w, pad_left) = match padding {
        PaddingKind::Same => {
            let (oh, pt) = same_padding(h, kh, stride);
            let (ow, pl) = same_padding(w, kw, stride);
            (oh, pt, ow, pl)
        }
        PaddingKind::Valid => {
            if h < kh || w < kw {
                return None;
            }
            ((h - kh) / stride + 1, 0, (w - kw) / stride + 1, 0)
        }
    };
    Some(ConvGeom {
        batch,
        h,
        w,
        c_in,
        c_out,
        kh,
        kw,
        stride,
        pad_top,
        pad_left,
        out_h,
        out_w,
    })
}

/// Unrolls every kernel window into a row of the returned matrix, one row per
/// output position, batch-major. Padded positions contribute zeros. Column
/// order is `(ky, kx, c)` — the same flattening as a `(c_out, kh, kw, c_in)`
/// kernel tensor, so the convolution is a single `matmul_nt` against it.
pub fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.patch_len();
    let mut cols = vec![0.0; g.batch * g.positions() * patch];
    let plane = g.h * g.w * g.c_in;
    for b in 0..g.batch {
        let img = &input[b * plane..(b + 1) * plane];
        let base = b * g.positions();
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = &mut cols[(base + oy * g.out_w + ox) * patch..][..patch];
                for ky in 0..g.kh {
                    let y = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let x = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if x < 0 || x >= g.w as isize {
                            continue;
                        }
                        let src = (y as usize * g.w + x as usize) * g.c_in;
                        let dst = (ky * g.kw + kx) * g.c_in;
                        row[dst..dst + g.c_in].copy_from_slice(&img[src..src + g.c_in]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back onto the input.
pub fn col2im_accumulate(d_cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.patch_len();
    let plane = g.h * g.w * g.c_in;
    let mut d_input = vec![0.0; g.batch * plane];
    for b in 0..g.batch {
        let img = &mut d_input[b * plane..(b + 1) * plane];
        let base = b * g.positions();
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = &d_cols[(base + oy * g.out_w + ox) * patch..][..patch];
                for ky in 0..g.kh {
                    let y = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let x = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if x < 0 || x >= g.w as isize {
                            continue;
                        }
                        let dst = (y as usize * g.w + x as usize) * g.c_in;
                        let src = (ky * g.kw + kx) * g.c_in;
                        for c in 0..g.c_in {
                            img[dst + c] += row[src + c];
                        }
                    }
                }
            }
        }
    }
    d_input
}

/// Adds `bias[c]` to every output position of channel `c`, in place.
pub fn add_channel_bias(out: &mut [f64], bias: &[f64]) {
    let c = bias.len();
    for row in out.chunks_exact_mut(c) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Per-channel sums of an `(rows, c)` gradient — the bias gradient.
pub fn channel_sums(d_out: &[f64], c: usize) -> Vec<f64> {
    let mut sums = vec![0.0; c];
    for row in d_out.chunks_exact(c) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

// ── max pooling ──────────────────────────────────────────────────────

/// 2×2 stride-2 max pool over an `(H, W, C)` image (batch-major when
/// `batch > 1`). Returns the pooled buffer and, per output element, the flat
/// input index of its maximum. Ties pick the first candidate in row-major
/// scan order, which pins the backward routing.
pub fn maxpool2x2(input: &[f64], batch: usize, h: usize, w: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
    let oh = h / 2;
    let ow = w / 2;
    let plane = h * w * c;
    let mut out = vec![0.0; batch * oh * ow * c];
    let mut argmax = vec![0usize; out.len()];
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = b * plane + ((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch;
                            let v = input[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((b * oh + oy) * ow + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

// ── row-wise nonlinearities ──────────────────────────────────────────

/// Numerically stable softmax over each length-`cols` row.
pub fn softmax_rows(input: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for (row, orow) in input.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// VJP of [`softmax_rows`]: `d_in = y ⊙ (d_out − ⟨d_out, y⟩)` per row.
pub fn softmax_rows_backward(output: &[f64], d_out: &[f64], cols: usize) -> Vec<f64> {
    let mut d_in = vec![0.0; output.len()];
    for ((yrow, drow), irow) in output
        .chunks_exact(cols)
        .zip(d_out.chunks_exact(cols))
        .zip(d_in.chunks_exact_mut(cols))
    {
        let dot: f64 = yrow.iter().zip(drow).map(|(&y, &d)| y * d).sum();
        for ((i, &y), &d) in irow.iter_mut().zip(yrow).zip(drow) {
            *i = y * (d - dot);
        }
    }
    d_in
}

/// Norm-bounding nonlinearity applied to each length-`cols` row:
/// `v = s · n / (1 + n²)` with `n = √(Σ s² + ε)`. Output norms are strictly
/// below 1 and the zero row maps to the zero row.
pub fn squash_rows(input: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for (row, orow) in input.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let n2: f64 = row.iter().map(|&v| v * v).sum::<f64>() + NORM_EPS;
        let scale = n2.sqrt() / (1.0 + n2);
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = v * scale;
        }
    }
    out
}

/// VJP of [`squash_rows`].
///
/// With `g(n) = n / (1 + n²)`:
/// `d_s = g·d  +  s ⟨s, d⟩ (1 − n²) / (n (1 + n²)²)`.
pub fn squash_rows_backward(input: &[f64], d_out: &[f64], cols: usize) -> Vec<f64> {
    let mut d_in = vec![0.0; input.len()];
    for ((srow, drow), irow) in input
        .chunks_exact(cols)
        .zip(d_out.chunks_exact(cols))
        .zip(d_in.chunks_exact_mut(cols))
    {
        let n2: f64 = srow.iter().map(|&v| v * v).sum::<f64>() + NORM_EPS;
        let n = n2.sqrt();
        let g = n / (1.0 + n2);
        let dot: f64 = srow.iter().zip(drow).map(|(&s, &d)| s * d).sum();
        let coeff = dot * (1.0 - n2) / (n * (1.0 + n2) * (1.0 + n2));
        for ((i, &s), &d) in irow.iter_mut().zip(srow).zip(drow) {
            *i = g * d + s * coeff;
        }
    }
    d_in
}

/// Euclidean norm of each length-`cols` row, ε-regularized under the root.
pub fn row_norms(input: &[f64], cols: usize) -> Vec<f64> {
    input
        .chunks_exact(cols)
        .map(|row| (row.iter().map(|&v| v * v).sum::<f64>() + NORM_EPS).sqrt())
        .collect()
}

/// VJP of [`row_norms`]: `d_v = d_len · v / len`.
pub fn row_norms_backward(input: &[f64], norms: &[f64], d_out: &[f64], cols: usize) -> Vec<f64> {
    let mut d_in = vec![0.0; input.len()];
    for ((row, irow), (&norm, &d)) in input
        .chunks_exact(cols)
        .zip(d_in.chunks_exact_mut(cols))
        .zip(norms.iter().zip(d_out))
    {
        let scale = d / norm;
        for (i, &v) in irow.iter_mut().zip(row) {
            *i = v * scale;
        }
    }
    d_in
}

// ── capsule contractions ─────────────────────────────────────────────
//
// Index convention: `i` over input capsules, `j` over output capsules,
// `d` over the input capsule dimension, `e` over the output dimension.

/// Per-pair prediction vectors: `û[i,j,:] = u[i,:] · w[i,j,:,:]`.
///
/// `u` is `(I, D)`, `w` is `(I, J, D, E)`, result is `(I, J, E)`.
pub fn caps_predict(u: &[f64], w: &[f64], num_in: usize, num_out: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; num_in * num_out * d_out];
    for i in 0..num_in {
        let u_row = &u[i * d_in..(i + 1) * d_in];
        for j in 0..num_out {
            let w_block = &w[((i * num_out) + j) * d_in * d_out..][..d_in * d_out];
            let o_row = &mut out[(i * num_out + j) * d_out..][..d_out];
            for (d, &uv) in u_row.iter().enumerate() {
                let w_row = &w_block[d * d_out..(d + 1) * d_out];
                for (o, &wv) in o_row.iter_mut().zip(w_row) {
                    *o += uv * wv;
                }
            }
        }
    }
    out
}

/// Backward of [`caps_predict`]; returns `(d_u, d_w)`.
pub fn caps_predict_backward(
    u: &[f64],
    w: &[f64],
    d_out_grad: &[f64],
    num_in: usize,
    num_out: usize,
    d_in: usize,
    d_out: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_u = vec![0.0; u.len()];
    let mut d_w = vec![0.0; w.len()];
    for i in 0..num_in {
        let u_row = &u[i * d_in..(i + 1) * d_in];
        let du_row = &mut d_u[i * d_in..(i + 1) * d_in];
        for j in 0..num_out {
            let pair = i * num_out + j;
            let g_row = &d_out_grad[pair * d_out..][..d_out];
            let w_block = &w[pair * d_in * d_out..][..d_in * d_out];
            let dw_block = &mut d_w[pair * d_in * d_out..][..d_in * d_out];
            for d in 0..d_in {
                let w_row = &w_block[d * d_out..(d + 1) * d_out];
                let dw_row = &mut dw_block[d * d_out..(d + 1) * d_out];
                let uv = u_row[d];
                let mut acc = 0.0;
                for ((&g, &wv), dw) in g_row.iter().zip(w_row).zip(dw_row.iter_mut()) {
                    acc += g * wv;
                    *dw += uv * g;
                }
                du_row[d] += acc;
            }
        }
    }
    (d_u, d_w)
}

/// Coefficient-weighted sum of predictions: `s[j,:] = Σ_i c[i,j] û[i,j,:]`.
pub fn caps_weighted_sum(c: &[f64], u_hat: &[f64], num_in: usize, num_out: usize, dim: usize) -> Vec<f64> {
    let mut s = vec![0.0; num_out * dim];
    for i in 0..num_in {
        for j in 0..num_out {
            let coeff = c[i * num_out + j];
            let u_row = &u_hat[(i * num_out + j) * dim..][..dim];
            let s_row = &mut s[j * dim..(j + 1) * dim];
            for (sv, &uv) in s_row.iter_mut().zip(u_row) {
                *sv += coeff * uv;
            }
        }
    }
    s
}

/// Backward of [`caps_weighted_sum`]; returns `(d_c, d_u_hat)`.
pub fn caps_weighted_sum_backward(
    c: &[f64],
    u_hat: &[f64],
    d_s: &[f64],
    num_in: usize,
    num_out: usize,
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_c = vec![0.0; c.len()];
    let mut d_u = vec![0.0; u_hat.len()];
    for i in 0..num_in {
        for j in 0..num_out {
            let pair = i * num_out + j;
            let u_row = &u_hat[pair * dim..][..dim];
            let du_row = &mut d_u[pair * dim..][..dim];
            let ds_row = &d_s[j * dim..(j + 1) * dim];
            let coeff = c[pair];
            let mut acc = 0.0;
            for ((&ds, &uv), du) in ds_row.iter().zip(u_row).zip(du_row.iter_mut()) {
                acc += ds * uv;
                *du += coeff * ds;
            }
            d_c[pair] = acc;
        }
    }
    (d_c, d_u)
}

/// Agreement logits: `a[i,j] = ⟨û[i,j,:], v[j,:]⟩`.
pub fn caps_agreement(u_hat: &[f64], v: &[f64], num_in: usize, num_out: usize, dim: usize) -> Vec<f64> {
    let mut a = vec![0.0; num_in * num_out];
    for i in 0..num_in {
        for j in 0..num_out {
            let u_row = &u_hat[(i * num_out + j) * dim..][..dim];
            let v_row = &v[j * dim..(j + 1) * dim];
            a[i * num_out + j] = u_row.iter().zip(v_row).map(|(&u, &w)| u * w).sum();
        }
    }
    a
}

/// Backward of [`caps_agreement`]; returns `(d_u_hat, d_v)`.
pub fn caps_agreement_backward(
    u_hat: &[f64],
    v: &[f64],
    d_a: &[f64],
    num_in: usize,
    num_out: usize,
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_u = vec![0.0; u_hat.len()];
    let mut d_v = vec![0.0; v.len()];
    for i in 0..num_in {
        for j in 0..num_out {
            let pair = i * num_out + j;
            let g = d_a[pair];
            let u_row = &u_hat[pair * dim..][..dim];
            let du_row = &mut d_u[pair * dim..][..dim];
            let v_row = &v[j * dim..(j + 1) * dim];
            let dv_row = &mut d_v[j * dim..(j + 1) * dim];
            for (((du, &uv), &vv), dv) in du_row.iter_mut().zip(u_row).zip(v_row).zip(dv_row.iter_mut()) {
                *du += g * vv;
                *dv += g * uv;
            }
        }
    }
    (d_u, d_v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let m = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(matmul(&eye, &m, 2, 2, 2), m);
    }

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3×4
        let plain = matmul(&a, &b, 2, 3, 4);

        // b transposed to 4×3, then matmul_nt must reproduce plain.
        let mut b_t = vec![0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                b_t[c * 3 + r] = b[r * 4 + c];
            }
        }
        assert_eq!(matmul_nt(&a, &b_t, 2, 3, 4), plain);

        // a transposed to 3×2, then matmul_tn must reproduce plain.
        let mut a_t = vec![0.0; 6];
        for r in 0..2 {
            for c in 0..3 {
                a_t[c * 2 + r] = a[r * 3 + c];
            }
        }
        assert_eq!(matmul_tn(&a_t, &b, 3, 2, 4), plain);
    }

    #[test]
    fn same_padding_keeps_extent_at_stride_one() {
        let g = conv_geometry(1, 10, 20, 1, 4, 3, 3, 1, PaddingKind::Same).unwrap();
        assert_eq!((g.out_h, g.out_w), (10, 20));
        assert_eq!((g.pad_top, g.pad_left), (1, 1));
    }

    #[test]
    fn valid_padding_requires_fit() {
        assert!(conv_geometry(1, 2, 2, 1, 1, 3, 3, 1, PaddingKind::Valid).is_none());
        let g = conv_geometry(1, 5, 4, 1, 1, 3, 3, 1, PaddingKind::Valid).unwrap();
        assert_eq!((g.out_h, g.out_w), (3, 2));
    }

    #[test]
    fn maxpool_takes_max_and_first_argmax_on_ties() {
        // 2×2 single-channel image with a tie.
        let (out, arg) = maxpool2x2(&[5.0, 5.0, 1.0, 2.0], 1, 2, 2, 1);
        assert_eq!(out, vec![5.0]);
        assert_eq!(arg, vec![0]); // first in row-major order wins
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let out = softmax_rows(&[0.0, 0.0, 0.0, 2.0, 3.0, 4.0], 3);
        for row in out.chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // softmax of zeros is uniform
        assert!((out[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn squash_zero_row_stays_zero() {
        let out = squash_rows(&[0.0, 0.0, 0.0], 3);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn squash_norms() {
        // ‖s‖ = 1 → ‖v‖ = 1/2 ; ‖s‖ = 3 → ‖v‖ = 9/10, direction preserved.
        let out = squash_rows(&[1.0, 0.0], 2);
        assert!((out[0] - 0.5).abs() < 1e-8, "got {}", out[0]);
        let out = squash_rows(&[0.0, 3.0], 2);
        assert!((out[1] - 0.9).abs() < 1e-8);
        assert!(out[0].abs() < 1e-12);
    }
}
