//! Raw compute kernels on flat slices.
//!
//! Images are `[channels, height, width]` row-major. Convolution weights are
//! `[c_out, c_in, k, k]` with odd `k` and "same" zero padding of `k / 2`.

/// Shape bookkeeping for one same-padded convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    /// Row/column ranges of output pixels that read a valid input pixel
    /// at kernel offset `(ky, kx)`, and the input shift.
    #[inline]
    fn window(&self, ky: usize, kx: usize) -> (usize, usize, usize, usize, isize, isize) {
        let dy = ky as isize - self.pad();
        let dx = kx as isize - self.pad();
        let (h, w) = (self.h as isize, self.w as isize);
        let y0 = (-dy).max(0) as usize;
        let y1 = (h - dy).min(h).max(0) as usize;
        let x0 = (-dx).max(0) as usize;
        let x1 = (w - dx).min(w).max(0) as usize;
        (y0, y1, x0, x1, dy, dx)
    }
}

/// Unfolds `x [c_in, h, w]` into patch rows `[c_in * k * k, h * w]`, with
/// zeros where the kernel overhangs the border.
fn im2col(x: &[f64], g: ConvGeom) -> Vec<f64> {
    let hw = g.h * g.w;
    let mut cols = vec![0.0; g.c_in * g.k * g.k * hw];
    for c in 0..g.c_in {
        let x_c = &x[c * hw..(c + 1) * hw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (y0, y1, x0, x1, dy, dx) = g.window(ky, kx);
                for yy in y0..y1 {
                    let iy = (yy as isize + dy) as usize;
                    let ix0 = (x0 as isize + dx) as usize;
                    dst[yy * g.w + x0..yy * g.w + x1]
                        .copy_from_slice(&x_c[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`]: accumulates patch rows back into an image.
fn col2im(cols: &[f64], g: ConvGeom) -> Vec<f64> {
    let hw = g.h * g.w;
    let mut x = vec![0.0; g.c_in * hw];
    for c in 0..g.c_in {
        let x_c = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (y0, y1, x0, x1, dy, dx) = g.window(ky, kx);
                for yy in y0..y1 {
                    let iy = (yy as isize + dy) as usize;
                    let ix0 = (x0 as isize + dx) as usize;
                    let xrow = &mut x_c[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)];
                    for (xv, sv) in xrow.iter_mut().zip(&src[yy * g.w + x0..yy * g.w + x1]) {
                        *xv += sv;
                    }
                }
            }
        }
    }
    x
}

const MR: usize = 4;
const NR: usize = 8;

/// `out[i, :] += sum_l a(i, l) * b[l, :]` where `a(i, l) = a[i * rs + l * cs]`,
/// `b` is `[kd, n]` row-major and `out` is `[m, n]`. Register-blocked so
/// each loaded `b` value feeds `MR` rows; the summation order over `l` is
/// fixed, so results do not depend on the blocking or on the SIMD width
/// (no fused multiply-add is enabled).
fn gemm(m: usize, n: usize, kd: usize, a: &[f64], rs: usize, cs: usize, b: &[f64], out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: guarded by the runtime feature check above.
            unsafe { gemm_avx2(m, n, kd, a, rs, cs, b, out) };
            return;
        }
    }
    gemm_generic(m, n, kd, a, rs, cs, b, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(m: usize, n: usize, kd: usize, a: &[f64], rs: usize, cs: usize, b: &[f64], out: &mut [f64]) {
    gemm_generic(m, n, kd, a, rs, cs, b, out)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_generic(m: usize, n: usize, kd: usize, a: &[f64], rs: usize, cs: usize, b: &[f64], out: &mut [f64]) {
    let mut i = 0;
    while i < m {
        let mr = MR.min(m - i);
        let mut j = 0;
        while j < n {
            let nr = NR.min(n - j);
            if mr == MR && nr == NR {
                let mut acc = [[0.0f64; NR]; MR];
                for (r, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + NR]);
                }
                for l in 0..kd {
                    let bv: &[f64; NR] = b[l * n + j..l * n + j + NR].try_into().unwrap();
                    for (r, row) in acc.iter_mut().enumerate() {
                        let av = a[(i + r) * rs + l * cs];
                        for q in 0..NR {
                            row[q] += av * bv[q];
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    out[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
                }
            } else {
                for r in 0..mr {
                    for q in 0..nr {
                        let mut s = out[(i + r) * n + j + q];
                        for l in 0..kd {
                            s += a[(i + r) * rs + l * cs] * b[l * n + j + q];
                        }
                        out[(i + r) * n + j + q] = s;
                    }
                }
            }
            j += nr;
        }
        i += mr;
    }
}

/// `out[o] = bias[o] + sum_c w[o, c] * x[c]` (cross-correlation).
pub fn conv2d(x: &[f64], wt: &[f64], bias: Option<&[f64]>, g: ConvGeom) -> Vec<f64> {
    let hw = g.h * g.w;
    let kd = g.c_in * g.k * g.k;
    let mut out = vec![0.0; g.c_out * hw];
    if let Some(b) = bias {
        for (o, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b[o]);
        }
    }
    if g.k == 1 {
        gemm(g.c_out, hw, kd, wt, kd, 1, x, &mut out);
    } else {
        let cols = im2col(x, g);
        gemm(g.c_out, hw, kd, wt, kd, 1, &cols, &mut out);
    }
    out
}

/// Adjoint of [`conv2d`] with respect to its input (no bias).
pub fn conv2d_t(y: &[f64], wt: &[f64], g: ConvGeom) -> Vec<f64> {
    let hw = g.h * g.w;
    let kd = g.c_in * g.k * g.k;
    let mut cols = vec![0.0; kd * hw];
    gemm(kd, hw, g.c_out, wt, 1, kd, y, &mut cols);
    if g.k == 1 {
        cols
    } else {
        col2im(&cols, g)
    }
}

/// Weight gradient: `dw[o, c, ky, kx] = sum_p dy[o, p] * x[c, p + off]`.
pub fn conv2d_weight_grad(x: &[f64], dy: &[f64], g: ConvGeom) -> Vec<f64> {
    let hw = g.h * g.w;
    let kd = g.c_in * g.k * g.k;
    let owned;
    let cols: &[f64] = if g.k == 1 {
        x
    } else {
        owned = im2col(x, g);
        &owned
    };
    // Patch matrix transposed to [hw, kd] so the product streams rows.
    let mut cols_t = vec![0.0; hw * kd];
    for q in 0..kd {
        for p in 0..hw {
            cols_t[p * kd + q] = cols[q * hw + p];
        }
    }
    let mut dw = vec![0.0; g.c_out * kd];
    gemm(g.c_out, kd, hw, dy, hw, 1, &cols_t, &mut dw);
    dw
}

/// Per-channel sum, the bias gradient of [`conv2d`].
pub fn channel_sums(dy: &[f64], channels: usize) -> Vec<f64> {
    let hw = dy.len() / channels;
    (0..channels)
        .map(|o| dy[o * hw..(o + 1) * hw].iter().sum())
        .collect()
}

/// One output tap pair of a 1-D linear resampler.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

/// Half-pixel-center linear taps mapping `n_in` samples to `n_out`,
/// clamped at the edges.
fn taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let lam = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - lam,
                w1: lam,
            }
        })
        .collect()
}

/// Bilinear resize of `[c, h_in, w_in]` to `[c, h_out, w_out]`.
pub fn resize(x: &[f64], c: usize, h_in: usize, w_in: usize, h_out: usize, w_out: usize) -> Vec<f64> {
    let ty = taps(h_in, h_out);
    let tx = taps(w_in, w_out);
    let mut out = vec![0.0; c * h_out * w_out];
    for ch in 0..c {
        let src = &x[ch * h_in * w_in..(ch + 1) * h_in * w_in];
        let dst = &mut out[ch * h_out * w_out..(ch + 1) * h_out * w_out];
        for (oy, ay) in ty.iter().enumerate() {
            let r0 = &src[ay.i0 * w_in..(ay.i0 + 1) * w_in];
            let r1 = &src[ay.i1 * w_in..(ay.i1 + 1) * w_in];
            for (ox, ax) in tx.iter().enumerate() {
                let top = ax.w0 * r0[ax.i0] + ax.w1 * r0[ax.i1];
                let bot = ax.w0 * r1[ax.i0] + ax.w1 * r1[ax.i1];
                dst[oy * w_out + ox] = ay.w0 * top + ay.w1 * bot;
            }
        }
    }
    out
}

/// Adjoint of [`resize`]: scatters `[c, h_out, w_out]` back to `[c, h_in, w_in]`.
pub fn resize_t(y: &[f64], c: usize, h_in: usize, w_in: usize, h_out: usize, w_out: usize) -> Vec<f64> {
    let ty = taps(h_in, h_out);
    let tx = taps(w_in, w_out);
    let mut out = vec![0.0; c * h_in * w_in];
    for ch in 0..c {
        let src = &y[ch * h_out * w_out..(ch + 1) * h_out * w_out];
        let dst = &mut out[ch * h_in * w_in..(ch + 1) * h_in * w_in];
        for (oy, ay) in ty.iter().enumerate() {
            for (ox, ax) in tx.iter().enumerate() {
                let g = src[oy * w_out + ox];
                let gt = ay.w0 * g;
                let gb = ay.w1 * g;
                dst[ay.i0 * w_in + ax.i0] += ax.w0 * gt;
                dst[ay.i0 * w_in + ax.i1] += ax.w1 * gt;
                dst[ay.i1 * w_in + ax.i0] += ax.w0 * gb;
                dst[ay.i1 * w_in + ax.i1] += ax.w1 * gb;
            }
        }
    }
    out
}

/// `w [m, n] · x [n]`.
pub fn matvec(w: &[f64], x: &[f64], m: usize, n: usize) -> Vec<f64> {
    (0..m)
        .map(|i| w[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `w [m, n]ᵀ · y [m]`.
pub fn matvec_t(w: &[f64], y: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..m {
        let yi = y[i];
        for (o, wv) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += yi * wv;
        }
    }
    out
}

/// Outer product `y [m] ⊗ x [n]`, the weight gradient of [`matvec`].
pub fn outer(y: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len() * x.len());
    for &a in y {
        out.extend(x.iter().map(|&b| a * b));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], wt: &[f64], g: ConvGeom) -> Vec<f64> {
        let p = (g.k / 2) as isize;
        let mut out = vec![0.0; g.c_out * g.h * g.w];
        for o in 0..g.c_out {
            for yy in 0..g.h as isize {
                for xx in 0..g.w as isize {
                    let mut acc = 0.0;
                    for c in 0..g.c_in {
                        for ky in 0..g.k as isize {
                            for kx in 0..g.k as isize {
                                let iy = yy + ky - p;
                                let ix = xx + kx - p;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += wt[((o * g.c_in + c) * g.k + ky as usize) * g.k + kx as usize]
                                    * x[(c * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(o * g.h + yy as usize) * g.w + xx as usize] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_loop() {
        let g = ConvGeom { c_in: 3, c_out: 2, k: 3, h: 5, w: 4 };
        let x = pseudo(3 * 20, 1);
        let w = pseudo(2 * 3 * 9, 2);
        let fast = conv2d(&x, &w, None, g);
        let slow = naive_conv(&x, &w, g);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn conv_adjoints_are_consistent() {
        let g = ConvGeom { c_in: 2, c_out: 3, k: 3, h: 4, w: 6 };
        let x = pseudo(2 * 24, 3);
        let w = pseudo(3 * 2 * 9, 4);
        let dy = pseudo(3 * 24, 5);
        let y = conv2d(&x, &w, None, g);
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let xt = conv2d_t(&dy, &w, g);
        let rhs: f64 = xt.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        let dw = conv2d_weight_grad(&x, &dy, g);
        let rhs_w: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn resize_adjoint() {
        for &(hi, ho) in &[(8usize, 4usize), (4, 8)] {
            let x = pseudo(2 * hi * hi, 7);
            let dy = pseudo(2 * ho * ho, 8);
            let y = resize(&x, 2, hi, hi, ho, ho);
            let xt = resize_t(&dy, 2, hi, hi, ho, ho);
            let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let rhs: f64 = xt.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-13);
        }
    }
}
