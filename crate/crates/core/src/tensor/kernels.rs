//! Dense row-major kernels. Every reduction runs in a fixed order so results
//! are bit-reproducible.

use super::Float;

/// Column tile width: a 4-row accumulator tile stays in L1 while the
/// streamed rows of `b` come from L2. Tiling never reorders a sum.
const NB: usize = 256;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[Float], b: &[Float], c: &mut [Float]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + NB).min(n);
        let mut i = 0;
        // Four output rows share each streamed row of `b`.
        while i + 4 <= m {
            let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, c3) = rest.split_at_mut(n);
            let (c0, c1, c2, c3) = (&mut c0[j0..j1], &mut c1[j0..j1], &mut c2[j0..j1], &mut c3[j0..j1]);
            for p in 0..k {
                let a0 = a[i * k + p];
                let a1 = a[(i + 1) * k + p];
                let a2 = a[(i + 2) * k + p];
                let a3 = a[(i + 3) * k + p];
                let brow = &b[p * n + j0..p * n + j1];
                for j in 0..brow.len() {
                    let bv = brow[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
            i += 4;
        }
        while i < m {
            let crow = &mut c[i * n + j0..i * n + j1];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                axpy(av, &b[p * n + j0..p * n + j1], crow);
            }
            i += 1;
        }
        j0 = j1;
    }
}

/// `c[m×n] += a[m×k] · bᵀ` where `b` is stored `[n×k]`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[Float], b: &[Float], c: &mut [Float]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    // Four rows of `a` against one streamed row of `b`; each entry is still
    // exactly `dot(a_i, b_j)`.
    while i + 4 <= m {
        let rows = [&a[i * k..(i + 1) * k], &a[(i + 1) * k..(i + 2) * k], &a[(i + 2) * k..(i + 3) * k], &a[(i + 3) * k..(i + 4) * k]];
        for j in 0..n {
            let d = dot4(rows, &b[j * k..(j + 1) * k]);
            for (r, v) in d.into_iter().enumerate() {
                c[(i + r) * n + j] += v;
            }
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            crow[j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
        i += 1;
    }
}

/// `c[m×n] += aᵀ · b` where `a` is stored `[k×m]` and `b` is `[k×n]`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[Float], b: &[Float], c: &mut [Float]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + NB).min(n);
        for p in 0..k {
            let brow = &b[p * n + j0..p * n + j1];
            let arow = &a[p * m..(p + 1) * m];
            for i in 0..m {
                let av = arow[i];
                if av == 0.0 {
                    continue;
                }
                axpy(av, brow, &mut c[i * n + j0..i * n + j1]);
            }
        }
        j0 = j1;
    }
}

/// `y[m] += a[m×n] · x[n]`
pub fn gemv(m: usize, n: usize, a: &[Float], x: &[Float], y: &mut [Float]) {
    for i in 0..m {
        y[i] += dot(&a[i * n..(i + 1) * n], x);
    }
}

/// `y[n] += aᵀ · x` where `a` is `[m×n]` and `x` is `[m]`.
pub fn gemv_t(m: usize, n: usize, a: &[Float], x: &[Float], y: &mut [Float]) {
    for i in 0..m {
        let xv = x[i];
        if xv == 0.0 {
            continue;
        }
        axpy(xv, &a[i * n..(i + 1) * n], y);
    }
}

/// `a[m×n] += x[m] ⊗ y[n]`
pub fn ger(m: usize, n: usize, x: &[Float], y: &[Float], a: &mut [Float]) {
    for i in 0..m {
        let xv = x[i];
        if xv == 0.0 {
            continue;
        }
        axpy(xv, y, &mut a[i * n..(i + 1) * n]);
    }
}

#[inline]
pub fn axpy(alpha: Float, x: &[Float], y: &mut [Float]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Dot product with eight independent accumulators combined in a fixed tree.
#[inline]
pub fn dot(a: &[Float], b: &[Float]) -> Float {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0 as Float; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Four [`dot`]s sharing one operand, each bit-identical to the single
/// version.
#[inline]
fn dot4(a: [&[Float]; 4], b: &[Float]) -> [Float; 4] {
    let mut acc = [[0.0 as Float; 8]; 4];
    let full = b.len() / 8 * 8;
    for c in (0..full).step_by(8) {
        let y = &b[c..c + 8];
        for r in 0..4 {
            let x = &a[r][c..c + 8];
            for l in 0..8 {
                acc[r][l] += x[l] * y[l];
            }
        }
    }
    let mut out = [0.0; 4];
    for r in 0..4 {
        let mut tail = 0.0;
        for (x, y) in a[r][full..].iter().zip(&b[full..]) {
            tail += x * y;
        }
        let a = &acc[r];
        out[r] = ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7])) + tail;
    }
    out
}

/// Unfold a `[c×h×w]` image into `[c·kh·kw × oh·ow]` patch columns.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[Float],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
) -> Vec<Float> {
    let cols_n = oh * ow;
    let mut cols = vec![0.0; c * kh * kw * cols_n];
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        // contiguous run of valid ox
                        let lo = pw.saturating_sub(kj);
                        let hi = (w + pw).saturating_sub(kj).min(ow);
                        if lo < hi {
                            let s0 = lo + kj - pw;
                            drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - pw as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into an image.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add(
    cols: &[Float],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
    out: &mut [Float],
) {
    let cols_n = oh * ow;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        let lo = pw.saturating_sub(kj);
                        let hi = (w + pw).saturating_sub(kj).min(ow);
                        if lo < hi {
                            let d0 = lo + kj - pw;
                            for (d, s) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                                *d += s;
                            }
                        }
                    } else {
                        for (ox, s) in srow.iter().enumerate() {
                            let ix = (ox * stride + kj) as isize - pw as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mm(m: usize, k: usize, n: usize, a: &[Float], b: &[Float]) -> Vec<Float> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[Float]) -> Vec<Float> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, k, n) = (7, 13, 300);
        let a: Vec<Float> = (0..m * k).map(|i| ((i * 37 % 11) as Float) - 5.0).collect();
        let b: Vec<Float> = (0..k * n).map(|i| ((i * 17 % 7) as Float) * 0.5 - 1.0).collect();
        let want = naive_mm(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        assert_eq!(c, want);

        let bt = transpose(k, n, &b);
        let mut c = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-9);
        }

        let at = transpose(m, k, &a);
        let mut c = vec![0.0; m * n];
        gemm_tn(m, k, n, &at, &b, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dot4_matches_dot_bitwise() {
        for len in [0, 3, 8, 19, 64, 101] {
            let rows: Vec<Vec<Float>> = (0..4).map(|r| (0..len).map(|i| ((i * 7 + r * 3) as Float * 0.713).sin()).collect()).collect();
            let b: Vec<Float> = (0..len).map(|i| (i as Float * 1.37).cos()).collect();
            let got = dot4([&rows[0], &rows[1], &rows[2], &rows[3]], &b);
            for r in 0..4 {
                assert_eq!(got[r].to_bits(), dot(&rows[r], &b).to_bits());
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w, kh, kw, s, ph, pw) = (2, 5, 6, 3, 2, 2, 1, 1);
        let oh = (h + 2 * ph - kh) / s + 1;
        let ow = (w + 2 * pw - kw) / s + 1;
        let x: Vec<Float> = (0..c * h * w).map(|i| (i as Float * 0.37).sin()).collect();
        let cols = im2col(&x, c, h, w, kh, kw, s, ph, pw, oh, ow);
        let y: Vec<Float> = (0..cols.len()).map(|i| (i as Float * 0.11).cos()).collect();
        let lhs: Float = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, c, h, w, kh, kw, s, ph, pw, oh, ow, &mut back);
        let rhs: Float = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
