//! Fixed-order dense kernels on flat row-major slices. Every reduction runs in
//! the same order on every call so results are bit-reproducible.

use crate::scalar::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] += A · b[k×n]` where `a(i, p)` reads `A[i][p]`. Register tiles of
/// `MR × NR` sum their `k` terms in ascending `p` before touching `c`.
#[inline(always)]
fn gemm_rows<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: impl Fn(usize, usize) -> S,
    b: &[S],
    c: &mut [S],
) {
    assert!(b.len() >= k * n && c.len() >= m * n);
    let blocks = m.div_ceil(MR);
    // A packed as [block][p][r], zero rows past m.
    let mut packed = vec![S::zero(); blocks * k * MR];
    for blk in 0..blocks {
        for p in 0..k {
            for r in 0..MR {
                let i = blk * MR + r;
                if i < m {
                    packed[(blk * k + p) * MR + r] = a(i, p);
                }
            }
        }
    }
    // One column strip of b packed as [p][NR], zero past n.
    let mut strip = vec![S::zero(); k * NR];
    let mut j = 0;
    while j < n {
        let width = (n - j).min(NR);
        for (p, dst) in strip.chunks_exact_mut(NR).enumerate() {
            dst[..width].copy_from_slice(&b[p * n + j..p * n + j + width]);
        }
        for blk in 0..blocks {
            let panel = &packed[blk * k * MR..(blk + 1) * k * MR];
            let mut acc = [[S::zero(); NR]; MR];
            for (ap, bv) in panel.chunks_exact(MR).zip(strip.chunks_exact(NR)) {
                let ap: &[S; MR] = ap.try_into().unwrap();
                let bv: &[S; NR] = bv.try_into().unwrap();
                for r in 0..MR {
                    let av = ap[r];
                    for l in 0..NR {
                        acc[r][l] += av * bv[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let i = blk * MR + r;
                if i < m {
                    for (out, v) in c[i * n + j..i * n + j + width].iter_mut().zip(row) {
                        *out += *v;
                    }
                }
            }
        }
        j += width;
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`.
pub(crate) fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    assert!(a.len() >= m * k);
    gemm_rows(m, k, n, |i, p| a[i * k + p], b, c);
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`.
pub(crate) fn gemm_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    assert!(a.len() >= m * k);
    gemm_rows(m, k, n, |i, p| a[p * m + i], b, c);
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    assert!(a.len() >= m * k && b.len() >= n * k);
    const BLOCK: usize = 32;
    let mut bt = vec![S::zero(); k * n];
    for j0 in (0..n).step_by(BLOCK) {
        for p0 in (0..k).step_by(BLOCK) {
            for j in j0..(j0 + BLOCK).min(n) {
                for p in p0..(p0 + BLOCK).min(k) {
                    bt[p * n + j] = b[j * k + p];
                }
            }
        }
    }
    gemm_rows(m, k, n, |i, p| a[i * k + p], &bt, c);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
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

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree() {
        for (m, k, n) in [(3, 11, 5), (9, 21, 300), (4, 8, 1), (8, 3, 32), (5, 7, 37)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
            let want = naive(m, k, n, &a, &b);

            let mut c = vec![0.0; m * n];
            gemm_nn(m, k, n, &a, &b, &mut c);
            let mut c2 = vec![0.0; m * n];
            gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c2);
            let mut c3 = vec![0.0; m * n];
            gemm_tn(m, k, n, &transpose(m, k, &a), &b, &mut c3);
            for i in 0..m * n {
                assert!((c[i] - want[i]).abs() < 1e-12);
                assert!((c2[i] - want[i]).abs() < 1e-12);
                assert!((c3[i] - want[i]).abs() < 1e-12);
            }
        }
    }
}
