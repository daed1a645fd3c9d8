//! Single-threaded dense kernels. Loop orders keep the innermost loop
//! contiguous so the compiler can vectorize it; summation order is fixed,
//! which keeps results bit-reproducible.

use crate::scalar::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] += a[m×k] · b[k×n]`. Full `MR×NR` tiles accumulate in
/// registers; each output element sums over `k` in ascending order.
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 || m == 0 {
        return;
    }
    let full_rows = m - m % MR;
    let full_cols = n - n % NR;
    for i0 in (0..full_rows).step_by(MR) {
        for j0 in (0..full_cols).step_by(NR) {
            tile(a, b, c, i0, j0, k, n);
        }
        if full_cols < n {
            edge(a, b, c, i0..i0 + MR, full_cols..n, k, n);
        }
    }
    if full_rows < m {
        edge(a, b, c, full_rows..m, 0..n, k, n);
    }
}

#[inline(always)]
fn tile<T: Scalar>(a: &[T], b: &[T], c: &mut [T], i0: usize, j0: usize, k: usize, n: usize) {
    let mut acc = [[T::zero(); NR]; MR];
    let rows: [&[T]; MR] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
    for p in 0..k {
        let brow: &[T; NR] = b[p * n + j0..p * n + j0 + NR].try_into().expect("tile width");
        for r in 0..MR {
            let av = rows[r][p];
            for (acc_c, &bv) in acc[r].iter_mut().zip(brow) {
                *acc_c += av * bv;
            }
        }
    }
    for (r, acc_row) in acc.iter().enumerate() {
        let out = &mut c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR];
        for (o, &v) in out.iter_mut().zip(acc_row) {
            *o += v;
        }
    }
}

fn edge<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    k: usize,
    n: usize,
) {
    for i in rows {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n + cols.start..i * n + cols.end];
        for (p, &av) in a_row.iter().enumerate() {
            let brow = &b[p * n + cols.start..p * n + cols.end];
            for (o, &bv) in c_row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `c[p×q] += aᵀ · b` with `a[m×p]`, `b[m×q]`.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, p: usize, q: usize) {
    let at = transpose2d(a, m, p);
    matmul_nn(&at, b, c, p, m, q);
}

/// `c[m×n] += a[m×k] · bᵀ` with `b[n×k]`.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let bt = transpose2d(b, n, k);
    matmul_nn(a, &bt, c, m, k, n);
}

/// Transposes a row-major `rows×cols` matrix.
pub fn transpose2d<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    const BLOCK: usize = 16;
    let mut out = vec![T::zero(); rows * cols];
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    out[c * rows + r] = x[r * cols + c];
                }
            }
        }
    }
    out
}
