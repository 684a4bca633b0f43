//! Small row-major matrix multiply used by the convolution layers.
//!
//! The hot path accumulates an 8x16 register tile per step of the shared
//! dimension: one vector row of B feeds eight broadcast rows of A, which is
//! what keeps the convolutions compute-bound instead of store-bound. Every
//! tile reads and writes full fixed-width rows — variable-width accesses
//! would push the accumulator out of registers — so matrices whose width is
//! not a tile multiple run through zero-padded copies of B and C.
//! Accumulation over the shared dimension runs in index order, so results
//! are deterministic and match a naive triple loop's summation order.

use crate::tensor::Real;

const MR: usize = 8;
const NR: usize = 16;
// narrow-output variant: tall tile, four columns
const MR_N: usize = 16;
const NR_N: usize = 4;

/// C[m x n] += A[m x k] * B[k x n], with A read through explicit strides
/// (`a_rs`, `a_cs`) so callers can feed A transposed without copying.
/// B and C are contiguous row-major.
pub fn gemm_strided<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    c: &mut [T],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(b.len() >= k * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    if k <= NR_N {
        return gemm_shallow_k(m, n, k, a, a_rs, a_cs, b, c);
    }
    if n <= NR_N && a_cs == 1 {
        return gemm_dot(m, n, k, a, a_rs, b, c);
    }
    if n <= NR / 2 {
        return gemm_narrow(m, n, k, a, a_rs, a_cs, b, c);
    }
    let full_rows = (m / MR) * MR;
    if n % NR == 0 {
        let mut i0 = 0;
        while i0 < full_rows {
            let mut j0 = 0;
            while j0 < n {
                tile(i0, j0, n, n, k, a, a_rs, a_cs, b, c);
                j0 += NR;
            }
            i0 += MR;
        }
    } else if full_rows > 0 {
        let n_pad = n.div_ceil(NR) * NR;
        let mut b_pad = vec![T::zero(); k * n_pad];
        for (dst, src) in b_pad.chunks_exact_mut(n_pad).zip(b.chunks_exact(n)) {
            dst[..n].copy_from_slice(src);
        }
        let mut c_pad = vec![T::zero(); full_rows * n_pad];
        let mut i0 = 0;
        while i0 < full_rows {
            let mut j0 = 0;
            while j0 < n_pad {
                tile(i0, j0, n_pad, n_pad, k, a, a_rs, a_cs, &b_pad, &mut c_pad);
                j0 += NR;
            }
            i0 += MR;
        }
        for (c_row, pad_row) in c.chunks_exact_mut(n).zip(c_pad.chunks_exact(n_pad)) {
            for (cv, &u) in c_row.iter_mut().zip(&pad_row[..n]) {
                *cv += u;
            }
        }
    }
    // leftover rows: plain axpy accumulation on the original B
    for i in full_rows..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * a_rs + p * a_cs];
            let b_row = &b[p * n..p * n + n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Shallow shared dimension (k <= 4, e.g. gradients flowing back out of a
/// 3-channel head): a couple of row-long axpys per output row beats any
/// tile machinery.
fn gemm_shallow_k<T: Real>(m: usize, n: usize, k: usize, a: &[T], a_rs: usize, a_cs: usize, b: &[T], c: &mut [T]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * a_rs + p * a_cs];
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Few columns with contiguous A rows (3-channel heads, 1-channel
/// attention maps, forward direction): lane-parallel dot products against
/// a transposed copy of B stream A exactly once. Scalar reductions would
/// not vectorize, so each dot keeps 16 independent partial sums.
fn gemm_dot<T: Real>(m: usize, n: usize, k: usize, a: &[T], a_rs: usize, b: &[T], c: &mut [T]) {
    let mut b_t = vec![T::zero(); n * k];
    for p in 0..k {
        for j in 0..n {
            b_t[j * k + p] = b[p * n + j];
        }
    }
    match n {
        1 => dot_rows::<T, 1>(m, k, a, a_rs, &b_t, c),
        2 => dot_rows::<T, 2>(m, k, a, a_rs, &b_t, c),
        3 => dot_rows::<T, 3>(m, k, a, a_rs, &b_t, c),
        _ => dot_rows::<T, 4>(m, k, a, a_rs, &b_t, c),
    }
}

/// Const-width inner loop so the partial-sum block stays in registers.
fn dot_rows<T: Real, const N: usize>(m: usize, k: usize, a: &[T], a_rs: usize, b_t: &[T], c: &mut [T]) {
    let chunks = k / NR;
    for i in 0..m {
        let a_row = &a[i * a_rs..i * a_rs + k];
        let mut partials = [[T::zero(); NR]; N];
        for ci in 0..chunks {
            let a_chunk: &[T; NR] = a_row[ci * NR..][..NR].try_into().expect("chunk width");
            for (j, lanes) in partials.iter_mut().enumerate() {
                let b_chunk: &[T; NR] = b_t[j * k + ci * NR..][..NR].try_into().expect("chunk width");
                for ((u, &av), &bv) in lanes.iter_mut().zip(a_chunk).zip(b_chunk) {
                    *u += av * bv;
                }
            }
        }
        let c_row = &mut c[i * N..(i + 1) * N];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let mut dot = T::zero();
            for &u in &partials[j] {
                dot += u;
            }
            for p in chunks * NR..k {
                dot += a_row[p] * b_t[j * k + p];
            }
            *cv += dot;
        }
    }
}

/// Few-column case (3-channel heads, 1-channel attention maps): a tall
/// 16x4 register tile against a B padded to four columns.
fn gemm_narrow<T: Real>(m: usize, n: usize, k: usize, a: &[T], a_rs: usize, a_cs: usize, b: &[T], c: &mut [T]) {
    let full_rows = (m / MR_N) * MR_N;
    if full_rows > 0 {
        let n_pad = n.div_ceil(NR_N) * NR_N;
        let mut b_pad = vec![T::zero(); k * n_pad];
        for (dst, src) in b_pad.chunks_exact_mut(n_pad).zip(b.chunks_exact(n)) {
            dst[..n].copy_from_slice(src);
        }
        let mut c_pad = vec![T::zero(); full_rows * n_pad];
        let mut i0 = 0;
        while i0 < full_rows {
            let mut j0 = 0;
            while j0 < n_pad {
                tile_narrow(i0, j0, n_pad, k, a, a_rs, a_cs, &b_pad, &mut c_pad);
                j0 += NR_N;
            }
            i0 += MR_N;
        }
        for (c_row, pad_row) in c.chunks_exact_mut(n).zip(c_pad.chunks_exact(n_pad)) {
            for (cv, &u) in c_row.iter_mut().zip(&pad_row[..n]) {
                *cv += u;
            }
        }
    }
    for i in full_rows..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * a_rs + p * a_cs];
            let b_row = &b[p * n..p * n + n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

fn tile_narrow<T: Real>(
    i0: usize,
    j0: usize,
    stride: usize,
    k: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    c: &mut [T],
) {
    let mut acc = [[T::zero(); NR_N]; MR_N];
    for p in 0..k {
        let b_tile: &[T; NR_N] = b[p * stride + j0..][..NR_N].try_into().expect("tile width");
        for (r, acc_row) in acc.iter_mut().enumerate() {
            let av = a[(i0 + r) * a_rs + p * a_cs];
            for (u, &bv) in acc_row.iter_mut().zip(b_tile) {
                *u += av * bv;
            }
        }
    }
    for (r, acc_row) in acc.iter().enumerate() {
        let c_row = &mut c[(i0 + r) * stride + j0..][..NR_N];
        for (cv, &u) in c_row.iter_mut().zip(acc_row) {
            *cv += u;
        }
    }
}

/// One full 8x16 register tile.
fn tile<T: Real>(
    i0: usize,
    j0: usize,
    b_stride: usize,
    c_stride: usize,
    k: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    c: &mut [T],
) {
    let mut acc = [[T::zero(); NR]; MR];
    for p in 0..k {
        let b_tile: &[T; NR] = b[p * b_stride + j0..][..NR].try_into().expect("tile width");
        for (r, acc_row) in acc.iter_mut().enumerate() {
            let av = a[(i0 + r) * a_rs + p * a_cs];
            for (u, &bv) in acc_row.iter_mut().zip(b_tile) {
                *u += av * bv;
            }
        }
    }
    for (r, acc_row) in acc.iter().enumerate() {
        let c_row = &mut c[(i0 + r) * c_stride + j0..][..NR];
        for (cv, &u) in c_row.iter_mut().zip(acc_row) {
            *cv += u;
        }
    }
}

/// C[m x n] += A[m x k] * B[k x n], all row-major.
pub fn gemm<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_strided(m, n, k, a, k, 1, b, c);
}

/// C[m x n] += A^T * B where A is stored row-major [k x m].
pub fn gemm_a_transposed<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_strided(m, n, k, a, 1, m, b, c);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::seeding::stream_rng;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_on_awkward_shapes() {
        let mut rng = stream_rng(700, 0);
        for &(m, n, k) in &[
            (1usize, 1usize, 1usize),
            (8, 16, 4),
            (9, 17, 5),
            (23, 3, 31),
            (64, 32, 27),
            (5, 100, 9),
            (16, 1, 98),
            (4096, 3, 12),
        ] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut c = vec![0.0; m * n];
            gemm(m, n, k, &a, &b, &mut c);
            let want = naive(m, n, k, &a, &b);
            for (got, want) in c.iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "shape {m}x{n}x{k}");
            }
        }
    }

    #[test]
    fn transposed_a_matches_naive() {
        let mut rng = stream_rng(701, 0);
        let (m, n, k) = (13, 19, 11);
        // A stored as [k x m]
        let a_t: Vec<f64> = (0..k * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut c = vec![0.0; m * n];
        gemm_a_transposed(m, n, k, &a_t, &b, &mut c);
        let a: Vec<f64> = {
            let mut a = vec![0.0; m * k];
            for p in 0..k {
                for i in 0..m {
                    a[i * k + p] = a_t[p * m + i];
                }
            }
            a
        };
        let want = naive(m, n, k, &a, &b);
        for (got, want) in c.iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulates_into_existing_c() {
        let a = vec![1.0f64; 4];
        let b = vec![2.0f64; 4];
        let mut c = vec![10.0f64; 4];
        gemm(2, 2, 2, &a, &b, &mut c);
        assert_eq!(c, vec![14.0; 4]);
    }
}
