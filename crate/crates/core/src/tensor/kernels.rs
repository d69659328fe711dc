//! Raw numeric kernels shared by the tape's forward and backward passes.
//!
//! All kernels are deterministic: each output element is produced by exactly
//! one task with a fixed-order inner accumulation, so the `parallel` feature
//! changes wall time, never bits.

use crate::parallel::for_each_chunk_mut;

/// C\[m×n\] = A\[m×k\] · B\[k×n\], with optional transposes of A and B
/// expressed by stride swaps.
#[allow(clippy::too_many_arguments)]
fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
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
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Plain matrix product A\[m×k\] · B\[k×n\].
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    dgemm(m, k, n, a, k as isize, 1, b, n as isize, 1, &mut c);
    c
}

/// A\[m×k\] · Bᵀ where B is stored as \[n×k\].
pub fn matmul_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    dgemm(m, k, n, a, k as isize, 1, b, 1, k as isize, &mut c);
    c
}

/// Aᵀ · B where A is stored as \[k×m\] and B as \[k×n\].
pub fn matmul_at(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    dgemm(m, k, n, a, 1, m as isize, b, n as isize, 1, &mut c);
    c
}

/// Reference single-threaded triple loop, kept for benchmarks and as an
/// independent check on the blocked kernel.
pub fn matmul_naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// Valid cross-correlation of a batch of sequences.
///
/// `x`: \[batch, c_in, len\], `w`: \[c_out, c_in, k\], output
/// \[batch, c_out, len_out\] with `len_out = (len - k) / stride + 1`.
/// Parallel over the batch axis.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward(
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    x: &[f64],
    w: &[f64],
) -> Vec<f64> {
    let len_out = (len - k) / stride + 1;
    let mut y = vec![0.0; batch * c_out * len_out];
    for_each_chunk_mut(&mut y, c_out * len_out, |b, yb| {
        let xb = &x[b * c_in * len..(b + 1) * c_in * len];
        for co in 0..c_out {
            for o in 0..len_out {
                let start = o * stride;
                let mut acc = 0.0;
                for ci in 0..c_in {
                    let xr = &xb[ci * len + start..ci * len + start + k];
                    let wr = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    for t in 0..k {
                        acc += xr[t] * wr[t];
                    }
                }
                yb[co * len_out + o] = acc;
            }
        }
    });
    y
}

/// Sequential reference implementation of [`conv1d_forward`] for benchmarks.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward_seq(
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    x: &[f64],
    w: &[f64],
) -> Vec<f64> {
    let len_out = (len - k) / stride + 1;
    let mut y = vec![0.0; batch * c_out * len_out];
    for b in 0..batch {
        let xb = &x[b * c_in * len..(b + 1) * c_in * len];
        let yb = &mut y[b * c_out * len_out..(b + 1) * c_out * len_out];
        for co in 0..c_out {
            for o in 0..len_out {
                let start = o * stride;
                let mut acc = 0.0;
                for ci in 0..c_in {
                    let xr = &xb[ci * len + start..ci * len + start + k];
                    let wr = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    for t in 0..k {
                        acc += xr[t] * wr[t];
                    }
                }
                yb[co * len_out + o] = acc;
            }
        }
    }
    y
}

/// Gradients of [`conv1d_forward`] with respect to input and weights.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let len_out = (len - k) / stride + 1;
    let mut gx = vec![0.0; batch * c_in * len];
    let mut gw = vec![0.0; c_out * c_in * k];
    for b in 0..batch {
        let xb = &x[b * c_in * len..(b + 1) * c_in * len];
        let gxb = &mut gx[b * c_in * len..(b + 1) * c_in * len];
        let gob = &grad_out[b * c_out * len_out..(b + 1) * c_out * len_out];
        for co in 0..c_out {
            for o in 0..len_out {
                let g = gob[co * len_out + o];
                if g == 0.0 {
                    continue;
                }
                let start = o * stride;
                for ci in 0..c_in {
                    let wr = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    let gwr = &mut gw[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    for t in 0..k {
                        gxb[ci * len + start + t] += g * wr[t];
                        gwr[t] += g * xb[ci * len + start + t];
                    }
                }
            }
        }
    }
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_matmul_matches_naive() {
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for &(m, k, n) in &[(1, 1, 1), (2, 3, 4), (7, 5, 9), (16, 16, 16), (33, 20, 8)] {
            let a: Vec<f64> = (0..m * k).map(|_| next()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| next()).collect();
            let fast = matmul(m, k, n, &a, &b);
            let slow = matmul_naive(m, k, n, &a, &b);
            for (x, y) in fast.iter().zip(&slow) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        // matmul_bt: A[2x3] * (B'[2x3])^T where B' = b reinterpreted
        let bt = matmul_bt(2, 3, 2, &a, &[7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        let plain = matmul(2, 3, 2, &a, &b);
        assert_eq!(bt, plain);
        // matmul_at: (A'[3x2])^T * B with A' the column-major layout of a
        let at = matmul_at(2, 3, 2, &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0], &b);
        assert_eq!(at, plain);
    }

    #[test]
    fn conv_parallel_and_seq_agree() {
        let x: Vec<f64> = (0..2 * 3 * 10).map(|i| (i as f64) * 0.1 - 1.0).collect();
        let w: Vec<f64> = (0..4 * 3 * 3).map(|i| (i as f64) * 0.01).collect();
        let a = conv1d_forward(2, 3, 10, 4, 3, 2, &x, &w);
        let b = conv1d_forward_seq(2, 3, 10, 4, 3, 2, &x, &w);
        assert_eq!(a, b);
    }
}
