//! Dense kernels shared by matmul and the convolution lowering.
//!
//! The multiply kernel runs i-k-j with the inner loop over independent output
//! columns, so the compiler vectorizes it without reassociating any single
//! accumulation chain — results are bit-identical regardless of target SIMD
//! width. Reductions elsewhere stay scalar for the same reason.

use super::Elem;

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn mm_acc<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// Materialized transpose of a row-major rows×cols matrix.
pub(crate) fn transpose<E: Elem>(src: &[E], rows: usize, cols: usize) -> Vec<E> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![E::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
