//! Row-major f32 GEMM helpers.
//!
//! Large products go through `matrixmultiply`; tiny ones (per-cube attention
//! logits) use an inline kernel to dodge the packing overhead.

/// Below this volume the inline kernels beat matrixmultiply's packing.
const INLINE_LIMIT: usize = 48 * 48 * 48;

/// c += a(m x k) * b(k x n), all row-major and contiguous.
pub fn gemm_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m * k * n < INLINE_LIMIT {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                if av != 0.0 {
                    let brow = &b[p * n..(p + 1) * n];
                    for j in 0..n {
                        crow[j] += av * brow[j];
                    }
                }
            }
        }
    } else {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// c += a(m x k) * b(n x k)^T, row-major.
pub fn gemm_nt_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m * k * n < INLINE_LIMIT {
        // transpose b into a small scratch so the kernel runs with vertical
        // accumulation instead of per-element dot reductions
        if k * n <= 64 * 64 {
            let mut bt = [0.0f32; 64 * 64];
            for j in 0..n {
                for p in 0..k {
                    bt[p * n + j] = b[j * k + p];
                }
            }
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                let crow = &mut c[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    if av != 0.0 {
                        let brow = &bt[p * n..(p + 1) * n];
                        for j in 0..n {
                            crow[j] += av * brow[j];
                        }
                    }
                }
            }
            return;
        }
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let mut s = 0.0f32;
                for p in 0..k {
                    s += arow[p] * brow[p];
                }
                crow[j] += s;
            }
        }
    } else {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                1,
                k as isize,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// c += a(k x m)^T * b(k x n), row-major.
pub fn gemm_tn_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m * k * n < INLINE_LIMIT {
        for p in 0..k {
            let arow = &a[p * m..(p + 1) * m];
            let brow = &b[p * n..(p + 1) * n];
            for i in 0..m {
                let av = arow[i];
                if av != 0.0 {
                    let crow = &mut c[i * n..(i + 1) * n];
                    for j in 0..n {
                        crow[j] += av * brow[j];
                    }
                }
            }
        }
    } else {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                1,
                m as isize,
                b.as_ptr(),
                n as isize,
                1,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_and_large_paths_agree() {
        let (m, k, n) = (40, 40, 40);
        let a: Vec<f32> = (0..m * k).map(|i| (i % 7) as f32 - 3.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i % 5) as f32 - 2.0).collect();
        let mut big = vec![0.0; m * n];
        gemm_acc(&a, &b, &mut big, m, k, n);
        // reference: plain triple loop
        let mut reference = vec![0.0f32; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    reference[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        for (x, y) in big.iter().zip(&reference) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn transposed_variants_match_materialized_transpose() {
        let (m, k, n) = (5, 4, 6);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 * 0.1).collect();
        let b: Vec<f32> = (0..n * k).map(|i| i as f32 * 0.2 - 1.0).collect();
        let mut c_nt = vec![0.0; m * n];
        gemm_nt_acc(&a, &b, &mut c_nt, m, k, n);
        // b transposed by hand
        let mut bt = vec![0.0f32; k * n];
        for j in 0..n {
            for p in 0..k {
                bt[p * n + j] = b[j * k + p];
            }
        }
        let mut c_ref = vec![0.0; m * n];
        gemm_acc(&a, &bt, &mut c_ref, m, k, n);
        for (x, y) in c_nt.iter().zip(&c_ref) {
            assert!((x - y).abs() < 1e-5);
        }

        let at: Vec<f32> = {
            let mut at = vec![0.0f32; k * m];
            for i in 0..m {
                for p in 0..k {
                    at[p * m + i] = a[i * k + p];
                }
            }
            at
        };
        let b2: Vec<f32> = (0..k * n).map(|i| i as f32 * 0.3).collect();
        let mut c_tn = vec![0.0; m * n];
        gemm_tn_acc(&at, &b2, &mut c_tn, m, k, n);
        let mut c_ref2 = vec![0.0; m * n];
        gemm_acc(&a, &b2, &mut c_ref2, m, k, n);
        for (x, y) in c_tn.iter().zip(&c_ref2) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
