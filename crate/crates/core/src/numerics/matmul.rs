//! Accumulating matrix-multiply kernels and the im2col/col2im pair behind
//! the convolution layers. All kernels add into `c`, which the caller
//! zero-initializes, and keep the inner loops contiguous so the compiler
//! can vectorize them.

use super::tensor::Element;

/// `c[m x n] += a[m x k] * b[k x n]`
pub fn matmul_nn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == E::ZERO {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[n x k]^T`
pub fn matmul_nt<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = E::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// `c[m x n] += a[k x m]^T * b[k x n]`
pub fn matmul_tn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == E::ZERO {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Unfold `(c_in, h, w)` into columns `(c_in * k * k, h * w)` with zero
/// padding `(k - 1) / 2` and stride 1. Row `(ci * k + ky) * k + kx` holds
/// the input plane `ci` shifted by `(ky - pad, kx - pad)`.
pub fn im2col<E: Element>(x: &[E], c_in: usize, h: usize, w: usize, k: usize) -> Vec<E> {
    let pad = (k - 1) / 2;
    let mut cols = vec![E::ZERO; c_in * k * k * h * w];
    for ci in 0..c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * h * w..][..h * w];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    // Valid destination x range given the horizontal shift.
                    let shift = kx as isize - pad as isize;
                    let x_lo = (-shift).max(0) as usize;
                    let x_hi = (w as isize - shift).min(w as isize) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let src_lo = (x_lo as isize + shift) as usize;
                    row[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[sy * w + src_lo..sy * w + src_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Scatter-add the column gradients back to the input layout; exact adjoint
/// of [`im2col`].
pub fn col2im<E: Element>(cols: &[E], c_in: usize, h: usize, w: usize, k: usize) -> Vec<E> {
    let pad = (k - 1) / 2;
    let mut x = vec![E::ZERO; c_in * h * w];
    for ci in 0..c_in {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * h * w..][..h * w];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let shift = kx as isize - pad as isize;
                    let x_lo = (-shift).max(0) as usize;
                    let x_hi = (w as isize - shift).min(w as isize) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let src_lo = (x_lo as isize + shift) as usize;
                    for dx in 0..x_hi - x_lo {
                        plane[sy * w + src_lo + dx] += row[y * w + x_lo + dx];
                    }
                }
            }
        }
    }
    x
}
