//! Dense least squares via Householder QR.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

pub(crate) const RIDGE: f64 = 1e-8;

/// Solves `min ||A b - y||` for a row-major `rows x cols` matrix.
///
/// Falls back to ridge (penalty [`RIDGE`]) when the design is numerically
/// rank deficient.
pub(crate) fn least_squares(a: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    if rows >= cols {
        if let Some(sol) = qr_solve(a.to_vec(), rows, cols, y.to_vec()) {
            return sol;
        }
    }
    // Augment with sqrt(ridge) * I rows.
    let mut aug = a.to_vec();
    let mut rhs = y.to_vec();
    let r = sqrt(RIDGE);
    for j in 0..cols {
        let mut row = vec![0.0; cols];
        row[j] = r;
        aug.extend_from_slice(&row);
        rhs.push(0.0);
    }
    qr_solve(aug, rows + cols, cols, rhs).expect("ridge-augmented design has full rank")
}

fn qr_solve(mut a: Vec<f64>, rows: usize, cols: usize, mut y: Vec<f64>) -> Option<Vec<f64>> {
    let idx = |i: usize, j: usize| i * cols + j;
    let mut diag = vec![0.0; cols];
    for k in 0..cols {
        let norm = sqrt((k..rows).map(|i| a[idx(i, k)] * a[idx(i, k)]).sum::<f64>());
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[idx(k, k)] > 0.0 { -norm } else { norm };
        // v = x - alpha e_k, stored in column k below the diagonal
        a[idx(k, k)] -= alpha;
        let vnorm2: f64 = (k..rows).map(|i| a[idx(i, k)] * a[idx(i, k)]).sum();
        if vnorm2 > 0.0 {
            for j in (k + 1)..cols {
                let s: f64 = (k..rows).map(|i| a[idx(i, k)] * a[idx(i, j)]).sum::<f64>() * 2.0 / vnorm2;
                for i in k..rows {
                    a[idx(i, j)] -= s * a[idx(i, k)];
                }
            }
            let s: f64 = (k..rows).map(|i| a[idx(i, k)] * y[i]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..rows {
                y[i] -= s * a[idx(i, k)];
            }
        }
        diag[k] = alpha;
    }
    let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= 1e-10 * scale) {
        return None;
    }
    let mut b = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut s = y[k];
        for j in (k + 1)..cols {
            s -= a[idx(k, j)] * b[j];
        }
        b[k] = s / diag[k];
    }
    Some(b)
}
