//! Small dense linear-algebra helpers for symmetric 6x6 matrices.

use nalgebra::{Matrix6, Vector6};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(values, vectors)` with `m = V diag(values) V^T`, eigenvalues in
/// descending order. Deterministic: sweeps run in a fixed element order until
/// the off-diagonal norm is negligible.
pub fn jacobi_eigen_sym6(m: &Matrix6<f64>) -> (Vector6<f64>, Matrix6<f64>) {
    let mut a = symmetrize(m);
    let mut v = Matrix6::identity();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..6 {
            for q in (p + 1)..6 {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * (1.0 + a.trace().abs()) {
            break;
        }
        for p in 0..6 {
            for q in (p + 1)..6 {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..6 {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..6 {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..6 {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    // sort descending, carrying the eigenvector columns along
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let mut values = Vector6::zeros();
    let mut vectors = Matrix6::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[(src, src)];
        vectors.set_column(dst, &v.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues clamped at zero when below `1e-14 * trace`.
pub fn clamp_eigenvalues(values: &Vector6<f64>, trace: f64) -> Vector6<f64> {
    let floor = 1e-14 * trace.abs();
    values.map(|x| if x < floor { 0.0 } else { x })
}

/// Minimum eigenvalue of a symmetric matrix; used for near-PSD checks.
pub fn min_eigenvalue_sym6(m: &Matrix6<f64>) -> f64 {
    let (vals, _) = jacobi_eigen_sym6(m);
    vals[5]
}

/// Element-wise maximum, used to reconcile covariances on domain merges.
pub fn elementwise_max(a: &Matrix6<f64>, b: &Matrix6<f64>) -> Matrix6<f64> {
    let mut out = Matrix6::zeros();
    for i in 0..6 {
        for j in 0..6 {
            out[(i, j)] = a[(i, j)].max(b[(i, j)]);
        }
    }
    out
}
