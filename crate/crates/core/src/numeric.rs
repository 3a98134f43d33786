//! Small numerical helpers shared by the solvers.

use nalgebra::DMatrix;

/// Central finite-difference Jacobian of `f: R^n -> R^m` at `x`.
pub fn fd_jacobian<F>(mut f: F, x: &[f64], m: usize) -> DMatrix<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        f(&xp, &mut fp);
        xp[j] = x[j] - h;
        f(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormal basis of the orthogonal complement of `v` (columns), built by
/// Householder reflection so the result is deterministic.
pub fn complement_basis(v: &[f64]) -> DMatrix<f64> {
    let n = v.len();
    let nv = norm2(v);
    let mut u: Vec<f64> = v.iter().map(|x| x / nv).collect();
    // reflect u onto ±e_k with k the largest component (pivoting)
    let k = (0..n).max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap_or(0);
    let s = if u[k] >= 0.0 { 1.0 } else { -1.0 };
    u[k] += s;
    let un = norm2(&u);
    let mut q = DMatrix::<f64>::identity(n, n);
    if un > 0.0 {
        for x in u.iter_mut() {
            *x /= un;
        }
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] -= 2.0 * u[i] * u[j];
            }
        }
    }
    let cols: Vec<usize> = (0..n).filter(|&j| j != k).collect();
    DMatrix::from_fn(n, n - 1, |i, j| q[(i, cols[j])])
}

/// Gauss–Legendre 5-point nodes and weights on [0, 1].
pub const GL5: [(f64, f64); 5] = [
    (0.046_910_077_030_668_0, 0.118_463_442_528_094_5),
    (0.230_765_344_947_158_5, 0.239_314_335_249_683_2),
    (0.5, 0.284_444_444_444_444_4),
    (0.769_234_655_052_841_5, 0.239_314_335_249_683_2),
    (0.953_089_922_969_332_0, 0.118_463_442_528_094_5),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let v = [0.3, -2.0, 0.7];
        let b = complement_basis(&v);
        let g = b.transpose() * &b;
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-14);
        for j in 0..2 {
            let c: Vec<f64> = b.column(j).iter().copied().collect();
            assert!(dot(&c, &v).abs() < 1e-14);
        }
    }
}
