//! Dense linear-algebra helpers: column-stacking vectorization, determinants
//! and adjugates that stay finite at singular arguments, a Bartels-Stewart
//! Sylvester solver, spectra and rank utilities.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Dimension at and below which determinants and adjugates use explicit
/// cofactor expansion.
pub const COFACTOR_MAX_DIM: usize = 4;

/// Ratio of smallest to largest LU pivot under which a matrix is treated as
/// numerically singular and the adjugate is formed from an SVD instead.
pub const NEAR_SINGULAR_RCOND: f64 = 1e-12;

/// `vec(m)`: stacks the columns of `m`.
pub fn vec_cols(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    DMatrix::from_column_slice(rows, cols, v)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

fn det2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    a * d - b * c
}

fn det3(m: &DMatrix<f64>) -> f64 {
    m[(0, 0)] * det2(m[(1, 1)], m[(1, 2)], m[(2, 1)], m[(2, 2)])
        - m[(0, 1)] * det2(m[(1, 0)], m[(1, 2)], m[(2, 0)], m[(2, 2)])
        + m[(0, 2)] * det2(m[(1, 0)], m[(1, 1)], m[(2, 0)], m[(2, 1)])
}

fn minor(m: &DMatrix<f64>, row: usize, col: usize) -> DMatrix<f64> {
    m.clone().remove_row(row).remove_column(col)
}

/// Laplace expansion for `n <= COFACTOR_MAX_DIM`.
fn det_cofactor(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 1.0,
        1 => m[(0, 0)],
        2 => det2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]),
        3 => det3(m),
        n => (0..n)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * det_cofactor(&minor(m, 0, j))
            })
            .sum(),
    }
}

pub fn determinant(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "determinant of a non-square matrix");
    if m.nrows() <= COFACTOR_MAX_DIM {
        det_cofactor(m)
    } else {
        m.clone().full_piv_lu().determinant()
    }
}

/// Returns `(det(m), adj(m))`.
///
/// Small matrices use cofactors. Larger ones use `det * inverse` from a fully
/// pivoted LU, switching to an SVD formulation when the pivot ratio drops
/// below [`NEAR_SINGULAR_RCOND`], so the adjugate remains finite (and exact up
/// to rounding) at `det = 0`.
pub fn det_adjugate(m: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    assert!(m.is_square(), "adjugate of a non-square matrix");
    let n = m.nrows();
    if n == 0 {
        return (1.0, DMatrix::zeros(0, 0));
    }
    if n == 1 {
        return (m[(0, 0)], DMatrix::from_element(1, 1, 1.0));
    }
    if n <= COFACTOR_MAX_DIM {
        let mut adj = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                // adj = transpose of the cofactor matrix
                adj[(j, i)] = sign * det_cofactor(&minor(m, i, j));
            }
        }
        let det = (0..n).map(|j| m[(0, j)] * adj[(j, 0)]).sum();
        return (det, adj);
    }

    let lu = m.clone().full_piv_lu();
    let pivots = lu.u().diagonal().map(f64::abs);
    let (pmin, pmax) = (pivots.min(), pivots.max());
    if pmax > 0.0 && pmin / pmax >= NEAR_SINGULAR_RCOND {
        if let Some(inv) = lu.try_inverse() {
            let det = lu.determinant();
            return (det, inv * det);
        }
    }
    det_adjugate_svd(m)
}

pub fn adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    det_adjugate(m).1
}

/// `adj(U S V^T) = det(V) V adj(S) det(U) U^T`, with `adj(S)_ii = prod_{j != i} s_j`.
fn det_adjugate_svd(m: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd: u requested");
    let v_t = svd.v_t.expect("svd: v_t requested");
    let s = &svd.singular_values;

    let det_u = u.clone().full_piv_lu().determinant().signum();
    let det_v = v_t.clone().full_piv_lu().determinant().signum();

    let mut prefix = vec![1.0; n + 1];
    let mut suffix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * s[i];
        suffix[n - 1 - i] = suffix[n - i] * s[n - 1 - i];
    }
    let adj_s = DVector::from_fn(n, |i, _| prefix[i] * suffix[i + 1]);

    let sign = det_u * det_v;
    let adj = v_t.transpose() * DMatrix::from_diagonal(&adj_s) * u.transpose() * sign;
    (sign * prefix[n], adj)
}

/// Scale-free coherence measure `|adj(X) X - det(X) I| / (|adj(X)| |X|)`.
///
/// Zero for an exact adjugate; returns 0 when both norms vanish.
pub fn adjugate_residual(x: &DMatrix<f64>, adj: &DMatrix<f64>, det: f64) -> f64 {
    let n = x.nrows();
    let r = adj * x - DMatrix::<f64>::identity(n, n) * det;
    let scale = adj.norm() * x.norm();
    if scale == 0.0 {
        r.norm()
    } else {
        r.norm() / scale
    }
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

/// Solves `A X + X B = C` (Bartels-Stewart on complex Schur forms).
///
/// Fails with [`Error::SylvesterSingular`] when `sigma(A)` and `sigma(-B)` intersect.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = (a.nrows(), b.nrows());
    if !a.is_square() || !b.is_square() || c.nrows() != m || c.ncols() != n {
        return Err(Error::Dimension {
            what: "sylvester operands",
            expected: m * n,
            got: c.nrows() * c.ncols(),
        });
    }
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(m, n));
    }

    let (qa, ta) = Schur::new(to_complex(a)).unpack();
    let (qb, tb) = Schur::new(to_complex(b)).unpack();
    let f = qa.adjoint() * to_complex(c) * &qb;

    let scale = a.norm() + b.norm();
    let tiny = f64::EPSILON * 64.0 * scale.max(f64::MIN_POSITIVE);

    let mut y = DMatrix::<Complex<f64>>::zeros(m, n);
    for j in 0..n {
        let mut rhs = f.column(j).into_owned();
        for k in 0..j {
            let coeff = tb[(k, j)];
            rhs -= y.column(k) * coeff;
        }
        let shift = tb[(j, j)];
        for i in (0..m).rev() {
            let mut acc = rhs[i];
            for l in (i + 1)..m {
                acc -= ta[(i, l)] * y[(l, j)];
            }
            let d = ta[(i, i)] + shift;
            if d.norm() <= tiny {
                return Err(Error::SylvesterSingular);
            }
            y[(i, j)] = acc / d;
        }
    }

    let x = qa * y * qb.adjoint();
    Ok(x.map(|v| v.re))
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Smallest distance between any eigenvalue of `a` and any eigenvalue of `b`.
pub fn spectral_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ea = eigenvalues(a);
    let eb = eigenvalues(b);
    ea.iter()
        .flat_map(|x| eb.iter().map(move |y| (x - y).norm()))
        .fold(f64::INFINITY, f64::min)
}

pub fn max_real_part(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    max_real_part(m) < 0.0
}

/// Numerical rank with singular-value threshold `rtol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let smax = s.max();
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rtol * smax).count()
}

/// Rows `c^T, c^T A, ..., c^T A^{n-1}`.
pub fn observability_matrix(c: &DVector<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut row = c.transpose();
    for k in 0..n {
        out.set_row(k, &row);
        row = &row * a;
    }
    out
}

/// Columns `b, A b, ..., A^{n-1} b`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        out.set_column(k, &col);
        col = a * &col;
    }
    out
}

pub const RANK_RTOL: f64 = 1e-10;

pub fn is_observable(c: &DVector<f64>, a: &DMatrix<f64>) -> bool {
    rank(&observability_matrix(c, a), RANK_RTOL) == a.nrows()
}

pub fn is_controllable(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    rank(&controllability_matrix(a, b), RANK_RTOL) == a.nrows()
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
///
/// Stops when successive Rayleigh quotients agree to `tol` (relative).
pub fn lambda_max_psd(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = m.nrows();
    if n == 0 || m.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    // A start vector with distinct entries avoids exact orthogonality to the
    // dominant eigenvector for structured inputs.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        lambda = next;
    }
    lambda
}

pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Characteristic polynomial `det(sI - A)` as monic coefficients in
/// descending powers, by Faddeev-LeVerrier.
pub fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[0] = 1.0;
    let id = DMatrix::<f64>::identity(n, n);
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        mk = a * &mk + &id * coeffs[k - 1];
        coeffs[k] = -(a * &mk).trace() / k as f64;
    }
    coeffs
}

/// Monic coefficients of `(s - root)^n`, descending powers.
pub fn repeated_root_poly(root: f64, n: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += v;
            next[i + 1] -= root * v;
        }
        c = next;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn vec_roundtrip_is_column_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = vec_cols(&m);
        assert_eq!(v.as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(unvec(v.as_slice(), 2, 3), m);
    }

    #[test]
    fn vec_of_product_identity() {
        // vec(A X B) = (B^T kron A) vec(X)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 3, 3);
        let x = random_matrix(&mut rng, 3, 3);
        let b = random_matrix(&mut rng, 3, 3);
        let lhs = vec_cols(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec_cols(&x);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn adjugate_coherence_all_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=9 {
            let x = random_matrix(&mut rng, n, n);
            let (det, adj) = det_adjugate(&x);
            assert!(adjugate_residual(&x, &adj, det) < 1e-12, "n = {n}");
            assert_relative_eq!(det, x.clone().full_piv_lu().determinant(), epsilon = 1e-10);
        }
    }

    #[test]
    fn adjugate_finite_at_singular_matrix() {
        // rank n-1: adjugate is nonzero rank one
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3, 6] {
            let mut x = random_matrix(&mut rng, n, n);
            let c0 = x.column(0).into_owned();
            x.set_column(1, &(c0 * 2.0));
            let (det, adj) = det_adjugate(&x);
            assert!(det.abs() < 1e-12);
            assert!(adj.iter().all(|v| v.is_finite()));
            assert!(adj.norm() > 1e-6);
            assert!((&adj * &x).norm() < 1e-10 * adj.norm() * x.norm());
        }
    }

    #[test]
    fn svd_and_cofactor_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 4, 4);
        let (d1, a1) = det_adjugate(&x);
        let (d2, a2) = det_adjugate_svd(&x);
        assert_relative_eq!(d1, d2, epsilon = 1e-12);
        assert_relative_eq!(a1, a2, epsilon = 1e-12);
    }

    #[test]
    fn sylvester_matches_kronecker_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (m, n) in [(2, 2), (3, 5), (5, 5)] {
            let a = random_matrix(&mut rng, m, m) - DMatrix::identity(m, m) * 3.0;
            let b = random_matrix(&mut rng, n, n) - DMatrix::identity(n, n) * 3.0;
            let c = random_matrix(&mut rng, m, n);
            let x = solve_sylvester(&a, &b, &c).unwrap();
            let k = kron(&DMatrix::identity(n, n), &a) + kron(&b.transpose(), &DMatrix::identity(m, m));
            let oracle = k.lu().solve(&vec_cols(&c)).unwrap();
            assert_relative_eq!(vec_cols(&x), oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn sylvester_detects_shared_spectrum() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 1, &[-2.0]);
        let c = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(solve_sylvester(&a, &b, &c), Err(Error::SylvesterSingular)));
    }

    #[test]
    fn power_iteration_matches_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 5, 9);
            let g = &x * x.transpose();
            let exact = SymmetricEigen::new(g.clone()).eigenvalues.max();
            let approx = lambda_max_psd(&g, 1e-12, 100_000);
            assert!((approx - exact).abs() <= 1e-6 * exact);
        }
    }

    #[test]
    fn char_poly_of_companion() {
        let c = repeated_root_poly(-1.0, 3);
        assert_eq!(c, vec![1.0, 3.0, 3.0, 1.0]);
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -3.0, -3.0]);
        let p = char_poly(&a);
        for (x, y) in p.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_and_observability() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -10.0, -0.01]);
        assert!(is_observable(&DVector::from_vec(vec![1.0, 0.0]), &a));
        let diag = DMatrix::from_diagonal_element(2, 2, -1.0);
        assert!(!is_observable(&DVector::from_vec(vec![1.0, 1.0]), &diag));
    }
}
