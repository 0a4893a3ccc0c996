//! Dense symmetric linear algebra. Everything is sequential with a fixed
//! summation order so results are bit-reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Dense symmetric matrix. Symmetry is checked once and then enforced exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `m` if its asymmetry is at most 1e-12 of its largest entry.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!("{}x{} is not square", m.nrows(), m.ncols())));
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::from_symmetric(m))
    }

    /// Symmetrizes without checking. For matrices symmetric by construction.
    pub fn from_symmetric(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// Solves A X = B for symmetric positive definite A (Cholesky plus one
/// refinement step).
pub fn solve_spd(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.dim() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} system with {} right-hand rows",
            a.dim(),
            a.dim(),
            b.nrows()
        )));
    }
    let chol = a.0.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let mut x = chol.solve(b);
    let resid = b - &a.0 * &x;
    x += chol.solve(&resid);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(x)
}

pub fn solve_spd_vec(a: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = solve_spd(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(x.column(0).into_owned())
}

/// Inverse of a general square matrix by LU with partial pivoting.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} is not square", a.nrows(), a.ncols())));
    }
    let n = a.nrows();
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::InvalidParameter("singular system".into()))?;
    let resid = DMatrix::identity(n, n) - a * &x;
    if let Some(dx) = lu.solve(&resid) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("singular system".into()));
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Ascending.
    pub values: DVector<f64>,
    /// Orthonormal columns matching `values`.
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition, eigenvalues ascending.
///
/// The matrix is first split into irreducible blocks (connected components
/// of its off-diagonal pattern). nalgebra's QR sweep can return NaN on large
/// reducible matrices with many repeated eigenvalues; a block that still
/// fails is retried once with a diagonal shift.
pub fn sym_eigen(a: &SymMatrix) -> Result<SymEigen> {
    let n = a.dim();
    let mut values = Vec::with_capacity(n);
    let mut columns: Vec<(usize, DVector<f64>)> = Vec::with_capacity(n);
    for block in irreducible_blocks(&a.0) {
        let m = block.len();
        let sub = DMatrix::from_fn(m, m, |i, j| a.0[(block[i], block[j])]);
        let (vals, vecs) = block_eigen(sub)?;
        for k in 0..m {
            let mut v = DVector::zeros(n);
            for (i, &row) in block.iter().enumerate() {
                v[row] = vecs[(i, k)];
            }
            columns.push((values.len(), v));
            values.push(vals[k]);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &columns[i].1);
    }
    Ok(SymEigen { values: DVector::from_iterator(n, order.iter().map(|&i| values[i])), vectors })
}

fn block_eigen(m: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let finite = |e: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>| {
        e.eigenvalues.iter().chain(e.eigenvectors.iter()).all(|v| v.is_finite())
    };
    let e = m.clone().symmetric_eigen();
    if finite(&e) {
        return Ok((e.eigenvalues, e.eigenvectors));
    }
    let shift = 1.0 + m.amax();
    let n = m.nrows();
    let e = (m + DMatrix::identity(n, n) * shift).symmetric_eigen();
    if finite(&e) {
        return Ok((e.eigenvalues.add_scalar(-shift), e.eigenvectors));
    }
    Err(Error::EigenFailed)
}

/// Index sets of the connected components of the off-diagonal nonzero
/// pattern, each sorted, ordered by smallest index.
fn irreducible_blocks(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut block = Vec::new();
        while let Some(i) = stack.pop() {
            block.push(i);
            for j in 0..n {
                if !seen[j] && (a[(i, j)] != 0.0 || a[(j, i)] != 0.0) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        block.sort_unstable();
        out.push(block);
    }
    out
}

/// Eigenvalues only, ascending.
pub fn sym_eigenvalues(a: &SymMatrix) -> Result<Vec<f64>> {
    Ok(sym_eigen(a)?.values.iter().copied().collect())
}

/// Moore-Penrose inverse of a PSD matrix; eigenvalues below
/// `rank_tol * max eigenvalue` count as zero.
pub fn pinv_psd(a: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    let n = a.dim();
    let eig = sym_eigen(a)?;
    let top = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return Ok(SymMatrix::zeros(n));
    }
    let cut = rank_tol * top;
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let l = eig.values[k];
        if l < -cut {
            return Err(Error::NegativeEigenvalue(l));
        }
        if l > cut {
            let v = eig.vectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    Ok(SymMatrix::from_symmetric(out))
}

/// Orthonormal basis of the eigenspace with |eigenvalue| <= rank_tol * max.
pub fn null_space(a: &SymMatrix, rank_tol: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(a)?;
    let top = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cols: Vec<usize> = (0..a.dim()).filter(|&k| eig.values[k].abs() <= rank_tol * top).collect();
    let mut out = DMatrix::zeros(a.dim(), cols.len());
    for (c, &k) in cols.iter().enumerate() {
        out.set_column(c, &eig.vectors.column(k));
    }
    Ok(out)
}

/// xᵀ A x.
pub fn quad_form(x: &DVector<f64>, a: &SymMatrix) -> Result<f64> {
    if x.len() != a.dim() {
        return Err(Error::DimensionMismatch(format!("vector {} vs matrix {}", x.len(), a.dim())));
    }
    Ok(x.dot(&(&a.0 * x)))
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm2(a: &SymMatrix) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        SymMatrix::from_symmetric(&b * b.transpose() + DMatrix::identity(n, n) * 0.1)
    }

    #[test]
    fn symmetric_check() {
        assert!(SymMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]).is_ok());
        assert!(matches!(SymMatrix::new(dmatrix![1.0, 2.0; 2.1, 1.0]), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn solve_examples() {
        let b = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0];
        assert_eq!(solve_spd(&SymMatrix::identity(3), &b).unwrap(), b);
        let a = SymMatrix::new(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        let x = solve_spd(&a, &dmatrix![1.0; 1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-15 && (x[1] - 1.0 / 3.0).abs() < 1e-15);

        let a = random_spd(6, 4);
        let b = DMatrix::from_fn(6, 2, |i, j| (i + 2 * j) as f64);
        let x = solve_spd(&a, &b).unwrap();
        assert!((a.matrix() * x - &b).norm() / b.norm() <= 1e-10);
    }

    #[test]
    fn solve_rejects_indefinite() {
        let a = SymMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap();
        assert_eq!(solve_spd(&a, &dmatrix![1.0; 0.0]), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn pinv_examples() {
        let k2 = SymMatrix::new(dmatrix![1.0, -1.0; -1.0, 1.0]).unwrap();
        let p = pinv_psd(&k2, DEFAULT_RANK_TOL).unwrap();
        let expect = dmatrix![0.25, -0.25; -0.25, 0.25];
        assert!((p.matrix() - &expect).amax() < 1e-14);
        let a = k2.matrix();
        assert!((a * p.matrix() * a - a).amax() < 1e-8);
        assert!((p.matrix() * a * p.matrix() - p.matrix()).amax() < 1e-8);

        let i3 = SymMatrix::identity(3);
        assert!((pinv_psd(&i3, DEFAULT_RANK_TOL).unwrap().matrix() - i3.matrix()).amax() < 1e-14);
        assert_eq!(pinv_psd(&SymMatrix::zeros(3), DEFAULT_RANK_TOL).unwrap(), SymMatrix::zeros(3));
    }

    #[test]
    fn pinv_rejects_negative() {
        let a = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(pinv_psd(&a, DEFAULT_RANK_TOL), Err(Error::NegativeEigenvalue(_))));
    }

    #[test]
    fn eigen_examples() {
        let e = sym_eigen(&SymMatrix::from_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 2.0, 3.0]);
        let k2 = SymMatrix::new(dmatrix![1.0, -1.0; -1.0, 1.0]).unwrap();
        let v = sym_eigenvalues(&k2).unwrap();
        assert!(v[0].abs() < 1e-14 && (v[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn path_laplacian_spectrum() {
        for r in [2usize, 5, 9] {
            let mut m = DMatrix::zeros(r, r);
            for i in 0..r - 1 {
                m[(i, i + 1)] = -1.0;
                m[(i + 1, i)] = -1.0;
                m[(i, i)] += 1.0;
                m[(i + 1, i + 1)] += 1.0;
            }
            let got = sym_eigenvalues(&SymMatrix::new(m).unwrap()).unwrap();
            for (k, g) in got.iter().enumerate() {
                let want = 4.0 * (std::f64::consts::PI * k as f64 / (2.0 * r as f64)).sin().powi(2);
                assert!((g - want).abs() < 1e-12, "r={r} k={k}");
            }
        }
    }

    #[test]
    fn quad_form_examples() {
        let k2 = SymMatrix::new(dmatrix![1.0, -1.0; -1.0, 1.0]).unwrap();
        assert_eq!(quad_form(&DVector::from_vec(vec![1.0, 2.0]), &k2).unwrap(), 1.0);
        assert_eq!(quad_form(&DVector::from_vec(vec![3.0, 3.0]), &k2).unwrap(), 0.0);
        assert!(quad_form(&DVector::from_vec(vec![1.0]), &k2).is_err());
    }
}
