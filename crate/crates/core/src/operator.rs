//! Dense real operators: norms, spectra and the PSD order.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type DenseOperator = DMatrix<f64>;

pub const SYM_TOL: f64 = 1e-10;
pub const EIG_CLAMP: f64 = -1e-12;
pub const DEFAULT_TOL_STAB: f64 = 1e-9;

/// Build an operator from row-major entries, rejecting bad lengths and non-finite values.
pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<DenseOperator> {
    if entries.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} entries for a {rows}x{cols} operator",
            entries.len()
        )));
    }
    let m = DMatrix::from_row_slice(rows, cols, entries);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn ensure_finite(m: &DenseOperator) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn ensure_square(m: &DenseOperator) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::NonSquare { rows: m.nrows(), cols: m.ncols() })
    }
}

pub fn ensure_shape(m: &DenseOperator, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Largest singular value.
pub fn op_norm(m: &DenseOperator) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.iter().all(|x| *x == 0.0) {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn hs_norm(m: &DenseOperator) -> f64 {
    m.norm()
}

/// Largest entrywise asymmetry relative to the largest entry.
pub fn asymmetry(s: &DenseOperator) -> f64 {
    let scale = 1.0 + s.amax();
    let mut worst: f64 = 0.0;
    for i in 0..s.nrows() {
        for j in (i + 1)..s.ncols() {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn ensure_symmetric(s: &DenseOperator) -> Result<()> {
    ensure_square(s)?;
    let a = asymmetry(s);
    if a <= SYM_TOL {
        Ok(())
    } else {
        Err(Error::NotSymmetric(a))
    }
}

pub fn symmetrize(s: &DenseOperator) -> DenseOperator {
    (s + s.transpose()) * 0.5
}

/// Trace of a symmetric PSD operator (equal to its nuclear norm).
pub fn trace_norm(s: &DenseOperator) -> Result<f64> {
    ensure_symmetric(s)?;
    Ok(s.trace())
}

pub fn spectral_radius(a: &DenseOperator) -> Result<f64> {
    ensure_square(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 1000 * n.max(10)).ok_or(
        Error::NoConvergence { what: "Schur decomposition", iterations: 1000 * n.max(10) },
    )?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn is_stable(a: &DenseOperator) -> Result<bool> {
    is_stable_tol(a, DEFAULT_TOL_STAB)
}

pub fn is_stable_tol(a: &DenseOperator, tol_stab: f64) -> Result<bool> {
    Ok(spectral_radius(a)? < 1.0 - tol_stab)
}

pub fn ensure_stable(a: &DenseOperator) -> Result<()> {
    let r = spectral_radius(a)?;
    if r < 1.0 - DEFAULT_TOL_STAB {
        Ok(())
    } else {
        Err(Error::Unstable(r))
    }
}

/// Eigenpairs of a symmetric operator, eigenvalues non-increasing.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DenseOperator,
}

impl SpectralDecomposition {
    pub fn new(s: &DenseOperator) -> Result<Self> {
        ensure_symmetric(s)?;
        ensure_finite(s)?;
        let n = s.nrows();
        let eig = SymmetricEigen::new(symmetrize(s));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            eigenvectors.set_column(k, &eig.eigenvectors.column(i));
        }
        Ok(Self { eigenvalues, eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues with small negatives (round-off) clamped to zero.
    pub fn clamped(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| if l < 0.0 { 0.0 } else { l }).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseOperator {
        let d = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|&l| f(l)));
        let v = &self.eigenvectors;
        let mut vd = v.clone();
        for (k, mut col) in vd.column_iter_mut().enumerate() {
            col *= d[k];
        }
        vd * v.transpose()
    }

    pub fn reconstruct(&self) -> DenseOperator {
        self.map(|l| l)
    }

    /// F with F Fᵀ = S, using clamped eigenvalues.
    pub fn sqrt_factor(&self) -> DenseOperator {
        let mut f = self.eigenvectors.clone();
        for (k, mut col) in f.column_iter_mut().enumerate() {
            col *= self.eigenvalues[k].max(0.0).sqrt();
        }
        f
    }

    pub fn sqrt(&self) -> DenseOperator {
        self.map(|l| l.max(0.0).sqrt())
    }

    /// Pseudo-inverse square root on the range {λ > rel_reg·λ_max}.
    pub fn pinv_sqrt(&self, rel_reg: f64) -> DenseOperator {
        let cut = rel_reg * self.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        self.map(|l| if l > cut && l > 0.0 { 1.0 / l.sqrt() } else { 0.0 })
    }

    pub fn effective_dim_and_tail(&self, lambda: f64) -> (usize, f64) {
        effective_dim_and_tail(&self.eigenvalues, lambda)
    }
}

/// (d_λ, C_tail) for a finite spectrum: the count of eigenvalues at least λ and
/// the remaining mass divided by λ.
pub fn effective_dim_and_tail(eigs: &[f64], lambda: f64) -> (usize, f64) {
    let mut count = 0;
    let mut tail = 0.0;
    for &s in eigs {
        let s = s.max(0.0);
        if s >= lambda {
            count += 1;
        } else {
            tail += s;
        }
    }
    (count, tail / lambda)
}

pub fn min_eigenvalue(s: &DenseOperator) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(s)).eigenvalues.min()
}

pub fn max_eigenvalue(s: &DenseOperator) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(s)).eigenvalues.max()
}

fn same_dims(x: &DenseOperator, y: &DenseOperator) -> Result<()> {
    if x.shape() != y.shape() || !x.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "PSD comparison of {}x{} and {}x{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

/// λ_min(X − Y) / (1 + ‖X‖_op): the normalized slack of Y ⪯ X.
pub fn psd_slack(x: &DenseOperator, y: &DenseOperator) -> Result<f64> {
    same_dims(x, y)?;
    Ok(min_eigenvalue(&(x - y)) / (1.0 + op_norm(x)))
}

/// Y ⪯ X up to tol·(1 + ‖X‖_op).
pub fn psd_dominates(x: &DenseOperator, y: &DenseOperator, tol: f64) -> Result<bool> {
    Ok(psd_slack(x, y)? >= -tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_iteration_norm(m: &DenseOperator) -> f64 {
        let g = m.transpose() * m;
        let mut v = DVector::from_element(m.ncols(), 1.0);
        let mut lam = 0.0;
        for _ in 0..5000 {
            let w = &g * &v;
            let n = w.norm();
            if n == 0.0 {
                return 0.0;
            }
            lam = n;
            v = w / n;
        }
        lam.sqrt()
    }

    #[test]
    fn op_norm_examples() {
        assert_eq!(op_norm(&DMatrix::identity(3, 3)), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0]));
        assert!((op_norm(&d) - 3.0).abs() < 1e-14);
        let m = from_row_major(
            5,
            5,
            &[
                0.3, -1.2, 0.7, 0.1, 2.0, 1.1, 0.4, -0.6, 0.9, 0.2, -0.5, 0.8, 1.3, -0.2, 0.6, 0.05,
                -0.9, 0.3, 1.7, -1.1, 0.6, 0.2, -0.4, 0.5, 0.9,
            ],
        )
        .unwrap();
        assert!((op_norm(&m) - power_iteration_norm(&m)).abs() < 1e-8);
        assert_eq!(op_norm(&DMatrix::zeros(3, 2)), 0.0);
    }

    #[test]
    fn hs_norm_examples() {
        assert!((hs_norm(&DMatrix::identity(7, 7)) - 7f64.sqrt()).abs() < 1e-14);
        assert_eq!(hs_norm(&DMatrix::zeros(4, 4)), 0.0);
        let m = from_row_major(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((hs_norm(&m) - 30f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn trace_norm_examples() {
        assert_eq!(trace_norm(&DMatrix::identity(6, 6)).unwrap(), 6.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.25, 1.0 / 9.0]));
        assert!((trace_norm(&d).unwrap() - 1.361_111_111_111_111).abs() < 1e-12);
        let v = DVector::from_vec(vec![0.0, 2.0, 0.0]);
        assert!((trace_norm(&(&v * v.transpose())).unwrap() - 4.0).abs() < 1e-14);
        let bad = from_row_major(2, 2, &[1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(trace_norm(&bad), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn spectral_radius_examples() {
        let half = DMatrix::identity(4, 4) * 0.5;
        assert!((spectral_radius(&half).unwrap() - 0.5).abs() < 1e-14);
        assert!(is_stable(&half).unwrap());
        assert!(!is_stable(&DMatrix::identity(3, 3)).unwrap());
        let nil = from_row_major(3, 3, &[0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(spectral_radius(&nil).unwrap() < 1e-12);
        assert!(is_stable(&nil).unwrap());
        assert!(matches!(spectral_radius(&DMatrix::zeros(2, 3)), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn effective_dim_examples() {
        let eigs: Vec<f64> = (1..=1000).map(|j| 1.0 / (j as f64).powi(2)).collect();
        let (dl, ct) = effective_dim_and_tail(&eigs, 0.1);
        assert_eq!(dl, 3);
        let direct: f64 = (4..=1000).map(|j| 1.0 / (j as f64).powi(2)).sum::<f64>() * 10.0;
        assert!((ct - direct).abs() < 1e-12);
        assert!((ct - 2.828).abs() < 1e-3);
        let small = [0.01, 0.02, 0.03];
        let (dl, ct) = effective_dim_and_tail(&small, 1.0);
        assert_eq!(dl, 0);
        assert!((ct - 0.06).abs() < 1e-15);
        let (dl, ct) = effective_dim_and_tail(&small, 0.001);
        assert_eq!((dl, ct), (3, 0.0));
    }

    #[test]
    fn psd_dominates_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!(psd_dominates(&(&i * 2.0), &i, 0.0).unwrap());
        assert!(psd_dominates(&i, &i, 0.0).unwrap());
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let y = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        assert!(!psd_dominates(&x, &y, 0.0).unwrap());
        assert!(matches!(psd_dominates(&i, &x, 0.0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn constructor_validation() {
        assert!(matches!(from_row_major(2, 2, &[1.0]), Err(Error::DimensionMismatch(_))));
        assert!(matches!(from_row_major(1, 2, &[1.0, f64::NAN]), Err(Error::NonFinite)));
    }
}
