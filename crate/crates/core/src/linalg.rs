//! Dense Hermitian linear algebra on the truncated cell space.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{cis, czero, Real, C};

pub type CMatrix<T> = DMatrix<C<T>>;
pub type CVector<T> = DVector<C<T>>;

/// Full eigendecomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEigen<T: Real> {
    pub values: Vec<T>,
    pub vectors: CMatrix<T>,
}

/// `(A + A*)/2`.
pub fn hermitize<T: Real>(a: &CMatrix<T>) -> CMatrix<T> {
    (a + a.adjoint()) * C::new(T::lit(0.5), T::zero())
}

pub fn hermiticity_defect<T: Real>(a: &CMatrix<T>) -> T {
    (a - a.adjoint()).norm()
}

impl<T: Real> HermitianEigen<T> {
    pub fn new(a: &CMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::InvalidInput(
                "eigensolver needs a square matrix".into(),
            ));
        }
        if n == 0 {
            return Ok(Self {
                values: Vec::new(),
                vectors: CMatrix::zeros(0, 0),
            });
        }
        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Convergence("matrix has non-finite entries".into()));
        }
        let h = hermitize(a);
        let eig = SymmetricEigen::try_new(h.clone(), T::default_epsilon(), 1000 * n.max(10))
            .ok_or_else(|| {
                Error::Convergence(format!(
                    "Hermitian eigensolver did not converge (dimension {n}, Frobenius norm {:e})",
                    h.norm().as_f64()
                ))
            })?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[i]
                .partial_cmp(&eig.eigenvalues[j])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let values: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        let out = Self { values, vectors };
        let scale = h.norm().max(T::one());
        let worst = out.max_residual(&h);
        if worst > T::tol(1e-10, 1e4) * scale {
            return Err(Error::Convergence(format!(
                "eigenpair residual {:e} exceeds tolerance (norm {:e})",
                worst.as_f64(),
                scale.as_f64()
            )));
        }
        Ok(out)
    }

    /// Eigendecomposition whose eigenvalues are replaced by the Rayleigh
    /// quotients `v*Av`. Small eigenvalues of a matrix with a large norm are
    /// then accurate relative to `‖Av‖` rather than to `‖A‖`.
    pub fn refined(a: &CMatrix<T>) -> Result<Self> {
        let mut out = Self::new(a)?;
        let av = hermitize(a) * &out.vectors;
        for j in 0..out.dim() {
            out.values[j] = out.vectors.column(j).dotc(&av.column(j)).re;
        }
        Ok(out)
    }

    /// Like [`HermitianEigen::refined`], with an additional Rayleigh–Ritz
    /// step on the eigenvectors whose eigenvalues lie in `[lo, hi]`. Close
    /// eigenvalues inside the window then come with eigenvectors accurate
    /// relative to the window's own scale instead of `‖A‖`.
    pub fn refined_in(a: &CMatrix<T>, lo: T, hi: T) -> Result<Self> {
        let mut out = Self::refined(a)?;
        let idx: Vec<usize> = (0..out.dim())
            .filter(|&j| out.values[j] >= lo && out.values[j] <= hi)
            .collect();
        if idx.len() < 2 {
            return Ok(out);
        }
        let v = CMatrix::from_fn(out.dim(), idx.len(), |r, c| out.vectors[(r, idx[c])]);
        let small = Self::new(&(v.adjoint() * (a * &v)))?;
        let rotated = &v * &small.vectors;
        for (c, &j) in idx.iter().enumerate() {
            out.values[j] = small.values[c];
            out.vectors.set_column(j, &rotated.column(c));
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_residual(&self, a: &CMatrix<T>) -> T {
        let av = a * &self.vectors;
        let mut worst = T::zero();
        for (j, &lam) in self.values.iter().enumerate() {
            let r = (av.column(j) - self.vectors.column(j) * C::new(lam, T::zero())).norm();
            worst = worst.max(r);
        }
        worst
    }

    /// `f(A) v` for a scalar function of the eigenvalues.
    pub fn apply_fn(&self, v: &CVector<T>, f: impl Fn(T) -> C<T>) -> CVector<T> {
        let mut coef = self.vectors.ad_mul(v);
        for (j, z) in coef.iter_mut().enumerate() {
            *z *= f(self.values[j]);
        }
        &self.vectors * coef
    }

    /// `f(A) X` column by column.
    pub fn apply_fn_mat(&self, x: &CMatrix<T>, f: impl Fn(T) -> C<T>) -> CMatrix<T> {
        let mut coef = self.vectors.ad_mul(x);
        for j in 0..self.dim() {
            let s = f(self.values[j]);
            for c in 0..coef.ncols() {
                coef[(j, c)] *= s;
            }
        }
        &self.vectors * coef
    }

    /// `e^{-iτA} v`.
    pub fn evolve(&self, v: &CVector<T>, tau: T) -> CVector<T> {
        self.apply_fn(v, |lam| cis(-tau * lam))
    }
}

/// Ascending eigenvalues only.
pub fn hermitian_eigenvalues<T: Real>(a: &CMatrix<T>) -> Vec<T> {
    let mut v: Vec<T> = hermitize(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Largest absolute eigenvalue of a Hermitian matrix.
pub fn hermitian_norm<T: Real>(a: &CMatrix<T>) -> Result<T> {
    let e = HermitianEigen::new(a)?;
    Ok(e.values.iter().fold(T::zero(), |m, v| m.max(v.abs())))
}

/// Largest singular value, through the smaller of the two Gram matrices.
pub fn operator_norm<T: Real>(a: &CMatrix<T>) -> Result<T> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(T::zero());
    }
    let gram = if a.ncols() <= a.nrows() {
        a.ad_mul(a)
    } else {
        a * a.adjoint()
    };
    Ok(hermitian_norm(&gram)?.max(T::zero()).sqrt())
}

/// Orthogonal projector `S S*` onto the columns of an isometry.
pub fn projector<T: Real>(s: &CMatrix<T>) -> CMatrix<T> {
    s * s.adjoint()
}

/// Modified Gram–Schmidt with one reorthogonalization pass.
pub fn orthonormalize_columns<T: Real>(z: &CMatrix<T>) -> Result<CMatrix<T>> {
    let mut q = z.clone();
    for j in 0..q.ncols() {
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dotc(&q.column(j));
                let qi = q.column(i).clone_owned();
                let mut cj = q.column_mut(j);
                cj -= qi * proj;
            }
        }
        let nrm = q.column(j).norm();
        if nrm <= T::tol(1e-13, 100.0) {
            return Err(Error::Consistency(
                "rank-deficient vectors in orthonormalization".into(),
            ));
        }
        let inv = C::new(T::one() / nrm, T::zero());
        let mut cj = q.column_mut(j);
        cj *= inv;
    }
    Ok(q)
}

pub fn identity<T: Real>(n: usize) -> CMatrix<T> {
    CMatrix::identity(n, n)
}

pub fn real_scalar<T: Real>(x: T) -> C<T> {
    C::new(x, T::zero())
}

pub fn zeros<T: Real>(r: usize, c: usize) -> CMatrix<T> {
    CMatrix::from_element(r, c, czero())
}
