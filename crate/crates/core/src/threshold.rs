//! Spectral projections near a threshold, the reduced resolvent, the
//! first-order projection corrector `F₁`, the explicit constants `C₁..C₁₁`
//! and direct evaluation of the fiber exponential estimate.

use nalgebra::{Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::effective::EffectiveTensors;
use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_norm, operator_norm, CMatrix, CVector, HermitianEigen};
use crate::scalar::{cis, Real, C};
use crate::spectral::ThresholdPoint;

/// `R₀^⊥(λ₀)`: inverse of `M(k°) − λ₀` on the orthogonal complement of the
/// cluster, realized by an LU factorization of the deflated matrix
/// `M(k°) − λ₀ + d₀ P`.
#[derive(Clone)]
pub struct ReducedResolvent<T: Real> {
    lu: LU<C<T>, Dyn, Dyn>,
    cluster: CMatrix<T>,
    centered: CMatrix<T>,
}

impl<T: Real> std::fmt::Debug for ReducedResolvent<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReducedResolvent")
            .field("dim", &self.centered.nrows())
            .finish()
    }
}

impl<T: Real> ReducedResolvent<T> {
    pub fn new(tp: &ThresholdPoint<T>) -> Result<Self> {
        let s = &tp.cluster;
        let centered = tp.expansion().centered().clone();
        let deflated = &centered + (s * s.adjoint()) * C::new(tp.gap, T::zero());
        let lu = deflated.lu();
        if !lu.is_invertible() {
            return Err(Error::LinearSolve(
                "deflated fiber matrix is singular".into(),
            ));
        }
        Ok(Self {
            lu,
            cluster: s.clone(),
            centered,
        })
    }

    fn deflate(&self, y: &CVector<T>) -> CVector<T> {
        y - &self.cluster * self.cluster.ad_mul(y)
    }

    /// Returns `x = R₀^⊥ y` and the residual `‖(M(k°) − λ₀)x − P^⊥y‖`.
    pub fn apply_with_residual(&self, y: &CVector<T>) -> Result<(CVector<T>, T)> {
        let yp = self.deflate(y);
        let x = self
            .lu
            .solve(&yp)
            .ok_or_else(|| Error::LinearSolve("LU solve failed".into()))?;
        let x = self.deflate(&x);
        let res = (&self.centered * &x - &yp).norm();
        let scale = y.norm();
        if !(res <= T::tol(1e-6, 1e8) * scale) {
            return Err(Error::LinearSolve(format!(
                "reduced resolvent residual {:e} relative to ‖y‖ = {:e}",
                res.as_f64(),
                scale.as_f64()
            )));
        }
        Ok((x, res))
    }

    pub fn apply(&self, y: &CVector<T>) -> Result<CVector<T>> {
        Ok(self.apply_with_residual(y)?.0)
    }

    pub fn apply_columns(&self, y: &CMatrix<T>) -> Result<CMatrix<T>> {
        let mut out = CMatrix::zeros(y.nrows(), y.ncols());
        for j in 0..y.ncols() {
            out.set_column(j, &self.apply(&y.column(j).clone_owned())?);
        }
        Ok(out)
    }
}

pub fn reduced_resolvent_apply<T: Real>(
    tp: &ThresholdPoint<T>,
    y: &CVector<T>,
) -> Result<CVector<T>> {
    ReducedResolvent::new(tp)?.apply(y)
}

/// `F₁^×(δk) = −P L(δk) R₀^⊥`, where `L(δk)` is the part of the fiber
/// matrix linear in `δk`.
pub fn f1_cross<T: Real>(
    tp: &ThresholdPoint<T>,
    rr: &ReducedResolvent<T>,
    dk: &[T],
) -> Result<CMatrix<T>> {
    let s = &tp.cluster;
    let ls = tp.expansion().linear_part(dk) * s;
    // (P L R⊥) = S (R⊥ L S)*, using that L and R⊥ are self-adjoint.
    let x = rr.apply_columns(&ls)?;
    Ok(-(s * x.adjoint()))
}

/// `F₁(δk) = F₁^×(δk) + F₁^×(δk)*`.
pub fn f1<T: Real>(
    tp: &ThresholdPoint<T>,
    rr: &ReducedResolvent<T>,
    dk: &[T],
) -> Result<CMatrix<T>> {
    let x = f1_cross(tp, rr, dk)?;
    Ok(&x + x.adjoint())
}

#[derive(Debug, Clone)]
pub struct ProjectionData<T: Real> {
    pub dk: Vec<T>,
    /// `F(k)` for `k = k° + δk`.
    pub projection: CMatrix<T>,
    /// `‖F(k) − P‖`.
    pub distance: T,
    /// `‖F(k) − P − F₁(δk)‖`.
    pub corrected_distance: T,
}

/// Spectral projection of `M(k° + δk)` for the segment `[λ₀ − d₀/3, λ₀ + d₀/3]`.
pub fn spectral_projection<T: Real>(
    tp: &ThresholdPoint<T>,
    rr: &ReducedResolvent<T>,
    dk: &[T],
) -> Result<ProjectionData<T>> {
    if dk.len() != tp.dim() {
        return invalid("quasimomentum dimension mismatch");
    }
    let e = HermitianEigen::new(&tp.expansion().matrix(dk))?;
    let third = tp.gap / T::lit(3.0);
    let idx: Vec<usize> = (0..e.dim())
        .filter(|&j| e.values[j].abs() <= third)
        .collect();
    if idx.len() != tp.n() {
        return Err(Error::Certification(format!(
            "{} eigenvalues in the threshold segment, expected {}",
            idx.len(),
            tp.n()
        )));
    }
    let v = CMatrix::from_fn(e.dim(), idx.len(), |r, c| e.vectors[(r, idx[c])]);
    let f = &v * v.adjoint();
    let p = &tp.cluster * tp.cluster.adjoint();
    let diff = &f - &p;
    let distance = hermitian_norm(&diff)?;
    let corrected_distance = hermitian_norm(&(diff - f1(tp, rr, dk)?))?;
    Ok(ProjectionData {
        dk: dk.to_vec(),
        projection: f,
        distance,
        corrected_distance,
    })
}

/// Inputs of the constants ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerInputs<T> {
    pub lambda0: T,
    pub d0: T,
    pub kappa: T,
    pub norm_g: T,
    pub norm_inv_omega: T,
}

/// Contour length and the constants `C₁..C₁₁` of the threshold estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger<T> {
    pub inputs: LedgerInputs<T>,
    pub l_gamma: T,
    pub c1: T,
    pub c2_check: T,
    pub c2: T,
    pub c3: T,
    pub c4: T,
    pub c5: T,
    pub c6: T,
    pub c7: T,
    pub c8: T,
    pub c9: T,
    pub c10: T,
    pub c11: T,
}

impl<T: Real> ConstantsLedger<T> {
    pub fn new(inputs: LedgerInputs<T>) -> Result<Self> {
        let LedgerInputs {
            lambda0,
            d0,
            kappa,
            norm_g,
            norm_inv_omega,
        } = inputs;
        if !(d0 > T::zero()
            && kappa > T::zero()
            && norm_g > T::zero()
            && norm_inv_omega > T::zero())
            || !(lambda0 >= T::zero())
        {
            return invalid("ledger inputs must be positive (λ₀ nonnegative)");
        }
        let pi = T::pi();
        let two_pi = T::two_pi();
        let n = |x: f64| T::lit(x);
        let l_gamma = (pi + n(4.0)) * d0 / n(3.0);
        let c4 = norm_g.sqrt() * norm_inv_omega;
        let c1 = n(6.0) * c4 / d0;
        let c2 = (n(24.0) / d0 + n(36.0) * lambda0 / (d0 * d0)).sqrt();
        let c2_check = c2 + n(6.0) * c4 * kappa / d0;
        let c3 = n(4.0) + n(6.0) * lambda0 / d0;
        let c5 = n(2.0) * c1 * c2 * c2_check * c4
            + c1 * c1 * c3
            + n(2.0) * c1 * c1 * c2 * c4 * kappa
            + c1 * c2 * c2 * c4
            + c1 * c1;
        let c6 = n(3.0) * c1 * c1 * c2 * c4
            + n(3.0) * c1 * c2 * c2 * c2_check * c4 * c4
            + n(3.0) * c1 * c1 * c2 * c3 * c4
            + n(3.0) * c1 * c1 * c2 * c2 * c4 * c4 * kappa
            + c1 * c1 * c2_check * c3 * c4
            + c1 * c1 * c1 * c3 * c4 * kappa
            + c1 * c2 * c2 * c2 * c4 * c4
            + c1 * c1 * c2_check * c4
            + c1 * c1 * c1 * c4 * kappa;
        let c7 = l_gamma * (c1 * c2 + c1 * c2_check + c1 * c1 * kappa) / two_pi;
        let c8 = l_gamma * c5 / two_pi;
        let c9 = l_gamma * l_gamma * c1 * c2 * c5 / (n(2.0) * pi * pi);
        let mid = lambda0 + d0 / n(2.0);
        let c10 = mid * l_gamma * (n(3.0) * c1 * c2 * c2 * c4 + c1 * c1 * c3 + c1 * c1) / two_pi;
        let c11 = lambda0 * c9 + c7 * c10 + mid * l_gamma * c6 / two_pi;
        let out = Self {
            inputs,
            l_gamma,
            c1,
            c2_check,
            c2,
            c3,
            c4,
            c5,
            c6,
            c7,
            c8,
            c9,
            c10,
            c11,
        };
        let all = [c1, c2_check, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11];
        if all.iter().any(|c| !(c.is_finite() && *c > T::zero())) {
            return Err(Error::Consistency(
                "ledger constant not positive and finite".into(),
            ));
        }
        Ok(out)
    }

    /// `3C₇|δk| + C₁₁|τ||δk|³`.
    pub fn exponential_bound(&self, dk_norm: T, tau: T) -> T {
        T::lit(3.0) * self.c7 * dk_norm + self.c11 * tau.abs() * dk_norm.powi(3)
    }

    pub fn to_f64(&self) -> ConstantsLedger<f64> {
        let f = |x: T| x.as_f64();
        ConstantsLedger {
            inputs: LedgerInputs {
                lambda0: f(self.inputs.lambda0),
                d0: f(self.inputs.d0),
                kappa: f(self.inputs.kappa),
                norm_g: f(self.inputs.norm_g),
                norm_inv_omega: f(self.inputs.norm_inv_omega),
            },
            l_gamma: f(self.l_gamma),
            c1: f(self.c1),
            c2_check: f(self.c2_check),
            c2: f(self.c2),
            c3: f(self.c3),
            c4: f(self.c4),
            c5: f(self.c5),
            c6: f(self.c6),
            c7: f(self.c7),
            c8: f(self.c8),
            c9: f(self.c9),
            c10: f(self.c10),
            c11: f(self.c11),
        }
    }
}

/// Ledger for a threshold point, with `‖g‖_{L∞}` and `‖ω^{-1}‖_{L∞}` taken
/// from the coefficient data.
pub fn constants_ledger<T: Real>(
    tp: &ThresholdPoint<T>,
    norm_g: T,
    norm_inv_omega: T,
) -> Result<ConstantsLedger<T>> {
    ConstantsLedger::new(LedgerInputs {
        lambda0: tp.lambda0.max(T::zero()),
        d0: tp.gap,
        kappa: tp.kappa,
        norm_g,
        norm_inv_omega,
    })
}

/// `‖(e^{-iτ M(k°+δk)} − e^{-iτ 𝔊°(δk)P})P‖` and `3C₇|δk| + C₁₁|τ||δk|³`.
///
/// The common phase `e^{-iτλ₀}` is removed from both exponentials, which
/// leaves the norm unchanged and keeps the phases accurate at large `τ`.
pub fn verify_exponential_bound<T: Real>(
    tp: &ThresholdPoint<T>,
    tensors: &EffectiveTensors<T>,
    ledger: &ConstantsLedger<T>,
    dk: &[T],
    tau: T,
) -> Result<(T, T)> {
    let s = &tp.cluster;
    let window = tp.gap / T::lit(3.0);
    let exact = HermitianEigen::refined_in(&tp.expansion().matrix(dk), -window, window)?;
    let left = exact.apply_fn_mat(s, |lam| cis(-tau * lam));
    let sym = HermitianEigen::new(&tensors.symbol_shifted(dk)?)?;
    let right = s * sym.apply_fn_mat(&CMatrix::identity(tp.n(), tp.n()), |lam| cis(-tau * lam));
    let lhs = operator_norm(&(left - right))?;
    let dk_norm = dk.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
    Ok((lhs, ledger.exponential_bound(dk_norm, tau)))
}
