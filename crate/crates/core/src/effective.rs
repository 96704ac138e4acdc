//! First- and second-order effective tensors at a threshold, the cell
//! problems that feed the second-order tensor, and the effective symbol.
//!
//! Cell integrals are trapezoid sums on the FFT grid. With
//! `ψ_p = ω^{-1}ς_p` and `φ_rp = ω^{-1}Λ_r^p`:
//!
//! * `g̃¹_r^{lp} = −Σ_s ∫ g_rs ψ̄_l (∂_s + ik°_s) ψ_p` and
//!   `g¹_r^{lp} = i(g̃¹_r^{lp} − conj g̃¹_r^{pl})`;
//! * `RHS_r^p = ω^{-1}Σ_s [g_rs (∂_s + ik°_s)ψ_p + (∂_s + ik°_s)(g_sr ψ_p)]`,
//!   `Λ_r^p = R₀^⊥ RHS_r^p`;
//! * `g²_{rq}^{lp} = −Σ_s ∫ g_qs (φ_rp ∂_s ψ̄_l − ψ̄_l ∂_s φ_rp)
//!   + 2i Σ_s k°_s ∫ g_qs φ_rp ψ̄_l + ∫ g_qr ψ_p ψ̄_l`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_operator::{CoefficientSamples, FiberOperator};
use crate::error::{invalid, Error, Result};
use crate::grid::CellGrid;
use crate::linalg::{
    hermitian_norm, hermiticity_defect, hermitize, CMatrix, CVector, HermitianEigen,
};
use crate::scalar::{cis, czero, Real, C};
use crate::spectral::ThresholdPoint;
use crate::threshold::ReducedResolvent;

#[derive(Debug, Clone)]
pub struct CellSolutions<T: Real> {
    pub d: usize,
    pub n: usize,
    /// `RHS_r^p` at index `r*n + p`.
    pub rhs: Vec<CVector<T>>,
    /// `Λ_r^p` at index `r*n + p`.
    pub solutions: Vec<CVector<T>>,
    pub residuals: Vec<T>,
}

impl<T: Real> CellSolutions<T> {
    pub fn rhs(&self, r: usize, p: usize) -> &CVector<T> {
        &self.rhs[r * self.n + p]
    }

    pub fn solution(&self, r: usize, p: usize) -> &CVector<T> {
        &self.solutions[r * self.n + p]
    }

    /// `Λ^p(δk) = −i Σ_r δk_r Λ_r^p`.
    pub fn corrector(&self, p: usize, dk: &[T]) -> CVector<T> {
        let mut out = CVector::zeros(self.solution(0, p).len());
        for r in 0..self.d {
            out += self.solution(r, p) * C::new(T::zero(), -dk[r]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cutoff: f64,
    pub basis_size: usize,
    pub grid: [usize; 3],
    pub cluster_tol: f64,
    pub gauge: String,
    pub certification_directions: usize,
    pub certification_radii: usize,
    /// Largest tensor change when the quadrature grid is doubled.
    pub refinement_defect: Option<f64>,
}

pub const GAUGE_RULE: &str =
    "lowest-frequency plane-wave overlaps upper triangular, positive diagonal";

/// Effective tensors at a threshold point in a fixed cluster gauge.
#[derive(Debug, Clone)]
pub struct EffectiveTensors<T: Real> {
    pub k0: Vec<T>,
    pub band: usize,
    pub lambda0: T,
    pub gap: T,
    pub kappa: T,
    pub n: usize,
    pub d: usize,
    /// `g¹_r^{lp}` at index `(l*n + p)*d + r`.
    pub g1: Vec<C<T>>,
    pub g1_tilde: Vec<C<T>>,
    /// `g²_{rq}^{lp}` at index `((l*n + p)*d + r)*d + q`.
    pub g2: Vec<C<T>>,
    /// Cluster basis `ς` the tensors refer to.
    pub cluster: CMatrix<T>,
    pub provenance: Provenance,
}

/// Grid fields shared by all tensor integrals.
struct Quadrature<'a, T: Real> {
    grid: &'a CellGrid<T>,
    samples: CoefficientSamples<T>,
    k0: Vec<T>,
    d: usize,
    psi: Vec<Vec<C<T>>>,
    dpsi: Vec<Vec<Vec<C<T>>>>,
}

impl<'a, T: Real> Quadrature<'a, T> {
    fn new(op: &FiberOperator<T>, tp: &ThresholdPoint<T>, grid: &'a CellGrid<T>) -> Result<Self> {
        let samples = op.coefficients().sample(grid)?;
        let d = op.dim();
        let mut psi = Vec::new();
        let mut dpsi = Vec::new();
        for p in 0..tp.n() {
            let (f, df) = Self::weighted(grid, op, &samples, &tp.varsigma(p), d);
            psi.push(f);
            dpsi.push(df);
        }
        Ok(Self {
            grid,
            samples,
            k0: tp.k0.clone(),
            d,
            psi,
            dpsi,
        })
    }

    /// Samples of `ω^{-1}u` and its spatial derivatives.
    fn weighted(
        grid: &CellGrid<T>,
        op: &FiberOperator<T>,
        samples: &CoefficientSamples<T>,
        u: &CVector<T>,
        d: usize,
    ) -> (Vec<C<T>>, Vec<Vec<C<T>>>) {
        let f: Vec<C<T>> = grid
            .synthesize(op.basis(), u)
            .into_iter()
            .zip(&samples.inv_omega)
            .map(|(z, &w)| z * w)
            .collect();
        let df = (0..d).map(|s| grid.derivative(&f, s)).collect();
        (f, df)
    }

    fn g(&self, r: usize, s: usize) -> &[T] {
        &self.samples.g[r * self.d + s]
    }

    /// `∫ w · a · conj(b)`.
    fn integral(&self, w: &[T], a: &[C<T>], b: &[C<T>]) -> C<T> {
        let terms: Vec<C<T>> = (0..a.len()).map(|i| a[i] * b[i].conj() * w[i]).collect();
        self.grid.integrate(&terms)
    }

    fn g1_tilde(&self, l: usize, p: usize, r: usize) -> C<T> {
        let mut acc = czero::<T>();
        for s in 0..self.d {
            let ik = C::new(T::zero(), self.k0[s]);
            let a: Vec<C<T>> = (0..self.psi[p].len())
                .map(|i| self.dpsi[p][s][i] + self.psi[p][i] * ik)
                .collect();
            acc += self.integral(self.g(r, s), &a, &self.psi[l]);
        }
        -acc
    }

    /// `g¹` by the expanded formula with the explicit `2k°` term.
    fn g1_expanded(&self, l: usize, p: usize, r: usize) -> C<T> {
        let mut acc = czero::<T>();
        let i = C::new(T::zero(), T::one());
        for s in 0..self.d {
            let g = self.g(r, s);
            // ∫ g (ψ_p ∂ψ̄_l − ψ̄_l ∂ψ_p)
            let t1 = self.integral(g, &self.psi[p], &self.dpsi[l][s]);
            let t2 = self.integral(g, &self.dpsi[p][s], &self.psi[l]);
            acc += i * (t1 - t2);
            acc += self.integral(g, &self.psi[p], &self.psi[l]) * (T::lit(2.0) * self.k0[s]);
        }
        acc
    }

    fn rhs(&self, op: &FiberOperator<T>, r: usize, p: usize) -> CVector<T> {
        let npts = self.grid.len();
        let mut out = vec![czero::<T>(); npts];
        for s in 0..self.d {
            let ik = C::new(T::zero(), self.k0[s]);
            let grs = self.g(r, s);
            let gsr: Vec<C<T>> = (0..npts)
                .map(|i| self.psi[p][i] * self.g(s, r)[i])
                .collect();
            let dgsr = self.grid.derivative(&gsr, s);
            for i in 0..npts {
                out[i] +=
                    (self.dpsi[p][s][i] + self.psi[p][i] * ik) * grs[i] + dgsr[i] + gsr[i] * ik;
            }
        }
        for (z, &w) in out.iter_mut().zip(&self.samples.inv_omega) {
            *z *= w;
        }
        self.grid.project(op.basis(), &out)
    }

    fn g2(&self, phi: &[C<T>], dphi: &[Vec<C<T>>], l: usize, p: usize, r: usize, q: usize) -> C<T> {
        let mut acc = czero::<T>();
        for s in 0..self.d {
            let g = self.g(q, s);
            let t1 = self.integral(g, phi, &self.dpsi[l][s]);
            let t2 = self.integral(g, &dphi[s], &self.psi[l]);
            acc -= t1 - t2;
            acc +=
                C::new(T::zero(), T::lit(2.0) * self.k0[s]) * self.integral(g, phi, &self.psi[l]);
        }
        acc + self.integral(self.g(q, r), &self.psi[p], &self.psi[l])
    }
}

/// `(g¹, g̃¹)` as flat arrays indexed `(l*n + p)*d + r`.
pub fn g1_tensor<T: Real>(
    op: &FiberOperator<T>,
    tp: &ThresholdPoint<T>,
) -> Result<(Vec<C<T>>, Vec<C<T>>)> {
    let quad = Quadrature::new(op, tp, op.grid())?;
    Ok(g1_from(&quad, tp.n()))
}

fn g1_from<T: Real>(quad: &Quadrature<'_, T>, n: usize) -> (Vec<C<T>>, Vec<C<T>>) {
    let d = quad.d;
    let mut tilde = vec![czero::<T>(); n * n * d];
    for l in 0..n {
        for p in 0..n {
            for r in 0..d {
                tilde[(l * n + p) * d + r] = quad.g1_tilde(l, p, r);
            }
        }
    }
    let i = C::new(T::zero(), T::one());
    let mut g1 = vec![czero::<T>(); n * n * d];
    for l in 0..n {
        for p in 0..n {
            for r in 0..d {
                g1[(l * n + p) * d + r] =
                    i * (tilde[(l * n + p) * d + r] - tilde[(p * n + l) * d + r].conj());
            }
        }
    }
    (g1, tilde)
}

/// `g¹` from the expanded display (derivative terms plus `2Σ_s k°_s ∫ g_rs ω^{-2} ς_p ς̄_l`).
pub fn g1_tensor_expanded<T: Real>(
    op: &FiberOperator<T>,
    tp: &ThresholdPoint<T>,
) -> Result<Vec<C<T>>> {
    let quad = Quadrature::new(op, tp, op.grid())?;
    let (n, d) = (tp.n(), op.dim());
    let mut out = vec![czero::<T>(); n * n * d];
    for l in 0..n {
        for p in 0..n {
            for r in 0..d {
                out[(l * n + p) * d + r] = quad.g1_expanded(l, p, r);
            }
        }
    }
    Ok(out)
}

pub fn solve_cell_problems<T: Real>(
    op: &FiberOperator<T>,
    tp: &ThresholdPoint<T>,
    rr: &ReducedResolvent<T>,
) -> Result<CellSolutions<T>> {
    let quad = Quadrature::new(op, tp, op.grid())?;
    cells_from(op, tp, rr, &quad)
}

fn cells_from<T: Real>(
    op: &FiberOperator<T>,
    tp: &ThresholdPoint<T>,
    rr: &ReducedResolvent<T>,
    quad: &Quadrature<'_, T>,
) -> Result<CellSolutions<T>> {
    let (n, d) = (tp.n(), op.dim());
    let rhs: Vec<CVector<T>> = (0..d * n).map(|rp| quad.rhs(op, rp / n, rp % n)).collect();
    let solved: Vec<(CVector<T>, T)> = rhs
        .par_iter()
        .map(|y| rr.apply_with_residual(y))
        .collect::<Result<_>>()?;
    let (solutions, residuals) = solved.into_iter().unzip();
    Ok(CellSolutions {
        d,
        n,
        rhs,
        solutions,
        residuals,
    })
}

/// `g²` as a flat array indexed `((l*n + p)*d + r)*d + q`.
pub fn g2_tensor<T: Real>(
    op: &FiberOperator<T>,
    tp: &ThresholdPoint<T>,
    cells: &CellSolutions<T>,
) -> Result<Vec<C<T>>> {
    let quad = Quadrature::new(op, tp, op.grid())?;
    Ok(g2_from(op, &quad, cells, tp.n()))
}

fn g2_from<T: Real>(
    op: &FiberOperator<T>,
    quad: &Quadrature<'_, T>,
    cells: &CellSolutions<T>,
    n: usize,
) -> Vec<C<T>> {
    let d = quad.d;
    let mut out = vec![czero::<T>(); n * n * d * d];
    for r in 0..d {
        for p in 0..n {
            let (phi, dphi) =
                Quadrature::weighted(quad.grid, op, &quad.samples, cells.solution(r, p), d);
            for l in 0..n {
                for q in 0..d {
                    out[((l * n + p) * d + r) * d + q] = quad.g2(&phi, &dphi, l, p, r, q);
                }
            }
        }
    }
    out
}

struct TensorParts<T: Real> {
    g1: Vec<C<T>>,
    g1_tilde: Vec<C<T>>,
    g2: Vec<C<T>>,
}

fn tensors_on_grid<T: Real>(
    op: &FiberOperator<T>,
    tp: &ThresholdPoint<T>,
    rr: &ReducedResolvent<T>,
    grid: &CellGrid<T>,
) -> Result<TensorParts<T>> {
    let quad = Quadrature::new(op, tp, grid)?;
    let (g1, g1_tilde) = g1_from(&quad, tp.n());
    let cells = cells_from(op, tp, rr, &quad)?;
    let g2 = g2_from(op, &quad, &cells, tp.n());
    Ok(TensorParts { g1, g1_tilde, g2 })
}

/// Computes all tensors on the operator's grid, and records how much they
/// change on a grid refined by a factor of two.
pub fn effective_tensors<T: Real>(
    op: &FiberOperator<T>,
    tp: &ThresholdPoint<T>,
    rr: &ReducedResolvent<T>,
) -> Result<EffectiveTensors<T>> {
    let base = tensors_on_grid(op, tp, rr, op.grid())?;
    let fine = tensors_on_grid(op, tp, rr, &op.grid().refined(2))?;
    let defect = base
        .g1
        .iter()
        .zip(&fine.g1)
        .chain(base.g2.iter().zip(&fine.g2))
        .map(|(a, b)| (a - b).norm_sqr().sqrt())
        .fold(T::zero(), |a, b| a.max(b));
    if defect > T::tol(1e-9, 1e6) * (T::one() + tp.lambda0.abs()) {
        log::warn!(
            "effective tensors change by {:e} under grid refinement",
            defect.as_f64()
        );
    }
    Ok(EffectiveTensors {
        k0: tp.k0.clone(),
        band: tp.band,
        lambda0: tp.lambda0,
        gap: tp.gap,
        kappa: tp.kappa,
        n: tp.n(),
        d: op.dim(),
        g1: base.g1,
        g1_tilde: base.g1_tilde,
        g2: base.g2,
        cluster: tp.cluster.clone(),
        provenance: Provenance {
            cutoff: op.basis().cutoff().as_f64(),
            basis_size: op.len(),
            grid: op.grid().shape(),
            cluster_tol: tp.cluster_tol.as_f64(),
            gauge: GAUGE_RULE.to_string(),
            certification_directions: tp.certification.directions,
            certification_radii: tp.certification.radii,
            refinement_defect: Some(defect.as_f64()),
        },
    })
}

impl<T: Real> EffectiveTensors<T> {
    pub fn g1(&self, l: usize, p: usize, r: usize) -> C<T> {
        self.g1[(l * self.n + p) * self.d + r]
    }

    pub fn g2(&self, l: usize, p: usize, r: usize, q: usize) -> C<T> {
        self.g2[((l * self.n + p) * self.d + r) * self.d + q]
    }

    /// `𝔤(δk) − λ₀ I`, checked for Hermiticity.
    pub fn symbol_shifted(&self, dk: &[T]) -> Result<CMatrix<T>> {
        if dk.len() != self.d {
            return invalid("quasimomentum dimension mismatch");
        }
        let (n, d) = (self.n, self.d);
        let m = CMatrix::from_fn(n, n, |l, p| {
            let mut z = czero::<T>();
            for r in 0..d {
                z += self.g1(l, p, r) * dk[r];
                for q in 0..d {
                    z += self.g2(l, p, r, q) * (dk[r] * dk[q]);
                }
            }
            z
        });
        let defect = hermiticity_defect(&m);
        let scale = T::one().max(m.norm()).max(self.lambda0.abs());
        if defect > T::tol(1e-10, 1e4) * scale {
            return Err(Error::Consistency(format!(
                "effective symbol deviates from Hermitian by {:e}",
                defect.as_f64()
            )));
        }
        Ok(hermitize(&m))
    }

    /// `𝔤(δk) = λ₀ I + ⟨g¹, δk⟩ + ⟨g²δk, δk⟩`.
    pub fn symbol(&self, dk: &[T]) -> Result<CMatrix<T>> {
        let mut m = self.symbol_shifted(dk)?;
        for i in 0..self.n {
            m[(i, i)] += C::new(self.lambda0, T::zero());
        }
        Ok(m)
    }

    /// `e^{-iτ(𝔤(δk) − λ₀)} a`.
    pub fn evolve_shifted(&self, dk: &[T], tau: T, a: &CVector<T>) -> Result<CVector<T>> {
        let e = HermitianEigen::refined(&self.symbol_shifted(dk)?)?;
        Ok(e.evolve(a, tau))
    }

    /// Largest deviation of `g²` quadratic forms from Hermitian, probed on
    /// the coordinate directions and their pairwise sums.
    pub fn quadratic_hermiticity_defect(&self) -> Result<T> {
        let mut worst = T::zero();
        let d = self.d;
        for a in 0..d {
            for b in a..d {
                let mut dk = vec![T::zero(); d];
                dk[a] = T::one();
                dk[b] += T::one();
                let m = self.symbol_shifted(&dk)? - self.symbol_shifted(&vec![T::zero(); d])?;
                worst = worst.max(hermiticity_defect(&m));
            }
        }
        Ok(worst)
    }

    pub fn symbol_norm(&self, dk: &[T]) -> Result<T> {
        hermitian_norm(&self.symbol(dk)?)
    }
}

pub fn effective_symbol<T: Real>(tensors: &EffectiveTensors<T>, dk: &[T]) -> Result<CMatrix<T>> {
    tensors.symbol(dk)
}

/// `c_j(τ) = e^{-iτ𝔤(δk)} e_j` for a zero-based component `j`.
pub fn reduced_evolution<T: Real>(
    tensors: &EffectiveTensors<T>,
    dk: &[T],
    tau: T,
    j: usize,
) -> Result<CVector<T>> {
    if j >= tensors.n {
        return invalid(format!("component {j} outside 0..{}", tensors.n));
    }
    let mut e = CVector::zeros(tensors.n);
    e[j] = C::new(T::one(), T::zero());
    Ok(tensors.evolve_shifted(dk, tau, &e)? * cis(-tau * tensors.lambda0))
}

/// Serializable tensor record; complex values are `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub k0: Vec<f64>,
    pub band: usize,
    pub lambda0: f64,
    pub n: usize,
    pub d: usize,
    pub d0: f64,
    pub kappa: f64,
    pub g1: Vec<[f64; 2]>,
    pub g1_tilde: Vec<[f64; 2]>,
    pub g2: Vec<[f64; 2]>,
    pub basis: ClusterRecord,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    /// Dual-lattice multi-indices of the plane waves, in basis order.
    pub indices: Vec<Vec<i32>>,
    /// `coefficients[p][i]` is the coefficient of plane wave `i` in `ς_p`
    /// (orthonormal plane-wave normalization).
    pub coefficients: Vec<Vec<[f64; 2]>>,
}

fn pair<T: Real>(z: &C<T>) -> [f64; 2] {
    [z.re.as_f64(), z.im.as_f64()]
}

fn unpair<T: Real>(z: &[f64; 2]) -> C<T> {
    C::new(T::lit(z[0]), T::lit(z[1]))
}

impl<T: Real> EffectiveTensors<T> {
    pub fn to_record(&self, op: &FiberOperator<T>) -> TensorRecord {
        let d = self.d;
        TensorRecord {
            k0: self.k0.iter().map(|x| x.as_f64()).collect(),
            band: self.band,
            lambda0: self.lambda0.as_f64(),
            n: self.n,
            d,
            d0: self.gap.as_f64(),
            kappa: self.kappa.as_f64(),
            g1: self.g1.iter().map(pair).collect(),
            g1_tilde: self.g1_tilde.iter().map(pair).collect(),
            g2: self.g2.iter().map(pair).collect(),
            basis: ClusterRecord {
                indices: op
                    .basis()
                    .indices()
                    .iter()
                    .map(|m| m[..d].to_vec())
                    .collect(),
                coefficients: (0..self.n)
                    .map(|p| self.cluster.column(p).iter().map(pair).collect())
                    .collect(),
            },
            provenance: self.provenance.clone(),
        }
    }

    /// Rebuilds tensors from a record whose plane-wave basis must coincide
    /// with the operator's.
    pub fn from_record(rec: &TensorRecord, op: &FiberOperator<T>) -> Result<Self> {
        let (n, d) = (rec.n, rec.d);
        if d != op.dim() {
            return invalid("tensor record dimension differs from the configuration");
        }
        let idx: Vec<Vec<i32>> = op
            .basis()
            .indices()
            .iter()
            .map(|m| m[..d].to_vec())
            .collect();
        if idx != rec.basis.indices {
            return invalid("tensor record plane-wave basis differs from the configuration");
        }
        if rec.g1.len() != n * n * d
            || rec.g2.len() != n * n * d * d
            || rec.basis.coefficients.len() != n
        {
            return invalid("tensor record arrays have inconsistent sizes");
        }
        let cluster = CMatrix::from_fn(idx.len(), n, |i, p| unpair(&rec.basis.coefficients[p][i]));
        Ok(Self {
            k0: rec.k0.iter().map(|&x| T::lit(x)).collect(),
            band: rec.band,
            lambda0: T::lit(rec.lambda0),
            gap: T::lit(rec.d0),
            kappa: T::lit(rec.kappa),
            n,
            d,
            g1: rec.g1.iter().map(unpair).collect(),
            g1_tilde: rec.g1_tilde.iter().map(unpair).collect(),
            g2: rec.g2.iter().map(unpair).collect(),
            cluster,
            provenance: rec.provenance.clone(),
        })
    }
}
