//! Periodic coefficients, the ground-state factorization and assembly of
//! fiber matrices in the plane-wave basis.
//!
//! The fiber operator `ω^{-1}(D+k)* g (D+k) ω^{-1}` is applied to each basis
//! function on the sampling grid, with derivatives taken spectrally, and the
//! result is projected back onto the basis. Because the operator is a
//! quadratic polynomial in `k`, the assembly stores its three coefficient
//! blocks and evaluates any fiber as a linear combination.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::CellGrid;
use crate::lattice::{Lattice, MultiIndex, PlaneWaveBasis};
use crate::linalg::{hermitize, CMatrix, CVector, HermitianEigen};
use crate::scalar::{cabs, czero, Real, C};

/// Band-limited periodic field `Σ_m f̂(m) e^{i⟨Bm, x⟩}` given by its nonzero
/// coefficients, sorted by multi-index.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierField<T: Real> {
    terms: Vec<(MultiIndex, C<T>)>,
}

impl<T: Real> FourierField<T> {
    pub fn new(terms: impl IntoIterator<Item = (MultiIndex, C<T>)>) -> Self {
        let mut terms: Vec<(MultiIndex, C<T>)> = terms.into_iter().collect();
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(MultiIndex, C<T>)> = Vec::with_capacity(terms.len());
        for (m, z) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == m => last.1 += z,
                _ => merged.push((m, z)),
            }
        }
        merged.retain(|(_, z)| z.re != T::zero() || z.im != T::zero());
        Self { terms: merged }
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(value: T) -> Self {
        Self::new([([0, 0, 0], C::new(value, T::zero()))])
    }

    /// `2a cos⟨Bm, x⟩`.
    pub fn cosine(m: MultiIndex, a: T) -> Self {
        let z = C::new(a, T::zero());
        Self::new([(m, z), ([-m[0], -m[1], -m[2]], z)])
    }

    pub fn terms(&self) -> &[(MultiIndex, C<T>)] {
        &self.terms
    }

    pub fn coefficient(&self, m: &MultiIndex) -> C<T> {
        self.terms
            .binary_search_by(|(k, _)| k.cmp(m))
            .map(|i| self.terms[i].1)
            .unwrap_or_else(|_| czero())
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// `max_m |f̂(-m) - conj f̂(m)|`; zero for a real field.
    pub fn reality_defect(&self) -> T {
        self.terms
            .iter()
            .map(|(m, z)| cabs(self.coefficient(&[-m[0], -m[1], -m[2]]) - z.conj()))
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn max_abs_coefficient(&self) -> T {
        self.terms
            .iter()
            .map(|(_, z)| cabs(*z))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Largest `|m_l|` per axis.
    pub fn bandwidth(&self) -> [i32; 3] {
        let mut w = [0i32; 3];
        for (m, _) in &self.terms {
            for l in 0..3 {
                w[l] = w[l].max(m[l].abs());
            }
        }
        w
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            terms: self.terms.iter().map(|(m, z)| (*m, *z * s)).collect(),
        }
    }

    pub fn samples(&self, grid: &CellGrid<T>) -> Result<Vec<C<T>>> {
        let mut data = vec![czero::<T>(); grid.len()];
        for (m, z) in &self.terms {
            let slot = grid.slot(m).ok_or_else(|| {
                Error::InvalidInput(format!("Fourier mode {m:?} exceeds the sampling grid"))
            })?;
            data[slot] += *z;
        }
        grid.inverse(&mut data);
        Ok(data)
    }

    /// Samples of a real field; the imaginary part is discarded.
    pub fn real_samples(&self, grid: &CellGrid<T>) -> Result<Vec<T>> {
        Ok(self.samples(grid)?.into_iter().map(|z| z.re).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    GroundState,
    Supplied,
}

/// Ground state of `D*ǧD + V` in the plane-wave basis.
#[derive(Debug, Clone)]
pub struct GroundState<T: Real> {
    pub omega: FourierField<T>,
    pub shift: T,
    /// `‖(D*ǧD + V − shift)ω‖_{L₂(Ω)}` evaluated on the sampling grid.
    pub residual: T,
}

/// Coefficient data of the operator. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PeriodicCoefficients<T: Real> {
    lattice: Lattice<T>,
    metric: Vec<FourierField<T>>,
    potential: Option<FourierField<T>>,
    shift: T,
    omega: FourierField<T>,
    source: WeightSource,
    ground_residual: Option<T>,
    alpha0: T,
    alpha1: T,
    norm_g: T,
    norm_inv_omega: T,
    norm_grid: [usize; 3],
}

/// Grid samples of `ω`, `1/ω`, `ǧ` and `g = ω²ǧ` (entries row-major `r*d+s`).
#[derive(Debug, Clone)]
pub struct CoefficientSamples<T: Real> {
    pub omega: Vec<T>,
    pub inv_omega: Vec<T>,
    pub metric: Vec<Vec<T>>,
    pub g: Vec<Vec<T>>,
}

impl<T: Real> PeriodicCoefficients<T> {
    /// `ǧ = 1`, `V = 0`.
    pub fn free(basis: &PlaneWaveBasis<T>) -> Result<Self> {
        Self::from_potential(basis, identity_metric(basis.dim()), None)
    }

    /// Computes `ω` and the spectral shift from `(ǧ, V)`.
    pub fn from_potential(
        basis: &PlaneWaveBasis<T>,
        metric: Vec<FourierField<T>>,
        potential: Option<FourierField<T>>,
    ) -> Result<Self> {
        let grid = CellGrid::for_basis(basis);
        let (alpha0, alpha1) = validate_metric(basis, &grid, &metric)?;
        if let Some(v) = &potential {
            validate_field(basis, &grid, v, "potential")?;
        }
        let gs = ground_state(basis, &metric, potential.as_ref())?;
        let mut out = Self {
            lattice: basis.lattice().clone(),
            metric,
            potential,
            shift: gs.shift,
            omega: gs.omega,
            source: WeightSource::GroundState,
            ground_residual: Some(gs.residual),
            alpha0,
            alpha1,
            norm_g: T::zero(),
            norm_inv_omega: T::zero(),
            norm_grid: grid.shape(),
        };
        out.compute_norms(&grid)?;
        Ok(out)
    }

    /// Uses a supplied positive weight `ω`, rescaled so that `‖ω‖² = |Ω|`.
    pub fn from_weight(
        basis: &PlaneWaveBasis<T>,
        metric: Vec<FourierField<T>>,
        omega: FourierField<T>,
    ) -> Result<Self> {
        let grid = CellGrid::for_basis(basis);
        let (alpha0, alpha1) = validate_metric(basis, &grid, &metric)?;
        if omega.reality_defect() > T::tol(1e-12, 100.0) * (T::one() + omega.max_abs_coefficient())
        {
            return invalid("weight ω must be a real field");
        }
        let samples = omega.real_samples(&grid)?;
        if samples.iter().any(|&w| !(w > T::zero())) {
            return invalid("weight ω must be strictly positive on the sampling grid");
        }
        // ‖ω‖² = |Ω| Σ|ω̂|².
        let s2 = omega
            .terms()
            .iter()
            .fold(T::zero(), |a, (_, z)| a + z.norm_sqr());
        let omega = omega.scaled(T::one() / s2.sqrt());
        let mut out = Self {
            lattice: basis.lattice().clone(),
            metric,
            potential: None,
            shift: T::zero(),
            omega,
            source: WeightSource::Supplied,
            ground_residual: None,
            alpha0,
            alpha1,
            norm_g: T::zero(),
            norm_inv_omega: T::zero(),
            norm_grid: grid.shape(),
        };
        out.compute_norms(&grid)?;
        Ok(out)
    }

    fn compute_norms(&mut self, grid: &CellGrid<T>) -> Result<()> {
        let s = self.sample(grid)?;
        let d = self.dim();
        let mut norm_g = T::zero();
        let mut min_omega = T::max_value().unwrap();
        for i in 0..grid.len() {
            let gx = DMatrix::from_fn(d, d, |r, c| s.g[r * d + c][i]);
            let eig = gx.symmetric_eigenvalues();
            norm_g = norm_g.max(eig.iter().fold(T::zero(), |a, v| a.max(v.abs())));
            min_omega = min_omega.min(s.omega[i]);
        }
        if !(min_omega > T::zero()) {
            return Err(Error::Resolution(
                "ω is not positive on the sampling grid".into(),
            ));
        }
        self.norm_g = norm_g;
        self.norm_inv_omega = T::one() / min_omega;
        Ok(())
    }

    pub fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    /// Entry `ǧ_rs` of the metric.
    pub fn metric(&self, r: usize, s: usize) -> &FourierField<T> {
        &self.metric[r * self.dim() + s]
    }

    pub fn metric_fields(&self) -> &[FourierField<T>] {
        &self.metric
    }

    /// Potential before the spectral shift.
    pub fn potential(&self) -> Option<&FourierField<T>> {
        self.potential.as_ref()
    }

    /// Amount subtracted from `V` so that `inf spec = 0`.
    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn omega(&self) -> &FourierField<T> {
        &self.omega
    }

    pub fn weight_source(&self) -> WeightSource {
        self.source
    }

    pub fn ground_residual(&self) -> Option<T> {
        self.ground_residual
    }

    /// Ellipticity bounds `α₀ ≤ ǧ(x) ≤ α₁` over the sampling grid.
    pub fn ellipticity(&self) -> (T, T) {
        (self.alpha0, self.alpha1)
    }

    /// Grid maximum of the pointwise spectral norm of `g`.
    pub fn norm_g(&self) -> T {
        self.norm_g
    }

    /// Grid maximum of `1/ω`.
    pub fn norm_inv_omega(&self) -> T {
        self.norm_inv_omega
    }

    pub fn norm_grid(&self) -> [usize; 3] {
        self.norm_grid
    }

    /// `‖ω‖²_{L₂(Ω)}` computed from the Fourier coefficients.
    pub fn omega_norm_sqr(&self) -> T {
        self.lattice.volume()
            * self
                .omega
                .terms()
                .iter()
                .fold(T::zero(), |a, (_, z)| a + z.norm_sqr())
    }

    pub fn sample(&self, grid: &CellGrid<T>) -> Result<CoefficientSamples<T>> {
        let d = self.dim();
        let omega = self.omega.real_samples(grid)?;
        if omega.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::Resolution(
                "ω changes sign on the sampling grid".into(),
            ));
        }
        let inv_omega: Vec<T> = omega.iter().map(|&w| T::one() / w).collect();
        let metric: Vec<Vec<T>> = self
            .metric
            .iter()
            .map(|f| f.real_samples(grid))
            .collect::<Result<_>>()?;
        let g = (0..d * d)
            .map(|rs| {
                metric[rs]
                    .iter()
                    .zip(&omega)
                    .map(|(&m, &w)| w * w * m)
                    .collect()
            })
            .collect();
        Ok(CoefficientSamples {
            omega,
            inv_omega,
            metric,
            g,
        })
    }
}

/// `ǧ = 1` as a list of `d×d` fields.
pub fn identity_metric<T: Real>(d: usize) -> Vec<FourierField<T>> {
    (0..d * d)
        .map(|rs| {
            if rs / d == rs % d {
                FourierField::constant(T::one())
            } else {
                FourierField::zero()
            }
        })
        .collect()
}

fn validate_field<T: Real>(
    basis: &PlaneWaveBasis<T>,
    grid: &CellGrid<T>,
    f: &FourierField<T>,
    what: &str,
) -> Result<()> {
    if f.reality_defect() > T::tol(1e-12, 100.0) * (T::one() + f.max_abs_coefficient()) {
        return invalid(format!(
            "{what} coefficients are not Hermitian-symmetric (field not real)"
        ));
    }
    let w = f.bandwidth();
    let mi = basis.max_index();
    let shape = grid.shape();
    for l in 0..basis.dim() {
        if 2 * (w[l] + mi[l]) >= shape[l] as i32 {
            return invalid(format!(
                "{what} bandwidth {} along axis {l} aliases on a grid of {} points; raise the cutoff",
                w[l], shape[l]
            ));
        }
    }
    Ok(())
}

fn validate_metric<T: Real>(
    basis: &PlaneWaveBasis<T>,
    grid: &CellGrid<T>,
    metric: &[FourierField<T>],
) -> Result<(T, T)> {
    let d = basis.dim();
    if metric.len() != d * d {
        return invalid(format!(
            "metric must have {} entries, got {}",
            d * d,
            metric.len()
        ));
    }
    for r in 0..d {
        for s in 0..d {
            validate_field(basis, grid, &metric[r * d + s], "metric")?;
            if metric[r * d + s] != metric[s * d + r] {
                return invalid("metric must be symmetric entrywise");
            }
        }
    }
    let samples: Vec<Vec<T>> = metric
        .iter()
        .map(|f| f.real_samples(grid))
        .collect::<Result<_>>()?;
    let mut a0 = T::max_value().unwrap();
    let mut a1 = T::min_value().unwrap();
    for i in 0..grid.len() {
        let m = DMatrix::from_fn(d, d, |r, s| samples[r * d + s][i]);
        for v in m.symmetric_eigenvalues().iter() {
            a0 = a0.min(*v);
            a1 = a1.max(*v);
        }
    }
    if !(a0 > T::zero()) {
        return invalid(format!(
            "metric is not uniformly positive definite (min eigenvalue {:e})",
            a0.as_f64()
        ));
    }
    Ok((a0, a1))
}

/// Lowest eigenpair of the plane-wave discretization of `D*ǧD + V` at
/// `k = 0`. The eigenvector is phase-fixed to a positive mean, checked for
/// positivity on the sampling grid and scaled to `‖ω‖² = |Ω|`.
pub fn ground_state<T: Real>(
    basis: &PlaneWaveBasis<T>,
    metric: &[FourierField<T>],
    potential: Option<&FourierField<T>>,
) -> Result<GroundState<T>> {
    let grid = CellGrid::for_basis(basis);
    let d = basis.dim();
    let gs: Vec<Vec<T>> = metric
        .iter()
        .map(|f| f.real_samples(&grid))
        .collect::<Result<_>>()?;
    let vs = potential.map(|v| v.real_samples(&grid)).transpose()?;
    let h = galerkin_hamiltonian(basis, metric, potential);
    let eig = HermitianEigen::new(&h)?;
    let shift = eig.values[0];
    if eig.dim() > 1 && eig.values[1] - shift <= T::tol(1e-10, 1e4) * (T::one() + shift.abs()) {
        return Err(Error::Resolution("ground eigenvalue is not simple".into()));
    }
    let mut v: CVector<T> = eig.vectors.column(0).clone_owned();
    let z0 = v[basis.zero_index()];
    if cabs(z0) <= T::tol(1e-8, 1e4) {
        return Err(Error::Resolution("ground state has vanishing mean".into()));
    }
    let phase = z0.conj() / cabs(z0);
    v *= phase;
    // Enforce the reality of ω: v_{-b} = conj(v_b).
    let mut asym = T::zero();
    let sym = CVector::from_fn(v.len(), |i, _| {
        let j = basis.negated(i);
        asym = asym.max(cabs(v[i] - v[j].conj()));
        (v[i] + v[j].conj()) * T::lit(0.5)
    });
    if asym > T::tol(1e-7, 1e6) {
        return Err(Error::Resolution(format!(
            "ground state is not real after phase fixing (defect {:e})",
            asym.as_f64()
        )));
    }
    let v = sym.unscale(sym.norm());
    // ω = Σ v_b e^{i⟨b,x⟩} has ‖ω‖² = |Ω| Σ|v_b|² = |Ω|.
    let omega = FourierField::new(basis.indices().iter().zip(v.iter()).map(|(m, z)| (*m, *z)));
    let samples = omega.real_samples(&grid)?;
    let min = samples
        .iter()
        .fold(T::max_value().unwrap(), |a, &b| a.min(b));
    if !(min > T::zero()) {
        return Err(Error::Resolution(format!(
            "ground state changes sign on the grid (min {:e}); discretization too coarse",
            min.as_f64()
        )));
    }
    let residual = ground_residual(&grid, &gs, vs.as_deref(), shift, &samples, d);
    if residual > T::tol(1e-8, 1e6) * (T::one() + shift.abs()) {
        log::warn!(
            "ground-state residual {:e} is large; consider a larger cutoff",
            residual.as_f64()
        );
    }
    Ok(GroundState {
        omega,
        shift,
        residual,
    })
}

/// `⟨e_b, (D*ǧD + V) e_b'⟩ = Σ_{qr} b_q ǧ_qr^(b−b') b'_r + V^(b−b')`, formed
/// directly from the Fourier coefficients.
fn galerkin_hamiltonian<T: Real>(
    basis: &PlaneWaveBasis<T>,
    metric: &[FourierField<T>],
    potential: Option<&FourierField<T>>,
) -> CMatrix<T> {
    let d = basis.dim();
    let n = basis.len();
    let h = CMatrix::from_fn(n, n, |i, j| {
        let (mi, mj) = (basis.index(i), basis.index(j));
        let diff = [mi[0] - mj[0], mi[1] - mj[1], mi[2] - mj[2]];
        let (bi, bj) = (basis.vector(i), basis.vector(j));
        let mut z = potential
            .map(|v| v.coefficient(&diff))
            .unwrap_or_else(czero);
        for q in 0..d {
            for r in 0..d {
                let c = metric[q * d + r].coefficient(&diff);
                if c != czero() {
                    z += c * (bi[q] * bj[r]);
                }
            }
        }
        z
    });
    hermitize(&h)
}

fn ground_residual<T: Real>(
    grid: &CellGrid<T>,
    metric: &[Vec<T>],
    potential: Option<&[T]>,
    shift: T,
    omega: &[T],
    d: usize,
) -> T {
    let w: Vec<C<T>> = omega.iter().map(|&x| C::new(x, T::zero())).collect();
    let grads: Vec<Vec<C<T>>> = (0..d).map(|s| grid.derivative(&w, s)).collect();
    let mut div_hat = vec![czero::<T>(); grid.len()];
    for q in 0..d {
        let mut h: Vec<C<T>> = (0..grid.len())
            .map(|i| {
                let mut acc = czero::<T>();
                for r in 0..d {
                    acc += grads[r][i] * metric[q * d + r][i];
                }
                acc
            })
            .collect();
        grid.forward(&mut h);
        grid.derivative_of_coefficients_in_place(&mut h, q);
        for (a, b) in div_hat.iter_mut().zip(h) {
            *a += b;
        }
    }
    let div = grid.to_samples(&div_hat);
    let res: Vec<C<T>> = (0..grid.len())
        .map(|i| {
            let v = potential.map(|p| p[i]).unwrap_or(T::zero()) - shift;
            -div[i] + w[i] * v
        })
        .collect();
    let sq: Vec<T> = res.iter().map(|z| z.norm_sqr()).collect();
    grid.integrate_real(&sq).sqrt()
}

/// Coefficient blocks of `M(k) = M0 + Σ_r k_r M1_r + Σ_{q,r} k_q k_r M2_{qr}`.
#[derive(Debug, Clone)]
struct Blocks<T: Real> {
    m0: CMatrix<T>,
    m1: Vec<CMatrix<T>>,
    m2: Vec<CMatrix<T>>,
}

/// Samples of `|Ω|^{-1/2} e^{i⟨Bm, x⟩}` with phases from exact integer
/// arithmetic.
fn plane_wave_samples<T: Real>(grid: &CellGrid<T>, m: &MultiIndex) -> Vec<C<T>> {
    let shape = grid.shape();
    let amp = T::one() / grid.lattice().volume().sqrt();
    let [_, n1, n2] = shape;
    (0..grid.len())
        .map(|idx| {
            let j = [idx / (n1 * n2), (idx / n2) % n1, idx % n2];
            let mut frac = T::zero();
            for l in 0..3 {
                let n = shape[l] as i64;
                let p = (m[l] as i64 * j[l] as i64).rem_euclid(n);
                frac += T::lit(p as f64) / T::lit(n as f64);
            }
            let theta = T::two_pi() * frac;
            C::new(amp * theta.cos(), amp * theta.sin())
        })
        .collect()
}

fn assemble_blocks<T: Real>(
    grid: &CellGrid<T>,
    basis: &PlaneWaveBasis<T>,
    inv_omega: &[T],
    g: &[Vec<T>],
    potential: Option<&[T]>,
    with_k: bool,
) -> Blocks<T> {
    let d = basis.dim();
    let n = basis.len();
    let npts = grid.len();
    let kx: Vec<Vec<T>> = (0..d).map(|s| grid.wavenumbers(s)).collect();
    let times_ik = |hat: &[C<T>], s: usize| -> Vec<C<T>> {
        hat.iter()
            .zip(&kx[s])
            .map(|(z, &b)| C::new(-z.im * b, z.re * b))
            .collect()
    };
    let weight =
        |f: &[C<T>], w: &[T]| -> Vec<C<T>> { f.iter().zip(w).map(|(z, &x)| *z * x).collect() };

    let columns: Vec<(CVector<T>, Vec<CVector<T>>, Vec<CVector<T>>)> = (0..n)
        .into_par_iter()
        .map(|col| {
            let e = plane_wave_samples(grid, &basis.index(col));
            let psi = weight(&e, inv_omega);
            let psi_hat = grid.to_coefficients(&psi);
            let dpsi: Vec<Vec<C<T>>> = (0..d)
                .map(|r| grid.to_samples(&times_ik(&psi_hat, r)))
                .collect();
            let h: Vec<Vec<C<T>>> = (0..d)
                .map(|q| {
                    (0..npts)
                        .map(|i| {
                            let mut acc = czero::<T>();
                            for r in 0..d {
                                acc += dpsi[r][i] * g[q * d + r][i];
                            }
                            acc
                        })
                        .collect()
                })
                .collect();
            let mut div_hat = vec![czero::<T>(); npts];
            for (q, hq) in h.iter().enumerate() {
                let t = times_ik(&grid.to_coefficients(hq), q);
                for (a, b) in div_hat.iter_mut().zip(t) {
                    *a += b;
                }
            }
            let div = grid.to_samples(&div_hat);
            let mut out0: Vec<C<T>> = (0..npts).map(|i| -div[i] * inv_omega[i]).collect();
            if let Some(v) = potential {
                for i in 0..npts {
                    out0[i] += psi[i] * (v[i] * inv_omega[i]);
                }
            }
            let c0 = grid.project(basis, &out0);
            let mut c1 = Vec::new();
            let mut c2 = Vec::new();
            if with_k {
                for r in 0..d {
                    let mut t_hat = vec![czero::<T>(); npts];
                    for q in 0..d {
                        let gq = weight(&psi, &g[q * d + r]);
                        let t = times_ik(&grid.to_coefficients(&gq), q);
                        for (a, b) in t_hat.iter_mut().zip(t) {
                            *a += b;
                        }
                    }
                    let t = grid.to_samples(&t_hat);
                    // -i ω^{-1} (Σ_q ∂_q(g_qr ψ) + Σ_q g_rq ∂_q ψ)
                    let out: Vec<C<T>> = (0..npts)
                        .map(|i| {
                            let z = (t[i] + h[r][i]) * inv_omega[i];
                            C::new(z.im, -z.re)
                        })
                        .collect();
                    c1.push(grid.project(basis, &out));
                }
                for q in 0..d {
                    for r in q..d {
                        let out: Vec<C<T>> = (0..npts)
                            .map(|i| psi[i] * (g[q * d + r][i] * inv_omega[i]))
                            .collect();
                        c2.push(grid.project(basis, &out));
                    }
                }
            }
            (c0, c1, c2)
        })
        .collect();

    let mut m0 = CMatrix::zeros(n, n);
    let mut m1 = vec![CMatrix::zeros(n, n); if with_k { d } else { 0 }];
    let mut m2u = vec![CMatrix::zeros(n, n); if with_k { d * (d + 1) / 2 } else { 0 }];
    for (col, (c0, c1, c2)) in columns.into_iter().enumerate() {
        m0.set_column(col, &c0);
        for (r, v) in c1.into_iter().enumerate() {
            m1[r].set_column(col, &v);
        }
        for (p, v) in c2.into_iter().enumerate() {
            m2u[p].set_column(col, &v);
        }
    }
    let m0 = hermitize(&m0);
    let m1: Vec<_> = m1.iter().map(hermitize).collect();
    let mut m2 = Vec::new();
    if with_k {
        let m2u: Vec<_> = m2u.iter().map(hermitize).collect();
        let upper = |q: usize, r: usize| {
            let (a, b) = if q <= r { (q, r) } else { (r, q) };
            a * d - a * (a + 1) / 2 + b
        };
        for q in 0..d {
            for r in 0..d {
                m2.push(m2u[upper(q, r)].clone());
            }
        }
    }
    Blocks { m0, m1, m2 }
}

/// Hermitian matrix of the fiber form at a quasimomentum.
#[derive(Debug, Clone)]
pub struct FiberMatrix<T: Real> {
    pub k: Vec<T>,
    pub matrix: CMatrix<T>,
}

/// Assembled fiber operator: coefficients, basis, sampling grid and the
/// `k`-polynomial blocks.
#[derive(Debug, Clone)]
pub struct FiberOperator<T: Real> {
    coeffs: PeriodicCoefficients<T>,
    basis: PlaneWaveBasis<T>,
    grid: CellGrid<T>,
    samples: CoefficientSamples<T>,
    blocks: Blocks<T>,
}

impl<T: Real> FiberOperator<T> {
    pub fn new(coeffs: PeriodicCoefficients<T>, basis: PlaneWaveBasis<T>) -> Result<Self> {
        if coeffs.dim() != basis.dim() {
            return invalid("coefficient and basis dimensions differ");
        }
        let grid = CellGrid::for_basis(&basis);
        for (i, f) in coeffs.metric.iter().enumerate() {
            validate_field(&basis, &grid, f, &format!("metric entry {i}"))?;
        }
        let samples = coeffs.sample(&grid)?;
        let blocks = assemble_blocks(&grid, &basis, &samples.inv_omega, &samples.g, None, true);
        Ok(Self {
            coeffs,
            basis,
            grid,
            samples,
            blocks,
        })
    }

    pub fn coefficients(&self) -> &PeriodicCoefficients<T> {
        &self.coeffs
    }

    pub fn basis(&self) -> &PlaneWaveBasis<T> {
        &self.basis
    }

    pub fn grid(&self) -> &CellGrid<T> {
        &self.grid
    }

    pub fn samples(&self) -> &CoefficientSamples<T> {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// `M(k)` for `k` exactly as given.
    pub fn matrix(&self, k: &[T]) -> CMatrix<T> {
        let d = self.dim();
        assert_eq!(k.len(), d, "quasimomentum dimension mismatch");
        let mut m = self.blocks.m0.clone();
        for r in 0..d {
            m += &self.blocks.m1[r] * C::new(k[r], T::zero());
        }
        for q in 0..d {
            for r in 0..d {
                m += &self.blocks.m2[q * d + r] * C::new(k[q] * k[r], T::zero());
            }
        }
        m
    }

    /// Fiber at `k` reduced to the first Brillouin zone.
    pub fn fiber(&self, k: &[T]) -> FiberMatrix<T> {
        let k = self.basis.lattice().reduce(k);
        let matrix = self.matrix(&k);
        FiberMatrix { k, matrix }
    }

    /// Linear coefficient `∂M/∂k_r` at `k₀`.
    pub fn linear_block(&self, k0: &[T], r: usize) -> CMatrix<T> {
        let d = self.dim();
        let mut m = self.blocks.m1[r].clone();
        for q in 0..d {
            m += &self.blocks.m2[q * d + r] * C::new(T::lit(2.0) * k0[q], T::zero());
        }
        m
    }

    /// Quadratic coefficient block `M2_{qr}` (symmetric in `q, r`).
    pub fn quadratic_block(&self, q: usize, r: usize) -> &CMatrix<T> {
        &self.blocks.m2[q * self.dim() + r]
    }

    /// Taylor expansion of `M(k₀ + δk) − shift` about `k₀` (exact: `M` is
    /// quadratic in `k`).
    pub fn expansion(&self, k0: &[T], shift: T) -> LocalExpansion<T> {
        let d = self.dim();
        let mut centered = self.matrix(k0);
        for i in 0..centered.nrows() {
            centered[(i, i)] -= C::new(shift, T::zero());
        }
        let linear = (0..d).map(|r| self.linear_block(k0, r)).collect();
        let quadratic = (0..d * d).map(|qr| self.blocks.m2[qr].clone()).collect();
        LocalExpansion {
            k0: k0.to_vec(),
            shift,
            centered,
            linear,
            quadratic,
        }
    }
}

pub fn assemble_fiber<T: Real>(
    coeffs: &PeriodicCoefficients<T>,
    basis: &PlaneWaveBasis<T>,
    k: &[T],
) -> Result<FiberMatrix<T>> {
    Ok(FiberOperator::new(coeffs.clone(), basis.clone())?.fiber(k))
}

/// `M(k₀ + δk) − shift = centered + L(δk) + Q(δk)`.
#[derive(Debug, Clone)]
pub struct LocalExpansion<T: Real> {
    k0: Vec<T>,
    shift: T,
    centered: CMatrix<T>,
    linear: Vec<CMatrix<T>>,
    quadratic: Vec<CMatrix<T>>,
}

impl<T: Real> LocalExpansion<T> {
    pub fn k0(&self) -> &[T] {
        &self.k0
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn dim(&self) -> usize {
        self.k0.len()
    }

    /// `M(k₀) − shift`.
    pub fn centered(&self) -> &CMatrix<T> {
        &self.centered
    }

    pub fn linear_block(&self, r: usize) -> &CMatrix<T> {
        &self.linear[r]
    }

    pub fn quadratic_block(&self, q: usize, r: usize) -> &CMatrix<T> {
        &self.quadratic[q * self.dim() + r]
    }

    /// `L(δk)`, the part of `M(k₀ + δk)` linear in `δk`.
    pub fn linear_part(&self, dk: &[T]) -> CMatrix<T> {
        let n = self.centered.nrows();
        let mut m = CMatrix::zeros(n, n);
        for (r, l) in self.linear.iter().enumerate() {
            m += l * C::new(dk[r], T::zero());
        }
        m
    }

    /// `Q(δk)`, the part quadratic in `δk`.
    pub fn quadratic_part(&self, dk: &[T]) -> CMatrix<T> {
        let d = self.dim();
        let n = self.centered.nrows();
        let mut m = CMatrix::zeros(n, n);
        for q in 0..d {
            for r in 0..d {
                m += &self.quadratic[q * d + r] * C::new(dk[q] * dk[r], T::zero());
            }
        }
        m
    }

    /// Removes the block `P(M(k₀) − shift)P` for the orthonormal columns `s`,
    /// so that their span is an exact eigenspace of `M(k₀)` with eigenvalue
    /// `shift`.
    pub fn deflate_block(&mut self, s: &CMatrix<T>) {
        let block = s.adjoint() * &self.centered * s;
        self.centered -= s * block * s.adjoint();
        self.centered = hermitize(&self.centered);
    }

    /// `M(k₀ + δk) − shift`.
    pub fn matrix(&self, dk: &[T]) -> CMatrix<T> {
        assert_eq!(dk.len(), self.dim(), "quasimomentum dimension mismatch");
        &self.centered + self.linear_part(dk) + self.quadratic_part(dk)
    }
}
