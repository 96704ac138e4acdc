//! Fiberwise propagation of modulated wave packets: the exact evolution of
//! the ε-problem, the effective evolution driven by the symbol, and the
//! `L₂(ℝ^d)` error between them.
//!
//! The initial datum is `e^{i⟨k°,x⟩/ε} ς_j(x/ε) f(x)` with `f` given by its
//! Fourier transform on a quadrature grid. The node `ξ` lives on the fiber
//! `k° + εξ`, and both evolutions are computed with the common phase
//! `e^{-iτλ₀/ε²}` removed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::EffectiveTensors;
use crate::error::{invalid, Result};
use crate::lattice::PlaneWaveBasis;
use crate::linalg::{CMatrix, CVector, HermitianEigen};
use crate::scalar::{cis, Real, C};
use crate::spectral::ThresholdPoint;
use crate::threshold::ConstantsLedger;

/// Initial profile in Fourier form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PacketSpec {
    /// `e^{-|ξ|²/w²}` on a uniform symmetric tensor grid with `nodes` points
    /// per axis over `[−radius, radius]`, truncated to the ball `|ξ| ≤ radius`.
    Gaussian {
        width: f64,
        radius: f64,
        nodes: usize,
    },
    /// Explicit nodes `(ξ, [re, im])` sharing one quadrature weight.
    Modes {
        modes: Vec<(Vec<f64>, [f64; 2])>,
        weight: f64,
    },
}

#[derive(Debug, Clone)]
pub struct WavePacket<T: Real> {
    /// Zero-based cluster component carried by the packet.
    pub j: usize,
    pub dim: usize,
    pub xi: Vec<Vec<T>>,
    pub amplitudes: Vec<C<T>>,
    pub weights: Vec<T>,
    pub radius: T,
    pub l2: T,
    pub h3: T,
}

impl<T: Real> WavePacket<T> {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

fn trapezoid_axis(nodes: usize, radius: f64) -> Vec<(f64, f64)> {
    if nodes == 1 {
        return vec![(0.0, 2.0 * radius)];
    }
    let h = 2.0 * radius / (nodes - 1) as f64;
    (0..nodes)
        .map(|i| {
            let w = if i == 0 || i == nodes - 1 { 0.5 * h } else { h };
            (-radius + h * i as f64, w)
        })
        .collect()
}

pub fn make_packet<T: Real>(spec: &PacketSpec, dim: usize, j: usize) -> Result<WavePacket<T>> {
    if !(1..=3).contains(&dim) {
        return invalid("packet dimension must be 1, 2 or 3");
    }
    let mut xi: Vec<Vec<T>> = Vec::new();
    let mut amplitudes = Vec::new();
    let mut weights = Vec::new();
    match spec {
        PacketSpec::Gaussian {
            width,
            radius,
            nodes,
        } => {
            if !(*width > 0.0 && *radius > 0.0 && *nodes > 0) {
                return invalid("Gaussian packet needs positive width, radius and node count");
            }
            let axis = trapezoid_axis(*nodes, *radius);
            let total = axis.len().pow(dim as u32);
            for flat in 0..total {
                let mut rem = flat;
                let mut point = Vec::with_capacity(dim);
                let mut w = 1.0;
                for _ in 0..dim {
                    let (x, wx) = axis[rem % axis.len()];
                    rem /= axis.len();
                    point.push(x);
                    w *= wx;
                }
                point.reverse();
                let r2: f64 = point.iter().map(|x| x * x).sum();
                if r2 > radius * radius * (1.0 + 1e-12) {
                    continue;
                }
                let a = (-r2 / (width * width)).exp();
                if a == 0.0 {
                    continue;
                }
                xi.push(point.into_iter().map(T::lit).collect());
                amplitudes.push(C::new(T::lit(a), T::zero()));
                weights.push(T::lit(w));
            }
        }
        PacketSpec::Modes { modes, weight } => {
            if !(*weight > 0.0) {
                return invalid("mode packet weight must be positive");
            }
            for (x, a) in modes {
                if x.len() != dim {
                    return invalid("mode frequency has the wrong dimension");
                }
                if a[0] == 0.0 && a[1] == 0.0 {
                    continue;
                }
                xi.push(x.iter().map(|&v| T::lit(v)).collect());
                amplitudes.push(C::new(T::lit(a[0]), T::lit(a[1])));
                weights.push(T::lit(*weight));
            }
        }
    }
    if xi.is_empty() {
        return invalid("packet has empty support");
    }
    let mut l2 = T::zero();
    let mut h3 = T::zero();
    let mut radius = T::zero();
    for i in 0..xi.len() {
        let r2 = xi[i].iter().fold(T::zero(), |a, &x| a + x * x);
        let m = amplitudes[i].norm_sqr() * weights[i];
        l2 += m;
        h3 += m * (T::one() + r2).powi(3);
        radius = radius.max(r2.sqrt());
    }
    Ok(WavePacket {
        j,
        dim,
        xi,
        amplitudes,
        weights,
        radius,
        l2: l2.sqrt(),
        h3: h3.sqrt(),
    })
}

/// Per-node cell vectors of the exact solution, amplitude excluded.
#[derive(Debug, Clone)]
pub struct FiberField<T: Real> {
    pub epsilon: T,
    pub tau: T,
    pub vectors: Vec<CVector<T>>,
}

/// Per-node coefficient vectors `c(ξ, τ)` of the effective solution,
/// amplitude excluded.
#[derive(Debug, Clone)]
pub struct EffectiveField<T: Real> {
    pub epsilon: T,
    pub tau: T,
    pub coefficients: Vec<CVector<T>>,
}

fn check_initial<T: Real>(tp: &ThresholdPoint<T>, a: &CVector<T>) -> Result<()> {
    if a.len() != tp.n() {
        return invalid("initial coefficient vector length differs from the multiplicity");
    }
    Ok(())
}

fn unit<T: Real>(n: usize, j: usize) -> Result<CVector<T>> {
    if j >= n {
        return invalid(format!("component {j} outside 0..{n}"));
    }
    let mut e = CVector::zeros(n);
    e[j] = C::new(T::one(), T::zero());
    Ok(e)
}

fn warn_uncertified<T: Real>(tp: &ThresholdPoint<T>, packet: &WavePacket<T>, epsilon: T) {
    if epsilon * packet.radius > tp.kappa {
        log::warn!(
            "ε·R_ξ = {:e} exceeds ϰ = {:e}; the bound is not certified for this packet",
            (epsilon * packet.radius).as_f64(),
            tp.kappa.as_f64()
        );
    }
}

fn scaled<T: Real>(xi: &[T], epsilon: T) -> Vec<T> {
    xi.iter().map(|&x| x * epsilon).collect()
}

/// Exact evolution of the datum whose cell profile is `Σ_l a_l ς_l`.
pub fn propagate_exact_from<T: Real>(
    tp: &ThresholdPoint<T>,
    packet: &WavePacket<T>,
    epsilon: T,
    tau: T,
    a: &CVector<T>,
) -> Result<FiberField<T>> {
    if !(epsilon > T::zero()) {
        return invalid("ε must be positive");
    }
    check_initial(tp, a)?;
    if packet.dim != tp.dim() {
        return invalid("packet dimension differs from the lattice dimension");
    }
    warn_uncertified(tp, packet, epsilon);
    let start = &tp.cluster * a;
    let rate = tau / (epsilon * epsilon);
    let window = tp.gap / T::lit(3.0);
    let vectors = packet
        .xi
        .par_iter()
        .map(|xi| {
            let m = tp.expansion().matrix(&scaled(xi, epsilon));
            let e = HermitianEigen::refined_in(&m, -window, window)?;
            Ok(e.apply_fn(&start, |mu| cis(-rate * mu)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FiberField {
        epsilon,
        tau,
        vectors,
    })
}

pub fn propagate_exact<T: Real>(
    tp: &ThresholdPoint<T>,
    packet: &WavePacket<T>,
    epsilon: T,
    tau: T,
) -> Result<FiberField<T>> {
    propagate_exact_from(tp, packet, epsilon, tau, &unit(tp.n(), packet.j)?)
}

/// Effective evolution `c(ξ, τ) = e^{-iτε^{-2}(𝔤(εξ) − λ₀)} a`.
pub fn propagate_effective_from<T: Real>(
    tensors: &EffectiveTensors<T>,
    packet: &WavePacket<T>,
    epsilon: T,
    tau: T,
    a: &CVector<T>,
) -> Result<EffectiveField<T>> {
    if !(epsilon > T::zero()) {
        return invalid("ε must be positive");
    }
    if a.len() != tensors.n {
        return invalid("initial coefficient vector length differs from the multiplicity");
    }
    let rate = tau / (epsilon * epsilon);
    let coefficients = packet
        .xi
        .par_iter()
        .map(|xi| tensors.evolve_shifted(&scaled(xi, epsilon), rate, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(EffectiveField {
        epsilon,
        tau,
        coefficients,
    })
}

pub fn propagate_effective<T: Real>(
    tensors: &EffectiveTensors<T>,
    packet: &WavePacket<T>,
    epsilon: T,
    tau: T,
) -> Result<EffectiveField<T>> {
    propagate_effective_from(tensors, packet, epsilon, tau, &unit(tensors.n, packet.j)?)
}

/// Quadrature norm `(|Ω|^{-1} Σ w |a|² ‖v‖²)^{1/2}` of a fiberwise field.
pub fn fiber_norm<T: Real>(tp: &ThresholdPoint<T>, packet: &WavePacket<T>, norms: &[T]) -> T {
    let mut acc = T::zero();
    for i in 0..packet.len() {
        acc += packet.weights[i] * packet.amplitudes[i].norm_sqr() * norms[i] * norms[i];
    }
    (acc / tp.cell_volume()).sqrt()
}

pub fn exact_norm<T: Real>(tp: &ThresholdPoint<T>, packet: &WavePacket<T>, u: &FiberField<T>) -> T {
    let norms: Vec<T> = u.vectors.iter().map(|v| v.norm()).collect();
    fiber_norm(tp, packet, &norms)
}

pub fn effective_norm<T: Real>(
    tp: &ThresholdPoint<T>,
    packet: &WavePacket<T>,
    v: &EffectiveField<T>,
) -> T {
    let norms: Vec<T> = v.coefficients.iter().map(|c| c.norm()).collect();
    fiber_norm(tp, packet, &norms)
}

/// `‖u_ε(·,τ) − u_ε^eff(·,τ)‖_{L₂(ℝ^d)}` where the effective solution is
/// assembled from the cluster basis `basis` (columns, cell vectors).
pub fn assemble_error_in<T: Real>(
    tp: &ThresholdPoint<T>,
    packet: &WavePacket<T>,
    basis: &CMatrix<T>,
    u: &FiberField<T>,
    v: &EffectiveField<T>,
) -> Result<T> {
    if u.vectors.len() != packet.len() || v.coefficients.len() != packet.len() {
        return invalid("fiber fields do not match the packet grid");
    }
    if u.epsilon != v.epsilon || u.tau != v.tau {
        return invalid("fiber fields were computed for different (ε, τ)");
    }
    let norms: Vec<T> = u
        .vectors
        .iter()
        .zip(&v.coefficients)
        .map(|(x, c)| (x - basis * c).norm())
        .collect();
    Ok(fiber_norm(tp, packet, &norms))
}

pub fn assemble_error<T: Real>(
    tp: &ThresholdPoint<T>,
    packet: &WavePacket<T>,
    u: &FiberField<T>,
    v: &EffectiveField<T>,
) -> Result<T> {
    assemble_error_in(tp, packet, &tp.cluster, u, v)
}

/// The two terms of the explicit bound for a packet carried by `ς_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    /// `(‖ς_j‖_∞ + Σ_l ‖ς_l‖_∞) ϰ^{-1} ε ‖f‖_{H³}`.
    pub outer: f64,
    /// `|Ω|^{-1/2} (3C₇ + C₁₁|τ|) ε ‖f‖_{H³}`.
    pub inner: f64,
    pub total: f64,
}

pub fn error_bound<T: Real>(
    tp: &ThresholdPoint<T>,
    ledger: &ConstantsLedger<T>,
    packet: &WavePacket<T>,
    epsilon: T,
    tau: T,
) -> ErrorBound {
    let sup_sum = tp.sup_norms.iter().fold(T::zero(), |a, &b| a + b);
    let sup_j = tp.sup_norms.get(packet.j).copied().unwrap_or(T::zero());
    let outer = (sup_j + sup_sum) / tp.kappa * epsilon * packet.h3;
    let inner = (T::lit(3.0) * ledger.c7 + ledger.c11 * tau.abs()) * epsilon * packet.h3
        / tp.cell_volume().sqrt();
    ErrorBound {
        outer: outer.as_f64(),
        inner: inner.as_f64(),
        total: (outer + inner).as_f64(),
    }
}

/// Samples `u_ε(x, τ)` and `u_ε^eff(x, τ)` at physical points `x`, common
/// phase `e^{-iτλ₀/ε²}` restored. Visualization only.
pub fn reconstruct<T: Real>(
    basis: &PlaneWaveBasis<T>,
    tp: &ThresholdPoint<T>,
    packet: &WavePacket<T>,
    u: &FiberField<T>,
    v: &EffectiveField<T>,
    points: &[Vec<T>],
) -> Result<Vec<(C<T>, C<T>)>> {
    if u.vectors.len() != packet.len() || v.coefficients.len() != packet.len() {
        return invalid("fiber fields do not match the packet grid");
    }
    if basis.len() != tp.basis_len() {
        return invalid("plane-wave basis differs from the threshold basis");
    }
    let d = packet.dim;
    if points.iter().any(|x| x.len() != d) {
        return invalid("sample points must have one coordinate per dimension");
    }
    let eps = u.epsilon;
    let assembled: Vec<CVector<T>> = v.coefficients.iter().map(|c| &tp.cluster * c).collect();
    let bvecs: Vec<[T; 3]> = (0..basis.len()).map(|i| basis.vector(i)).collect();
    let scale = (T::two_pi().powi(d as i32) * tp.cell_volume())
        .sqrt()
        .recip();
    let global = cis(-u.tau * tp.lambda0 / (eps * eps));
    let out = points
        .par_iter()
        .map(|x| {
            let dot = |a: &[T]| (0..d).fold(T::zero(), |s, r| s + a[r] * x[r]);
            let cell: Vec<C<T>> = bvecs.iter().map(|b| cis(dot(b) / eps)).collect();
            let carrier = dot(&tp.k0) / eps;
            let (mut su, mut sv) = (C::new(T::zero(), T::zero()), C::new(T::zero(), T::zero()));
            for i in 0..packet.len() {
                let w =
                    packet.amplitudes[i] * cis(carrier + dot(&packet.xi[i])) * packet.weights[i];
                let (mut fu, mut fv) = (C::new(T::zero(), T::zero()), C::new(T::zero(), T::zero()));
                for (b, e) in cell.iter().enumerate() {
                    fu += u.vectors[i][b] * e;
                    fv += assembled[i][b] * e;
                }
                su += w * fu;
                sv += w * fv;
            }
            (su * global * scale, sv * global * scale)
        })
        .collect();
    Ok(out)
}
