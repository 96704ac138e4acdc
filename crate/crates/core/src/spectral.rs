//! Fiber eigensolves, band structure, and threshold-point detection with
//! cluster gauge fixing and certification of the separation radius.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_operator::{FiberMatrix, FiberOperator, LocalExpansion};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    hermitian_eigenvalues, orthonormalize_columns, CMatrix, CVector, HermitianEigen,
};
use crate::scalar::{cabs, Real, C};

/// Lowest `count` eigenpairs of a fiber matrix, ascending.
pub fn eig_fiber<T: Real>(m: &FiberMatrix<T>, count: usize) -> Result<Vec<(T, CVector<T>)>> {
    let n = m.matrix.nrows();
    if count > n {
        return invalid(format!("requested {count} eigenpairs of a {n}×{n} matrix"));
    }
    let e = HermitianEigen::new(&m.matrix)?;
    Ok((0..count)
        .map(|j| (e.values[j], e.vectors.column(j).clone_owned()))
        .collect())
}

#[derive(Debug, Clone)]
pub struct BandStructure<T: Real> {
    pub k_points: Vec<Vec<T>>,
    /// `energies[i][l]` is `E_{l+1}(k_i)`.
    pub energies: Vec<Vec<T>>,
    pub vectors: Option<Vec<CMatrix<T>>>,
}

/// Lowest `m` bands at each quasimomentum (reduced to the first zone).
pub fn band_structure<T: Real>(
    op: &FiberOperator<T>,
    k_set: &[Vec<T>],
    m: usize,
    with_vectors: bool,
) -> Result<BandStructure<T>> {
    if k_set.is_empty() {
        return invalid("band structure needs at least one quasimomentum");
    }
    if m > op.len() {
        return invalid(format!(
            "requested {m} bands from a basis of {} modes",
            op.len()
        ));
    }
    let rows: Vec<(Vec<T>, Option<CMatrix<T>>)> = k_set
        .par_iter()
        .map(|k| {
            if k.len() != op.dim() {
                return invalid("quasimomentum dimension mismatch");
            }
            let f = op.fiber(k);
            if with_vectors {
                let e = HermitianEigen::new(&f.matrix)?;
                let v = e.vectors.columns(0, m).clone_owned();
                Ok((e.values[..m].to_vec(), Some(v)))
            } else {
                let vals = hermitian_eigenvalues(&f.matrix);
                Ok((vals[..m].to_vec(), None))
            }
        })
        .collect::<Result<_>>()?;
    let (energies, vecs): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(BandStructure {
        k_points: k_set.to_vec(),
        energies,
        vectors: if with_vectors {
            Some(vecs.into_iter().map(|v| v.unwrap()).collect())
        } else {
            None
        },
    })
}

/// Points along a polyline: `points_per_segment` per leg, endpoints shared.
pub fn k_path<T: Real>(vertices: &[Vec<T>], points_per_segment: usize) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    if vertices.len() == 1 {
        return vertices.to_vec();
    }
    let steps = points_per_segment.max(2) - 1;
    for (seg, w) in vertices.windows(2).enumerate() {
        let start = if seg == 0 { 0 } else { 1 };
        for i in start..=steps {
            let t = T::from_usize_lossy(i) / T::from_usize_lossy(steps);
            out.push(
                w[0].iter()
                    .zip(&w[1])
                    .map(|(&a, &b)| a + (b - a) * t)
                    .collect(),
            );
        }
    }
    out
}

/// Parameters and outcome of the sampled certification of `ϰ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub directions: usize,
    pub radii: usize,
    pub bisection_steps: usize,
    /// Upper bound imposed by the Brillouin-zone geometry.
    pub cap: f64,
    pub capped: bool,
    /// Number of 10% reductions needed before every sample passed.
    pub shrinks: usize,
}

/// Threshold data `(k°, s, λ₀, n, d₀, ϰ)` with a gauge-fixed orthonormal
/// basis `ς` of the cluster eigenspace.
#[derive(Debug, Clone)]
pub struct ThresholdPoint<T: Real> {
    pub k0: Vec<T>,
    /// One-based band index `s`.
    pub band: usize,
    pub lambda0: T,
    pub multiplicity: usize,
    pub gap: T,
    pub kappa: T,
    /// Columns are the cell vectors `ς_1..ς_n`.
    pub cluster: CMatrix<T>,
    /// Grid maxima of `|ς_p|`.
    pub sup_norms: Vec<T>,
    pub cluster_eigenvalues: Vec<T>,
    pub cluster_tol: T,
    pub certification: Certification,
    volume: T,
    expansion: Arc<LocalExpansion<T>>,
}

impl<T: Real> ThresholdPoint<T> {
    pub fn n(&self) -> usize {
        self.multiplicity
    }

    pub fn dim(&self) -> usize {
        self.k0.len()
    }

    /// `M(k° + δk) − λ₀` and its Taylor blocks.
    pub fn expansion(&self) -> &LocalExpansion<T> {
        &self.expansion
    }

    /// `|Ω|`.
    pub fn cell_volume(&self) -> T {
        self.volume
    }

    pub fn basis_len(&self) -> usize {
        self.cluster.nrows()
    }

    pub fn varsigma(&self, p: usize) -> CVector<T> {
        self.cluster.column(p).clone_owned()
    }

    /// `max_p ‖(M(k°) − λ₀)ς_p‖`.
    pub fn residual(&self) -> T {
        let r = self.expansion.centered() * &self.cluster;
        (0..self.n())
            .map(|p| r.column(p).norm())
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Same threshold with the cluster basis replaced by `ς U`.
    pub fn with_gauge(&self, op: &FiberOperator<T>, u: &CMatrix<T>) -> Result<Self> {
        let n = self.n();
        if u.nrows() != n || u.ncols() != n {
            return invalid("gauge matrix has the wrong size");
        }
        let defect = (u.ad_mul(u) - CMatrix::identity(n, n)).norm();
        if defect > T::tol(1e-10, 1e4) {
            return invalid("gauge matrix is not unitary");
        }
        let mut out = self.clone();
        out.cluster = &self.cluster * u;
        out.sup_norms = sup_norms(op, &out.cluster);
        Ok(out)
    }
}

pub fn sup_norms<T: Real>(op: &FiberOperator<T>, cluster: &CMatrix<T>) -> Vec<T> {
    (0..cluster.ncols())
        .map(|p| {
            op.grid()
                .synthesize(op.basis(), &cluster.column(p).clone_owned())
                .iter()
                .map(|z| cabs(*z))
                .fold(T::zero(), |a, b| a.max(b))
        })
        .collect()
}

/// Separation condition on eigenvalues measured from `λ₀`: exactly `n` in
/// `(-d₀/3, d₀/3)` and none with `d₀/3 ≤ |E − λ₀| ≤ 2d₀/3`.
pub fn separation_holds<T: Real>(relative: &[T], n: usize, d0: T) -> bool {
    let third = d0 / T::lit(3.0);
    let two_thirds = third + third;
    let mut inside = 0;
    for v in relative {
        let a = v.abs();
        if a < third {
            inside += 1;
        } else if a <= two_thirds {
            return false;
        }
    }
    inside == n
}

/// Unit directions used by the radius scan.
pub fn scan_directions<T: Real>(dim: usize, count: usize) -> Vec<Vec<T>> {
    match dim {
        1 => vec![vec![T::one()], vec![-T::one()]],
        2 => (0..count)
            .map(|i| {
                let t = T::two_pi() * T::from_usize_lossy(i) / T::from_usize_lossy(count);
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci lattice on the sphere.
            let golden = T::pi() * (T::lit(3.0) - T::lit(5.0).sqrt());
            (0..count)
                .map(|i| {
                    let z = T::one()
                        - T::lit(2.0) * (T::from_usize_lossy(i) + T::lit(0.5))
                            / T::from_usize_lossy(count);
                    let r = (T::one() - z * z).max(T::zero()).sqrt();
                    let phi = golden * T::from_usize_lossy(i);
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
    }
}

const SCAN_DIRECTIONS: usize = 32;
const SCAN_RADII: usize = 8;
const BISECTION_STEPS: usize = 32;

fn certify_radius<T: Real>(
    exp: &LocalExpansion<T>,
    n: usize,
    d0: T,
    cap: T,
) -> Result<(T, Certification)> {
    let dim = exp.dim();
    let dirs = scan_directions::<T>(dim, SCAN_DIRECTIONS);
    let ok = |u: &[T], r: T| -> bool {
        let dk: Vec<T> = u.iter().map(|&x| x * r).collect();
        separation_holds(&hermitian_eigenvalues(&exp.matrix(&dk)), n, d0)
    };
    let per_dir: Vec<T> = dirs
        .par_iter()
        .map(|u| {
            let mut lo = T::zero();
            for i in 1..=SCAN_RADII {
                let r = cap * T::from_usize_lossy(i) / T::from_usize_lossy(SCAN_RADII);
                if ok(u, r) {
                    lo = r;
                } else {
                    let mut hi = r;
                    for _ in 0..BISECTION_STEPS {
                        let mid = (lo + hi) * T::lit(0.5);
                        if ok(u, mid) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    return lo;
                }
            }
            lo
        })
        .collect();
    let mut kappa = per_dir.iter().fold(cap, |a, &b| a.min(b));
    let mut shrinks = 0;
    loop {
        if !(kappa > T::zero()) {
            return Err(Error::Certification(
                "no positive radius satisfies the separation condition".into(),
            ));
        }
        let all_ok = dirs.par_iter().all(|u| {
            (1..=SCAN_RADII).all(|i| {
                ok(
                    u,
                    kappa * T::from_usize_lossy(i) / T::from_usize_lossy(SCAN_RADII),
                )
            })
        });
        if all_ok {
            break;
        }
        shrinks += 1;
        if shrinks > 60 {
            return Err(Error::Certification(
                "radius scan failed to stabilize".into(),
            ));
        }
        kappa *= T::lit(0.9);
    }
    let capped = kappa >= cap;
    Ok((
        kappa,
        Certification {
            directions: dirs.len(),
            radii: SCAN_RADII,
            bisection_steps: BISECTION_STEPS,
            cap: cap.as_f64(),
            capped,
            shrinks,
        },
    ))
}

/// Rotates the cluster eigenvectors so that their overlaps with the `n`
/// lowest-frequency plane waves (ordered by `|b|`, then by flat index,
/// skipping waves that add no rank) form an upper-triangular matrix with
/// positive diagonal.
pub fn fix_gauge<T: Real>(op: &FiberOperator<T>, raw: &CMatrix<T>) -> Result<CMatrix<T>> {
    let basis = op.basis();
    let n = raw.ncols();
    let mut order: Vec<usize> = (0..basis.len()).collect();
    let zero = vec![T::zero(); basis.dim()];
    order.sort_by(|&a, &b| {
        basis
            .shifted_norm(a, &zero)
            .partial_cmp(&basis.shifted_norm(b, &zero))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = Vec::new();
    let mut span: Vec<CVector<T>> = Vec::new();
    let thresh = T::tol(1e-6, 1e6);
    for &i in &order {
        if chosen.len() == n {
            break;
        }
        let mut row: CVector<T> = raw.row(i).transpose();
        for q in &span {
            let proj = q.dotc(&row);
            row -= q * proj;
        }
        let nr = row.norm();
        if nr > thresh {
            chosen.push(i);
            span.push(row.unscale(nr));
        }
    }
    if chosen.len() < n {
        return Err(Error::Consistency(
            "cluster overlaps with plane waves are rank deficient".into(),
        ));
    }
    let g = CMatrix::from_fn(n, n, |r, c| raw[(chosen[r], c)]);
    let ginv = g
        .try_inverse()
        .ok_or_else(|| Error::Consistency("singular gauge overlap matrix".into()))?;
    let z = raw * ginv;
    orthonormalize_columns(&z)
}

/// Locates the cluster containing band `s` at `k°` and certifies a radius.
pub fn detect_threshold<T: Real>(
    op: &FiberOperator<T>,
    k0: &[T],
    s: usize,
    cluster_tol: Option<T>,
) -> Result<ThresholdPoint<T>> {
    if k0.len() != op.dim() {
        return invalid("quasimomentum dimension mismatch");
    }
    let k = op.basis().lattice().reduce(k0);
    let m = op.matrix(&k);
    let eig = HermitianEigen::new(&m)?;
    if s == 0 || s > eig.dim() {
        return invalid(format!("band index {s} outside 1..={}", eig.dim()));
    }
    let lambda0 = eig.values[s - 1];
    let tol = match cluster_tol {
        Some(t) if t > T::zero() => t,
        Some(_) => return invalid("cluster tolerance must be positive"),
        None => T::tol(1e-8, 1e6) * (T::one() + lambda0.abs()),
    };
    let cluster_idx: Vec<usize> = (0..eig.dim())
        .filter(|&l| (eig.values[l] - lambda0).abs() <= tol)
        .collect();
    let n = cluster_idx.len();
    if n == eig.dim() {
        return Err(Error::Certification(
            "cluster exhausts the truncated space".into(),
        ));
    }
    let raw = CMatrix::from_fn(m.nrows(), n, |r, c| eig.vectors[(r, cluster_idx[c])]);
    let cluster = fix_gauge(op, &raw)?;
    // Rayleigh quotients are far less sensitive to roundoff than the raw
    // eigenvalues, whose error scales with the largest eigenvalue.
    let rayleigh = cluster.adjoint() * &m * &cluster;
    let lambda0 = (0..n).fold(T::zero(), |a, p| a + rayleigh[(p, p)].re) / T::from_usize_lossy(n);
    let gap = (0..eig.dim())
        .filter(|l| !cluster_idx.contains(l))
        .map(|l| (eig.values[l] - lambda0).abs())
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    if gap <= T::lit(100.0) * tol {
        return Err(Error::Certification(format!(
            "gap {:e} is below the isolation floor",
            gap.as_f64()
        )));
    }
    let mut expansion = op.expansion(&k, lambda0);
    expansion.deflate_block(&cluster);
    let cap = op.basis().lattice().zone_radius_cap();
    let (kappa, certification) = certify_radius(&expansion, n, gap, cap)?;
    let sup = sup_norms(op, &cluster);
    Ok(ThresholdPoint {
        k0: k,
        band: s,
        lambda0,
        multiplicity: n,
        gap,
        kappa,
        cluster,
        sup_norms: sup,
        cluster_eigenvalues: cluster_idx.iter().map(|&l| eig.values[l]).collect(),
        cluster_tol: tol,
        certification,
        volume: op.basis().lattice().volume(),
        expansion: Arc::new(expansion),
    })
}

/// Frobenius distance between the orthogonal projectors onto two column
/// spans.
pub fn projection_distance<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    (a * a.adjoint() - b * b.adjoint()).norm()
}

/// Scalar multiple helper used by gauge tests.
pub fn phase_matrix<T: Real>(phases: &[T]) -> CMatrix<T> {
    CMatrix::from_fn(phases.len(), phases.len(), |r, c| {
        if r == c {
            C::new(phases[r].cos(), phases[r].sin())
        } else {
            C::new(T::zero(), T::zero())
        }
    })
}
