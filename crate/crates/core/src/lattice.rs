//! Bravais lattice geometry, Brillouin-zone reduction and the truncated
//! plane-wave index set.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Integer coordinates of a dual-lattice vector in the basis `b^1..b^d`.
/// Components beyond the lattice dimension are zero.
pub type MultiIndex = [i32; 3];

/// Lattice `Γ` spanned by the columns of `A`, together with its dual
/// `Γ̃` spanned by the columns of `B = 2π A^{-T}`.
#[derive(Debug, Clone)]
pub struct Lattice<T: Real> {
    dim: usize,
    direct: DMatrix<T>,
    dual: DMatrix<T>,
    volume: T,
    dual_volume: T,
    condition: T,
}

pub fn build_lattice<T: Real>(basis_vectors: DMatrix<T>) -> Result<Lattice<T>> {
    Lattice::new(basis_vectors)
}

impl<T: Real> Lattice<T> {
    /// `direct` holds the basis vectors `a_j` as columns.
    pub fn new(direct: DMatrix<T>) -> Result<Self> {
        let dim = direct.nrows();
        if dim == 0 || dim > 3 || direct.ncols() != dim {
            return invalid(format!(
                "lattice basis must be a square d×d matrix with 1 ≤ d ≤ 3, got {}×{}",
                direct.nrows(),
                direct.ncols()
            ));
        }
        if direct.iter().any(|x| !x.is_finite()) {
            return invalid("lattice basis has non-finite entries");
        }
        let sv = direct.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        if smin <= T::zero() || smax / smin > T::one() / T::tol(1e-12, 1e3) {
            return invalid("lattice basis matrix is singular or numerically degenerate");
        }
        let inv = direct
            .clone()
            .try_inverse()
            .ok_or_else(|| crate::Error::InvalidInput("lattice basis matrix is singular".into()))?;
        let dual = inv.transpose() * T::two_pi();
        let volume = direct.determinant().abs();
        let dual_volume = T::two_pi().powi(dim as i32) / volume;
        Ok(Self {
            dim,
            direct,
            dual,
            volume,
            dual_volume,
            condition: smax / smin,
        })
    }

    /// Builds from a row-major matrix whose columns are the basis vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return invalid("lattice matrix must be square");
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| T::lit(rows[i][j])))
    }

    /// `Γ = ℤ^d` with unit cell `[0,1)^d`.
    pub fn cubic(dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Basis vectors `a_j` as columns.
    pub fn direct(&self) -> &DMatrix<T> {
        &self.direct
    }

    /// Dual basis vectors `b^l` as columns.
    pub fn dual(&self) -> &DMatrix<T> {
        &self.dual
    }

    /// `|Ω| = |det A|`.
    pub fn volume(&self) -> T {
        self.volume
    }

    /// `|Ω̃| = (2π)^d / |Ω|`.
    pub fn dual_volume(&self) -> T {
        self.dual_volume
    }

    pub fn condition_number(&self) -> T {
        self.condition
    }

    /// Cartesian coordinates of the dual vector with integer coordinates `m`.
    pub fn dual_vector(&self, m: &MultiIndex) -> [T; 3] {
        let mut out = [T::zero(); 3];
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut s = T::zero();
            for l in 0..self.dim {
                s += self.dual[(i, l)] * T::lit(m[l] as f64);
            }
            *o = s;
        }
        out
    }

    /// Cartesian position of the fractional point `Σ t_j a_j`.
    pub fn direct_point(&self, t: &[T]) -> [T; 3] {
        let mut out = [T::zero(); 3];
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut s = T::zero();
            for j in 0..self.dim {
                s += self.direct[(i, j)] * t[j];
            }
            *o = s;
        }
        out
    }

    pub fn min_dual_norm(&self) -> T {
        (0..self.dim)
            .map(|l| self.dual.column(l).norm())
            .fold(T::max_value().unwrap(), |a, b| a.min(b))
    }

    /// Half the distance from the center of the Brillouin zone to its
    /// nearest face; used as an upper bound on certified radii.
    pub fn zone_radius_cap(&self) -> T {
        self.min_dual_norm() / T::lit(4.0)
    }

    /// Representative of `k + Γ̃` of smallest Euclidean norm (first Brillouin
    /// zone). Points on a zone face are kept as given.
    pub fn reduce(&self, k: &[T]) -> Vec<T> {
        assert_eq!(k.len(), self.dim, "quasimomentum dimension mismatch");
        let two_pi = T::two_pi();
        let frac: Vec<T> = (0..self.dim)
            .map(|l| {
                let mut s = T::zero();
                for i in 0..self.dim {
                    s += self.direct[(i, l)] * k[i];
                }
                s / two_pi
            })
            .collect();
        let base: Vec<i32> = frac.iter().map(|f| f.round().as_f64() as i32).collect();
        let norm2 = |v: &[T]| v.iter().fold(T::zero(), |a, &x| a + x * x);
        let scale = T::one() + norm2(k);
        let tol = T::tol(1e-12, 64.0) * scale;
        let mut best: Vec<T> = k.to_vec();
        let mut best_n = norm2(k);
        let offsets = neighbor_offsets(self.dim);
        for off in &offsets {
            let mut m = [0i32; 3];
            for l in 0..self.dim {
                m[l] = base[l] + off[l];
            }
            let b = self.dual_vector(&m);
            let cand: Vec<T> = (0..self.dim).map(|i| k[i] - b[i]).collect();
            let n = norm2(&cand);
            if n < best_n - tol {
                best_n = n;
                best = cand;
            }
        }
        best
    }
}

fn neighbor_offsets(dim: usize) -> Vec<[i32; 3]> {
    let mut out = Vec::new();
    let r = |l: usize| if l < dim { -1..=1 } else { 0..=0 };
    for a in r(0) {
        for b in r(1) {
            for c in r(2) {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Dual-lattice vectors inside a Euclidean ball, in lexicographic order of
/// their integer coordinates.
#[derive(Debug, Clone)]
pub struct PlaneWaveBasis<T: Real> {
    lattice: Lattice<T>,
    cutoff: T,
    indices: Vec<MultiIndex>,
    vectors: Vec<[T; 3]>,
    lookup: HashMap<MultiIndex, usize>,
    negation: Vec<usize>,
    max_index: [i32; 3],
    grid: [usize; 3],
}

/// Smallest integer `≥ n` whose prime factors are 2, 3 and 5.
pub fn smooth_size(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .unwrap()
}

pub fn build_basis<T: Real>(lattice: &Lattice<T>, cutoff: T) -> Result<PlaneWaveBasis<T>> {
    PlaneWaveBasis::new(lattice, cutoff)
}

impl<T: Real> PlaneWaveBasis<T> {
    /// Oversampling of the physical grid relative to the mode count per axis.
    pub const GRID_FACTOR: usize = 4;

    pub fn new(lattice: &Lattice<T>, cutoff: T) -> Result<Self> {
        if !(cutoff >= T::zero()) || !cutoff.is_finite() {
            return invalid("cutoff must be finite and nonnegative");
        }
        let d = lattice.dim();
        let slack = T::one() + T::tol(1e-10, 64.0);
        let limit2 = cutoff * cutoff * slack;
        let mut bound = [0i32; 3];
        for (l, bl) in bound.iter_mut().enumerate().take(d) {
            let a_norm = lattice.direct().column(l).norm();
            *bl = (cutoff * a_norm * slack / T::two_pi()).floor().as_f64() as i32;
        }
        let mut indices = Vec::new();
        let mut vectors = Vec::new();
        for m0 in -bound[0]..=bound[0] {
            for m1 in -bound[1]..=bound[1] {
                for m2 in -bound[2]..=bound[2] {
                    let m = [m0, m1, m2];
                    let b = lattice.dual_vector(&m);
                    let n2 = b.iter().fold(T::zero(), |a, &x| a + x * x);
                    if n2 <= limit2 {
                        indices.push(m);
                        vectors.push(b);
                    }
                }
            }
        }
        let lookup: HashMap<MultiIndex, usize> =
            indices.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        let negation = indices
            .iter()
            .map(|m| lookup[&[-m[0], -m[1], -m[2]]])
            .collect();
        let mut max_index = [0i32; 3];
        for m in &indices {
            for l in 0..3 {
                max_index[l] = max_index[l].max(m[l].abs());
            }
        }
        let mut grid = [1usize; 3];
        for l in 0..d {
            grid[l] = smooth_size(Self::GRID_FACTOR * (2 * max_index[l] as usize + 1));
        }
        Ok(Self {
            lattice: lattice.clone(),
            cutoff,
            indices,
            vectors,
            lookup,
            negation,
            max_index,
            grid,
        })
    }

    /// Default cutoff `8 · min_l |b^l|`.
    pub fn with_default_cutoff(lattice: &Lattice<T>) -> Result<Self> {
        Self::new(lattice, T::lit(8.0) * lattice.min_dual_norm())
    }

    pub fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn cutoff(&self) -> T {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn index(&self, flat: usize) -> MultiIndex {
        self.indices[flat]
    }

    /// Cartesian dual vector of a flat index.
    pub fn vector(&self, flat: usize) -> [T; 3] {
        self.vectors[flat]
    }

    pub fn flat(&self, m: &MultiIndex) -> Option<usize> {
        self.lookup.get(m).copied()
    }

    /// Flat index of `-b`.
    pub fn negated(&self, flat: usize) -> usize {
        self.negation[flat]
    }

    pub fn zero_index(&self) -> usize {
        self.lookup[&[0, 0, 0]]
    }

    /// Largest `|m_l|` present along each axis.
    pub fn max_index(&self) -> [i32; 3] {
        self.max_index
    }

    /// Sampling grid shape (unused axes have size 1).
    pub fn grid_shape(&self) -> [usize; 3] {
        self.grid
    }

    /// Norm of the Cartesian vector `b + k`.
    pub fn shifted_norm(&self, flat: usize, k: &[T]) -> T {
        let b = self.vectors[flat];
        (0..self.dim())
            .map(|i| (b[i] + k[i]) * (b[i] + k[i]))
            .fold(T::zero(), |a, x| a + x)
            .sqrt()
    }
}
