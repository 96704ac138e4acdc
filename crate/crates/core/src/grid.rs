//! Uniform sampling grids on the cell with FFT transforms between grid
//! samples and Fourier coefficients.
//!
//! A field is `f(x) = Σ_m f̂(m) e^{i⟨Bm, x⟩}`. Cell vectors use the
//! orthonormal basis `|Ω|^{-1/2} e^{i⟨b, x⟩}`, so their entries are
//! `|Ω|^{1/2} f̂(b)`.

use std::sync::Arc;

use nalgebra::DVector;
use rustfft::{Fft, FftPlanner};

use crate::lattice::{Lattice, MultiIndex, PlaneWaveBasis};
use crate::scalar::{compensated_csum, compensated_sum, czero, Real, C};

#[derive(Clone)]
pub struct CellGrid<T: Real> {
    lattice: Lattice<T>,
    shape: [usize; 3],
    fwd: Vec<Arc<dyn Fft<T>>>,
    inv: Vec<Arc<dyn Fft<T>>>,
}

impl<T: Real> std::fmt::Debug for CellGrid<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CellGrid")
            .field("shape", &self.shape)
            .finish()
    }
}

impl<T: Real> CellGrid<T> {
    pub fn new(lattice: &Lattice<T>, shape: [usize; 3]) -> Self {
        let d = lattice.dim();
        let mut shape = shape;
        for (l, s) in shape.iter_mut().enumerate() {
            if l >= d {
                *s = 1;
            }
            assert!(*s >= 1, "grid axis must be nonempty");
        }
        let mut planner = FftPlanner::new();
        let fwd = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            lattice: lattice.clone(),
            shape,
            fwd,
            inv,
        }
    }

    pub fn for_basis(basis: &PlaneWaveBasis<T>) -> Self {
        Self::new(basis.lattice(), basis.grid_shape())
    }

    /// Same cell, every active axis multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let d = self.lattice.dim();
        let mut shape = self.shape;
        for s in shape.iter_mut().take(d) {
            *s *= factor;
        }
        Self::new(&self.lattice, shape)
    }

    pub fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn unflat(&self, idx: usize) -> [usize; 3] {
        let [_, n1, n2] = self.shape;
        [idx / (n1 * n2), (idx / n2) % n1, idx % n2]
    }

    /// Fractional coordinates of a sample.
    pub fn fractional(&self, idx: usize) -> [T; 3] {
        let j = self.unflat(idx);
        let mut t = [T::zero(); 3];
        for l in 0..3 {
            t[l] = T::from_usize_lossy(j[l]) / T::from_usize_lossy(self.shape[l]);
        }
        t
    }

    /// Cartesian position of a sample.
    pub fn point(&self, idx: usize) -> [T; 3] {
        let t = self.fractional(idx);
        self.lattice.direct_point(&t[..self.lattice.dim()])
    }

    /// Array slot holding the coefficient of mode `m`, if the mode lies
    /// strictly below the Nyquist limit on every axis.
    pub fn slot(&self, m: &MultiIndex) -> Option<usize> {
        let mut j = [0usize; 3];
        for l in 0..3 {
            let n = self.shape[l] as i32;
            if 2 * m[l].abs() >= n && !(n == 1 && m[l] == 0) {
                return None;
            }
            j[l] = m[l].rem_euclid(n) as usize;
        }
        Some((j[0] * self.shape[1] + j[1]) * self.shape[2] + j[2])
    }

    /// Signed mode stored at an array slot, or `None` at a Nyquist slot.
    pub fn mode(&self, slot: usize) -> Option<MultiIndex> {
        let j = self.unflat(slot);
        let mut m = [0i32; 3];
        for l in 0..3 {
            let n = self.shape[l];
            if n > 1 && n % 2 == 0 && j[l] == n / 2 {
                return None;
            }
            m[l] = if j[l] <= n / 2 {
                j[l] as i32
            } else {
                j[l] as i32 - n as i32
            };
        }
        Some(m)
    }

    fn transform(&self, data: &mut [C<T>], plans: &[Arc<dyn Fft<T>>]) {
        assert_eq!(data.len(), self.len(), "grid data length mismatch");
        let [n0, n1, n2] = self.shape;
        if n2 > 1 {
            plans[2].process(data);
        }
        let mut line = vec![czero::<T>(); n0.max(n1)];
        if n1 > 1 {
            for a in 0..n0 {
                for c in 0..n2 {
                    for b in 0..n1 {
                        line[b] = data[(a * n1 + b) * n2 + c];
                    }
                    plans[1].process(&mut line[..n1]);
                    for b in 0..n1 {
                        data[(a * n1 + b) * n2 + c] = line[b];
                    }
                }
            }
        }
        if n0 > 1 {
            for b in 0..n1 {
                for c in 0..n2 {
                    for a in 0..n0 {
                        line[a] = data[(a * n1 + b) * n2 + c];
                    }
                    plans[0].process(&mut line[..n0]);
                    for a in 0..n0 {
                        data[(a * n1 + b) * n2 + c] = line[a];
                    }
                }
            }
        }
    }

    /// Samples to Fourier coefficients `f̂`, in place.
    pub fn forward(&self, data: &mut [C<T>]) {
        self.transform(data, &self.fwd);
        let inv_n = T::one() / T::from_usize_lossy(self.len());
        for z in data.iter_mut() {
            *z *= inv_n;
        }
    }

    /// Fourier coefficients to samples, in place.
    pub fn inverse(&self, data: &mut [C<T>]) {
        self.transform(data, &self.inv);
    }

    pub fn to_coefficients(&self, samples: &[C<T>]) -> Vec<C<T>> {
        let mut out = samples.to_vec();
        self.forward(&mut out);
        out
    }

    pub fn to_samples(&self, coefficients: &[C<T>]) -> Vec<C<T>> {
        let mut out = coefficients.to_vec();
        self.inverse(&mut out);
        out
    }

    /// Cartesian component `s` of `Bm` for every slot (zero at Nyquist).
    pub fn wavenumbers(&self, s: usize) -> Vec<T> {
        (0..self.len())
            .map(|slot| match self.mode(slot) {
                Some(m) => self.lattice.dual_vector(&m)[s],
                None => T::zero(),
            })
            .collect()
    }

    /// `∂_s f` from samples of `f`, computed spectrally.
    pub fn derivative(&self, samples: &[C<T>], s: usize) -> Vec<C<T>> {
        let mut hat = self.to_coefficients(samples);
        self.derivative_of_coefficients_in_place(&mut hat, s);
        self.inverse(&mut hat);
        hat
    }

    /// Multiplies coefficients by `i (Bm)_s`.
    pub fn derivative_of_coefficients_in_place(&self, hat: &mut [C<T>], s: usize) {
        for (slot, z) in hat.iter_mut().enumerate() {
            match self.mode(slot) {
                Some(m) => {
                    let bs = self.lattice.dual_vector(&m)[s];
                    *z = C::new(-z.im * bs, z.re * bs);
                }
                None => *z = czero(),
            }
        }
    }

    /// `∫_Ω f dx` by the trapezoid rule.
    pub fn integrate(&self, samples: &[C<T>]) -> C<T> {
        compensated_csum(samples) * (self.lattice.volume() / T::from_usize_lossy(self.len()))
    }

    /// `∫_Ω f dx` for real samples.
    pub fn integrate_real(&self, samples: &[T]) -> T {
        compensated_sum(samples.iter().copied()) * self.lattice.volume()
            / T::from_usize_lossy(self.len())
    }

    /// Samples of the field whose cell-vector coordinates are `c`.
    pub fn synthesize(&self, basis: &PlaneWaveBasis<T>, c: &DVector<C<T>>) -> Vec<C<T>> {
        assert_eq!(c.len(), basis.len());
        let scale = T::one() / self.lattice.volume().sqrt();
        let mut data = vec![czero::<T>(); self.len()];
        for (i, m) in basis.indices().iter().enumerate() {
            let slot = self.slot(m).expect("basis mode exceeds sampling grid");
            data[slot] = c[i] * scale;
        }
        self.inverse(&mut data);
        data
    }

    /// Cell-vector coordinates of the orthogonal projection of sampled `f`
    /// onto the span of the basis.
    pub fn project(&self, basis: &PlaneWaveBasis<T>, samples: &[C<T>]) -> DVector<C<T>> {
        let hat = self.to_coefficients(samples);
        self.project_coefficients(basis, &hat)
    }

    pub fn project_coefficients(&self, basis: &PlaneWaveBasis<T>, hat: &[C<T>]) -> DVector<C<T>> {
        let scale = self.lattice.volume().sqrt();
        DVector::from_iterator(
            basis.len(),
            basis
                .indices()
                .iter()
                .map(|m| hat[self.slot(m).expect("basis mode exceeds sampling grid")] * scale),
        )
    }
}
