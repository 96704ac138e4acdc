#![allow(dead_code)]

use std::f64::consts::PI;

use bloch_hom::C;
use nalgebra::DMatrix;

type Complex64 = C<f64>;

/// Lowest eigenvalues of `−(d/dx + ik)² + V` on `[0, 1)` with periodic
/// conditions, by a fourth-order finite-difference stencil on `n` points.
pub fn fd_bloch(v: impl Fn(f64) -> f64, k: f64, n: usize, count: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let stencil = [(-2i64, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)];
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        for &(o, w) in &stencil {
            let idx = j as i64 + o;
            let wrap = idx.div_euclid(n as i64);
            let col = idx.rem_euclid(n as i64) as usize;
            // ψ = e^{ikx}u with u periodic: ψ(x + 1) = e^{ik}ψ(x).
            let phase = Complex64::from_polar(1.0, k * wrap as f64);
            m[(j, col)] += phase * (-w / (12.0 * h * h));
        }
        m[(j, j)] += Complex64::new(v(j as f64 * h), 0.0);
    }
    let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut e: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e.truncate(count);
    e
}

pub fn mathieu_potential(x: f64) -> f64 {
    2.0 * (2.0 * PI * x).cos()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let l: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = l.len() as f64;
    let mx = l.iter().map(|p| p.0).sum::<f64>() / n;
    let my = l.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = l.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = l.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Fourth-order central first and second derivatives.
pub fn fd_derivatives(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let (m2, m1, z, p1, p2) = (f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h));
    let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    let d2 = (-m2 + 16.0 * m1 - 30.0 * z + 16.0 * p1 - p2) / (12.0 * h * h);
    (d1, d2)
}

/// Haar-distributed unitary from a seeded complex Gaussian matrix.
pub fn random_unitary(n: usize, rng: &mut impl rand::Rng) -> DMatrix<Complex64> {
    let mut gauss = || {
        let (u, v): (f64, f64) = (rng.gen::<f64>().max(f64::MIN_POSITIVE), rng.gen());
        (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
    };
    let z = DMatrix::<Complex64>::from_fn(n, n, |_, _| Complex64::new(gauss(), gauss()));
    let qr = z.qr();
    let (q, r) = (qr.q(), qr.r());
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        let x = r[(i, i)];
        x / x.norm()
    }));
    q * d
}
