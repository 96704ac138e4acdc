//! CSV output with full double precision.

use std::io::{self, Write};

use crate::propagator::{EffectiveField, FiberField, WavePacket};
use crate::spectral::BandStructure;
use crate::spectral::ThresholdPoint;
use crate::{Real, C};

use super::{ConvergenceReport, VerifyRow};

/// 17 significant digits, `.` decimal separator.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn row<W: Write>(w: &mut W, cells: &[String]) -> io::Result<()> {
    writeln!(w, "{}", cells.join(","))
}

pub fn write_bands<T: Real, W: Write>(w: &mut W, bands: &BandStructure<T>) -> io::Result<()> {
    let d = bands.k_points.first().map_or(0, |k| k.len());
    let m = bands.energies.first().map_or(0, |e| e.len());
    let mut head: Vec<String> = (1..=d).map(|i| format!("k{i}")).collect();
    head.extend((1..=m).map(|l| format!("E{l}")));
    row(w, &head)?;
    for (k, e) in bands.k_points.iter().zip(&bands.energies) {
        let cells: Vec<String> = k.iter().chain(e).map(|x| num(x.as_f64())).collect();
        row(w, &cells)?;
    }
    Ok(())
}

pub fn write_verify<W: Write>(w: &mut W, rows: &[VerifyRow]) -> io::Result<()> {
    row(w, &["dk", "tau", "lhs", "rhs", "margin"].map(String::from))?;
    for r in rows {
        row(w, &[r.dk, r.tau, r.lhs, r.rhs, r.margin].map(num))?;
    }
    Ok(())
}

pub fn write_convergence<W: Write>(w: &mut W, report: &ConvergenceReport) -> io::Result<()> {
    row(
        w,
        &[
            "epsilon",
            "tau",
            "error",
            "bound_outer",
            "bound_inner",
            "bound",
            "certified",
            "bound_holds",
        ]
        .map(String::from),
    )?;
    for r in &report.rows {
        let mut cells = [
            r.epsilon,
            r.tau,
            r.error,
            r.bound_outer,
            r.bound_inner,
            r.bound,
        ]
        .map(num)
        .to_vec();
        cells.push(r.certified.to_string());
        cells.push(r.bound_holds.to_string());
        row(w, &cells)?;
    }
    Ok(())
}

/// Generic numeric table with a header.
pub fn write_table<W: Write>(w: &mut W, header: &[&str], rows: &[Vec<f64>]) -> io::Result<()> {
    row(w, &header.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    for r in rows {
        row(w, &r.iter().map(|&x| num(x)).collect::<Vec<_>>())?;
    }
    Ok(())
}

/// One row per quadrature node: `ξ`, weight, amplitude, and the cell norms
/// of the exact vector, the effective vector and their difference.
pub fn write_fibers<T: Real, W: Write>(
    w: &mut W,
    tp: &ThresholdPoint<T>,
    packet: &WavePacket<T>,
    u: &FiberField<T>,
    v: &EffectiveField<T>,
) -> io::Result<()> {
    let mut head: Vec<String> = (1..=packet.dim).map(|i| format!("xi{i}")).collect();
    head.extend(
        [
            "weight",
            "amp_re",
            "amp_im",
            "exact_norm",
            "effective_norm",
            "difference_norm",
        ]
        .map(String::from),
    );
    row(w, &head)?;
    for i in 0..packet.len() {
        let eff = &tp.cluster * &v.coefficients[i];
        let mut cells: Vec<String> = packet.xi[i].iter().map(|x| num(x.as_f64())).collect();
        cells.extend(
            [
                packet.weights[i],
                packet.amplitudes[i].re,
                packet.amplitudes[i].im,
                u.vectors[i].norm(),
                eff.norm(),
                (&u.vectors[i] - &eff).norm(),
            ]
            .map(|x| num(x.as_f64())),
        );
        row(w, &cells)?;
    }
    Ok(())
}

/// Physical-space samples `(x, Re u, Im u, Re u_eff, Im u_eff)`.
pub fn write_snapshot<T: Real, W: Write>(
    w: &mut W,
    points: &[Vec<T>],
    values: &[(C<T>, C<T>)],
) -> io::Result<()> {
    let d = points.first().map_or(1, |p| p.len());
    let mut head: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    head.extend(["re_u", "im_u", "re_u_eff", "im_u_eff"].map(String::from));
    row(w, &head)?;
    for (x, (u, v)) in points.iter().zip(values) {
        let mut cells: Vec<String> = x.iter().map(|t| num(t.as_f64())).collect();
        cells.extend([u.re, u.im, v.re, v.im].map(|t| num(t.as_f64())));
        row(w, &cells)?;
    }
    Ok(())
}
