//! Orchestration: configuration, the full pipeline, convergence studies,
//! slope fitting and report output.

pub mod config;
pub mod output;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_operator::{identity_metric, FiberOperator, FourierField, PeriodicCoefficients};
use crate::effective::{effective_tensors, ClusterRecord, EffectiveTensors};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Lattice, MultiIndex, PlaneWaveBasis};
use crate::propagator::{
    assemble_error, effective_norm, error_bound, exact_norm, make_packet, propagate_effective,
    propagate_exact, PacketSpec, WavePacket,
};
use crate::scalar::{Real, C};
use crate::spectral::{detect_threshold, Certification, ThresholdPoint};
use crate::threshold::{
    constants_ledger, verify_exponential_bound, ConstantsLedger, ReducedResolvent,
};

pub use config::{FourierTerm, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Operator,
    Threshold,
    Tensors,
    Ledger,
    Propagation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Operator => "operator",
            Stage::Threshold => "threshold",
            Stage::Tensors => "tensors",
            Stage::Ledger => "ledger",
            Stage::Propagation => "propagation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

fn field<T: Real>(terms: &[FourierTerm]) -> FourierField<T> {
    FourierField::new(terms.iter().map(|(m, z)| {
        let mut idx: MultiIndex = [0; 3];
        idx[..m.len()].copy_from_slice(m);
        (idx, C::new(T::lit(z[0]), T::lit(z[1])))
    }))
}

/// Lattice, basis, coefficients (with the ground state when needed) and the
/// fiber operator described by a configuration.
pub fn build_operator<T: Real>(config: &RunConfig) -> StageResult<FiberOperator<T>> {
    config.validate().at(Stage::Config)?;
    let lattice = Lattice::<T>::from_rows(&config.lattice).at(Stage::Operator)?;
    let basis = match config.cutoff {
        Some(c) => PlaneWaveBasis::new(&lattice, T::lit(c)),
        None => PlaneWaveBasis::with_default_cutoff(&lattice),
    }
    .at(Stage::Operator)?;
    let d = lattice.dim();
    let metric = match &config.metric {
        Some(entries) => entries.iter().map(|t| field(t)).collect(),
        None => identity_metric(d),
    };
    let coeffs = match &config.weight {
        Some(w) => PeriodicCoefficients::from_weight(&basis, metric, field(w)),
        None => PeriodicCoefficients::from_potential(
            &basis,
            metric,
            config.potential.as_ref().map(|p| field(p)),
        ),
    }
    .at(Stage::Operator)?;
    FiberOperator::new(coeffs, basis).at(Stage::Operator)
}

/// Everything downstream of the configuration up to the effective tensors.
#[derive(Debug, Clone)]
pub struct Pipeline<T: Real> {
    pub operator: FiberOperator<T>,
    pub threshold: ThresholdPoint<T>,
    pub resolvent: ReducedResolvent<T>,
    pub tensors: EffectiveTensors<T>,
    pub ledger: ConstantsLedger<T>,
}

impl<T: Real> Pipeline<T> {
    pub fn build(config: &RunConfig) -> StageResult<Self> {
        let operator = build_operator(config)?;
        Self::from_operator(operator, config)
    }

    pub fn from_operator(operator: FiberOperator<T>, config: &RunConfig) -> StageResult<Self> {
        let req = &config.threshold;
        let k0: Vec<T> = req.k0.iter().map(|&x| T::lit(x)).collect();
        let threshold = detect_threshold(&operator, &k0, req.band, req.cluster_tol.map(T::lit))
            .at(Stage::Threshold)?;
        Self::with_threshold(operator, threshold)
    }

    pub fn with_threshold(
        operator: FiberOperator<T>,
        threshold: ThresholdPoint<T>,
    ) -> StageResult<Self> {
        let resolvent = ReducedResolvent::new(&threshold).at(Stage::Tensors)?;
        let tensors = effective_tensors(&operator, &threshold, &resolvent).at(Stage::Tensors)?;
        let c = operator.coefficients();
        let ledger =
            constants_ledger(&threshold, c.norm_g(), c.norm_inv_omega()).at(Stage::Ledger)?;
        Ok(Self {
            operator,
            threshold,
            resolvent,
            tensors,
            ledger,
        })
    }

    pub fn packet(&self, config: &RunConfig) -> StageResult<WavePacket<T>> {
        let spec = config
            .packet
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("configuration has no packet".into()))
            .at(Stage::Config)?;
        if config.component > self.threshold.n() {
            return invalid(format!(
                "component {} exceeds the multiplicity {}",
                config.component,
                self.threshold.n()
            ))
            .at(Stage::Config);
        }
        make_packet(spec, self.operator.dim(), config.component - 1).at(Stage::Config)
    }
}

/// Cartesian quasimomentum `Σ t_l b^l` from dual-lattice coordinates.
pub fn k_from_fractional<T: Real>(lattice: &Lattice<T>, t: &[T]) -> Vec<T> {
    let b = lattice.dual();
    (0..lattice.dim())
        .map(|i| (0..lattice.dim()).fold(T::zero(), |s, l| s + b[(i, l)] * t[l]))
        .collect()
}

/// High-symmetry polyline in dual-lattice coordinates: `−½ → ½` for
/// `d = 1`, `Γ → X → M → Γ` for `d = 2`, `Γ → X → M → R → Γ` for `d = 3`.
pub fn symmetry_path(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![-0.5], vec![0.5]],
        2 => vec![
            vec![0.0, 0.0],
            vec![0.5, 0.0],
            vec![0.5, 0.5],
            vec![0.0, 0.0],
        ],
        _ => vec![
            vec![0.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
            vec![0.5, 0.5, 0.5],
            vec![0.0, 0.0, 0.0],
        ],
    }
}

/// Serializable threshold data including the cluster basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub k0: Vec<f64>,
    pub band: usize,
    pub lambda0: f64,
    pub n: usize,
    pub d0: f64,
    pub kappa: f64,
    pub cluster_tol: f64,
    pub cluster_eigenvalues: Vec<f64>,
    /// Sampling-grid maxima of `|ς_p|` (an under-estimate of the true sup).
    pub sup_norms: Vec<f64>,
    pub residual: f64,
    pub certification: Certification,
    pub basis: ClusterRecord,
}

pub fn threshold_record<T: Real>(op: &FiberOperator<T>, tp: &ThresholdPoint<T>) -> ThresholdRecord {
    let d = op.dim();
    let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    ThresholdRecord {
        k0: f(&tp.k0),
        band: tp.band,
        lambda0: tp.lambda0.as_f64(),
        n: tp.n(),
        d0: tp.gap.as_f64(),
        kappa: tp.kappa.as_f64(),
        cluster_tol: tp.cluster_tol.as_f64(),
        cluster_eigenvalues: f(&tp.cluster_eigenvalues),
        sup_norms: f(&tp.sup_norms),
        residual: tp.residual().as_f64(),
        certification: tp.certification.clone(),
        basis: ClusterRecord {
            indices: op
                .basis()
                .indices()
                .iter()
                .map(|m| m[..d].to_vec())
                .collect(),
            coefficients: (0..tp.n())
                .map(|p| {
                    tp.cluster
                        .column(p)
                        .iter()
                        .map(|z| [z.re.as_f64(), z.im.as_f64()])
                        .collect()
                })
                .collect(),
        },
    }
}

/// Least-squares line through `(log ε, log error)`; returns the slope and
/// the root-mean-square residual of the fit.
pub fn fit_slope(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.len() < 3 {
        return invalid("slope fitting needs at least three points");
    }
    if pairs.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return invalid("slope fitting needs positive values");
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return invalid("slope fitting needs distinct abscissae");
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    Ok((slope, (rss / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub epsilon: f64,
    pub tau: f64,
    pub error: f64,
    /// `ϰ^{-1}` term of the explicit bound.
    pub bound_outer: f64,
    /// `(3C₇ + C₁₁|τ|)` term of the explicit bound.
    pub bound_inner: f64,
    pub bound: f64,
    /// `ε·R_ξ ≤ ϰ`.
    pub certified: bool,
    pub bound_holds: bool,
    pub exact_norm: f64,
    pub effective_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    NoiseFloor,
    TooFewPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub tau: f64,
    pub status: FitStatus,
    pub slope: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketSummary {
    pub spec: PacketSpec,
    pub component: usize,
    pub nodes: usize,
    pub radius: f64,
    pub l2: f64,
    pub h3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub version: String,
    pub cutoff: f64,
    pub basis_size: usize,
    pub grid: [usize; 3],
    pub tensor_refinement_defect: Option<f64>,
    pub seed: u64,
    pub sup_norms: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub threshold: ThresholdRecord,
    pub ledger: ConstantsLedger<f64>,
    pub packet: PacketSummary,
    pub rows: Vec<ErrorRow>,
    pub fits: Vec<SlopeFit>,
    /// Every certified row satisfies its bound.
    pub all_bounds_hold: bool,
    pub provenance: RunProvenance,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the pipeline for every `(ε, τ)` of the configuration.
pub fn run_convergence<T: Real>(config: &RunConfig) -> StageResult<ConvergenceReport> {
    config.validate_convergence().at(Stage::Config)?;
    let pipe = Pipeline::<T>::build(config)?;
    convergence_with(&pipe, config)
}

pub fn convergence_with<T: Real>(
    pipe: &Pipeline<T>,
    config: &RunConfig,
) -> StageResult<ConvergenceReport> {
    config.validate_convergence().at(Stage::Config)?;
    let packet = pipe.packet(config)?;
    let tp = &pipe.threshold;
    let items: Vec<(f64, f64)> = config
        .taus
        .iter()
        .flat_map(|&tau| config.epsilons.iter().map(move |&eps| (eps, tau)))
        .collect();
    let rows = items
        .par_iter()
        .map(|&(eps, tau)| {
            let (e, t) = (T::lit(eps), T::lit(tau));
            let u = propagate_exact(tp, &packet, e, t)?;
            let v = propagate_effective(&pipe.tensors, &packet, e, t)?;
            let error = assemble_error(tp, &packet, &u, &v)?.as_f64();
            let b = error_bound(tp, &pipe.ledger, &packet, e, t);
            Ok(ErrorRow {
                epsilon: eps,
                tau,
                error,
                bound_outer: b.outer,
                bound_inner: b.inner,
                bound: b.total,
                certified: e * packet.radius <= tp.kappa,
                bound_holds: error <= b.total,
                exact_norm: exact_norm(tp, &packet, &u).as_f64(),
                effective_norm: effective_norm(tp, &packet, &v).as_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .at(Stage::Propagation)?;
    let floor = config.tolerances.noise_floor;
    let fits = config
        .taus
        .iter()
        .map(|&tau| {
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.tau == tau)
                .map(|r| (r.epsilon, r.error))
                .collect();
            if pairs.len() < 3 {
                return SlopeFit {
                    tau,
                    status: FitStatus::TooFewPoints,
                    slope: None,
                    residual: None,
                };
            }
            if pairs.iter().any(|p| p.1 <= floor) {
                return SlopeFit {
                    tau,
                    status: FitStatus::NoiseFloor,
                    slope: None,
                    residual: None,
                };
            }
            match fit_slope(&pairs) {
                Ok((s, r)) => SlopeFit {
                    tau,
                    status: FitStatus::Fitted,
                    slope: Some(s),
                    residual: Some(r),
                },
                Err(_) => SlopeFit {
                    tau,
                    status: FitStatus::NoiseFloor,
                    slope: None,
                    residual: None,
                },
            }
        })
        .collect();
    let all_bounds_hold = rows.iter().filter(|r| r.certified).all(|r| r.bound_holds);
    let op = &pipe.operator;
    Ok(ConvergenceReport {
        threshold: threshold_record(op, tp),
        ledger: pipe.ledger.to_f64(),
        packet: PacketSummary {
            spec: config.packet.clone().expect("validated"),
            component: config.component,
            nodes: packet.len(),
            radius: packet.radius.as_f64(),
            l2: packet.l2.as_f64(),
            h3: packet.h3.as_f64(),
        },
        rows,
        fits,
        all_bounds_hold,
        provenance: RunProvenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            cutoff: op.basis().cutoff().as_f64(),
            basis_size: op.len(),
            grid: op.grid().shape(),
            tensor_refinement_defect: pipe.tensors.provenance.refinement_defect,
            seed: config.seed,
            sup_norms: "sampling-grid maxima".to_string(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub dk: f64,
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// Fiber-level bound `lhs ≤ 3C₇|δk| + C₁₁|τ||δk|³` along the first
/// coordinate direction at `|δk| = frac·ϰ`.
pub fn verify_sweep<T: Real>(
    pipe: &Pipeline<T>,
    fracs: &[f64],
    taus: &[f64],
) -> Result<Vec<VerifyRow>> {
    let kappa = pipe.threshold.kappa.as_f64();
    let dks: Vec<f64> = fracs.iter().map(|f| f * kappa).collect();
    verify_sweep_at(pipe, &dks, taus)
}

/// As [`verify_sweep`] at absolute step lengths.
pub fn verify_sweep_at<T: Real>(
    pipe: &Pipeline<T>,
    dks: &[f64],
    taus: &[f64],
) -> Result<Vec<VerifyRow>> {
    let tp = &pipe.threshold;
    let items: Vec<(f64, f64)> = taus
        .iter()
        .flat_map(|&tau| dks.iter().map(move |&dk| (dk, tau)))
        .collect();
    items
        .par_iter()
        .map(|&(step, tau)| {
            let mut dk = vec![T::zero(); tp.dim()];
            dk[0] = T::lit(step);
            let (lhs, rhs) =
                verify_exponential_bound(tp, &pipe.tensors, &pipe.ledger, &dk, T::lit(tau))?;
            Ok(VerifyRow {
                dk: step,
                tau,
                lhs: lhs.as_f64(),
                rhs: rhs.as_f64(),
                margin: (rhs - lhs).as_f64(),
            })
        })
        .collect()
}

/// Relative change of each `lhs` when the same sweep is repeated with the
/// plane-wave cutoff scaled by `factor`; rows whose `lhs` lies below
/// `floor` in both runs report zero.
pub fn cutoff_refinement<T: Real>(
    pipe: &Pipeline<T>,
    config: &RunConfig,
    rows: &[VerifyRow],
    factor: f64,
    floor: f64,
) -> StageResult<Vec<f64>> {
    let mut refined_cfg = config.clone();
    refined_cfg.cutoff = Some(pipe.operator.basis().cutoff().as_f64() * factor);
    let refined = Pipeline::<T>::build(&refined_cfg)?;
    let out = rows
        .iter()
        .map(|r| {
            let again = verify_sweep_at(&refined, &[r.dk], &[r.tau])?;
            let l = again[0].lhs;
            Ok(if r.lhs.max(l) <= floor {
                0.0
            } else {
                (l - r.lhs).abs() / r.lhs.max(l)
            })
        })
        .collect::<Result<Vec<_>>>()
        .at(Stage::Propagation)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Free-operator exactness suite.
pub fn selftest() -> StageResult<Vec<Check>> {
    use std::f64::consts::PI;
    let mut out = Vec::new();

    let op = build_operator::<f64>(&RunConfig::free(1, vec![0.0], 1))?;
    let ks: Vec<Vec<f64>> = (0..201)
        .map(|i| vec![-PI + 2.0 * PI * i as f64 / 200.0])
        .collect();
    let bands = crate::spectral::band_structure(&op, &ks, 3, false).at(Stage::Operator)?;
    let mut worst = 0.0f64;
    for (k, e) in ks.iter().zip(&bands.energies) {
        let mut exact: Vec<f64> = (-3..=3)
            .map(|m| (k[0] + 2.0 * PI * m as f64).powi(2))
            .collect();
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for l in 0..3 {
            worst = worst.max((e[l] - exact[l]).abs());
        }
    }
    out.push(check(
        "free bands",
        worst <= 1e-10,
        format!("max |E - (k+2πm)²| = {worst:.3e}"),
    ));

    for dim in [1usize, 2] {
        let mut cfg = RunConfig::free(dim, vec![0.0; dim], 1);
        cfg.cutoff = Some(8.0 * PI);
        let pipe = Pipeline::<f64>::build(&cfg)?;
        let t = &pipe.tensors;
        let g1 = t.g1.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut g2 = 0.0f64;
        for r in 0..dim {
            for q in 0..dim {
                let target = if r == q { 1.0 } else { 0.0 };
                g2 = g2.max((t.g2(0, 0, r, q) - C::new(target, 0.0)).norm());
            }
        }
        out.push(check(
            &format!("free tensors d={dim}"),
            g1 <= 1e-12 && g2 <= 1e-10,
            format!("|g1| = {g1:.3e}, |g2 - I| = {g2:.3e}"),
        ));
    }

    let cfg = RunConfig::free(1, vec![PI], 1);
    let pipe = Pipeline::<f64>::build(&cfg)?;
    let tp = &pipe.threshold;
    let ok = tp.n() == 2
        && ((tp.lambda0 - PI * PI) / (PI * PI)).abs() <= 1e-8
        && ((tp.gap - 8.0 * PI * PI) / (8.0 * PI * PI)).abs() <= 1e-8;
    out.push(check(
        "Dirac cluster",
        ok,
        format!(
            "n = {}, λ₀ = {:.15}, d₀ = {:.15}",
            tp.n(),
            tp.lambda0,
            tp.gap
        ),
    ));
    let mut sym = 0.0f64;
    for dk in [-0.3, -0.1, -0.01, 0.01, 0.1, 0.3] {
        let mut got =
            crate::linalg::hermitian_eigenvalues(&pipe.tensors.symbol(&[dk]).at(Stage::Tensors)?);
        let mut want = [
            PI * PI - 2.0 * PI * dk + dk * dk,
            PI * PI + 2.0 * PI * dk + dk * dk,
        ];
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 0..2 {
            sym = sym.max((got[i] - want[i]).abs());
        }
    }
    out.push(check(
        "Dirac symbol",
        sym <= 1e-10,
        format!("max spectral deviation {sym:.3e}"),
    ));
    let packet = pipe.packet(&cfg)?;
    let mut worst = 0.0f64;
    for eps in [0.1, 0.05] {
        for tau in [1.0, 10.0] {
            let u = propagate_exact(tp, &packet, eps, tau).at(Stage::Propagation)?;
            let v = propagate_effective(&pipe.tensors, &packet, eps, tau).at(Stage::Propagation)?;
            worst = worst.max(assemble_error(tp, &packet, &u, &v).at(Stage::Propagation)?);
        }
    }
    out.push(check(
        "Dirac propagation",
        worst <= 1e-12,
        format!("max error {worst:.3e}"),
    ));
    Ok(out)
}
