use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bloch_hom::effective::{EffectiveTensors, TensorRecord};
use bloch_hom::harness::output::{
    write_bands, write_convergence, write_fibers, write_snapshot, write_verify,
};
use bloch_hom::harness::{
    build_operator, convergence_with, cutoff_refinement, k_from_fractional, selftest,
    symmetry_path, threshold_record, verify_sweep, Pipeline, RunConfig,
};
use bloch_hom::linalg::CVector;
use bloch_hom::propagator::{
    assemble_error_in, error_bound, make_packet, propagate_effective_from, propagate_exact_from,
    reconstruct, PacketSpec,
};
use bloch_hom::spectral::{band_structure, k_path};
use bloch_hom::C;

const THREADS_VAR: &str = "BLOCHHOM_THREADS";

#[derive(Parser)]
#[command(
    name = "bloch-hom",
    version,
    about = "Threshold homogenization of periodic operators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// d = 1, ǧ = 1, V = 0 at k° = 0.
    Free,
    /// d = 1, ǧ = 1, V = 0 at k° = π (two-fold crossing).
    Dirac,
    /// d = 1, ǧ = 1, V = 2cos 2πx at k° = 0.
    Mathieu,
    /// Same potential at the zone edge k° = π.
    MathieuEdge,
}

#[derive(Args)]
struct Source {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl Source {
    fn load(&self) -> Result<RunConfig, String> {
        if let Some(path) = &self.config {
            let text =
                std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            return RunConfig::from_json(&text).map_err(|e| e.to_string());
        }
        use std::f64::consts::PI;
        Ok(match self.preset.expect("clap enforces a source") {
            Preset::Free => RunConfig::free(1, vec![0.0], 1),
            Preset::Dirac => {
                let mut c = RunConfig::free(1, vec![PI], 1);
                c.taus = vec![1.0, 10.0];
                c
            }
            Preset::Mathieu => RunConfig::mathieu(0.0),
            Preset::MathieuEdge => RunConfig::mathieu(PI),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Band functions along a polyline of the dual zone (CSV).
    Bands {
        #[command(flatten)]
        source: Source,
        /// Vertices in dual-lattice coordinates, `;`-separated, components
        /// `,`-separated. Defaults to a high-symmetry path.
        #[arg(long)]
        path: Option<String>,
        /// Points per segment.
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Number of bands.
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold record (JSON); `--verify` adds the fiber-level bound sweep.
    Threshold {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Destination of the verification CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Effective tensor record (JSON).
    Effective {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact and effective evolution of one packet; per-node CSV and the
    /// scalar error.
    Evolve {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        tau: f64,
        /// Packet specification (JSON); the configuration's packet otherwise.
        #[arg(long)]
        packet: Option<PathBuf>,
        /// Tensor record from `effective`; recomputed otherwise.
        #[arg(long)]
        tensors: Option<PathBuf>,
        /// Number of physical sample points per axis for a snapshot.
        #[arg(long)]
        grid: Option<usize>,
        /// Half-width of the snapshot window.
        #[arg(long, default_value_t = 5.0)]
        extent: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Destination of the snapshot CSV.
        #[arg(long, default_value = "snapshot.csv")]
        snapshot: PathBuf,
    },
    /// Convergence study over the configured (ε, τ) grid.
    Converge {
        #[command(flatten)]
        source: Source,
        /// Report destination (JSON); overrides the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Error table destination (CSV); overrides the configuration.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Free-operator exactness suite.
    Selftest,
}

enum Failure {
    Violation(String),
    Fatal(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Fatal(e.to_string())
    }
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<S: serde::Serialize>(path: Option<&Path>, value: &S) -> Result<(), Failure> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parse_path(text: &str, dim: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let verts = text
        .split(';')
        .map(|v| {
            v.split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    if verts.is_empty() || verts.iter().any(|v| v.len() != dim) {
        return Err(Failure::Fatal(format!(
            "path vertices need {dim} components"
        )));
    }
    Ok(verts)
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Bands {
            source,
            path,
            points,
            count,
            out,
        } => {
            let config = source.load()?;
            let op = build_operator::<f64>(&config)?;
            let d = op.dim();
            let verts = match path {
                Some(p) => parse_path(&p, d)?,
                None => symmetry_path(d),
            };
            let lattice = op.basis().lattice();
            let cart: Vec<Vec<f64>> = verts
                .iter()
                .map(|t| k_from_fractional(lattice, t))
                .collect();
            let ks = k_path(&cart, points.max(1));
            let bands = band_structure(&op, &ks, count, false)?;
            let mut w = sink(out.as_deref())?;
            write_bands(&mut w, &bands)?;
            w.flush()?;
        }
        Command::Threshold {
            source,
            verify,
            out,
            csv,
        } => {
            let config = source.load()?;
            let pipe = Pipeline::<f64>::build(&config)?;
            let record = threshold_record(&pipe.operator, &pipe.threshold);
            if !verify {
                return write_json(out.as_deref(), &record);
            }
            let rows = verify_sweep(&pipe, &[0.3, 0.1, 0.03], &[1.0, 10.0, 100.0])?;
            let changes = cutoff_refinement(&pipe, &config, &rows, 1.5, 1e-8)?;
            let agree = changes.iter().all(|&c| c <= 0.05);
            if !agree {
                log::warn!("fiber-bound lhs changes by more than 5% under 1.5x cutoff refinement");
            }
            let doc = serde_json::json!({
                "threshold": record,
                "ledger": pipe.ledger.to_f64(),
                "cutoff_refinement": { "factor": 1.5, "relative_change": changes, "within_5_percent": agree },
            });
            write_json(out.as_deref(), &doc)?;
            let mut w = sink(csv.as_deref())?;
            write_verify(&mut w, &rows)?;
            w.flush()?;
            let bad = rows.iter().filter(|r| r.lhs > r.rhs).count();
            if bad > 0 {
                return Err(Failure::Violation(format!(
                    "{bad} sample(s) exceed the fiber bound"
                )));
            }
        }
        Command::Effective { source, out } => {
            let config = source.load()?;
            let pipe = Pipeline::<f64>::build(&config)?;
            write_json(out.as_deref(), &pipe.tensors.to_record(&pipe.operator))?;
        }
        Command::Evolve {
            source,
            epsilon,
            tau,
            packet,
            tensors,
            grid,
            extent,
            out,
            snapshot,
        } => {
            let mut config = source.load()?;
            if let Some(p) = packet {
                let text =
                    std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                config.packet = Some(serde_json::from_str::<PacketSpec>(&text)?);
            }
            let pipe = Pipeline::<f64>::build(&config)?;
            let tp = &pipe.threshold;
            let effective = match tensors {
                Some(p) => {
                    let text =
                        std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                    let rec: TensorRecord = serde_json::from_str(&text)?;
                    EffectiveTensors::from_record(&rec, &pipe.operator)?
                }
                None => pipe.tensors.clone(),
            };
            let spec = config
                .packet
                .as_ref()
                .ok_or("configuration has no packet")?;
            let j = config.component - 1;
            if j >= effective.n {
                return Err(Failure::Fatal(format!(
                    "component {} exceeds the multiplicity",
                    config.component
                )));
            }
            let wave = make_packet::<f64>(spec, pipe.operator.dim(), j)?;
            let mut e_j = CVector::zeros(effective.n);
            e_j[j] = C::new(1.0, 0.0);
            let start = tp.cluster.adjoint() * &effective.cluster * &e_j;
            let u = propagate_exact_from(tp, &wave, epsilon, tau, &start)?;
            let v = propagate_effective_from(&effective, &wave, epsilon, tau, &e_j)?;
            let error = assemble_error_in(tp, &wave, &effective.cluster, &u, &v)?;
            let bound = error_bound(tp, &pipe.ledger, &wave, epsilon, tau);
            let mut w = sink(out.as_deref())?;
            let mut aligned = tp.clone();
            aligned.cluster = effective.cluster.clone();
            write_fibers(&mut w, &aligned, &wave, &u, &v)?;
            w.flush()?;
            let certified = epsilon * wave.radius <= tp.kappa;
            eprintln!(
                "error {:.16e} bound {:.16e} (outer {:.6e}, inner {:.6e}) certified {certified}",
                error, bound.total, bound.outer, bound.inner
            );
            if let Some(n) = grid {
                let n = n.max(2);
                let d = wave.dim;
                let axis: Vec<f64> = (0..n)
                    .map(|i| -extent + 2.0 * extent * i as f64 / (n - 1) as f64)
                    .collect();
                let mut points: Vec<Vec<f64>> = vec![Vec::new()];
                for _ in 0..d {
                    points = points
                        .into_iter()
                        .flat_map(|p| {
                            axis.iter().map(move |&x| {
                                let mut q = p.clone();
                                q.push(x);
                                q
                            })
                        })
                        .collect();
                }
                let values = reconstruct(pipe.operator.basis(), &aligned, &wave, &u, &v, &points)?;
                let mut w = sink(Some(&snapshot))?;
                write_snapshot(&mut w, &points, &values)?;
                w.flush()?;
            }
            if certified && error > bound.total {
                return Err(Failure::Violation(
                    "error exceeds the explicit bound".into(),
                ));
            }
        }
        Command::Converge { source, out, csv } => {
            let config = source.load()?;
            let pipe = Pipeline::<f64>::build(&config)?;
            let report = convergence_with(&pipe, &config)?;
            let report_path = out.or(config.outputs.report.clone());
            let csv_path = csv.or(config.outputs.csv.clone());
            write_json(report_path.as_deref(), &report)?;
            if let Some(p) = csv_path {
                let mut w = sink(Some(&p))?;
                write_convergence(&mut w, &report)?;
                w.flush()?;
            }
            for r in &report.rows {
                eprintln!(
                    "ε {:<8} τ {:<6} error {:.6e} bound {:.6e}{}",
                    r.epsilon,
                    r.tau,
                    r.error,
                    r.bound,
                    if r.certified { "" } else { " (uncertified)" }
                );
            }
            for f in &report.fits {
                match f.slope {
                    Some(s) => eprintln!(
                        "τ {}: slope {s:.4} (rms residual {:.2e})",
                        f.tau,
                        f.residual.unwrap_or(0.0)
                    ),
                    None => eprintln!("τ {}: {:?}", f.tau, f.status),
                }
            }
            if !report.all_bounds_hold {
                return Err(Failure::Violation(
                    "a certified error exceeds its bound".into(),
                ));
            }
        }
        Command::Selftest => {
            let checks = selftest()?;
            let mut failed = 0;
            for c in &checks {
                println!(
                    "[{}] {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Failure::Violation(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            _ => {
                eprintln!("error: {THREADS_VAR} must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("violation: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Fatal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
