//! Run configuration: a single JSON document.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::propagator::PacketSpec;

/// Fourier term `(multi-index, [re, im])`; the multi-index has one entry per
/// lattice dimension.
pub type FourierTerm = (Vec<i32>, [f64; 2]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRequest {
    pub k0: Vec<f64>,
    /// One-based band index `s`.
    pub band: usize,
    #[serde(default)]
    pub cluster_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Errors at or below this level are treated as roundoff; no slope is
    /// fitted through them.
    #[serde(default = "default_noise_floor")]
    pub noise_floor: f64,
}

fn default_noise_floor() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            noise_floor: default_noise_floor(),
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Row-major `d×d` matrix whose columns are the lattice basis vectors.
    pub lattice: Vec<Vec<f64>>,
    /// Entries of `ǧ` in row-major order; the identity when absent.
    #[serde(default)]
    pub metric: Option<Vec<Vec<FourierTerm>>>,
    #[serde(default)]
    pub potential: Option<Vec<FourierTerm>>,
    /// Supplied weight `ω`; excludes `potential`.
    #[serde(default)]
    pub weight: Option<Vec<FourierTerm>>,
    /// Plane-wave cutoff radius; `8·min|b^l|` when absent.
    #[serde(default)]
    pub cutoff: Option<f64>,
    pub threshold: ThresholdRequest,
    #[serde(default)]
    pub packet: Option<PacketSpec>,
    /// One-based cluster component carried by the packet.
    #[serde(default = "one")]
    pub component: usize,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub outputs: OutputPaths,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| crate::Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.lattice.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if !(1..=3).contains(&d) || self.lattice.iter().any(|r| r.len() != d) {
            return invalid("lattice must be a square matrix of size 1, 2 or 3");
        }
        let terms_ok = |terms: &[FourierTerm]| {
            terms
                .iter()
                .all(|(m, z)| m.len() == d && z.iter().all(|x| x.is_finite()))
        };
        if let Some(m) = &self.metric {
            if m.len() != d * d || !m.iter().all(|e| terms_ok(e)) {
                return invalid(format!(
                    "metric needs {} entries with {d}-component indices",
                    d * d
                ));
            }
        }
        for (name, f) in [("potential", &self.potential), ("weight", &self.weight)] {
            if let Some(t) = f {
                if !terms_ok(t) {
                    return invalid(format!(
                        "{name} terms need {d}-component indices and finite values"
                    ));
                }
            }
        }
        if self.potential.is_some() && self.weight.is_some() {
            return invalid("give either a potential or a weight, not both");
        }
        if let Some(c) = self.cutoff {
            if !(c >= 0.0 && c.is_finite()) {
                return invalid("cutoff must be nonnegative");
            }
        }
        let t = &self.threshold;
        if t.k0.len() != d || t.k0.iter().any(|x| !x.is_finite()) {
            return invalid("threshold k0 must have one finite entry per dimension");
        }
        if t.band == 0 {
            return invalid("band index is one-based");
        }
        if let Some(tol) = t.cluster_tol {
            if !(tol > 0.0) {
                return invalid("cluster_tol must be positive");
            }
        }
        if self.component == 0 {
            return invalid("component index is one-based");
        }
        if !(self.tolerances.noise_floor > 0.0) {
            return invalid("noise_floor must be positive");
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return invalid("every ε must be positive");
        }
        if self.taus.iter().any(|t| !t.is_finite()) {
            return invalid("every τ must be finite");
        }
        Ok(())
    }

    /// Additional requirements of a convergence study.
    pub fn validate_convergence(&self) -> Result<()> {
        self.validate()?;
        if self.epsilons.is_empty() {
            return invalid("convergence study needs at least one ε");
        }
        if self.taus.is_empty() {
            return invalid("convergence study needs at least one τ");
        }
        if self.packet.is_none() {
            return invalid("convergence study needs a packet");
        }
        if self.epsilons.len() >= 3 && self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return invalid("ε list must be strictly decreasing for slope fitting");
        }
        Ok(())
    }

    /// Free operator on `Γ = ℤ^d` at `k°` with an identity metric.
    pub fn free(dim: usize, k0: Vec<f64>, band: usize) -> Self {
        let lattice = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            lattice,
            metric: None,
            potential: None,
            weight: None,
            cutoff: None,
            threshold: ThresholdRequest {
                k0,
                band,
                cluster_tol: None,
            },
            packet: Some(PacketSpec::Gaussian {
                width: 1.0,
                radius: 6.0,
                nodes: 64,
            }),
            component: 1,
            epsilons: vec![0.1, 0.05, 0.025, 0.0125],
            taus: vec![1.0],
            outputs: OutputPaths::default(),
            tolerances: Tolerances::default(),
            seed: 0,
        }
    }

    /// `d = 1`, `ǧ = 1`, `V = 2cos(2πx)`.
    pub fn mathieu(k0: f64) -> Self {
        let mut cfg = Self::free(1, vec![k0], 1);
        cfg.potential = Some(vec![(vec![1], [1.0, 0.0]), (vec![-1], [1.0, 0.0])]);
        cfg
    }
}
