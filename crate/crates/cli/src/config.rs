//! Experiment configuration. Every field has a default; a JSON file supplies
//! overrides and command-line flags override the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub kernel: KernelConfig,
    pub spectrum: SpectrumConfig,
    pub fisher: FisherConfig,
    pub approx: ApproxConfig,
    pub flow: FlowConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            kernel: KernelConfig::default(),
            spectrum: SpectrumConfig::default(),
            fisher: FisherConfig::default(),
            approx: ApproxConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub d: usize,
    /// Random `(x, y)` pairs compared against the Monte Carlo oracle.
    pub n_pairs: usize,
    pub n_samples: usize,
    /// Hidden units of the empirical kernel.
    pub m: usize,
    pub trace_samples: usize,
    /// Agreement threshold in standard errors.
    pub k_se: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            d: 5,
            n_pairs: 20,
            n_samples: 200_000,
            m: 20_000,
            trace_samples: 200_000,
            k_se: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub d: usize,
    pub gram_samples: usize,
    pub rayleigh_samples: usize,
    /// Operator samples per test point of the eigenfunction residual check.
    pub eigen_samples: usize,
    pub n_test_points: usize,
    pub sphere_points: usize,
    pub sphere_samples: usize,
    pub k_se: f64,
    /// Residual allowance for eigenfunctions, in units of the noise tolerance.
    pub residual_factor: f64,
    /// Separation required of the non-eigenfunction control, same units.
    pub control_factor: f64,
    /// Test hook: scales one basis function so the orthonormality checks must fail.
    pub corrupt_basis: bool,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            d: 5,
            gram_samples: 200_000,
            rayleigh_samples: 100_000,
            eigen_samples: 20_000,
            n_test_points: 8,
            sphere_points: 10,
            sphere_samples: 100_000,
            k_se: 4.0,
            residual_factor: 3.0,
            control_factor: 5.0,
            corrupt_basis: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisherConfig {
    pub d: usize,
    pub m: usize,
    /// Network seeds for the spectrum checks, counted from the experiment seed.
    pub n_seeds: usize,
    /// Relative tolerances for the top, linear and quadratic cluster means.
    pub cluster_tolerances: [f64; 3],
    /// Smaller network used for KL, isometry and empirical-matrix checks.
    pub identity_d: usize,
    pub identity_m: usize,
    pub n_pairs: usize,
    pub n_samples: usize,
    pub empirical_samples: usize,
    pub k_se: f64,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            d: 5,
            m: 2000,
            n_seeds: 1,
            cluster_tolerances: [0.15, 0.10, 0.25],
            identity_d: 3,
            identity_m: 50,
            n_pairs: 10,
            n_samples: 100_000,
            empirical_samples: 100_000,
            k_se: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxConfig {
    pub d: usize,
    pub m: usize,
    pub n_vectors: usize,
    pub n_samples: usize,
    pub mu_samples: usize,
    /// Upper limit on the mean residual; the remainder-trace formula when absent.
    pub residual_bound: Option<f64>,
    pub k_se: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            d: 10,
            m: 4000,
            n_vectors: 10,
            n_samples: 50_000,
            mu_samples: 100_000,
            residual_bound: None,
            k_se: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub d: usize,
    pub mu_samples: usize,
    pub eta: f64,
    pub n_steps: usize,
    /// Relative tolerance on decay-rate ratios.
    pub rate_tolerance: f64,
    pub vspace_d: usize,
    pub vspace_m: usize,
    pub vspace_samples: usize,
    pub vspace_eta: f64,
    pub vspace_steps: usize,
    pub vspace_tolerance: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            d: 5,
            mu_samples: 50_000,
            eta: 0.01,
            n_steps: 200,
            rate_tolerance: 0.02,
            vspace_d: 3,
            vspace_m: 100,
            vspace_samples: 100_000,
            vspace_eta: 0.5,
            vspace_steps: 100,
            vspace_tolerance: 0.05,
        }
    }
}

/// Flag values that replace the matching fields of every section.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub d: Option<usize>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

impl ExperimentConfig {
    /// Reads a config file. A stored report is accepted too; its embedded config is used.
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(cfg) = value.pointer_mut("/metadata/config") {
            value = cfg.take();
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(d) = o.d {
            self.kernel.d = d;
            self.spectrum.d = d;
            self.fisher.d = d;
            self.approx.d = d;
            self.flow.d = d;
        }
        if let Some(m) = o.m {
            self.kernel.m = m;
            self.fisher.m = m;
            self.approx.m = m;
        }
        if let Some(n) = o.samples {
            self.kernel.n_samples = n;
            self.kernel.trace_samples = n;
            self.spectrum.gram_samples = n;
            self.spectrum.rayleigh_samples = n;
            self.spectrum.sphere_samples = n;
            self.fisher.n_samples = n;
            self.fisher.empirical_samples = n;
            self.approx.n_samples = n;
            self.approx.mu_samples = n;
            self.flow.mu_samples = n;
            self.flow.vspace_samples = n;
        }
    }

    /// Rejects settings no suite can run with, before any computation starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let (k, s, f, a, w) = (
            &self.kernel,
            &self.spectrum,
            &self.fisher,
            &self.approx,
            &self.flow,
        );
        let mut problems: Vec<String> = [
            ("kernel.d", k.d),
            ("kernel.n_pairs", k.n_pairs),
            ("kernel.n_samples", k.n_samples),
            ("kernel.m", k.m),
            ("kernel.trace_samples", k.trace_samples),
            ("spectrum.gram_samples", s.gram_samples),
            ("spectrum.rayleigh_samples", s.rayleigh_samples),
            ("spectrum.eigen_samples", s.eigen_samples),
            ("spectrum.n_test_points", s.n_test_points),
            ("spectrum.sphere_points", s.sphere_points),
            ("spectrum.sphere_samples", s.sphere_samples),
            ("fisher.m", f.m),
            ("fisher.n_seeds", f.n_seeds),
            ("fisher.identity_d", f.identity_d),
            ("fisher.identity_m", f.identity_m),
            ("fisher.n_pairs", f.n_pairs),
            ("fisher.n_samples", f.n_samples),
            ("fisher.empirical_samples", f.empirical_samples),
            ("approx.m", a.m),
            ("approx.n_vectors", a.n_vectors),
            ("approx.n_samples", a.n_samples),
            ("approx.mu_samples", a.mu_samples),
            ("flow.mu_samples", w.mu_samples),
            ("flow.n_steps", w.n_steps),
            ("flow.vspace_d", w.vspace_d),
            ("flow.vspace_m", w.vspace_m),
            ("flow.vspace_samples", w.vspace_samples),
            ("flow.vspace_steps", w.vspace_steps),
        ]
        .into_iter()
        .filter(|(_, v)| *v == 0)
        .map(|(name, _)| format!("{name} must be positive"))
        .collect();
        for (name, d) in [
            ("spectrum.d", s.d),
            ("fisher.d", f.d),
            ("approx.d", a.d),
            ("flow.d", w.d),
        ] {
            if d < 2 {
                problems.push(format!("{name} must be at least 2"));
            }
        }
        if !(w.eta > 0.0) || !(w.vspace_eta > 0.0) {
            problems.push("flow step sizes must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }
}
