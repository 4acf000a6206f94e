//! Experiment configuration: one JSON file, every key optional, flags on top.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use mfg_cip::carleman::CarlemanParams;
use mfg_cip::cip::{Completeness, NoiseSpec};
use mfg_cip::kernels::{Kernel, KernelSpec, YBar};
use mfg_cip::mfg::{scenarios, PicardOptions, ProblemSpec, Scheme};
use mfg_cip::stability::{geometric, select_parameters, ReconstructOptions, StabilityParams, SweepConfig};
use mfg_cip::{make_grid, Grid, Prism, SpaceField};

use crate::failure::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prism: Prism,
    pub grid: GridCounts,
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub stability: StabilityConfig,
    pub carleman: CarlemanConfig,
    pub lemmas: LemmaConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            prism: scenarios::default_prism(),
            grid: GridCounts::default(),
            problem: ProblemConfig::default(),
            solver: SolverConfig::default(),
            stability: StabilityConfig::default(),
            carleman: CarlemanConfig::default(),
            lemmas: LemmaConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridCounts {
    pub nx: Vec<usize>,
    pub nt: usize,
}

impl Default for GridCounts {
    fn default() -> Self {
        GridCounts { nx: vec![129], nt: 257 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Manufactured,
    ZeroCoupling,
    StrongCoupling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub scenario: Scenario,
    /// Replaces the scenario's kernel. For the manufactured scenario the
    /// interaction coefficient is rebuilt for it.
    pub kernel: Option<KernelSpec>,
    /// Bound of the default Heaviside kernel of the manufactured scenario.
    pub n1: f64,
    pub f_scale: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig { scenario: Scenario::Manufactured, kernel: None, n1: 0.1, f_scale: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub theta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: Scheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { theta: 0.5, tol: 1e-10, max_iter: 100, scheme: Scheme::Implicit }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub lambda1: f64,
    /// Perturbation scales of `k₂ = k₁ + scale·sin²(π(x₁ − a))`.
    pub scales: Vec<f64>,
    pub completeness: Completeness,
    pub noise: Option<NoiseSpec>,
    pub reconstruct: ReconstructOptions,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            rho: 0.5,
            epsilon: 0.2,
            lambda1: 1.0,
            scales: geometric(1e-4, 1e-1, 6),
            completeness: Completeness::Full,
            noise: None,
            reconstruct: ReconstructOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanConfig {
    pub lambdas: Vec<f64>,
    /// Defaults to the `α` of the stability parameters.
    pub alpha: Option<f64>,
    pub members: usize,
    /// `None` selects the fixed default family.
    pub seed: Option<u64>,
    /// Boundary term on `Γ₁T⁺` only, for members vanishing on the rest of `S_T`.
    pub restricted: bool,
    /// Relative tolerance of the negligible-term decay rate.
    pub decay_tolerance: f64,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        CarlemanConfig {
            lambdas: vec![2.0, 4.0, 8.0, 16.0],
            alpha: None,
            members: 20,
            seed: None,
            restricted: false,
            decay_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaConfig {
    pub lambdas: Vec<f64>,
    pub members: usize,
    pub seed: u64,
    pub alpha: Option<f64>,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig { lambdas: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0], members: 10, seed: 7, alpha: None }
    }
}

impl ExperimentConfig {
    /// Reads a config file. A `provenance.json` written by an earlier run is
    /// accepted as well; its recorded config is used.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::config("--config", format!("{}: {e}", path.display())))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::config("--config", format!("{}: {e}", path.display())))?;
        for pointer in ["/config", "/run/config"] {
            if let Some(inner) = value.pointer(pointer) {
                value = inner.clone();
                break;
            }
        }
        serde_json::from_value(value).map_err(|e| Failure::config("--config", e.to_string()))
    }

    pub fn picard(&self) -> PicardOptions {
        let s = self.solver;
        PicardOptions { theta: s.theta, max_iter: s.max_iter, tol: s.tol, scheme: s.scheme }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let s = &self.stability;
        SweepConfig {
            scales: s.scales.clone(),
            rho: s.rho,
            eps: s.epsilon,
            lambda1: s.lambda1,
            completeness: s.completeness,
            picard: self.picard(),
            noise: s.noise,
            reconstruct: s.reconstruct,
        }
    }
}

/// The config after validation, with the objects every command shares.
pub struct Validated {
    pub grid: Arc<Grid>,
    pub kernel: Option<Kernel>,
}

pub fn validate_base(cfg: &ExperimentConfig) -> Result<Validated, Failure> {
    let p = &cfg.prism;
    let prism =
        Prism::new(p.a, p.b, p.half_widths.clone(), p.t_final).map_err(|e| Failure::config("prism", e.to_string()))?;
    if cfg.grid.nx.len() != prism.dim() {
        return Err(Failure::config(
            "grid.nx",
            format!("{} counts for a {}-dimensional prism", cfg.grid.nx.len(), prism.dim()),
        ));
    }
    let grid = make_grid(prism, cfg.grid.nx.clone(), cfg.grid.nt).map_err(|e| Failure::config("grid", e.to_string()))?;
    let kernel = match &cfg.problem.kernel {
        Some(spec) => Some(Kernel::from_spec(spec).map_err(|e| Failure::config("problem.kernel", e.to_string()))?),
        None => None,
    };
    for (key, v) in [("problem.n1", cfg.problem.n1), ("problem.f_scale", cfg.problem.f_scale)] {
        if !v.is_finite() {
            return Err(Failure::config(key, format!("must be finite, got {v}")));
        }
    }
    let s = &cfg.solver;
    if !(s.theta > 0.0 && s.theta <= 1.0) {
        return Err(Failure::config("solver.theta", format!("must lie in (0, 1], got {}", s.theta)));
    }
    if !(s.tol > 0.0) {
        return Err(Failure::config("solver.tol", format!("must be positive, got {}", s.tol)));
    }
    if s.max_iter == 0 {
        return Err(Failure::config("solver.max_iter", "must be at least 1"));
    }
    Ok(Validated { grid, kernel })
}

pub fn validate_stability(cfg: &ExperimentConfig, grid: &Grid) -> Result<StabilityParams, Failure> {
    let s = &cfg.stability;
    let params =
        select_parameters(s.rho, s.epsilon, grid.prism(), s.lambda1).map_err(|e| Failure::from_core("stability", &e))?;
    if let Some(bad) = s.scales.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Failure::config("stability.scales", format!("scales must be finite and non-negative, got {bad}")));
    }
    if let Some(n) = &s.noise {
        if !(n.delta >= 0.0 && n.delta.is_finite()) {
            return Err(Failure::config("stability.noise.delta", format!("must be non-negative, got {}", n.delta)));
        }
    }
    Ok(params)
}

/// Checks a `λ`-grid; values beyond the log-space capacity map to the
/// numeric-range exit code.
pub fn validate_lambdas(key: &str, lambdas: &[f64], alpha: f64) -> Result<(), Failure> {
    if lambdas.is_empty() {
        return Err(Failure::config(key, "empty λ-grid"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Failure::config(key, format!("alpha must be positive, got {alpha}")));
    }
    for &l in lambdas {
        CarlemanParams::new(l, alpha).map_err(|e| Failure::from_core(key, &e))?;
    }
    Ok(())
}

/// The forward problem and baseline coefficient of the configured scenario.
pub fn build_problem(cfg: &ExperimentConfig, v: &Validated) -> Result<(ProblemSpec, SpaceField), Failure> {
    let g = &v.grid;
    let p = &cfg.problem;
    let built = match p.scenario {
        Scenario::Manufactured => {
            let kernel = v.kernel.clone().unwrap_or_else(|| Kernel::causal(YBar::Constant(1.0)).scaled(p.n1));
            scenarios::manufactured_with(g, kernel, p.f_scale)
        }
        Scenario::ZeroCoupling => scenarios::zero_coupling(g),
        Scenario::StrongCoupling => scenarios::strong_coupling(g),
    };
    let (spec, k) = built.map_err(|e| Failure::from_core("problem", &e))?;
    let spec = match (&v.kernel, p.scenario) {
        (Some(k), Scenario::ZeroCoupling | Scenario::StrongCoupling) => spec.with_kernel(k.clone()),
        _ => spec,
    };
    Ok((spec, k))
}

pub fn parse_lambda_grid(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| Failure::config("--lambda-grid", format!("`{s}`: {e}"))))
        .collect()
}
