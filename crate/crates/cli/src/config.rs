//! Run configuration: a TOML file with one table per concern. Every table
//! except `[model]`, `[kernel]` and `[grid]` is optional.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use prionsim::diagnostics::{test_function_by_name, LedgerOptions};
use prionsim::grid::{project, GridFunction, SizeGrid, Spacing};
use prionsim::kernels::{
    make_k0_family, make_powerlaw_family, make_special_family, named_k0, KernelSet, ModelParams,
    PowerLawRates, SizeFn, TruncationSchedule,
};
use prionsim::solver::SolverConfig;

use crate::exit::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Special,
    K0,
    Powerlaw,
}

/// Rate constants. `special` and `k0` read `tau`, `mu`, `beta`, `eta`;
/// `powerlaw` reads `tau`, `mu`, `b`, `zeta`, `k`, `alpha`, `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: Family,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub eta: f64,
    /// Daughter profile name for `k0` (and optionally `powerlaw`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<String>,
    /// Custom daughter profile `k0(s) = sum_i c_i s^i`; replaces `k0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0_poly: Option<Vec<f64>>,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "one")]
    pub zeta: f64,
    #[serde(default)]
    pub k: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub rho: f64,
    /// Switches joining off for `y + z` above this size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_cutoff: Option<f64>,
    /// Probe points per axis for `validate`.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn one() -> f64 {
    1.0
}

fn default_samples() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub y_max: f64,
    pub n_cells: usize,
    #[serde(default = "default_spacing")]
    pub spacing: Spacing,
}

fn default_spacing() -> Spacing {
    Spacing::Geometric
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// `((y - a)(b - y))^2` on `(a, b)`.
    Bump,
    /// `exp(-((y - a) / b)^2 / 2)` for `y > y0`.
    Gaussian,
}

/// Initial density, normalized to total count `count`, and initial monomers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub shape: Shape,
    pub a: f64,
    pub b: f64,
    pub count: f64,
    pub v0: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            shape: Shape::Bump,
            a: 1.5,
            b: 4.0,
            count: 1.0,
            v0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub test_functions: Vec<String>,
    pub sigmas: Vec<f64>,
    pub tail_functionals: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            test_functions: ["one", "y", "cap", "y2cut", "exp"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            sigmas: Vec::new(),
            tail_functionals: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_oracle_dt")]
    pub dt: f64,
}

fn default_oracle_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub levels: Vec<usize>,
    pub r1: f64,
    #[serde(default = "one")]
    pub mollifier_width: f64,
}

impl TruncationConfig {
    pub fn schedule(&self) -> TruncationSchedule {
        TruncationSchedule {
            r1: self.r1,
            mollifier_width: self.mollifier_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: Self = toml::from_str(text).map_err(|e| Failure::config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), Failure> {
        if self.kernel.family == Family::K0
            && self.kernel.k0.is_none()
            && self.kernel.k0_poly.is_none()
        {
            return Err(Failure::config(
                "kernel.family = \"k0\" needs kernel.k0 or kernel.k0_poly",
            ));
        }
        for name in &self.diagnostics.test_functions {
            if test_function_by_name(name, self.model.y0, self.grid.y_max).is_none() {
                return Err(Failure::config(format!("unknown test function `{name}`")));
            }
        }
        if !(self.initial.b > self.initial.a) && self.initial.shape == Shape::Bump {
            return Err(Failure::config("initial.b must exceed initial.a"));
        }
        Ok(())
    }

    /// The resolved configuration as written to `run_manifest.toml`.
    pub fn to_manifest(&self) -> String {
        let body = toml::to_string(self).expect("run configuration serializes");
        format!("# prionsim {}\n{body}", env!("CARGO_PKG_VERSION"))
    }

    pub fn kernels(&self) -> Result<KernelSet, Failure> {
        let kc = &self.kernel;
        let p = ModelParams::new(
            self.model.lambda,
            self.model.gamma,
            self.model.nu,
            self.model.y0,
        )?;
        let k = match kc.family {
            Family::Special => make_special_family(kc.tau, kc.mu, kc.beta, kc.eta, p)?,
            Family::K0 => {
                let k0 = self.k0_profile()?.expect("checked on load");
                make_k0_family(k0, p, kc.tau, kc.mu, kc.beta, kc.eta)?
            }
            Family::Powerlaw => {
                let rates = PowerLawRates {
                    tau: kc.tau,
                    mu: kc.mu,
                    b: kc.b,
                    zeta: kc.zeta,
                    k: kc.k,
                    alpha: kc.alpha,
                    rho: kc.rho,
                };
                make_powerlaw_family(rates, p, self.k0_profile()?)?
            }
        };
        Ok(match kc.eta_cutoff {
            Some(s1) => k.with_eta_cutoff(s1),
            None => k,
        })
    }

    fn k0_profile(&self) -> Result<Option<SizeFn>, Failure> {
        if let Some(c) = self.kernel.k0_poly.clone() {
            let f: SizeFn = Arc::new(move |s| c.iter().rev().fold(0.0, |acc, ci| acc * s + ci));
            return Ok(Some(f));
        }
        Ok(self.kernel.k0.as_deref().map(named_k0).transpose()?)
    }

    pub fn grid(&self) -> Result<Arc<SizeGrid>, Failure> {
        Ok(Arc::new(SizeGrid::build(
            self.model.y0,
            self.grid.y_max,
            self.grid.n_cells,
            self.grid.spacing,
        )?))
    }

    pub fn initial_density(&self, grid: Arc<SizeGrid>) -> Result<GridFunction, Failure> {
        let InitialConfig {
            shape, a, b, count, ..
        } = self.initial;
        let u = match shape {
            Shape::Bump => project(
                |y| {
                    if y > a && y < b {
                        ((y - a) * (b - y)).powi(2)
                    } else {
                        0.0
                    }
                },
                grid,
            )?,
            Shape::Gaussian => project(|y| (-0.5 * ((y - a) / b).powi(2)).exp(), grid)?,
        };
        let total = u.moment(0.0);
        if !(total > 0.0) {
            return Err(Failure::config(
                "initial density has no cells inside the grid",
            ));
        }
        Ok(u.scaled(count / total))
    }

    pub fn ledger_options(&self) -> LedgerOptions {
        let (y0, y_max) = (self.model.y0, self.grid.y_max);
        LedgerOptions {
            test_functions: self
                .diagnostics
                .test_functions
                .iter()
                .filter_map(|n| test_function_by_name(n, y0, y_max))
                .collect(),
            sigmas: self.diagnostics.sigmas.clone(),
            tail_functionals: self.diagnostics.tail_functionals,
            eta_cutoff: None,
        }
    }
}
