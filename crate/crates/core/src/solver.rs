//! Time integration of the coupled monomer/polymer system by operator
//! splitting: reaction (splitting, degradation, joining) with explicit
//! sub-stepping, transport along characteristics, and the integrating-factor
//! update of the monomer count.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridFunction, SizeGrid};
use crate::kernels::KernelSet;
use crate::operators::{
    speed, transport_apply_with, CharacteristicMap, OperatorError, Operators, TransportScheme,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite {what} at t = {t}")]
    BlowUp { t: f64, what: &'static str },
    #[error("monomer count {v:e} became negative at t = {t}")]
    NegativeMonomer { t: f64, v: f64 },
    #[error("density {min:e} in cell {cell} below tolerance {tolerance:e} at t = {t}")]
    NegativeDensity {
        t: f64,
        min: f64,
        cell: usize,
        tolerance: f64,
    },
    #[error("mass {mass:e} escaped towards the grid end (bound {bound:e}) at t = {t}")]
    MassEscape { t: f64, mass: f64, bound: f64 },
    #[error("at t = {t}: {source}")]
    PairOutOfRange { t: f64, source: OperatorError },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    Lie,
    #[default]
    Strang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionIntegrator {
    Euler,
    #[default]
    Rk2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub splitting: Splitting,
    pub reaction_integrator: ReactionIntegrator,
    /// Absolute clipping tolerance for negative densities; defaults to
    /// `1e-12` times the initial peak.
    pub positivity_tolerance: Option<f64>,
    pub snapshot_times: Vec<f64>,
    pub transport: TransportScheme,
    pub joining_enabled: bool,
    /// Upper bound on the first moment allowed in the grid tail
    /// (`y > 0.9 y_max`) plus the outflow; unset disables the check.
    pub mass_escape_bound: Option<f64>,
    /// Keep every `record_every`-th step in the trajectory.
    pub record_every: usize,
    /// Relative joining flux allowed to fall beyond the last cell.
    pub pair_tolerance: f64,
    /// Upper bound on `dt_sub * max loss rate` inside a reaction step.
    pub substep_rate: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            splitting: Splitting::Strang,
            reaction_integrator: ReactionIntegrator::Rk2,
            positivity_tolerance: None,
            snapshot_times: Vec::new(),
            transport: TransportScheme::Conservative,
            joining_enabled: true,
            mass_escape_bound: None,
            record_every: 1,
            pair_tolerance: 1e-12,
            substep_rate: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {} must be non-negative", self.t_end));
        }
        if self.t_end > 0.0 && self.t_end < self.dt * (1.0 - 1e-12) {
            return bad(format!(
                "t_end = {} is shorter than dt = {}",
                self.t_end, self.dt
            ));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if !(self.substep_rate > 0.0 && self.substep_rate <= 1.0) {
            return bad(format!(
                "substep_rate = {} must lie in (0, 1]",
                self.substep_rate
            ));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|t| !(**t >= 0.0 && t.is_finite()))
        {
            return bad(format!("snapshot time {t} is invalid"));
        }
        Ok(())
    }

    /// Number of steps needed to reach `t_end`.
    pub fn n_steps(&self) -> usize {
        if self.t_end == 0.0 {
            0
        } else {
            (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
        }
    }

    /// Time after step `k`; the last step is shortened to land on `t_end`.
    pub fn time_at(&self, k: usize) -> f64 {
        if k >= self.n_steps() {
            self.t_end
        } else {
            k as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationState {
    pub step: usize,
    pub t: f64,
    pub v: f64,
    pub u: GridFunction,
    /// `int_0^t v ds` by the trapezoid rule.
    pub accum_v_integral: f64,
    /// `int_0^t int y mu u dy ds` by the trapezoid rule.
    pub accum_mu_integral: f64,
}

impl SimulationState {
    pub fn initial(u0: GridFunction, v0: f64) -> Self {
        Self {
            step: 0,
            t: 0.0,
            v: v0,
            u: u0,
            accum_v_integral: 0.0,
            accum_mu_integral: 0.0,
        }
    }

    pub fn u0(&self) -> f64 {
        self.u.moment(0.0)
    }

    pub fn u1(&self) -> f64 {
        self.u.moment(1.0)
    }
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub max_substeps: usize,
    pub total_substeps: usize,
    /// Count carried past `y_max` by transport.
    pub outflow: f64,
    /// Count kept in the last cell although its image passed the last center.
    pub clamped: f64,
    /// Negative density removed by clipping (count).
    pub clipped: f64,
    /// Largest relative joining flux excluded as out of range.
    pub max_excluded_pair_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// States every `record_every` steps, always including the first and last.
    pub trajectory: Vec<SimulationState>,
    /// States at the requested snapshot times (nearest step).
    pub snapshots: Vec<SimulationState>,
    pub stats: RunStats,
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: SolverError,
    pub partial: RunOutput,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} steps)",
            self.error, self.partial.stats.steps
        )
    }
}

impl std::error::Error for RunFailure {}

/// Per-step scratch results that feed the run statistics.
#[derive(Debug, Clone, Copy, Default)]
struct StepInfo {
    substeps: usize,
    outflow: f64,
    clamped: f64,
    clipped: f64,
    excluded_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct Solver {
    ops: Operators,
    cm: CharacteristicMap,
    cfg: SolverConfig,
    mu_moment_weights: Vec<f64>,
}

/// `v(t + h)` for `v' = a - b v` with `a, b` frozen.
fn integrating_factor(v: f64, h: f64, a: f64, b: f64) -> f64 {
    if b * h < 1e-12 {
        v + (a - b * v) * h
    } else {
        let e = (-b * h).exp();
        v * e + a * (-(-b * h).exp_m1()) / b
    }
}

impl Solver {
    pub fn new(k: &KernelSet, grid: Arc<SizeGrid>, cfg: SolverConfig) -> Result<Self, SolverError> {
        cfg.check()?;
        let cm = CharacteristicMap::new(k, grid.clone())?;
        let ops = Operators::new(k, grid.clone()).with_pair_tolerance(cfg.pair_tolerance);
        let mu_moment_weights = grid
            .centers()
            .iter()
            .zip(grid.widths())
            .zip(ops.mu())
            .map(|((c, w), m)| c * w * m)
            .collect();
        Ok(Self {
            ops,
            cm,
            cfg,
            mu_moment_weights,
        })
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }

    pub fn characteristics(&self) -> &CharacteristicMap {
        &self.cm
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    fn params(&self) -> crate::kernels::ModelParams {
        self.ops.kernels().params
    }

    /// `int y mu u dy` on the grid.
    pub fn mu_moment(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(&self.mu_moment_weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Tolerance used for clipping; `peak` is the initial peak density.
    pub fn positivity_tolerance(&self, peak: f64) -> f64 {
        self.cfg.positivity_tolerance.unwrap_or(1e-12 * peak)
    }

    fn reaction_rhs(&self, u: &[f64], out: &mut [f64], t: f64) -> Result<f64, SolverError> {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.ops.fragmentation_into(u, out);
        let mut excluded = 0.0;
        if self.cfg.joining_enabled {
            let stats = self
                .ops
                .joining_into(u, u, out)
                .map_err(|source| SolverError::PairOutOfRange { t, source })?;
            let total = stats.total + stats.excluded;
            if total > 0.0 {
                excluded = stats.excluded / total;
            }
        }
        Ok(excluded)
    }

    /// Advances `u' = L[u] + Q[u, u]` over `h` with sub-steps.
    fn react(&self, u: &mut [f64], h: f64, t: f64, info: &mut StepInfo) -> Result<(), SolverError> {
        if h == 0.0 {
            return Ok(());
        }
        let rate = self.ops.max_loss_rate(u);
        if !rate.is_finite() {
            return Err(SolverError::BlowUp {
                t,
                what: "loss rate",
            });
        }
        let n_sub = ((h * rate / self.cfg.substep_rate).ceil() as usize).max(1);
        info.substeps += n_sub;
        let hs = h / n_sub as f64;
        let n = u.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut stage = vec![0.0; n];
        for _ in 0..n_sub {
            let ex = self.reaction_rhs(u, &mut k1, t)?;
            info.excluded_fraction = info.excluded_fraction.max(ex);
            match self.cfg.reaction_integrator {
                ReactionIntegrator::Euler => {
                    for (x, d) in u.iter_mut().zip(&k1) {
                        *x += hs * d;
                    }
                }
                ReactionIntegrator::Rk2 => {
                    for ((s, x), d) in stage.iter_mut().zip(u.iter()).zip(&k1) {
                        *s = x + hs * d;
                    }
                    let ex = self.reaction_rhs(&stage, &mut k2, t)?;
                    info.excluded_fraction = info.excluded_fraction.max(ex);
                    for ((x, s), d) in u.iter_mut().zip(&stage).zip(&k2) {
                        *x = 0.5 * (*x + s + hs * d);
                    }
                }
            }
        }
        Ok(())
    }

    fn enforce_positivity(
        &self,
        u: &mut [f64],
        tol: f64,
        t: f64,
        info: &mut StepInfo,
    ) -> Result<(), SolverError> {
        let widths = self.ops.grid().widths();
        for (i, x) in u.iter_mut().enumerate() {
            if !x.is_finite() {
                return Err(SolverError::BlowUp { t, what: "density" });
            }
            if *x < 0.0 {
                if *x < -tol {
                    return Err(SolverError::NegativeDensity {
                        t,
                        min: *x,
                        cell: i,
                        tolerance: tol,
                    });
                }
                info.clipped += -*x * widths[i];
                *x = 0.0;
            }
        }
        Ok(())
    }

    fn transport(
        &self,
        u: Vec<f64>,
        t_eff: f64,
        info: &mut StepInfo,
    ) -> Result<Vec<f64>, SolverError> {
        let f = GridFunction::from_values(self.ops.grid().clone(), u).expect("grid length");
        let out = transport_apply_with(&self.cm, &f, t_eff, self.cfg.transport)?;
        info.outflow += out.outflow;
        info.clamped += out.clamped;
        Ok(out.u.into_values())
    }

    /// `(p, g)` feeding the monomer equation.
    fn monomer_coupling(&self, u: &[f64]) -> (f64, f64) {
        let nu = self.params().nu;
        let u1 = moment1(self.ops.grid(), u);
        let p = self.ops.tau_moment(u) / (1.0 + nu * u1);
        (p, self.ops.g_discrete(u))
    }

    fn step_inner(
        &self,
        s: &SimulationState,
        tol: f64,
        info: &mut StepInfo,
    ) -> Result<SimulationState, SolverError> {
        let cfg = &self.cfg;
        let params = self.params();
        let t_next = cfg.time_at(s.step + 1);
        let dt = t_next - s.t;
        let (lambda, gamma, nu) = (params.lambda, params.gamma, params.nu);
        let grid = self.ops.grid().clone();
        let u_n = s.u.values();
        let (p_n, g_n) = self.monomer_coupling(u_n);

        let (u_next, v_next) = match cfg.splitting {
            Splitting::Strang => {
                let mut u = u_n.to_vec();
                self.react(&mut u, 0.5 * dt, s.t, info)?;
                self.enforce_positivity(&mut u, tol, s.t, info)?;
                let v_half = integrating_factor(s.v, 0.5 * dt, lambda + g_n, gamma + p_n);
                let v_mid = speed(v_half, nu, moment1(&grid, &u));
                let mut u = self.transport(u, v_mid * dt, info)?;
                self.enforce_positivity(&mut u, tol, s.t, info)?;
                self.react(&mut u, 0.5 * dt, s.t + 0.5 * dt, info)?;
                self.enforce_positivity(&mut u, tol, t_next, info)?;
                let (p_1, g_1) = self.monomer_coupling(&u);
                let v = integrating_factor(
                    s.v,
                    dt,
                    lambda + 0.5 * (g_n + g_1),
                    gamma + 0.5 * (p_n + p_1),
                );
                (u, v)
            }
            Splitting::Lie => {
                let mut u = u_n.to_vec();
                self.react(&mut u, dt, s.t, info)?;
                self.enforce_positivity(&mut u, tol, s.t, info)?;
                let v_speed = speed(s.v, nu, moment1(&grid, &u));
                let mut u = self.transport(u, v_speed * dt, info)?;
                self.enforce_positivity(&mut u, tol, t_next, info)?;
                let v = integrating_factor(s.v, dt, lambda + g_n, gamma + p_n);
                (u, v)
            }
        };

        if !v_next.is_finite() {
            return Err(SolverError::BlowUp {
                t: t_next,
                what: "monomer count",
            });
        }
        let v_next = if v_next < 0.0 {
            if v_next < -1e-12 {
                return Err(SolverError::NegativeMonomer {
                    t: t_next,
                    v: v_next,
                });
            }
            0.0
        } else {
            v_next
        };
        let u = GridFunction::from_values(grid, u_next).expect("grid length");
        if let Some(bound) = cfg.mass_escape_bound {
            let mass = u.tail_mass() + info.outflow * u.grid().y_max();
            if mass > bound {
                return Err(SolverError::MassEscape {
                    t: t_next,
                    mass,
                    bound,
                });
            }
        }
        let accum_v_integral = s.accum_v_integral + 0.5 * dt * (s.v + v_next);
        let accum_mu_integral =
            s.accum_mu_integral + 0.5 * dt * (self.mu_moment(u_n) + self.mu_moment(u.values()));
        Ok(SimulationState {
            step: s.step + 1,
            t: t_next,
            v: v_next,
            u,
            accum_v_integral,
            accum_mu_integral,
        })
    }

    /// One step of length `dt` (shortened at `t_end`). `peak` is the initial
    /// peak density used for the default positivity tolerance.
    pub fn step(&self, state: &SimulationState, peak: f64) -> Result<SimulationState, SolverError> {
        let mut info = StepInfo::default();
        self.step_inner(state, self.positivity_tolerance(peak), &mut info)
    }

    pub fn run(&self, u0: GridFunction, v0: f64) -> Result<RunOutput, RunFailure> {
        let cfg = &self.cfg;
        let mut out = RunOutput {
            trajectory: Vec::new(),
            snapshots: Vec::new(),
            stats: RunStats::default(),
        };
        let fail = |error: SolverError, out: RunOutput| RunFailure {
            error,
            partial: out,
        };
        if !(v0 >= 0.0 && v0.is_finite()) {
            return Err(fail(
                SolverError::InvalidConfig(format!("v0 = {v0} must be non-negative")),
                out,
            ));
        }
        if u0.grid().as_ref() != self.ops.grid().as_ref() {
            return Err(fail(
                SolverError::Operator(OperatorError::GridMismatch),
                out,
            ));
        }
        let peak = u0.peak();
        let tol = self.positivity_tolerance(peak);
        if let Some(m) = u0
            .values()
            .iter()
            .cloned()
            .find(|v| !v.is_finite() || *v < -tol)
        {
            return Err(fail(
                SolverError::NegativeDensity {
                    t: 0.0,
                    min: m,
                    cell: 0,
                    tolerance: tol,
                },
                out,
            ));
        }
        let u0 = GridFunction::from_values(self.ops.grid().clone(), u0.into_values()).unwrap();
        let n_steps = cfg.n_steps();
        let mut wanted: Vec<usize> = cfg
            .snapshot_times
            .iter()
            .map(|&t| ((t / cfg.dt).round() as usize).min(n_steps))
            .collect();
        wanted.sort_unstable();
        wanted.dedup();

        let mut state = SimulationState::initial(u0, v0);
        let keep = |state: &SimulationState, out: &mut RunOutput| {
            if state.step.is_multiple_of(cfg.record_every) || state.step == n_steps {
                out.trajectory.push(state.clone());
            }
            if wanted.binary_search(&state.step).is_ok() {
                out.snapshots.push(state.clone());
            }
        };
        keep(&state, &mut out);
        for _ in 0..n_steps {
            let mut info = StepInfo::default();
            match self.step_inner(&state, tol, &mut info) {
                Ok(next) => state = next,
                Err(e) => {
                    if out.trajectory.last().map(|s| s.step) != Some(state.step) {
                        out.trajectory.push(state.clone());
                    }
                    return Err(fail(e, out));
                }
            }
            let st = &mut out.stats;
            st.steps += 1;
            st.max_substeps = st.max_substeps.max(info.substeps);
            st.total_substeps += info.substeps;
            st.outflow += info.outflow;
            st.clamped += info.clamped;
            st.clipped += info.clipped;
            st.max_excluded_pair_fraction =
                st.max_excluded_pair_fraction.max(info.excluded_fraction);
            keep(&state, &mut out);
        }
        Ok(out)
    }
}

fn moment1(grid: &SizeGrid, u: &[f64]) -> f64 {
    grid.centers()
        .iter()
        .zip(grid.widths())
        .zip(u)
        .map(|((c, w), v)| c * w * v)
        .sum()
}

/// Builds a solver and runs it from `(u0, v0)`.
pub fn run(
    u0: GridFunction,
    v0: f64,
    k: &KernelSet,
    cfg: SolverConfig,
) -> Result<RunOutput, RunFailure> {
    let grid = u0.grid().clone();
    let solver = Solver::new(k, grid, cfg).map_err(|error| RunFailure {
        error,
        partial: RunOutput {
            trajectory: Vec::new(),
            snapshots: Vec::new(),
            stats: RunStats::default(),
        },
    })?;
    solver.run(u0, v0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::project;
    use crate::kernels::{make_special_family, ModelParams};

    fn kernels(lambda: f64, gamma: f64, mu: f64, beta: f64, eta: f64) -> KernelSet {
        make_special_family(
            1.0,
            mu,
            beta,
            eta,
            ModelParams::new(lambda, gamma, 0.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn bump(grid: &Arc<SizeGrid>) -> GridFunction {
        project(
            |y| {
                if y > 2.0 && y < 6.0 {
                    ((y - 2.0) * (6.0 - y)).powi(2) / 16.0
                } else {
                    0.0
                }
            },
            grid.clone(),
        )
        .unwrap()
    }

    #[test]
    fn integrating_factor_limits() {
        assert_eq!(integrating_factor(2.0, 0.1, 0.0, 0.0), 2.0);
        let v = integrating_factor(0.0, 50.0, 3.0, 1.5);
        assert!((v - 2.0).abs() < 1e-12);
        let exact = 1.0 * (-0.3f64).exp() + 2.0 * (1.0 - (-0.3f64).exp());
        assert!((integrating_factor(1.0, 0.3, 2.0, 1.0) - exact).abs() < 1e-15);
    }

    #[test]
    fn empty_system_is_an_equilibrium() {
        let g = Arc::new(SizeGrid::geometric(1.0, 50.0, 64).unwrap());
        let k = kernels(0.0, 0.0, 0.3, 0.5, 0.2);
        let cfg = SolverConfig {
            dt: 0.01,
            t_end: 0.2,
            ..Default::default()
        };
        let out = run(GridFunction::zeros(g), 3.0, &k, cfg).unwrap();
        for s in &out.trajectory {
            assert_eq!(s.v, 3.0);
            assert!(s.u.values().iter().all(|&x| x == 0.0));
        }
        assert_eq!(out.trajectory.len(), 21);
    }

    #[test]
    fn zero_horizon_returns_initial_snapshot() {
        let g = Arc::new(SizeGrid::geometric(1.0, 50.0, 64).unwrap());
        let u0 = bump(&g);
        let cfg = SolverConfig {
            dt: 0.01,
            t_end: 0.0,
            snapshot_times: vec![0.0],
            ..Default::default()
        };
        let out = run(u0.clone(), 1.0, &kernels(1.0, 0.5, 0.1, 0.5, 0.2), cfg).unwrap();
        assert_eq!(out.trajectory.len(), 1);
        assert_eq!(out.snapshots.len(), 1);
        assert_eq!(out.snapshots[0].u, u0);
    }

    #[test]
    fn pure_transport_conserves_count_and_monomers() {
        let g = Arc::new(SizeGrid::geometric(1.0, 60.0, 300).unwrap());
        let u0 = bump(&g);
        let k = kernels(0.0, 0.0, 0.0, 0.0, 0.0);
        let cfg = SolverConfig {
            dt: 0.01,
            t_end: 1.0,
            ..Default::default()
        };
        let out = run(u0.clone(), 2.0, &k, cfg).unwrap();
        let last = out.trajectory.last().unwrap();
        let m0 = u0.moment(0.0);
        assert!((last.u.moment(0.0) - m0).abs() < 1e-12 * m0);
        let total0 = 2.0 + u0.moment(1.0);
        let total1 = last.v + last.u.moment(1.0);
        assert!((total1 - total0).abs() < 1e-5 * total0, "{total0} {total1}");
        assert!(last.v < 2.0);
        // v' = -v U0 for tau = 1, nu = 0.
        let expected = 2.0 * (-m0).exp();
        assert!((last.v - expected).abs() < 1e-5, "{} vs {expected}", last.v);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let g = Arc::new(SizeGrid::geometric(1.0, 50.0, 64).unwrap());
        let k = kernels(1.0, 0.5, 0.1, 0.5, 0.2);
        for cfg in [
            SolverConfig {
                dt: 0.0,
                ..Default::default()
            },
            SolverConfig {
                dt: 0.1,
                t_end: 0.05,
                ..Default::default()
            },
            SolverConfig {
                record_every: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                Solver::new(&k, g.clone(), cfg),
                Err(SolverError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn negative_initial_density_is_rejected() {
        let g = Arc::new(SizeGrid::geometric(1.0, 50.0, 64).unwrap());
        let mut u0 = bump(&g);
        u0.values_mut()[3] = -1.0;
        let err = run(
            u0,
            1.0,
            &kernels(1.0, 0.5, 0.1, 0.5, 0.2),
            SolverConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err.error, SolverError::NegativeDensity { .. }));
    }

    #[test]
    fn mass_escape_is_detected() {
        let g = Arc::new(SizeGrid::uniform(1.0, 8.0, 70).unwrap());
        let u0 = bump(&g);
        let cfg = SolverConfig {
            dt: 0.05,
            t_end: 3.0,
            mass_escape_bound: Some(1e-3),
            ..Default::default()
        };
        let err = run(u0, 5.0, &kernels(0.0, 0.0, 0.0, 0.0, 0.0), cfg).unwrap_err();
        assert!(matches!(err.error, SolverError::MassEscape { .. }), "{err}");
        assert!(!err.partial.trajectory.is_empty());
    }

    #[test]
    fn shortened_last_step_lands_on_horizon() {
        let cfg = SolverConfig {
            dt: 0.3,
            t_end: 1.0,
            ..Default::default()
        };
        assert_eq!(cfg.n_steps(), 4);
        assert!((cfg.time_at(3) - 0.9).abs() < 1e-15);
        assert_eq!(cfg.time_at(4), 1.0);
        let exact = SolverConfig {
            dt: 0.25,
            t_end: 1.0,
            ..Default::default()
        };
        assert_eq!(exact.n_steps(), 4);
    }
}
