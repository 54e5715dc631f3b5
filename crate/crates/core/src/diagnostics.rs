//! Measurable residuals and bounds computed from solver trajectories: the
//! monomer balance, weak-form identities for a family of test functions,
//! the finite-speed support envelope, moment bounds, and tail controls.
//!
//! Everything here is a pure function of the recorded states and the kernel
//! set; rebuilding a ledger from the same trajectory reproduces it exactly.

use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridFunction, SizeGrid};
use crate::kernels::{
    smooth_step, smooth_step_derivative, HypothesisFamily, KernelSet, ModelParams, PairFn, SizeFn,
};
use crate::operators::Operators;
use crate::quad::composite_gauss5;
use crate::solver::SimulationState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least {needed} states in [0, t], got {got}")]
    InsufficientSnapshots { needed: usize, got: usize },
    #[error("eta({y}, {z}) = {value} is nonzero beyond the cutoff {s1}")]
    EtaCutoffViolated { y: f64, z: f64, value: f64, s1: f64 },
    #[error("check requires {0}")]
    WrongFamily(String),
    #[error("initial density carries no mass")]
    ZeroMass,
    #[error("test function `{name}` pair form is inconsistent (residual {residual:e})")]
    InconsistentTestFunction { name: String, residual: f64 },
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

/// Relative threshold below which a density counts as zero for the
/// numeric support.
pub const SUPPORT_EPS: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Test functions

#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    phi: SizeFn,
    dphi: SizeFn,
    pair: PairFn,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .finish()
    }
}

impl TestFunction {
    pub fn new(name: impl Into<String>, phi: SizeFn, dphi: SizeFn, pair: PairFn) -> Self {
        Self {
            name: name.into(),
            phi,
            dphi,
            pair,
        }
    }

    pub fn phi(&self, y: f64) -> f64 {
        (self.phi)(y)
    }

    pub fn dphi(&self, y: f64) -> f64 {
        (self.dphi)(y)
    }

    /// `phi(y + z) - phi(y) - phi(z)`.
    pub fn pair(&self, y: f64, z: f64) -> f64 {
        (self.pair)(y, z)
    }

    pub fn one() -> Self {
        Self::new(
            "one",
            Arc::new(|_| 1.0),
            Arc::new(|_| 0.0),
            Arc::new(|_, _| -1.0),
        )
    }

    pub fn identity() -> Self {
        Self::new(
            "y",
            Arc::new(|y| y),
            Arc::new(|_| 1.0),
            Arc::new(|_, _| 0.0),
        )
    }

    /// `min(y, rc)`.
    pub fn cap(rc: f64) -> Self {
        Self::new(
            "cap",
            Arc::new(move |y: f64| y.min(rc)),
            Arc::new(move |y| if y < rc { 1.0 } else { 0.0 }),
            Arc::new(move |y: f64, z: f64| (y + z).min(rc) - y.min(rc) - z.min(rc)),
        )
    }

    /// `y^2` switched off smoothly between `r_in` and `r_out`.
    pub fn y2cut(r_in: f64, r_out: f64) -> Self {
        let w = r_out - r_in;
        let chi = move |y: f64| smooth_step((r_out - y) / w);
        let phi = move |y: f64| y * y * chi(y);
        Self::new(
            "y2cut",
            Arc::new(phi),
            Arc::new(move |y: f64| {
                2.0 * y * chi(y) - y * y * smooth_step_derivative((r_out - y) / w) / w
            }),
            Arc::new(move |y, z| phi(y + z) - phi(y) - phi(z)),
        )
    }

    /// `exp(-y / l)`.
    pub fn exp(l: f64) -> Self {
        Self::new(
            "exp",
            Arc::new(move |y: f64| (-y / l).exp()),
            Arc::new(move |y: f64| -(-y / l).exp() / l),
            Arc::new(move |y: f64, z: f64| (-(y + z) / l).exp() - (-y / l).exp() - (-z / l).exp()),
        )
    }

    /// Checks the pair form against `phi` and the derivative against central
    /// differences on a lattice over `[y0, y_max]`; returns the largest
    /// pair-form residual.
    pub fn check(&self, y0: f64, y_max: f64) -> Result<f64, DiagnosticsError> {
        let n = 32;
        let pts: Vec<f64> = (0..=n)
            .map(|i| y0 + (y_max - y0) * i as f64 / n as f64)
            .collect();
        let mut worst: f64 = 0.0;
        for &y in &pts {
            for &z in &pts {
                let direct = self.phi(y + z) - self.phi(y) - self.phi(z);
                let r = (self.pair(y, z) - direct).abs();
                if !r.is_finite() {
                    worst = f64::INFINITY;
                } else {
                    worst = worst.max(r / direct.abs().max(1.0));
                }
            }
            if !(self.phi(y).is_finite() && self.dphi(y).is_finite()) {
                worst = f64::INFINITY;
            }
        }
        if worst > 1e-10 {
            return Err(DiagnosticsError::InconsistentTestFunction {
                name: self.name.clone(),
                residual: worst,
            });
        }
        Ok(worst)
    }
}

/// `one`, `y`, `cap` (at `4 y0`), `y2cut` (between `8 y0` and `16 y0`),
/// and `exp` (scale `y_max`).
pub fn builtin_test_functions(y0: f64, y_max: f64) -> Vec<TestFunction> {
    vec![
        TestFunction::one(),
        TestFunction::identity(),
        TestFunction::cap(4.0 * y0),
        TestFunction::y2cut(8.0 * y0, 16.0 * y0),
        TestFunction::exp(y_max),
    ]
}

pub fn test_function_by_name(name: &str, y0: f64, y_max: f64) -> Option<TestFunction> {
    builtin_test_functions(y0, y_max)
        .into_iter()
        .find(|t| t.name == name)
}

// ---------------------------------------------------------------------------
// Weak form

/// Per test function tables evaluated on the grid pivots.
struct WeakTables {
    phi: Vec<f64>,
    transport: Vec<f64>,
    degradation: Vec<f64>,
    splitting: Vec<f64>,
    /// `eta_ij * (phi(c_i + c_j) - phi(c_i) - phi(c_j))` for in-range pairs.
    joining: Option<Vec<f64>>,
}

/// Evaluates the right-hand side of the weak form on recorded states.
struct WeakFormEngine {
    grid: Arc<SizeGrid>,
    params: ModelParams,
    tables: Vec<WeakTables>,
}

impl WeakFormEngine {
    fn new(k: &KernelSet, ops: &Operators, tfs: &[TestFunction]) -> Self {
        let grid = ops.grid().clone();
        let c = grid.centers();
        let n = c.len();
        let c_last = c[n - 1];
        let eta: Option<Vec<f64>> = (!k.eta_zero).then(|| {
            let mut m = Vec::with_capacity(n * n);
            for &ci in c {
                for &cj in c {
                    m.push(if ci + cj <= c_last {
                        k.eta(ci, cj)
                    } else {
                        0.0
                    });
                }
            }
            m
        });
        let tables = tfs
            .iter()
            .map(|tf| {
                let phi: Vec<f64> = c.iter().map(|&y| tf.phi(y)).collect();
                let transport = c
                    .iter()
                    .zip(ops.tau())
                    .map(|(&y, t)| tf.dphi(y) * t)
                    .collect();
                let degradation = phi.iter().zip(ops.mu()).map(|(p, m)| -p * m).collect();
                let splitting = (0..n)
                    .map(|j| {
                        let b = ops.beta()[j];
                        if b == 0.0 {
                            0.0
                        } else {
                            let gain: f64 =
                                ops.gain_row(j).iter().zip(&phi).map(|(g, p)| g * p).sum();
                            b * (gain - phi[j])
                        }
                    })
                    .collect();
                let joining = eta.as_ref().map(|e| {
                    let mut m = Vec::with_capacity(n * n);
                    for (i, &ci) in c.iter().enumerate() {
                        for (j, &cj) in c.iter().enumerate() {
                            let v = e[i * n + j];
                            m.push(if v == 0.0 { 0.0 } else { v * tf.pair(ci, cj) });
                        }
                    }
                    m
                });
                WeakTables {
                    phi,
                    transport,
                    degradation,
                    splitting,
                    joining,
                }
            })
            .collect();
        Self {
            grid,
            params: k.params,
            tables,
        }
    }

    fn counts(&self, u: &GridFunction) -> Vec<f64> {
        u.values()
            .iter()
            .zip(self.grid.widths())
            .map(|(v, w)| v * w)
            .collect()
    }

    /// `(int phi u, d/dt int phi u)` for every test function.
    fn evaluate(&self, s: &SimulationState) -> Vec<(f64, f64)> {
        let counts = self.counts(&s.u);
        let u1: f64 = counts
            .iter()
            .zip(self.grid.centers())
            .map(|(m, c)| m * c)
            .sum();
        let speed = s.v / (1.0 + self.params.nu * u1);
        let dot = |a: &[f64]| a.iter().zip(&counts).map(|(x, m)| x * m).sum::<f64>();
        let active: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] != 0.0).collect();
        let n = counts.len();
        self.tables
            .iter()
            .map(|t| {
                let mut rate = speed * dot(&t.transport) + dot(&t.degradation) + dot(&t.splitting);
                if let Some(j) = &t.joining {
                    let mut acc = 0.0;
                    for &a in &active {
                        let row = &j[a * n..(a + 1) * n];
                        let inner: f64 = active.iter().map(|&b| row[b] * counts[b]).sum();
                        acc += counts[a] * inner;
                    }
                    rate += acc;
                }
                (dot(&t.phi), rate)
            })
            .collect()
    }
}

/// Cumulative weak-form residuals at every state of `traj`, one row per
/// state and one column per test function.
fn weak_form_series(
    traj: &[SimulationState],
    k: &KernelSet,
    ops: &Operators,
    tfs: &[TestFunction],
) -> Vec<Vec<f64>> {
    if tfs.is_empty() {
        return vec![Vec::new(); traj.len()];
    }
    let engine = WeakFormEngine::new(k, ops, tfs);
    let mut out = Vec::with_capacity(traj.len());
    let mut integral = vec![0.0; tfs.len()];
    let mut prev: Option<(f64, Vec<(f64, f64)>)> = None;
    let mut first: Option<Vec<(f64, f64)>> = None;
    for s in traj {
        let cur = engine.evaluate(s);
        if let Some((t0, p)) = &prev {
            let dt = s.t - t0;
            for (acc, (a, b)) in integral.iter_mut().zip(p.iter().zip(&cur)) {
                *acc += 0.5 * dt * (a.1 + b.1);
            }
        }
        let init = first.get_or_insert_with(|| cur.clone());
        let row = cur
            .iter()
            .zip(init.iter())
            .zip(&integral)
            .map(|((c, i), acc)| {
                let lhs = c.0 - i.0;
                (lhs - acc) / lhs.abs().max(1.0)
            })
            .collect();
        out.push(row);
        prev = Some((s.t, cur));
    }
    out
}

/// Weak-form residual of `phi` at time `t`: `int phi u(t) - int phi u0` minus
/// the trapezoid time integral of the four right-hand-side terms, normalised
/// by `max(1, |LHS|)`.
pub fn weak_form_residual(
    traj: &[SimulationState],
    k: &KernelSet,
    phi: &TestFunction,
    t: f64,
) -> Result<f64, DiagnosticsError> {
    let upto: Vec<SimulationState> = traj
        .iter()
        .filter(|s| s.t <= t * (1.0 + 1e-12))
        .cloned()
        .collect();
    if upto.len() < 8 {
        return Err(DiagnosticsError::InsufficientSnapshots {
            needed: 8,
            got: upto.len(),
        });
    }
    let ops = Operators::new(k, upto[0].u.grid().clone());
    let series = weak_form_series(&upto, k, &ops, std::slice::from_ref(phi));
    Ok(series.last().unwrap()[0])
}

// ---------------------------------------------------------------------------
// Balance law

/// `R(t) = v + U1 - v0 - U1(0) - lambda t + gamma int v + int int y mu u`
/// from the accumulators carried by the state.
pub fn balance_residual(
    state: &SimulationState,
    initial: &SimulationState,
    params: &ModelParams,
) -> f64 {
    if state.step == initial.step && state.t == initial.t {
        return 0.0;
    }
    (state.v + state.u1()) - (initial.v + initial.u1()) - params.lambda * state.t
        + params.gamma * state.accum_v_integral
        + state.accum_mu_integral
}

/// The same residual with both time integrals recomputed by the trapezoid
/// rule over `traj`.
pub fn balance_residual_posthoc(traj: &[SimulationState], k: &KernelSet) -> Vec<f64> {
    let Some(first) = traj.first() else {
        return Vec::new();
    };
    let g = first.u.grid();
    let weights: Vec<f64> = g
        .centers()
        .iter()
        .zip(g.widths())
        .map(|(&c, w)| c * w * k.mu(c))
        .collect();
    let mu_moment = |s: &SimulationState| {
        s.u.values()
            .iter()
            .zip(&weights)
            .map(|(u, w)| u * w)
            .sum::<f64>()
    };
    let p = k.params;
    let base = first.v + first.u1();
    let mut iv = 0.0;
    let mut im = 0.0;
    let mut out = Vec::with_capacity(traj.len());
    let mut prev: Option<&SimulationState> = None;
    for s in traj {
        if let Some(q) = prev {
            let dt = s.t - q.t;
            iv += 0.5 * dt * (q.v + s.v);
            im += 0.5 * dt * (mu_moment(q) + mu_moment(s));
        }
        out.push(if prev.is_none() {
            0.0
        } else {
            s.v + s.u1() - base - p.lambda * (s.t - first.t) + p.gamma * iv + im
        });
        prev = Some(s);
    }
    out
}

// ---------------------------------------------------------------------------
// Support envelope

/// Upper edge of the last cell where `u` is nonzero.
pub fn support_edge(u: &GridFunction) -> f64 {
    u.values()
        .iter()
        .rposition(|&v| v > 0.0)
        .map(|i| u.grid().edges()[i + 1])
        .unwrap_or(u.grid().y0())
}

fn check_eta_cutoff(k: &KernelSet, s1: f64, y_max: f64) -> Result<(), DiagnosticsError> {
    if k.eta_zero {
        return Ok(());
    }
    let y0 = k.y0();
    let n = 48;
    for i in 0..=n {
        for j in 0..=n {
            let y = y0 + (y_max - y0) * i as f64 / n as f64;
            let z = y0 + (y_max - y0) * j as f64 / n as f64;
            if y + z > s1 {
                let value = k.eta(y, z);
                if value != 0.0 {
                    return Err(DiagnosticsError::EtaCutoffViolated { y, z, value, s1 });
                }
            }
        }
    }
    Ok(())
}

/// Envelope `S(t)` solving `S' = V(t) tau(S)`, `S(0) = max(s0, s1)`, by RK4
/// across consecutive states with `V` interpolated linearly in time.
pub fn support_bound(
    traj: &[SimulationState],
    k: &KernelSet,
    s0: f64,
    s1: f64,
) -> Result<Vec<f64>, DiagnosticsError> {
    let Some(first) = traj.first() else {
        return Err(DiagnosticsError::EmptyTrajectory);
    };
    check_eta_cutoff(k, s1, first.u.grid().y_max())?;
    Ok(support_envelope(traj, k, s0.max(s1)))
}

fn support_envelope(traj: &[SimulationState], k: &KernelSet, start: f64) -> Vec<f64> {
    let nu = k.params.nu;
    let speed = |s: &SimulationState| s.v / (1.0 + nu * s.u1());
    let mut out = Vec::with_capacity(traj.len());
    let mut s = start;
    let mut prev: Option<(f64, f64)> = None;
    for st in traj {
        let v1 = speed(st);
        if let Some((t0, v0)) = prev {
            let h = st.t - t0;
            let vm = 0.5 * (v0 + v1);
            let k1 = v0 * k.tau(s);
            let k2 = vm * k.tau(s + 0.5 * h * k1);
            let k3 = vm * k.tau(s + 0.5 * h * k2);
            let k4 = v1 * k.tau(s + h * k3);
            s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(s);
        prev = Some((st.t, v1));
    }
    out
}

// ---------------------------------------------------------------------------
// Moments

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct M2Report {
    /// Smallest `C` with `M2(t) <= C (1 + t^{-1/zeta})` over the fitted times.
    pub c: f64,
    pub zeta: f64,
    pub t_min: f64,
    pub points: usize,
}

/// Fits the `M2` bound over states with `t >= t_min` (and `t > 0`). The
/// family must be the unbounded one with `theta > 1` and a declared
/// power-law lower bound on `beta`.
pub fn m2_bound_check(
    traj: &[SimulationState],
    k: &KernelSet,
    t_min: f64,
) -> Result<M2Report, DiagnosticsError> {
    let g = &k.growth;
    let theta = g.theta();
    if k.family != HypothesisFamily::WeakUnbounded || theta <= 1.0 {
        return Err(DiagnosticsError::WrongFamily(format!(
            "the unbounded family with theta > 1 (got {:?}, theta = {theta})",
            k.family
        )));
    }
    let (Some(b), Some(zeta)) = (g.b, g.zeta) else {
        return Err(DiagnosticsError::WrongFamily("declared B and zeta".into()));
    };
    if !(b > 0.0 && zeta > theta - 1.0) {
        return Err(DiagnosticsError::WrongFamily(format!(
            "B > 0 and zeta > theta - 1 (B = {b}, zeta = {zeta})"
        )));
    }
    let mut c: f64 = 0.0;
    let mut points = 0;
    for s in traj.iter().filter(|s| s.t >= t_min && s.t > 0.0) {
        c = c.max(s.u.moment(2.0) / (1.0 + s.t.powf(-1.0 / zeta)));
        points += 1;
    }
    Ok(M2Report {
        c,
        zeta,
        t_min,
        points,
    })
}

/// Relative change of the fitted constant between two resolutions.
pub fn m2_refinement_change(coarse: &M2Report, fine: &M2Report) -> f64 {
    let scale = coarse.c.abs().max(fine.c.abs());
    if scale == 0.0 {
        0.0
    } else {
        (coarse.c - fine.c).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub sigma: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Exponential rate fitted on the first quarter of the run.
    pub gronwall_rate: f64,
    /// Set when some later value exceeds `M(0) exp(2 c t)`.
    pub violation: bool,
}

pub fn higher_moment_series(traj: &[SimulationState], sigma: f64) -> MomentSeries {
    let times: Vec<f64> = traj.iter().map(|s| s.t).collect();
    let values: Vec<f64> = traj.iter().map(|s| s.u.moment(sigma)).collect();
    let (Some(&m0), Some(&t_end)) = (values.first(), times.last()) else {
        return MomentSeries {
            sigma,
            times,
            values,
            gronwall_rate: 0.0,
            violation: false,
        };
    };
    let quarter = times[0] + 0.25 * (t_end - times[0]);
    let mut rate: f64 = 0.0;
    if m0 > 0.0 {
        for (t, m) in times
            .iter()
            .zip(&values)
            .skip(1)
            .filter(|(t, _)| **t <= quarter)
        {
            if *m > 0.0 && *t > times[0] {
                rate = rate.max((m / m0).ln() / (t - times[0]));
            }
        }
    }
    let violation = times
        .iter()
        .zip(&values)
        .any(|(t, m)| *m > m0 * (2.0 * rate * (t - times[0])).exp() * (1.0 + 1e-12) + 1e-300);
    MomentSeries {
        sigma,
        times,
        values,
        gronwall_rate: rate,
        violation,
    }
}

// ---------------------------------------------------------------------------
// Tail control

/// Superlinear weight `Phi(y) = y ln(1 + y / s)`: convex, `Phi(0) = 0`,
/// `Phi'` concave and unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValleePoussin {
    pub scale: f64,
    /// Size below which 99% of the first moment of `u0` lies.
    pub y_tail: f64,
    pub initial_integral: f64,
    /// `int Phi u0 <= 2 U1(u0) Phi'(y_tail)`.
    pub admissible: bool,
}

impl ValleePoussin {
    pub fn phi(&self, y: f64) -> f64 {
        y * (y / self.scale).ln_1p()
    }

    pub fn dphi(&self, y: f64) -> f64 {
        (y / self.scale).ln_1p() + y / (self.scale + y)
    }

    pub fn integral(&self, u: &GridFunction) -> f64 {
        let g = u.grid();
        g.centers()
            .iter()
            .zip(g.widths())
            .zip(u.values())
            .map(|((&c, w), v)| self.phi(c) * w * v)
            .sum()
    }

    /// `Phi(0) = 0`, convexity, concavity of `Phi'` and growth of
    /// `Phi(r) / r`, sampled on a geometric lattice.
    pub fn structural_checks(&self, y_max: f64) -> bool {
        if self.phi(0.0) != 0.0 {
            return false;
        }
        let pts: Vec<f64> = (0..=200)
            .map(|i| 1e-3 * self.scale * (y_max / (1e-3 * self.scale)).powf(i as f64 / 200.0))
            .collect();
        let d: Vec<f64> = pts.iter().map(|&y| self.dphi(y)).collect();
        let ratio_up = pts
            .windows(2)
            .all(|p| self.phi(p[1]) / p[1] > self.phi(p[0]) / p[0]);
        let convex = d.windows(2).all(|w| w[1] > w[0]);
        let concave = pts.windows(3).zip(d.windows(3)).all(|(y, f)| {
            let s1 = (f[1] - f[0]) / (y[1] - y[0]);
            let s2 = (f[2] - f[1]) / (y[2] - y[1]);
            s2 <= s1 * (1.0 + 1e-9)
        });
        ratio_up && convex && concave
    }
}

pub fn vallee_poussin_weight(u0: &GridFunction) -> Result<ValleePoussin, DiagnosticsError> {
    let u1 = u0.moment(1.0);
    if !(u1 > 0.0) {
        return Err(DiagnosticsError::ZeroMass);
    }
    let g = u0.grid();
    let mut acc = 0.0;
    let mut y_tail = g.y_max();
    for ((&c, w), v) in g.centers().iter().zip(g.widths()).zip(u0.values()) {
        acc += c * w * v;
        if acc >= 0.99 * u1 {
            y_tail = c;
            break;
        }
    }
    let mut vp = ValleePoussin {
        scale: g.y0(),
        y_tail,
        initial_integral: 0.0,
        admissible: false,
    };
    vp.initial_integral = vp.integral(u0);
    vp.admissible = vp.initial_integral <= 2.0 * u1 * vp.dphi(y_tail);
    Ok(vp)
}

/// Per-cell weights of the two tail functionals of the approximation
/// argument: `I1 = sum beta_j N_j a_j`, `I2 = sum beta_j N_j b_j`.
#[derive(Debug, Clone)]
pub struct TailFunctionals {
    beta: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TailFunctionals {
    pub fn new(k: &KernelSet, grid: &SizeGrid, vp: &ValleePoussin) -> Self {
        let y0 = grid.y0();
        let beta = grid.centers().iter().map(|&c| k.beta(c)).collect();
        let a = grid
            .centers()
            .iter()
            .map(|&y| {
                let py = vp.phi(y) / y;
                composite_gauss5(y0, y, 4, |z| (py - vp.phi(z) / z) * z * k.kappa(z, y))
            })
            .collect();
        let b = grid
            .centers()
            .iter()
            .map(|&y| vp.phi(y) / y * 0.5 * k.small_fragment_yield(y))
            .collect();
        Self { beta, a, b }
    }

    pub fn evaluate(&self, u: &GridFunction) -> (f64, f64) {
        let g = u.grid();
        let mut i1 = 0.0;
        let mut i2 = 0.0;
        for (j, (v, w)) in u.values().iter().zip(g.widths()).enumerate() {
            let r = self.beta[j] * v * w;
            i1 += r * self.a[j];
            i2 += r * self.b[j];
        }
        (i1, i2)
    }
}

/// `sup { int_E u : E in (y0, r), |E| <= delta }` for the piecewise-constant
/// density `u`, for `delta = (r - y0) / 2^k`, `k = 1..=levels`. Filling `E`
/// with the densest cells first is optimal for piecewise-constant densities.
pub fn uniform_integrability_surrogate(u: &GridFunction, r: f64, levels: u32) -> Vec<(f64, f64)> {
    let g = u.grid();
    let y0 = g.y0();
    let mut cells: Vec<(f64, f64)> = g
        .edges()
        .windows(2)
        .zip(u.values())
        .filter_map(|(e, &v)| {
            let hi = e[1].min(r);
            (hi > e[0]).then_some((v.max(0.0), hi - e[0]))
        })
        .collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    (1..=levels)
        .map(|k| {
            let delta = (r - y0) / f64::from(1u32 << k);
            let mut left = delta;
            let mut mass = 0.0;
            for &(d, w) in &cells {
                if left <= 0.0 {
                    break;
                }
                let take = w.min(left);
                mass += d * take;
                left -= take;
            }
            (delta, mass)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Ledger

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRecord {
    pub t: f64,
    pub v: f64,
    pub u0: f64,
    pub u1: f64,
    pub m2: f64,
    pub balance_residual: f64,
    pub min_u: f64,
    pub tail_mass: f64,
    pub support_numeric: f64,
    pub support_bound: f64,
    pub weak_form: Vec<f64>,
    pub m_sigma: Vec<f64>,
    pub i1: Option<f64>,
    pub i2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LedgerOptions {
    pub test_functions: Vec<TestFunction>,
    pub sigmas: Vec<f64>,
    /// Record the two tail functionals built from the initial density.
    pub tail_functionals: bool,
    /// Override for the joining cutoff used by the support envelope.
    pub eta_cutoff: Option<f64>,
}

impl LedgerOptions {
    pub fn standard(y0: f64, y_max: f64) -> Self {
        Self {
            test_functions: builtin_test_functions(y0, y_max),
            sigmas: Vec::new(),
            tail_functionals: false,
            eta_cutoff: None,
        }
    }

    pub fn minimal() -> Self {
        Self {
            test_functions: Vec::new(),
            sigmas: Vec::new(),
            tail_functionals: false,
            eta_cutoff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsLedger {
    pub test_functions: Vec<String>,
    pub sigmas: Vec<f64>,
    pub has_tail_functionals: bool,
    pub records: Vec<LedgerRecord>,
}

impl DiagnosticsLedger {
    pub fn build(
        traj: &[SimulationState],
        k: &KernelSet,
        opts: &LedgerOptions,
    ) -> Result<Self, DiagnosticsError> {
        let Some(first) = traj.first() else {
            return Err(DiagnosticsError::EmptyTrajectory);
        };
        let grid = first.u.grid().clone();
        for tf in &opts.test_functions {
            tf.check(grid.y0(), grid.y_max())?;
        }
        let ops = Operators::new(k, grid.clone());
        let weak = weak_form_series(traj, k, &ops, &opts.test_functions);

        let cutoff = if k.eta_zero {
            Some(grid.y0())
        } else {
            opts.eta_cutoff.or(k.eta_cutoff)
        };
        let envelope = match cutoff {
            Some(s1) => {
                check_eta_cutoff(k, s1, grid.y_max())?;
                support_envelope(traj, k, support_edge(&first.u).max(s1))
            }
            None => vec![f64::INFINITY; traj.len()],
        };
        let tails = if opts.tail_functionals {
            let vp = vallee_poussin_weight(&first.u)?;
            Some(TailFunctionals::new(k, &grid, &vp))
        } else {
            None
        };

        let records = traj
            .iter()
            .zip(weak)
            .zip(envelope)
            .map(|((s, wf), bound)| {
                let peak = s.u.peak();
                let (i1, i2) = match &tails {
                    Some(t) => {
                        let (a, b) = t.evaluate(&s.u);
                        (Some(a), Some(b))
                    }
                    None => (None, None),
                };
                LedgerRecord {
                    t: s.t,
                    v: s.v,
                    u0: s.u.moment(0.0),
                    u1: s.u.moment(1.0),
                    m2: s.u.moment(2.0),
                    balance_residual: balance_residual(s, first, &k.params),
                    min_u: s.u.min(),
                    tail_mass: s.u.tail_mass(),
                    support_numeric: if peak > 0.0 {
                        s.u.numeric_support(SUPPORT_EPS * peak)
                    } else {
                        grid.y0()
                    },
                    support_bound: bound,
                    weak_form: wf,
                    m_sigma: opts.sigmas.iter().map(|&sg| s.u.moment(sg)).collect(),
                    i1,
                    i2,
                }
            })
            .collect();
        Ok(Self {
            test_functions: opts.test_functions.iter().map(|t| t.name.clone()).collect(),
            sigmas: opts.sigmas.clone(),
            has_tail_functionals: tails.is_some(),
            records,
        })
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "t",
            "v",
            "U0",
            "U1",
            "M2",
            "balance_residual",
            "min_u",
            "tail_mass",
            "support_numeric",
            "support_bound",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(self.test_functions.iter().map(|n| format!("wf_{n}")));
        h.extend(self.sigmas.iter().map(|s| format!("M_{s}")));
        if self.has_tail_functionals {
            h.push("I1".into());
            h.push("I2".into());
        }
        h
    }

    /// `timeseries.csv` layout with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        for r in &self.records {
            let mut row: Vec<f64> = vec![
                r.t,
                r.v,
                r.u0,
                r.u1,
                r.m2,
                r.balance_residual,
                r.min_u,
                r.tail_mass,
                r.support_numeric,
                r.support_bound,
            ];
            row.extend(&r.weak_form);
            row.extend(&r.m_sigma);
            if self.has_tail_functionals {
                row.push(r.i1.unwrap_or(f64::NAN));
                row.push(r.i2.unwrap_or(f64::NAN));
            }
            let cells: Vec<String> = row.iter().map(|x| format_float(*x)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn max_abs_balance(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.balance_residual.abs())
            .fold(0.0, f64::max)
    }

    pub fn weak_form_column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.test_functions.iter().position(|n| n == name)?;
        Some(self.records.iter().map(|r| r.weak_form[idx]).collect())
    }
}

/// Full-precision decimal formatting; infinities print as `inf`.
pub fn format_float(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if x.is_nan() {
        "nan".into()
    } else if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
