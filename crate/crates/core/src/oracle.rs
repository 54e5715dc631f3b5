//! Closed moment system of the integrable kernel family (constant `tau`,
//! `mu`, `eta`, `beta(y) = beta * y`, `kappa = 1/y`), integrated by classical
//! RK4. Used as ground truth for the PDE solver.
//!
//! Testing the weak form with `phi = 1` and `phi = y` closes on
//! `(v, U0, U1)`: with `V = v / (1 + nu U1)`,
//!
//! ```text
//! U0' = -mu U0 + beta (U1 - 2 y0 U0) - eta U0^2
//! U1' = V tau U0 - mu U1 - beta y0^2 U0
//! v'  = lambda - gamma v - V tau U0 + beta y0^2 U0
//! ```
//!
//! The splitting term for `phi = 1` is `int beta y u (-1 + 2 int_{y0}^y dz/y)`,
//! for `phi = y` it is `int beta y u (-y + (y^2 - y0^2)/y)`; the joining term
//! is `-eta U0^2` and `0` respectively.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::DiagnosticsLedger;
use crate::kernels::KernelSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle state became non-finite at t = {0}")]
    BlowUp(f64),
    #[error("oracle state became negative at t = {t}: {state:?}")]
    NegativeState { t: f64, state: MomentOdeState },
    #[error("oracle step {dt} must be positive and at most t_end / 10 = {limit}")]
    BadStep { dt: f64, limit: f64 },
    #[error("rates differ between PDE run and oracle: {0}")]
    MismatchedRates(String),
    #[error("kernel set `{0}` is not the constant-rate integrable family")]
    NotIntegrable(String),
    #[error("inadmissible oracle rates: {0}")]
    InvalidRates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentOdeState {
    pub v: f64,
    pub u0: f64,
    pub u1: f64,
}

impl MomentOdeState {
    pub fn new(v: f64, u0: f64, u1: f64) -> Self {
        Self { v, u0, u1 }
    }

    fn axpy(self, h: f64, d: Self) -> Self {
        Self {
            v: self.v + h * d.v,
            u0: self.u0 + h * d.u0,
            u1: self.u1 + h * d.u1,
        }
    }

    fn is_finite(&self) -> bool {
        self.v.is_finite() && self.u0.is_finite() && self.u1.is_finite()
    }

    fn max_abs_diff(&self, o: &Self) -> f64 {
        (self.v - o.v)
            .abs()
            .max((self.u0 - o.u0).abs())
            .max((self.u1 - o.u1).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRates {
    pub lambda: f64,
    pub gamma: f64,
    pub nu: f64,
    pub tau: f64,
    pub mu: f64,
    pub beta: f64,
    pub eta: f64,
    pub y0: f64,
}

impl OracleRates {
    pub fn from_kernels(k: &KernelSet) -> Result<Self, OracleError> {
        let s = k
            .special
            .ok_or_else(|| OracleError::NotIntegrable(k.name.clone()))?;
        let p = k.params;
        let r = Self {
            lambda: p.lambda,
            gamma: p.gamma,
            nu: p.nu,
            tau: s.tau,
            mu: s.mu,
            beta: s.beta,
            eta: s.eta,
            y0: p.y0,
        };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<(), OracleError> {
        if !(self.tau > 0.0) {
            return Err(OracleError::InvalidRates(format!(
                "tau = {} must be positive",
                self.tau
            )));
        }
        let fields = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("nu", self.nu),
            ("mu", self.mu),
            ("beta", self.beta),
            ("eta", self.eta),
            ("y0", self.y0),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(OracleError::InvalidRates(format!(
                    "{name} = {v} must be non-negative"
                )));
            }
        }
        Ok(())
    }

    fn mismatch(&self, o: &Self) -> Option<String> {
        let pairs = [
            ("lambda", self.lambda, o.lambda),
            ("gamma", self.gamma, o.gamma),
            ("nu", self.nu, o.nu),
            ("tau", self.tau, o.tau),
            ("mu", self.mu, o.mu),
            ("beta", self.beta, o.beta),
            ("eta", self.eta, o.eta),
            ("y0", self.y0, o.y0),
        ];
        pairs
            .iter()
            .find(|(_, a, b)| (a - b).abs() > 1e-14 * a.abs().max(b.abs()))
            .map(|(n, a, b)| format!("{n}: {a} vs {b}"))
    }
}

pub fn moment_ode_rhs(s: MomentOdeState, r: &OracleRates) -> MomentOdeState {
    let speed = s.v / (1.0 + r.nu * s.u1);
    let uptake = speed * r.tau * s.u0;
    let release = r.beta * r.y0 * r.y0 * s.u0;
    MomentOdeState {
        v: r.lambda - r.gamma * s.v - uptake + release,
        u0: -r.mu * s.u0 + r.beta * (s.u1 - 2.0 * r.y0 * s.u0) - r.eta * s.u0 * s.u0,
        u1: uptake - r.mu * s.u1 - release,
    }
}

fn rk4_step(s: MomentOdeState, h: f64, r: &OracleRates) -> MomentOdeState {
    let k1 = moment_ode_rhs(s, r);
    let k2 = moment_ode_rhs(s.axpy(0.5 * h, k1), r);
    let k3 = moment_ode_rhs(s.axpy(0.5 * h, k2), r);
    let k4 = moment_ode_rhs(s.axpy(h, k3), r);
    MomentOdeState {
        v: s.v + h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
        u0: s.u0 + h / 6.0 * (k1.u0 + 2.0 * k2.u0 + 2.0 * k3.u0 + k4.u0),
        u1: s.u1 + h / 6.0 * (k1.u1 + 2.0 * k2.u1 + 2.0 * k3.u1 + k4.u1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrajectory {
    pub rates: OracleRates,
    pub times: Vec<f64>,
    pub states: Vec<MomentOdeState>,
    /// Max-norm difference against a run with half the step, at common nodes.
    pub error_estimate: f64,
}

impl OracleTrajectory {
    /// Cubic Hermite interpolation between RK4 nodes (clamped to the range).
    pub fn at(&self, t: f64) -> MomentOdeState {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.states[0];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1];
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let x = (t - t0) / h;
        let (y0, y1) = (self.states[k], self.states[k + 1]);
        let (d0, d1) = (
            moment_ode_rhs(y0, &self.rates),
            moment_ode_rhs(y1, &self.rates),
        );
        let h00 = (1.0 + 2.0 * x) * (1.0 - x) * (1.0 - x);
        let h10 = x * (1.0 - x) * (1.0 - x);
        let h01 = x * x * (3.0 - 2.0 * x);
        let h11 = x * x * (x - 1.0);
        let f = |a: f64, b: f64, da: f64, db: f64| h00 * a + h10 * h * da + h01 * b + h11 * h * db;
        MomentOdeState {
            v: f(y0.v, y1.v, d0.v, d1.v),
            u0: f(y0.u0, y1.u0, d0.u0, d1.u0),
            u1: f(y0.u1, y1.u1, d0.u1, d1.u1),
        }
    }

    pub fn last(&self) -> MomentOdeState {
        *self.states.last().unwrap()
    }
}

fn integrate_plain(
    s0: MomentOdeState,
    r: &OracleRates,
    t_end: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<MomentOdeState>), OracleError> {
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(s0);
    let mut s = s0;
    let scale = s0.v.abs().max(s0.u0.abs()).max(s0.u1.abs()).max(1.0);
    for k in 1..=n {
        let t = if k == n { t_end } else { k as f64 * dt };
        let h = t - times[k - 1];
        s = rk4_step(s, h, r);
        if !s.is_finite() {
            return Err(OracleError::BlowUp(t));
        }
        let floor = -1e-12 * scale;
        if s.v < floor || s.u0 < floor || s.u1 < floor {
            return Err(OracleError::NegativeState { t, state: s });
        }
        times.push(t);
        states.push(s);
    }
    Ok((times, states))
}

/// RK4 on `[0, t_end]` with step `dt`, plus a step-halving error estimate.
pub fn integrate_oracle(
    s0: MomentOdeState,
    rates: &OracleRates,
    t_end: f64,
    dt: f64,
) -> Result<OracleTrajectory, OracleError> {
    rates.check()?;
    let limit = t_end / 10.0;
    if !(dt > 0.0) || (t_end > 0.0 && dt > limit * (1.0 + 1e-12)) {
        return Err(OracleError::BadStep { dt, limit });
    }
    let (times, states) = integrate_plain(s0, rates, t_end, dt)?;
    let (_, fine) = integrate_plain(s0, rates, t_end, 0.5 * dt)?;
    let error_estimate = states
        .iter()
        .enumerate()
        .map(|(k, s)| s.max_abs_diff(&fine[(2 * k).min(fine.len() - 1)]))
        .fold(0.0, f64::max);
    Ok(OracleTrajectory {
        rates: *rates,
        times,
        states,
        error_estimate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub max_rel_v: f64,
    pub max_rel_u0: f64,
    pub max_rel_u1: f64,
    pub points: usize,
    /// Largest `tail_mass / U1` seen on the PDE side.
    pub max_tail_fraction: f64,
    pub tail_caveat: bool,
}

impl CompareReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_v.max(self.max_rel_u0).max(self.max_rel_u1)
    }
}

impl std::fmt::Display for CompareReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "points compared: {}", self.points)?;
        writeln!(f, "max relative error v:  {:e}", self.max_rel_v)?;
        writeln!(f, "max relative error U0: {:e}", self.max_rel_u0)?;
        writeln!(f, "max relative error U1: {:e}", self.max_rel_u1)?;
        write!(f, "max tail fraction: {:e}", self.max_tail_fraction)?;
        if self.tail_caveat {
            write!(
                f,
                "\ncaveat: tail mass exceeds 1e-4 of U1; the grid end may bias the comparison"
            )?;
        }
        Ok(())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Aligned-time comparison of a PDE ledger against the oracle. `pde_rates`
/// describe the PDE run and must match the oracle's rates.
pub fn compare(
    ledger: &DiagnosticsLedger,
    pde_rates: &OracleRates,
    oracle: &OracleTrajectory,
) -> Result<CompareReport, OracleError> {
    if let Some(m) = pde_rates.mismatch(&oracle.rates) {
        return Err(OracleError::MismatchedRates(m));
    }
    let mut rep = CompareReport {
        max_rel_v: 0.0,
        max_rel_u0: 0.0,
        max_rel_u1: 0.0,
        points: 0,
        max_tail_fraction: 0.0,
        tail_caveat: false,
    };
    for r in &ledger.records {
        let o = oracle.at(r.t);
        rep.max_rel_v = rep.max_rel_v.max(rel(r.v, o.v));
        rep.max_rel_u0 = rep.max_rel_u0.max(rel(r.u0, o.u0));
        rep.max_rel_u1 = rep.max_rel_u1.max(rel(r.u1, o.u1));
        if r.u1 > 0.0 {
            rep.max_tail_fraction = rep.max_tail_fraction.max(r.tail_mass / r.u1);
        }
        rep.points += 1;
    }
    rep.tail_caveat = rep.max_tail_fraction > 1e-4;
    Ok(rep)
}

/// Compares two oracle trajectories at the nodes of `a`.
pub fn compare_oracles(
    a: &OracleTrajectory,
    b: &OracleTrajectory,
) -> Result<CompareReport, OracleError> {
    if let Some(m) = a.rates.mismatch(&b.rates) {
        return Err(OracleError::MismatchedRates(m));
    }
    let mut rep = CompareReport {
        max_rel_v: 0.0,
        max_rel_u0: 0.0,
        max_rel_u1: 0.0,
        points: 0,
        max_tail_fraction: 0.0,
        tail_caveat: false,
    };
    for (t, s) in a.times.iter().zip(&a.states) {
        let o = b.at(*t);
        rep.max_rel_v = rep.max_rel_v.max(rel(s.v, o.v));
        rep.max_rel_u0 = rep.max_rel_u0.max(rel(s.u0, o.u0));
        rep.max_rel_u1 = rep.max_rel_u1.max(rel(s.u1, o.u1));
        rep.points += 1;
    }
    Ok(rep)
}
