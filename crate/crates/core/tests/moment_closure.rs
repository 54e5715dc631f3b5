//! The closed moment system for the integrable family, checked against the
//! discrete right-hand side of the full model.
//!
//! With constant `tau`, `mu`, `eta`, `beta(y) = beta y` and daughters
//! uniform on `(0, y)`, testing the weak form with `phi = 1` and `phi = y`
//! gives, for `V = v / (1 + nu U1)`:
//!
//! * `phi = 1`: transport contributes `V int tau phi' u = 0`; splitting
//!   contributes `int beta y u (-1 + 2 int_{y0}^y dz / y) = beta (U1 - 2 y0 U0)`;
//!   joining contributes `-int int eta u u = -eta U0^2`; degradation `-mu U0`.
//! * `phi = y`: transport gives `V tau U0`; splitting gives
//!   `int beta y u (-y + (y^2 - y0^2) / y) = -beta y0^2 U0`; joining is mass
//!   neutral; degradation `-mu U1`.
//! * the monomers gain the small fragments `beta y0^2 U0` and lose the
//!   uptake `V tau U0`.
//!
//! Summing the second and third lines gives `(v + U1)' = lambda - gamma v - mu U1`.

use std::sync::Arc;

use prionsim::diagnostics::{
    balance_residual, weak_form_residual, DiagnosticsLedger, LedgerOptions, TestFunction,
};
use prionsim::grid::{project, GridFunction, SizeGrid};
use prionsim::kernels::{make_special_family, ModelParams};
use prionsim::operators::Operators;
use prionsim::oracle::{moment_ode_rhs, MomentOdeState, OracleRates};
use prionsim::solver::{run, SolverConfig};

fn bump(g: &Arc<SizeGrid>) -> GridFunction {
    let u = project(
        |y: f64| {
            if y > 1.5 && y < 4.0 {
                ((y - 1.5) * (4.0 - y)).powi(2)
            } else {
                0.0
            }
        },
        g.clone(),
    )
    .unwrap();
    u.scaled(1.0 / u.moment(0.0))
}

#[test]
fn moment_system_matches_discrete_right_hand_side() {
    let g = Arc::new(SizeGrid::geometric(1.0, 200.0, 400).unwrap());
    for (nu, eta) in [(0.0, 0.2), (0.7, 0.0), (0.3, 1.1)] {
        let p = ModelParams::new(1.3, 0.4, nu, 1.0).unwrap();
        let k = make_special_family(1.7, 0.1, 0.6, eta, p).unwrap();
        let ops = Operators::new(&k, g.clone());
        let u = bump(&g);
        let v = 0.8;
        let f = ops.fragmentation_apply(&u).unwrap();
        let q = ops.joining_apply(&u, &u).unwrap();
        let speed = ops.speed(v, &u);
        let pde = MomentOdeState {
            v: p.lambda - p.gamma * v - speed * ops.tau_moment(u.values())
                + ops.g_discrete(u.values()),
            u0: f.moment(0.0) + q.moment(0.0),
            u1: speed * ops.tau_moment(u.values()) + f.moment(1.0) + q.moment(1.0),
        };
        let rates = OracleRates::from_kernels(&k).unwrap();
        let ode = moment_ode_rhs(MomentOdeState::new(v, u.moment(0.0), u.moment(1.0)), &rates);
        for (a, b) in [(pde.v, ode.v), (pde.u0, ode.u0), (pde.u1, ode.u1)] {
            assert!(
                (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                "pde {a} vs ode {b}"
            );
        }
    }
}

#[test]
fn pure_transport_keeps_count() {
    let g = Arc::new(SizeGrid::geometric(1.0, 200.0, 400).unwrap());
    let p = ModelParams::new(0.0, 0.0, 0.0, 1.0).unwrap();
    let k = make_special_family(1.0, 0.0, 0.0, 0.0, p).unwrap();
    let cfg = SolverConfig {
        dt: 1e-2,
        t_end: 1.0,
        ..Default::default()
    };
    let out = run(bump(&g), 1.0, &k, cfg).unwrap();
    let r = weak_form_residual(&out.trajectory, &k, &TestFunction::one(), 1.0).unwrap();
    assert!(r.abs() <= 1e-4, "{r}");
}

#[test]
fn identity_weak_form_reproduces_balance_law() {
    let g = Arc::new(SizeGrid::geometric(1.0, 200.0, 400).unwrap());
    let p = ModelParams::new(1.0, 0.5, 0.0, 1.0).unwrap();
    let k = make_special_family(1.0, 0.1, 0.5, 0.2, p).unwrap();
    let cfg = SolverConfig {
        dt: 1e-3,
        t_end: 1.0,
        ..Default::default()
    };
    let out = run(bump(&g), 1.0, &k, cfg).unwrap();
    let first = &out.trajectory[0];
    let last = out.trajectory.last().unwrap();
    let weak = weak_form_residual(&out.trajectory, &k, &TestFunction::identity(), 1.0).unwrap();
    let lhs = (last.u1() - first.u1()).abs().max(1.0);
    let balance = balance_residual(last, first, &k.params) / lhs;
    assert!(
        (weak - balance).abs() <= 1e-8,
        "weak {weak:e} balance {balance:e}"
    );
}

#[test]
fn ledger_weak_form_column_matches_direct_residual() {
    let g = Arc::new(SizeGrid::geometric(1.0, 200.0, 200).unwrap());
    let p = ModelParams::new(1.0, 0.5, 0.0, 1.0).unwrap();
    let k = make_special_family(1.0, 0.1, 0.5, 0.2, p).unwrap();
    let cfg = SolverConfig {
        dt: 1e-2,
        t_end: 0.5,
        ..Default::default()
    };
    let out = run(bump(&g), 1.0, &k, cfg).unwrap();
    let ledger =
        DiagnosticsLedger::build(&out.trajectory, &k, &LedgerOptions::standard(1.0, 200.0))
            .unwrap();
    let column = ledger.weak_form_column("cap").unwrap();
    let direct = weak_form_residual(&out.trajectory, &k, &TestFunction::cap(4.0), 0.5).unwrap();
    assert_eq!(*column.last().unwrap(), direct);
}
