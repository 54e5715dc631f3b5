use std::sync::Arc;

use proptest::prelude::*;

use prionsim::grid::{GridFunction, SizeGrid};
use prionsim::kernels::{
    make_powerlaw_family, make_special_family, KernelSet, ModelParams, PowerLawRates,
};
use prionsim::operators::{transport_apply, CharacteristicMap, Operators};
use prionsim::oracle::{moment_ode_rhs, MomentOdeState, OracleRates};
use prionsim::solver::{run, SolverConfig};

fn params() -> ModelParams {
    ModelParams::new(1.0, 0.5, 0.0, 1.0).unwrap()
}

fn grid(n: usize) -> Arc<SizeGrid> {
    Arc::new(SizeGrid::geometric(1.0, 64.0, n).unwrap())
}

fn joining_kernels(eta: f64) -> KernelSet {
    let rates = PowerLawRates {
        tau: 1.0,
        mu: 0.0,
        b: 0.0,
        zeta: 1.0,
        k: eta,
        alpha: 0.5,
        rho: 0.25,
    };
    make_powerlaw_family(rates, params(), None)
        .unwrap()
        .with_eta_cutoff(32.0)
}

fn density(g: &Arc<SizeGrid>, vals: Vec<f64>) -> GridFunction {
    GridFunction::from_values(g.clone(), vals).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..10.0f64, n)
}

fn weighted_l1(u: &GridFunction) -> f64 {
    let g = u.grid();
    g.centers()
        .iter()
        .zip(g.widths())
        .zip(u.values())
        .map(|((c, w), v)| c * w * v.abs())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joining_conserves_first_moment(vals in values(48), eta in 0.01..2.0f64) {
        let g = grid(48);
        let ops = Operators::new(&joining_kernels(eta), g.clone());
        let u = density(&g, vals);
        let q = ops.joining_apply(&u, &u).unwrap();
        let scale = weighted_l1(&q).max(f64::MIN_POSITIVE);
        prop_assert!(q.moment(1.0).abs() <= 1e-12 * scale);
    }

    #[test]
    fn joining_count_loss_matches_pair_sum(vals in values(48)) {
        let g = grid(48);
        let k = joining_kernels(0.3);
        let ops = Operators::new(&k, g.clone());
        let u = density(&g, vals.clone());
        let q = ops.joining_apply(&u, &u).unwrap();
        let (c, w) = (g.centers(), g.widths());
        let mut pairs = 0.0;
        for i in 0..48 {
            for j in 0..48 {
                if c[i] + c[j] <= c[47] {
                    pairs += k.eta(c[i], c[j]) * vals[i] * w[i] * vals[j] * w[j];
                }
            }
        }
        prop_assert!((q.moment(0.0) + pairs).abs() <= 1e-12 * pairs.max(1e-300));
    }

    #[test]
    fn joining_is_bilinear(a in values(32), b in values(32), c in values(32), s in 0.0..5.0f64) {
        let g = grid(32);
        let ops = Operators::new(&joining_kernels(0.4), g.clone());
        let (u, w1, w2) = (density(&g, a), density(&g, b.clone()), density(&g, c.clone()));
        let sum = density(&g, b.iter().zip(&c).map(|(x, y)| x + y).collect());
        let lhs = ops.joining_apply(&u, &sum).unwrap();
        let r1 = ops.joining_apply(&u, &w1).unwrap();
        let r2 = ops.joining_apply(&u, &w2).unwrap();
        let scale = weighted_l1(&lhs).max(1e-300);
        for ((l, x), y) in lhs.values().iter().zip(r1.values()).zip(r2.values()) {
            prop_assert!((l - x - y).abs() <= 1e-12 * scale);
        }
        let scaled = ops.joining_apply(&u.scaled(s), &w1).unwrap();
        for (l, x) in scaled.values().iter().zip(r1.values()) {
            prop_assert!((l - s * x).abs() <= 1e-12 * (s * weighted_l1(&r1)).max(1e-300));
        }
    }

    #[test]
    fn joining_gain_is_non_negative_off_the_diagonal(vals in values(32)) {
        // the gain part alone: joining minus the loss term
        let g = grid(32);
        let k = joining_kernels(0.5);
        let ops = Operators::new(&k, g.clone());
        let u = density(&g, vals.clone());
        let q = ops.joining_apply(&u, &u).unwrap();
        let (c, w) = (g.centers(), g.widths());
        for i in 0..32 {
            let loss: f64 = (0..32)
                .filter(|&j| c[i] + c[j] <= c[31])
                .map(|j| 2.0 * k.eta(c[i], c[j]) * vals[i] * vals[j] * w[j])
                .sum();
            prop_assert!(q.values()[i] + loss >= -1e-12 * loss.max(1.0));
        }
    }

    #[test]
    fn fragmentation_count_identity(vals in values(64), beta in 0.0..3.0f64, mu in 0.0..1.0f64) {
        let g = grid(64);
        let k = make_special_family(1.0, mu, beta, 0.0, params()).unwrap();
        let ops = Operators::new(&k, g.clone());
        let mut vals = vals;
        vals[0] = 0.0;
        let u = density(&g, vals.clone());
        let f = ops.fragmentation_apply(&u).unwrap();
        let (c, w) = (g.centers(), g.widths());
        let mut count = 0.0;
        let mut mass = 0.0;
        for j in 1..64 {
            let n = vals[j] * w[j];
            count += n * (beta * c[j] * (1.0 - 2.0 / c[j]) - mu);
            mass += n * (-beta - mu * c[j]);
        }
        let scale = weighted_l1(&f).max(1e-300);
        prop_assert!((f.moment(0.0) - count).abs() <= 1e-10 * scale);
        prop_assert!((f.moment(1.0) - mass).abs() <= 1e-10 * scale);
    }

    #[test]
    fn discrete_release_closes_mass(vals in values(64), beta in 0.0..3.0f64) {
        let g = grid(64);
        let k = make_special_family(1.0, 0.0, beta, 0.0, params()).unwrap();
        let ops = Operators::new(&k, g.clone());
        let u = density(&g, vals);
        let f = ops.fragmentation_apply(&u).unwrap();
        let g_disc = ops.g_discrete(u.values());
        prop_assert!((f.moment(1.0) + g_disc).abs() <= 1e-12 * weighted_l1(&f).max(1e-300));
    }

    #[test]
    fn transport_is_positive_and_conservative(vals in values(64), t in 0.0..5.0f64) {
        let g = grid(64);
        let cm = CharacteristicMap::from_tau(Arc::new(|y: f64| 1.0 + 0.1 * y), g.clone()).unwrap();
        let mut vals = vals;
        // keep the last cells empty so nothing leaves the grid
        for v in vals.iter_mut().skip(40) {
            *v = 0.0;
        }
        let u = density(&g, vals);
        let out = transport_apply(&cm, &u, t).unwrap();
        prop_assert!(out.values().iter().all(|&v| v >= 0.0));
        let before = u.moment(0.0);
        prop_assert!((out.moment(0.0) - before).abs() <= 1e-12 * before.max(1e-300));
    }

    #[test]
    fn moment_is_linear_and_monotone(a in values(32), b in values(32), s in 0.0..3.0f64, p in 0.0..3.0f64) {
        let g = grid(32);
        let (u, w) = (density(&g, a.clone()), density(&g, b.clone()));
        let sum = density(&g, a.iter().zip(&b).map(|(x, y)| x + s * y).collect());
        let lhs = sum.moment(p);
        let rhs = u.moment(p) + s * w.moment(p);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-300));
        prop_assert!(sum.moment(p) >= u.moment(p) * (1.0 - 1e-15));
    }

    #[test]
    fn oracle_monomer_balance_identity(
        v in 0.0..5.0f64, u0 in 0.0..5.0f64, u1 in 0.0..5.0f64,
        lambda in 0.0..2.0f64, gamma in 0.0..2.0f64, nu in 0.0..2.0f64, tau in 0.1..2.0f64,
        mu in 0.0..2.0f64, beta in 0.0..2.0f64, eta in 0.0..2.0f64, y0 in 0.5..2.0f64,
    ) {
        let r = OracleRates { lambda, gamma, nu, tau, mu, beta, eta, y0 };
        let d = moment_ode_rhs(MomentOdeState::new(v, u0, u1), &r);
        prop_assert!((d.v + d.u1 - (lambda - gamma * v - mu * u1)).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn short_runs_stay_positive(vals in prop::collection::vec(0.0..1.0f64, 8), v0 in 0.1..3.0f64, beta in 0.0..2.0f64, eta in 0.0..1.0f64) {
        let g = Arc::new(SizeGrid::geometric(1.0, 128.0, 96).unwrap());
        let mut u = vec![0.0; 96];
        u[20..28].copy_from_slice(&vals);
        let k = make_special_family(1.0, 0.1, beta, eta, params()).unwrap().with_eta_cutoff(60.0);
        let cfg = SolverConfig { dt: 0.01, t_end: 0.3, ..Default::default() };
        let out = run(density(&g, u), v0, &k, cfg).unwrap();
        for s in &out.trajectory {
            prop_assert!(s.v > 0.0);
            prop_assert!(s.u.min() >= -1e-12 * s.u.peak().max(1e-300));
        }
    }
}
