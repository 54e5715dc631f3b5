//! Fixed-order Gauss–Legendre rules on arbitrary intervals.

const GL3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_08,
    0.478_628_670_499_366_47,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
];

/// Three-point rule on `[a, b]`; exact for cubics.
pub fn gauss3<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL3_NODES
        .iter()
        .zip(GL3_WEIGHTS.iter())
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Five-point rule on `[a, b]`; exact for polynomials of degree nine.
pub fn gauss5<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL5_NODES
        .iter()
        .zip(GL5_WEIGHTS.iter())
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Composite five-point rule with `panels` equal sub-intervals.
pub fn composite_gauss5<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + h * p as f64;
            let hi = if p + 1 == panels { b } else { lo + h };
            gauss5(lo, hi, &f)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss3_is_exact_for_cubics() {
        let got = gauss3(1.0, 3.0, |x| x * x * x - 2.0 * x + 1.0);
        // x^4/4 - x^2 + x on [1,3]
        let exact = (81.0 / 4.0 - 9.0 + 3.0) - (0.25 - 1.0 + 1.0);
        assert!((got - exact).abs() < 1e-13);
    }

    #[test]
    fn gauss5_is_exact_for_degree_nine() {
        let got = gauss5(0.0, 2.0, |x| x.powi(9));
        assert!((got - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn composite_handles_empty_interval() {
        assert_eq!(composite_gauss5(2.0, 2.0, 4, |_| 1.0), 0.0);
        assert!((composite_gauss5(0.0, 1.0, 7, f64::exp) - (1f64.exp() - 1.0)).abs() < 1e-14);
    }
}
