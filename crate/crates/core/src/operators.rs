//! Right-hand-side mechanisms on a fixed [`SizeGrid`]: transport along
//! characteristics, linear splitting/degradation, bilinear joining, and the
//! scalar functionals feeding the monomer equation.
//!
//! Every discrete operator here works on the cell numbers `N_i = u_i w_i`
//! attached to pivots at the cell centers. Mass landing between two pivots
//! is split so that both the count and the first moment are preserved,
//! which is what makes the discrete monomer balance exact.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::{GridFunction, PivotSplit, SizeGrid};
use crate::kernels::{KernelSet, SizeFn};
use crate::quad::{gauss3, gauss5};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("size {0} lies outside the grid")]
    OutOfDomain(f64),
    #[error("characteristic time {0} is outside the grid range")]
    ThetaOutOfRange(f64),
    #[error("negative transport time {0}")]
    NegativeTime(f64),
    #[error("polymerization rate is not positive at y = {0}")]
    NonPositiveTau(f64),
    #[error("joining flux {excluded:e} of {total:e} lands beyond the last cell; enlarge the grid")]
    PairOutOfRange { excluded: f64, total: f64 },
    #[error("grid functions live on different grids")]
    GridMismatch,
}

// ---------------------------------------------------------------------------
// Characteristics

/// `Theta(y) = int_{y0}^y dz / tau(z)` tabulated at cell edges, with its
/// inverse evaluated by Newton iteration inside the bracketing cell.
#[derive(Clone)]
pub struct CharacteristicMap {
    grid: Arc<SizeGrid>,
    theta_at_edges: Vec<f64>,
    tau_samples: Vec<f64>,
    theta_centers: Vec<f64>,
    tau_centers: Vec<f64>,
    tau: SizeFn,
    constant_tau: Option<f64>,
}

impl std::fmt::Debug for CharacteristicMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CharacteristicMap")
            .field("n_cells", &self.grid.n_cells())
            .field("theta_max", &self.theta_max())
            .field("constant_tau", &self.constant_tau)
            .finish()
    }
}

impl CharacteristicMap {
    pub fn new(k: &KernelSet, grid: Arc<SizeGrid>) -> Result<Self, OperatorError> {
        let tau: SizeFn = {
            let k = k.clone();
            Arc::new(move |y| k.tau(y))
        };
        Self::from_tau(tau, grid)
    }

    pub fn from_tau(tau: SizeFn, grid: Arc<SizeGrid>) -> Result<Self, OperatorError> {
        let edges = grid.edges();
        let mut tau_samples = Vec::with_capacity(edges.len());
        for &y in edges {
            let t = tau(y);
            if !(t > 0.0 && t.is_finite()) {
                return Err(OperatorError::NonPositiveTau(y));
            }
            tau_samples.push(t);
        }
        let tau_centers: Vec<f64> = grid.centers().iter().map(|&c| tau(c)).collect();
        if let Some(i) = tau_centers
            .iter()
            .position(|t| !(*t > 0.0 && t.is_finite()))
        {
            return Err(OperatorError::NonPositiveTau(grid.centers()[i]));
        }
        let first = tau_samples[0];
        let constant = tau_samples
            .iter()
            .chain(&tau_centers)
            .all(|&t| (t - first).abs() <= 1e-14 * first);
        let constant_tau = constant.then_some(first);

        let mut theta_at_edges = Vec::with_capacity(edges.len());
        let mut theta_centers = Vec::with_capacity(grid.n_cells());
        let mut acc = 0.0;
        theta_at_edges.push(0.0);
        for (i, e) in edges.windows(2).enumerate() {
            let c = grid.centers()[i];
            match constant_tau {
                Some(t) => {
                    theta_centers.push((c - grid.y0()) / t);
                    acc = (e[1] - grid.y0()) / t;
                }
                None => {
                    theta_centers.push(acc + gauss3(e[0], c, |z| 1.0 / tau(z)));
                    acc += gauss3(e[0], e[1], |z| 1.0 / tau(z));
                }
            }
            theta_at_edges.push(acc);
        }
        Ok(Self {
            grid,
            theta_at_edges,
            tau_samples,
            theta_centers,
            tau_centers,
            tau,
            constant_tau,
        })
    }

    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
    }

    pub fn theta_at_edges(&self) -> &[f64] {
        &self.theta_at_edges
    }

    pub fn tau_samples(&self) -> &[f64] {
        &self.tau_samples
    }

    pub fn tau_centers(&self) -> &[f64] {
        &self.tau_centers
    }

    pub fn theta_centers(&self) -> &[f64] {
        &self.theta_centers
    }

    pub fn theta_max(&self) -> f64 {
        *self.theta_at_edges.last().unwrap()
    }

    pub fn tau(&self, y: f64) -> f64 {
        (self.tau)(y)
    }

    fn theta_in_cell(&self, cell: usize, y: f64) -> f64 {
        let lo = self.grid.edges()[cell];
        match self.constant_tau {
            Some(t) => (y - self.grid.y0()) / t,
            None => self.theta_at_edges[cell] + gauss3(lo, y, |z| 1.0 / (self.tau)(z)),
        }
    }

    pub fn theta(&self, y: f64) -> Result<f64, OperatorError> {
        let cell = self.grid.locate(y).ok_or(OperatorError::OutOfDomain(y))?;
        Ok(self.theta_in_cell(cell, y))
    }

    pub fn theta_inverse(&self, theta: f64) -> Result<f64, OperatorError> {
        if !(theta >= 0.0 && theta <= self.theta_max() * (1.0 + 1e-15)) {
            return Err(OperatorError::ThetaOutOfRange(theta));
        }
        if let Some(t) = self.constant_tau {
            return Ok((self.grid.y0() + t * theta).min(self.grid.y_max()));
        }
        let cell = (self.theta_at_edges.partition_point(|&s| s <= theta).max(1) - 1)
            .min(self.grid.n_cells() - 1);
        Ok(self.invert_in_cell(cell, theta))
    }

    fn invert_in_cell(&self, cell: usize, theta: f64) -> f64 {
        let (a, b) = (self.grid.edges()[cell], self.grid.edges()[cell + 1]);
        let (ta, tb) = (self.theta_at_edges[cell], self.theta_at_edges[cell + 1]);
        let (mut lo, mut hi) = (a, b);
        let mut y = a + (b - a) * ((theta - ta) / (tb - ta)).clamp(0.0, 1.0);
        for _ in 0..50 {
            let f = self.theta_in_cell(cell, y) - theta;
            if f > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let mut next = y - f * (self.tau)(y);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 1e-15 * y.abs() {
                return next;
            }
            y = next;
        }
        y
    }
}

pub fn theta_map(cm: &CharacteristicMap, y: f64) -> Result<f64, OperatorError> {
    cm.theta(y)
}

pub fn theta_inverse(cm: &CharacteristicMap, theta: f64) -> Result<f64, OperatorError> {
    cm.theta_inverse(theta)
}

// ---------------------------------------------------------------------------
// Transport

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    /// Each cell's number is moved along its characteristic and split
    /// between the bracketing pivots (count and first moment preserved).
    #[default]
    Conservative,
    /// Semigroup formula evaluated at centers with clipped linear
    /// interpolation at the foot points.
    Interpolate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportOutcome {
    pub u: GridFunction,
    /// Count carried past `y_max`.
    pub outflow: f64,
    /// Count whose image landed between the last center and `y_max` and was
    /// kept in the last cell.
    pub clamped: f64,
}

/// Applies the transport semigroup for an effective time `t_eff = int V dt`
/// with the default conservative scheme.
pub fn transport_apply(
    cm: &CharacteristicMap,
    f: &GridFunction,
    t_eff: f64,
) -> Result<GridFunction, OperatorError> {
    Ok(transport_apply_with(cm, f, t_eff, TransportScheme::Conservative)?.u)
}

pub fn transport_apply_with(
    cm: &CharacteristicMap,
    f: &GridFunction,
    t_eff: f64,
    scheme: TransportScheme,
) -> Result<TransportOutcome, OperatorError> {
    if !(t_eff >= 0.0) {
        return Err(OperatorError::NegativeTime(t_eff));
    }
    if !Arc::ptr_eq(f.grid(), &cm.grid) && **f.grid() != *cm.grid {
        return Err(OperatorError::GridMismatch);
    }
    if t_eff == 0.0 {
        return Ok(TransportOutcome {
            u: f.clone(),
            outflow: 0.0,
            clamped: 0.0,
        });
    }
    match scheme {
        TransportScheme::Conservative => Ok(push_forward(cm, f, t_eff)),
        TransportScheme::Interpolate => Ok(gather(cm, f, t_eff)),
    }
}

fn push_forward(cm: &CharacteristicMap, f: &GridFunction, t_eff: f64) -> TransportOutcome {
    let grid = &cm.grid;
    let n = grid.n_cells();
    let widths = grid.widths();
    let centers = grid.centers();
    let mut counts = vec![0.0; n];
    let mut outflow = 0.0;
    let mut clamped = 0.0;
    let theta_max = cm.theta_max();
    // Images are monotone in the source index, so the bracketing cell
    // search can resume where the previous one stopped.
    let mut cell = 0usize;
    for (j, &u) in f.values().iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        let mass = u * widths[j];
        let theta = cm.theta_centers[j] + t_eff;
        if theta > theta_max {
            outflow += mass;
            continue;
        }
        let x = match cm.constant_tau {
            Some(t) => grid.y0() + t * theta,
            None => {
                while cell + 1 < n && cm.theta_at_edges[cell + 1] <= theta {
                    cell += 1;
                }
                cm.invert_in_cell(cell, theta)
            }
        };
        match grid.pivot_split(x) {
            PivotSplit::Between {
                lower,
                upper_weight,
            } => {
                counts[lower] += mass * (1.0 - upper_weight);
                counts[lower + 1] += mass * upper_weight;
            }
            PivotSplit::AboveLastCenter => {
                counts[n - 1] += mass;
                clamped += mass;
            }
            PivotSplit::Outside => outflow += mass,
            PivotSplit::BelowFirstCenter => counts[0] += mass,
        }
        let _ = centers;
    }
    let values = counts.iter().zip(widths).map(|(m, w)| m / w).collect();
    TransportOutcome {
        u: GridFunction::from_values(grid.clone(), values).unwrap(),
        outflow,
        clamped,
    }
}

fn gather(cm: &CharacteristicMap, f: &GridFunction, t_eff: f64) -> TransportOutcome {
    let grid = &cm.grid;
    let centers = grid.centers();
    let vals = f.values();
    let interp = |y: f64| -> f64 {
        match grid.pivot_split(y) {
            PivotSplit::Between {
                lower,
                upper_weight,
            } => (1.0 - upper_weight) * vals[lower] + upper_weight * vals[lower + 1],
            PivotSplit::BelowFirstCenter => {
                // boundary value u(y0) = 0
                vals[0] * (y - grid.y0()) / (centers[0] - grid.y0())
            }
            PivotSplit::AboveLastCenter => vals[vals.len() - 1],
            PivotSplit::Outside => 0.0,
        }
    };
    let mut values = Vec::with_capacity(vals.len());
    for i in 0..centers.len() {
        let foot_theta = cm.theta_centers[i] - t_eff;
        if foot_theta < 0.0 {
            values.push(0.0);
            continue;
        }
        let foot = cm.theta_inverse(foot_theta).unwrap_or(grid.y0());
        let v = interp(foot) * cm.tau(foot) / cm.tau_centers[i];
        values.push(v.max(0.0));
    }
    let before = f.moment(0.0);
    let u = GridFunction::from_values(grid.clone(), values).unwrap();
    // Count whose characteristic leaves the grid within t_eff.
    let exit_theta = cm.theta_max() - t_eff;
    let outflow = grid
        .widths()
        .iter()
        .zip(vals)
        .enumerate()
        .filter(|(j, _)| cm.theta_centers[*j] > exit_theta)
        .map(|(_, (w, v))| w * v)
        .sum::<f64>()
        .min(before);
    TransportOutcome {
        u,
        outflow,
        clamped: 0.0,
    }
}

// ---------------------------------------------------------------------------
// Reaction operators

/// Precomputed kernel tables for the linear and bilinear reaction terms.
#[derive(Clone)]
pub struct Operators {
    grid: Arc<SizeGrid>,
    kernels: KernelSet,
    mu: Vec<f64>,
    beta: Vec<f64>,
    tau: Vec<f64>,
    /// `gain[j][i]`: daughters deposited on pivot `i` per splitting of a
    /// parent at pivot `j` (`i <= j`).
    gain: Vec<Vec<f64>>,
    /// `2 int_{y0}^{c_j} kappa(z, c_j) dz`.
    daughter_count: Vec<f64>,
    /// Monomers released per splitting so that the pivot first moment is
    /// conserved exactly: `c_j - sum_i c_i gain[j][i]`.
    release: Vec<f64>,
    /// `2 int_0^{y0} z kappa(z, c_j) dz` by quadrature.
    small_yield: Vec<f64>,
    eta: Vec<f64>,
    dest: Vec<(u32, f64)>,
    joining: bool,
    pair_tolerance: f64,
}

const OUT_OF_RANGE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JoinStats {
    /// Total pair flux `sum eta_ij N_i M_j` over in-range pairs.
    pub total: f64,
    /// Flux of pairs whose combined size lies beyond the last center.
    pub excluded: f64,
}

impl std::fmt::Debug for Operators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Operators")
            .field("n_cells", &self.grid.n_cells())
            .field("kernels", &self.kernels.name)
            .field("joining", &self.joining)
            .finish()
    }
}

impl Operators {
    pub fn new(k: &KernelSet, grid: Arc<SizeGrid>) -> Self {
        let n = grid.n_cells();
        let c = grid.centers();
        let e = grid.edges();
        let y0 = grid.y0();
        let mu: Vec<f64> = c.iter().map(|&y| k.mu(y)).collect();
        let beta: Vec<f64> = c.iter().map(|&y| k.beta(y)).collect();
        let tau: Vec<f64> = c.iter().map(|&y| k.tau(y)).collect();

        let mut gain = Vec::with_capacity(n);
        let mut daughter_count = Vec::with_capacity(n);
        let mut release = Vec::with_capacity(n);
        let mut small_yield = Vec::with_capacity(n);
        for j in 0..n {
            let parent = c[j];
            let mut row = vec![0.0; j + 1];
            let mut total = 0.0;
            if beta[j] != 0.0 {
                if j == 0 {
                    let m = 2.0 * gauss5(y0, parent, |z| k.kappa(z, parent));
                    row[0] = m;
                    total = m;
                } else {
                    // Interval p carries the daughters in [lo_p, c_{p+1}]
                    // and splits them between pivots p and p + 1.
                    for p in 0..j {
                        let lo = if p == 0 { y0 } else { c[p] };
                        let hi = c[p + 1];
                        let m = 2.0 * gauss5(lo, hi, |z| k.kappa(z, parent));
                        let f = 2.0 * gauss5(lo, hi, |z| z * k.kappa(z, parent));
                        let up = ((f - c[p] * m) / (hi - c[p])).clamp(0.0, m);
                        row[p] += m - up;
                        row[p + 1] += up;
                        total += m;
                    }
                }
            }
            let moment: f64 = row.iter().zip(c).map(|(g, ci)| g * ci).sum();
            gain.push(row);
            daughter_count.push(total);
            release.push(if beta[j] != 0.0 { parent - moment } else { 0.0 });
            small_yield.push(k.small_fragment_yield(parent));
        }

        let joining = !k.eta_zero;
        let (mut eta, mut dest) = (Vec::new(), Vec::new());
        if joining {
            eta.reserve(n * n);
            dest.reserve(n * n);
            for i in 0..n {
                for j in 0..n {
                    eta.push(k.eta(c[i], c[j]));
                    let s = c[i] + c[j];
                    dest.push(match grid.pivot_split(s) {
                        PivotSplit::Between {
                            lower,
                            upper_weight,
                        } => (lower as u32, upper_weight),
                        _ => (OUT_OF_RANGE, 0.0),
                    });
                }
            }
        }
        let _ = e;
        Self {
            grid,
            kernels: k.clone(),
            mu,
            beta,
            tau,
            gain,
            daughter_count,
            release,
            small_yield,
            eta,
            dest,
            joining,
            pair_tolerance: 1e-12,
        }
    }

    /// Relative share of joining flux allowed to fall beyond the grid
    /// before [`OperatorError::PairOutOfRange`] is raised.
    pub fn with_pair_tolerance(mut self, tol: f64) -> Self {
        self.pair_tolerance = tol;
        self
    }

    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
    }

    pub fn kernels(&self) -> &KernelSet {
        &self.kernels
    }

    pub fn joining_enabled(&self) -> bool {
        self.joining
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn daughter_count(&self) -> &[f64] {
        &self.daughter_count
    }

    pub fn release(&self) -> &[f64] {
        &self.release
    }

    pub fn gain_row(&self, j: usize) -> &[f64] {
        &self.gain[j]
    }

    fn check_grid(&self, u: &GridFunction) -> Result<(), OperatorError> {
        if Arc::ptr_eq(u.grid(), &self.grid) || **u.grid() == *self.grid {
            Ok(())
        } else {
            Err(OperatorError::GridMismatch)
        }
    }

    /// `L[u] = -(mu + beta) u + 2 int_y^inf beta(z) kappa(y, z) u(z) dz`.
    pub fn fragmentation_apply(&self, u: &GridFunction) -> Result<GridFunction, OperatorError> {
        self.check_grid(u)?;
        let mut out = vec![0.0; u.values().len()];
        self.fragmentation_into(u.values(), &mut out);
        Ok(GridFunction::from_values(self.grid.clone(), out).unwrap())
    }

    /// Adds `L[u]` to `out`.
    pub fn fragmentation_into(&self, u: &[f64], out: &mut [f64]) {
        let w = self.grid.widths();
        let mut counts = vec![0.0; u.len()];
        for (j, &uj) in u.iter().enumerate() {
            if uj == 0.0 {
                continue;
            }
            counts[j] -= (self.mu[j] + self.beta[j]) * uj * w[j];
            let rate = self.beta[j] * uj * w[j];
            if rate != 0.0 {
                for (i, g) in self.gain[j].iter().enumerate() {
                    counts[i] += rate * g;
                }
            }
        }
        for ((o, m), wi) in out.iter_mut().zip(counts).zip(w) {
            *o += m / wi;
        }
    }

    /// `Q[u, w]` with the first-moment-preserving pair assignment.
    pub fn joining_apply(
        &self,
        u: &GridFunction,
        w: &GridFunction,
    ) -> Result<GridFunction, OperatorError> {
        self.check_grid(u)?;
        self.check_grid(w)?;
        let mut out = vec![0.0; u.values().len()];
        self.joining_into(u.values(), w.values(), &mut out)?;
        Ok(GridFunction::from_values(self.grid.clone(), out).unwrap())
    }

    /// Adds `Q[u, w]` to `out` and returns the pair-flux statistics.
    pub fn joining_into(
        &self,
        u: &[f64],
        w: &[f64],
        out: &mut [f64],
    ) -> Result<JoinStats, OperatorError> {
        let mut stats = JoinStats::default();
        if !self.joining {
            return Ok(stats);
        }
        let n = u.len();
        let widths = self.grid.widths();
        let mut counts = vec![0.0; n];
        let wn: Vec<f64> = w.iter().zip(widths).map(|(v, h)| v * h).collect();
        let active: Vec<usize> = (0..n).filter(|&j| wn[j] != 0.0).collect();
        for i in 0..n {
            let ni = u[i] * widths[i];
            if ni == 0.0 {
                continue;
            }
            let row_eta = &self.eta[i * n..(i + 1) * n];
            let row_dest = &self.dest[i * n..(i + 1) * n];
            let mut loss = 0.0;
            for &j in &active {
                let e = row_eta[j];
                if e == 0.0 {
                    continue;
                }
                let flux = e * ni * wn[j];
                let (lower, up) = row_dest[j];
                if lower == OUT_OF_RANGE {
                    stats.excluded += flux.abs();
                    continue;
                }
                let lower = lower as usize;
                counts[lower] += flux * (1.0 - up);
                if up != 0.0 {
                    counts[lower + 1] += flux * up;
                }
                loss += flux;
                stats.total += flux.abs();
            }
            counts[i] -= 2.0 * loss;
        }
        if stats.excluded > self.pair_tolerance * (stats.total + stats.excluded) {
            return Err(OperatorError::PairOutOfRange {
                excluded: stats.excluded,
                total: stats.total,
            });
        }
        for ((o, m), h) in out.iter_mut().zip(counts).zip(widths) {
            *o += m / h;
        }
        Ok(stats)
    }

    /// Largest per-cell loss rate `mu + beta + 2 sum_j eta_ij N_j`.
    pub fn max_loss_rate(&self, u: &[f64]) -> f64 {
        let n = u.len();
        let w = self.grid.widths();
        let counts: Vec<f64> = u.iter().zip(w).map(|(v, h)| v.max(0.0) * h).collect();
        let active: Vec<usize> = (0..n).filter(|&j| counts[j] != 0.0).collect();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut r = self.mu[i] + self.beta[i];
            if self.joining && u[i] != 0.0 {
                let row = &self.eta[i * n..(i + 1) * n];
                r += 2.0 * active.iter().map(|&j| row[j] * counts[j]).sum::<f64>();
            }
            worst = worst.max(r);
        }
        worst
    }

    /// `g(u) = 2 sum_j beta_j N_j int_0^{y0} z kappa(z, c_j) dz`.
    pub fn g_functional(&self, u: &GridFunction) -> f64 {
        let w = self.grid.widths();
        u.values()
            .iter()
            .zip(w)
            .zip(self.beta.iter().zip(&self.small_yield))
            .map(|((v, h), (b, y))| b * v * h * y)
            .sum()
    }

    /// Monomer release of the discrete splitting operator; equals
    /// [`Self::g_functional`] up to the pivot quadrature error and closes the
    /// discrete balance law exactly.
    pub fn g_discrete(&self, u: &[f64]) -> f64 {
        let w = self.grid.widths();
        u.iter()
            .zip(w)
            .zip(self.beta.iter().zip(&self.release))
            .map(|((v, h), (b, r))| b * v * h * r)
            .sum()
    }

    /// `sum_j tau_j N_j`.
    pub fn tau_moment(&self, u: &[f64]) -> f64 {
        let w = self.grid.widths();
        u.iter()
            .zip(w)
            .zip(&self.tau)
            .map(|((v, h), t)| t * v * h)
            .sum()
    }

    /// `p(u) = int tau u / (1 + nu U1)`.
    pub fn p_functional(&self, u: &GridFunction) -> f64 {
        let nu = self.kernels.params.nu;
        self.tau_moment(u.values()) / (1.0 + nu * u.moment(1.0))
    }

    /// `V = v / (1 + nu U1)`.
    pub fn speed(&self, v: f64, u: &GridFunction) -> f64 {
        speed(v, self.kernels.params.nu, u.moment(1.0))
    }

    /// Measured ratios `||L u|| / ((|mu| + |beta|) ||u||)` and
    /// `||Q[u, w]|| / (|eta| ||u|| ||w||)` in the norm `sum c |u| w`, with sup
    /// norms taken over the grid centers.
    pub fn bound_constants(
        &self,
        u: &GridFunction,
        w: &GridFunction,
    ) -> Result<(f64, f64), OperatorError> {
        let norm = |f: &GridFunction| -> f64 {
            let g = f.grid();
            g.centers()
                .iter()
                .zip(g.widths())
                .zip(f.values())
                .map(|((c, h), v)| c * v.abs() * h)
                .sum()
        };
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let l = self.fragmentation_apply(u)?;
        let rates = sup(&self.mu) + sup(&self.beta);
        let cl = if rates > 0.0 && norm(u) > 0.0 {
            norm(&l) / (rates * norm(u))
        } else {
            0.0
        };
        let q = self.joining_apply(u, w)?;
        let eta_sup = sup(&self.eta);
        let denom = eta_sup * norm(u) * norm(w);
        let cq = if denom > 0.0 { norm(&q) / denom } else { 0.0 };
        Ok((cl, cq))
    }
}

pub fn speed(v: f64, nu: f64, u1: f64) -> f64 {
    v / (1.0 + nu * u1)
}

pub fn fragmentation_apply(
    ops: &Operators,
    u: &GridFunction,
) -> Result<GridFunction, OperatorError> {
    ops.fragmentation_apply(u)
}

pub fn joining_apply(
    ops: &Operators,
    u: &GridFunction,
    w: &GridFunction,
) -> Result<GridFunction, OperatorError> {
    ops.joining_apply(u, w)
}
