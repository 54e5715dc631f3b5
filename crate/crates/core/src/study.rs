//! Truncation studies: the problem is solved with the bounded kernels of
//! several truncation levels and the moment trajectories of consecutive
//! levels are compared.

use serde::Serialize;
use thiserror::Error;

use crate::grid::GridFunction;
use crate::kernels::{truncate, KernelError, KernelSet, TruncationLevel, TruncationSchedule};
use crate::solver::{run, RunOutput, SolverConfig, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("truncation levels must be strictly increasing, got {0:?}")]
    LevelsNotIncreasing(Vec<usize>),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("level {n}: {source}")]
    Solver { n: usize, source: SolverError },
    #[error("levels {a} and {b} recorded different times")]
    Misaligned { a: usize, b: usize },
}

#[derive(Debug, Clone)]
pub struct LevelRun {
    pub level: TruncationLevel,
    pub kernels: KernelSet,
    pub output: RunOutput,
}

/// Sup-in-time differences between two consecutive levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub dv: f64,
    pub du0: f64,
    pub du1: f64,
}

impl ConvergenceRow {
    pub fn max(&self) -> f64 {
        self.dv.max(self.du0).max(self.du1)
    }
}

pub fn check_levels(levels: &[usize]) -> Result<(), StudyError> {
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(StudyError::LevelsNotIncreasing(levels.to_vec()));
    }
    Ok(())
}

/// Truncates `k` and `u0` at level `n` and runs the bounded problem on
/// `[0, cfg.t_end]`.
pub fn run_level(
    k: &KernelSet,
    schedule: &TruncationSchedule,
    n: usize,
    u0: &GridFunction,
    v0: f64,
    cfg: &SolverConfig,
) -> Result<LevelRun, StudyError> {
    let level = schedule.level(k, n, cfg.t_end, u0, v0)?;
    let (kn, u0n) = truncate(k, &level, cfg.t_end, u0, v0)?;
    let output =
        run(u0n, v0, &kn, cfg.clone()).map_err(|f| StudyError::Solver { n, source: f.error })?;
    Ok(LevelRun {
        level,
        kernels: kn,
        output,
    })
}

/// Compares consecutive runs over their recorded trajectories.
pub fn convergence_table(runs: &[LevelRun]) -> Result<Vec<ConvergenceRow>, StudyError> {
    runs.windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let (ta, tb) = (&a.output.trajectory, &b.output.trajectory);
            if ta.len() != tb.len() || ta.iter().zip(tb).any(|(x, y)| x.t != y.t) {
                return Err(StudyError::Misaligned {
                    a: a.level.n,
                    b: b.level.n,
                });
            }
            let mut row = ConvergenceRow {
                n_coarse: a.level.n,
                n_fine: b.level.n,
                dv: 0.0,
                du0: 0.0,
                du1: 0.0,
            };
            for (x, y) in ta.iter().zip(tb) {
                row.dv = row.dv.max((x.v - y.v).abs());
                row.du0 = row.du0.max((x.u0() - y.u0()).abs());
                row.du1 = row.du1.max((x.u1() - y.u1()).abs());
            }
            Ok(row)
        })
        .collect()
}

/// Runs every level in order and builds the convergence table.
pub fn truncation_study(
    k: &KernelSet,
    schedule: &TruncationSchedule,
    levels: &[usize],
    u0: &GridFunction,
    v0: f64,
    cfg: &SolverConfig,
) -> Result<(Vec<LevelRun>, Vec<ConvergenceRow>), StudyError> {
    check_levels(levels)?;
    let runs = levels
        .iter()
        .map(|&n| run_level(k, schedule, n, u0, v0, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let table = convergence_table(&runs)?;
    Ok((runs, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{project, SizeGrid};
    use crate::kernels::{make_special_family, ModelParams};
    use std::sync::Arc;

    #[test]
    fn single_level_gives_empty_table() {
        let g = Arc::new(SizeGrid::geometric(1.0, 64.0, 96).unwrap());
        let p = ModelParams::new(1.0, 0.5, 0.0, 1.0).unwrap();
        let k = make_special_family(1.0, 0.1, 1.0, 0.2, p).unwrap();
        let u0 = project(|y| if (2.0..4.0).contains(&y) { 1.0 } else { 0.0 }, g).unwrap();
        let sched = TruncationSchedule {
            r1: 8.0,
            mollifier_width: 1.0,
        };
        let cfg = SolverConfig {
            dt: 0.02,
            t_end: 0.2,
            ..Default::default()
        };
        let (runs, table) = truncation_study(&k, &sched, &[1], &u0, 1.0, &cfg).unwrap();
        assert_eq!(runs.len(), 1);
        assert!(table.is_empty());
        assert!(matches!(
            check_levels(&[2, 1]),
            Err(StudyError::LevelsNotIncreasing(_))
        ));
    }

    #[test]
    fn low_cutoff_is_inconsistent() {
        let g = Arc::new(SizeGrid::geometric(1.0, 64.0, 96).unwrap());
        let p = ModelParams::new(1.0, 0.5, 0.0, 1.0).unwrap();
        let k = make_special_family(1.0, 0.1, 1.0, 0.2, p).unwrap();
        let u0 = GridFunction::zeros(g);
        let sched = TruncationSchedule {
            r1: 1.5,
            mollifier_width: 1.0,
        };
        let cfg = SolverConfig {
            dt: 0.02,
            t_end: 0.2,
            ..Default::default()
        };
        let err = run_level(&k, &sched, 1, &u0, 1.0, &cfg).unwrap_err();
        assert!(matches!(
            err,
            StudyError::Kernel(KernelError::LevelInconsistent(_))
        ));
    }
}
