//! Subcommand bodies. Each returns the process exit code or a `Failure`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use prionsim::diagnostics::{format_float, DiagnosticsLedger};
use prionsim::grid::GridFunction;
use prionsim::kernels::{validate_kernel_set, KernelSet};
use prionsim::oracle::{compare, integrate_oracle, MomentOdeState, OracleRates, OracleTrajectory};
use prionsim::solver::{run, RunOutput, SimulationState};
use prionsim::study::{check_levels, convergence_table, run_level, ConvergenceRow, LevelRun};

use crate::config::RunConfig;
use crate::exit::{self, Failure};

pub struct Prepared {
    pub cfg: RunConfig,
    pub kernels: KernelSet,
    pub u0: GridFunction,
    pub out: PathBuf,
}

/// Loads the configuration and builds everything a run needs. Nothing is
/// written before this succeeds.
pub fn prepare(config: &Path, out: Option<PathBuf>) -> Result<Prepared, Failure> {
    let mut cfg = RunConfig::load(config)?;
    let kernels = cfg.kernels()?;
    let grid = cfg.grid()?;
    let u0 = cfg.initial_density(grid)?;
    cfg.solver.check()?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let out = cfg.output.dir.clone();
    Ok(Prepared {
        cfg,
        kernels,
        u0,
        out,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_manifest(dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let mut w = create(dir, "run_manifest.toml")?;
    w.write_all(cfg.to_manifest().as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_timeseries(
    dir: &Path,
    cfg: &RunConfig,
    k: &KernelSet,
    traj: &[SimulationState],
) -> Result<(), Failure> {
    let ledger = DiagnosticsLedger::build(traj, k, &cfg.ledger_options())?;
    let mut w = create(dir, "timeseries.csv")?;
    ledger.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_density(dir: &Path, s: &SimulationState) -> Result<(), Failure> {
    let mut w = create(dir, &format!("density_t{}.csv", s.t))?;
    writeln!(w, "y,u")?;
    for (y, u) in s.u.grid().centers().iter().zip(s.u.values()) {
        writeln!(w, "{},{}", format_float(*y), format_float(*u))?;
    }
    w.flush()?;
    Ok(())
}

/// Initial state, requested snapshots and final state, one file per time.
fn write_densities(dir: &Path, out: &RunOutput) -> Result<(), Failure> {
    let mut states: Vec<&SimulationState> = Vec::new();
    states.extend(out.trajectory.first());
    states.extend(&out.snapshots);
    states.extend(out.trajectory.last());
    states.sort_by(|a, b| a.t.total_cmp(&b.t));
    states.dedup_by(|a, b| a.t == b.t);
    for s in states {
        write_density(dir, s)?;
    }
    Ok(())
}

fn oracle_for(
    cfg: &RunConfig,
    k: &KernelSet,
    u0: &GridFunction,
    dt: f64,
) -> Result<OracleTrajectory, Failure> {
    let rates = OracleRates::from_kernels(k)?;
    let s0 = MomentOdeState::new(cfg.initial.v0, u0.moment(0.0), u0.moment(1.0));
    Ok(integrate_oracle(s0, &rates, cfg.solver.t_end, dt)?)
}

fn write_oracle(dir: &Path, oracle: &OracleTrajectory) -> Result<(), Failure> {
    let mut w = create(dir, "oracle.csv")?;
    writeln!(w, "t,v,U0,U1")?;
    for (t, s) in oracle.times.iter().zip(&oracle.states) {
        writeln!(
            w,
            "{},{},{},{}",
            format_float(*t),
            format_float(s.v),
            format_float(s.u0),
            format_float(s.u1)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(config: &Path, out: Option<PathBuf>) -> Result<u8, Failure> {
    let p = prepare(config, out)?;
    let result = run(
        p.u0.clone(),
        p.cfg.initial.v0,
        &p.kernels,
        p.cfg.solver.clone(),
    );
    write_manifest(&p.out, &p.cfg)?;
    let output = match result {
        Ok(o) => o,
        Err(f) => {
            // Keep what was computed; the run's own error decides the exit code.
            let _ = write_timeseries(&p.out, &p.cfg, &p.kernels, &f.partial.trajectory);
            let _ = write_densities(&p.out, &f.partial);
            return Err(f.error.into());
        }
    };
    write_timeseries(&p.out, &p.cfg, &p.kernels, &output.trajectory)?;
    write_densities(&p.out, &output)?;
    if let Some(oc) = p.cfg.oracle {
        if p.cfg.solver.t_end > 0.0 {
            let oracle = oracle_for(&p.cfg, &p.kernels, &p.u0, oc.dt)?;
            write_oracle(&p.out, &oracle)?;
            let ledger =
                DiagnosticsLedger::build(&output.trajectory, &p.kernels, &p.cfg.ledger_options())?;
            let report = compare(&ledger, &OracleRates::from_kernels(&p.kernels)?, &oracle)?;
            let mut w = create(&p.out, "compare.txt")?;
            writeln!(w, "{report}")?;
            writeln!(
                w,
                "oracle step-halving estimate: {:e}",
                oracle.error_estimate
            )?;
            w.flush()?;
            println!("{report}");
        }
    }
    println!(
        "simulated t = {} in {} steps; outputs in {}",
        p.cfg.solver.t_end,
        output.stats.steps,
        p.out.display()
    );
    Ok(exit::OK)
}

pub fn oracle(config: &Path, out: Option<PathBuf>) -> Result<u8, Failure> {
    let p = prepare(config, out)?;
    let dt = p.cfg.oracle.map_or(1e-3, |o| o.dt);
    let oracle = oracle_for(&p.cfg, &p.kernels, &p.u0, dt)?;
    write_manifest(&p.out, &p.cfg)?;
    write_oracle(&p.out, &oracle)?;
    let last = oracle.last();
    println!(
        "t = {}: v = {:e}, U0 = {:e}, U1 = {:e}",
        p.cfg.solver.t_end, last.v, last.u0, last.u1
    );
    println!("step-halving estimate: {:e}", oracle.error_estimate);
    Ok(exit::OK)
}

pub fn validate(config: &Path) -> Result<u8, Failure> {
    let cfg = RunConfig::load(config)?;
    let k = match cfg.kernels() {
        Ok(k) => k,
        Err(f) if f.code == exit::KERNEL && matches!(f.name, "AsymmetricK0" | "UnnormalizedK0") => {
            println!("FAIL  k0_profile  {}", f.detail);
            println!("overall: FAIL");
            return Ok(exit::VALIDATION_FAILED);
        }
        Err(f) => return Err(f),
    };
    let report = validate_kernel_set(&k, cfg.kernel.samples)?;
    println!("{report}");
    Ok(if report.passed() {
        exit::OK
    } else {
        exit::VALIDATION_FAILED
    })
}

fn write_level(dir: &Path, cfg: &RunConfig, run: &LevelRun) -> Result<(), Failure> {
    write_timeseries(dir, cfg, &run.kernels, &run.output.trajectory)?;
    let mut w = create(dir, "level.toml")?;
    let text =
        toml::to_string(&run.level).map_err(|e| Failure::new(exit::IO, "Io", e.to_string()))?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_convergence(dir: &Path, table: &[ConvergenceRow]) -> Result<(), Failure> {
    let mut w = create(dir, "convergence.csv")?;
    writeln!(w, "n_coarse,n_fine,dv,dU0,dU1")?;
    for r in table {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.n_coarse,
            r.n_fine,
            format_float(r.dv),
            format_float(r.du0),
            format_float(r.du1)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn truncation(
    config: &Path,
    out: Option<PathBuf>,
    levels: Option<Vec<usize>>,
    threads: usize,
) -> Result<u8, Failure> {
    let p = prepare(config, out)?;
    let Some(tc) = p.cfg.truncation.clone() else {
        return Err(Failure::config("truncation needs a [truncation] table"));
    };
    let levels = levels.unwrap_or_else(|| tc.levels.clone());
    if levels.is_empty() {
        return Err(Failure::config("no truncation levels given"));
    }
    check_levels(&levels)?;
    let schedule = tc.schedule();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::new(exit::IO, "ThreadPool", e.to_string()))?;
    let runs: Vec<LevelRun> = pool.install(|| {
        levels
            .par_iter()
            .map(|&n| -> Result<LevelRun, Failure> {
                let r = run_level(
                    &p.kernels,
                    &schedule,
                    n,
                    &p.u0,
                    p.cfg.initial.v0,
                    &p.cfg.solver,
                )?;
                write_level(&p.out.join(format!("level_{n}")), &p.cfg, &r)?;
                Ok(r)
            })
            .collect::<Result<_, _>>()
    })?;
    let table = convergence_table(&runs)?;
    write_manifest(&p.out, &p.cfg)?;
    write_convergence(&p.out, &table)?;
    for r in &table {
        println!(
            "{:>4} -> {:<4} max |diff| = {:e}",
            r.n_coarse,
            r.n_fine,
            r.max()
        );
    }
    let monotone = table.windows(2).all(|w| w[1].max() <= w[0].max());
    println!(
        "differences non-increasing: {}",
        if monotone { "yes" } else { "no" }
    );
    Ok(exit::OK)
}
