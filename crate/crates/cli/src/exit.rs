//! Process exit codes. The numbers are stable; see the README table.

use std::fmt;
use std::io;

use prionsim::diagnostics::DiagnosticsError;
use prionsim::grid::GridError;
use prionsim::kernels::KernelError;
use prionsim::oracle::OracleError;
use prionsim::solver::SolverError;
use prionsim::study::StudyError;

pub const OK: u8 = 0;
pub const CONFIG_PARSE: u8 = 2;
pub const VALIDATION_FAILED: u8 = 3;
pub const IO: u8 = 4;
pub const BLOW_UP: u8 = 10;
pub const NEGATIVE_MONOMER: u8 = 11;
pub const NEGATIVE_DENSITY: u8 = 12;
pub const MASS_ESCAPE: u8 = 13;
pub const PAIR_OUT_OF_RANGE: u8 = 14;
pub const SOLVER_CONFIG: u8 = 15;
pub const OPERATOR: u8 = 16;
pub const KERNEL: u8 = 20;
pub const LEVEL_INCONSISTENT: u8 = 21;
pub const SUPPORT_EXCEEDS_GRID: u8 = 22;
pub const GRID: u8 = 23;
pub const ORACLE: u8 = 24;
pub const DIAGNOSTICS: u8 = 25;
pub const STUDY: u8 = 26;

/// A failed command: exit code, error name, and message.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: u8,
    pub name: &'static str,
    pub detail: String,
}

impl Failure {
    pub fn new(code: u8, name: &'static str, detail: impl Into<String>) -> Self {
        Self {
            code,
            name,
            detail: detail.into(),
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Self::new(CONFIG_PARSE, "ConfigParse", detail)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.detail)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::new(IO, "Io", e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let (code, name) = match &e {
            SolverError::BlowUp { .. } => (BLOW_UP, "BlowUp"),
            SolverError::NegativeMonomer { .. } => (NEGATIVE_MONOMER, "NegativeMonomer"),
            SolverError::NegativeDensity { .. } => (NEGATIVE_DENSITY, "NegativeDensity"),
            SolverError::MassEscape { .. } => (MASS_ESCAPE, "MassEscape"),
            SolverError::PairOutOfRange { .. } => (PAIR_OUT_OF_RANGE, "PairOutOfRange"),
            SolverError::InvalidConfig(_) => (SOLVER_CONFIG, "InvalidSolverConfig"),
            SolverError::Operator(_) => (OPERATOR, "Operator"),
        };
        Self::new(code, name, e.to_string())
    }
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        let (code, name) = match &e {
            KernelError::LevelInconsistent(_) => (LEVEL_INCONSISTENT, "LevelInconsistent"),
            KernelError::SupportExceedsGrid { .. } => (SUPPORT_EXCEEDS_GRID, "SupportExceedsGrid"),
            KernelError::NonEvaluableKernel { .. } => (KERNEL, "NonEvaluableKernel"),
            KernelError::UnknownFamily(_) => (KERNEL, "UnknownFamily"),
            KernelError::NonPositiveTau(_) => (KERNEL, "NonPositiveTau"),
            KernelError::NegativeRate { .. } => (KERNEL, "NegativeRate"),
            KernelError::InvalidParams(_) => (KERNEL, "InvalidParams"),
            KernelError::UnnormalizedK0 { .. } => (KERNEL, "UnnormalizedK0"),
            KernelError::AsymmetricK0 { .. } => (KERNEL, "AsymmetricK0"),
            KernelError::TooFewSamples(_) => (KERNEL, "TooFewSamples"),
        };
        Self::new(code, name, e.to_string())
    }
}

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        Self::new(GRID, "Grid", e.to_string())
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        Self::new(ORACLE, "Oracle", e.to_string())
    }
}

impl From<DiagnosticsError> for Failure {
    fn from(e: DiagnosticsError) -> Self {
        Self::new(DIAGNOSTICS, "Diagnostics", e.to_string())
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Kernel(k) => k.into(),
            StudyError::Solver { n, source } => {
                let mut f = Failure::from(source);
                f.detail = format!("level {n}: {}", f.detail);
                f
            }
            other => Self::new(STUDY, "Study", other.to_string()),
        }
    }
}
