use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared across the crate.
///
/// Every variant carries enough context to name the offending variable,
/// constraint, or file. [`Error::exit_code`] maps variants onto the process
/// exit codes used by the command-line interface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("table has {cells} cells, exceeding the dense-table cap of {cap}")]
    TableTooLarge { cells: usize, cap: usize },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("conditioning event has probability zero: {0}")]
    NullConditioning(String),

    #[error("invalid constraint `{name}`: {detail}")]
    InvalidConstraint { name: String, detail: String },

    #[error("infeasible constraint `{name}`: {detail}")]
    Infeasible { name: String, detail: String },

    #[error("projection did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("distribution not dominated: {0}")]
    NotDominated(String),

    #[error("invalid model specification: {0}")]
    InvalidModel(String),

    #[error("variable `{variable}` is missing with probability one and cannot be identified")]
    AlwaysMissing { variable: String },

    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable code for structured error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSpace(_) => "invalid_space",
            Error::TableTooLarge { .. } => "table_too_large",
            Error::InvalidTable(_) => "invalid_table",
            Error::NullConditioning(_) => "null_conditioning",
            Error::InvalidConstraint { .. } => "invalid_constraint",
            Error::Infeasible { .. } => "infeasible",
            Error::NonConvergence { .. } => "non_convergence",
            Error::NumericalFailure(_) => "numerical_failure",
            Error::NotDominated(_) => "not_dominated",
            Error::InvalidModel(_) => "invalid_model",
            Error::AlwaysMissing { .. } => "always_missing",
            Error::InvalidSampler(_) => "invalid_sampler",
            Error::InvalidData(_) => "invalid_data",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code: 2 for configuration and validation errors,
    /// 3 for infeasible constraints, 4 for solver non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible { .. } | Error::AlwaysMissing { .. } => 3,
            Error::NonConvergence { .. } | Error::NumericalFailure(_) => 4,
            _ => 2,
        }
    }
}
