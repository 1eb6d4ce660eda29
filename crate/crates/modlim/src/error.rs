use thiserror::Error;

/// Error taxonomy shared by every solver and the CLI.
///
/// `Config` maps to exit code 2, the numerical variants to exit code 3;
/// a suite that runs to completion but fails its assertions exits 1.
#[derive(Error, Debug)]
pub enum ModlimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("solver did not converge: {0}")]
    Convergence(String),

    #[error("memory guard: requested {requested} grid points exceeds limit {limit}")]
    MemoryGuard { requested: usize, limit: usize },

    #[error("blow-up guard tripped at t = {time:.6}: {what}")]
    BlowUp { time: f64, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModlimError>;

impl ModlimError {
    pub fn config(msg: impl Into<String>) -> Self {
        ModlimError::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        ModlimError::Numerical(msg.into())
    }

    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            ModlimError::Config(_) => 2,
            ModlimError::Io(_) => 2,
            _ => 3,
        }
    }
}
