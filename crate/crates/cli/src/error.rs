use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing upstream artifact: run the '{stage}' stage first ({detail})")]
    MissingUpstream { stage: &'static str, detail: String },
    #[error("artifacts in {0} were produced by a different config; rerun with --force or use another --stage-dir")]
    DigestMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(cohort_mtl::Error),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad artifact {path}: {detail}")]
    Artifact { path: String, detail: String },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<cohort_mtl::Error> for CliError {
    fn from(e: cohort_mtl::Error) -> Self {
        match e {
            cohort_mtl::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// Process exit status: 2 config, 3 missing upstream, 4 numerical, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::DigestMismatch(_) => 2,
            CliError::MissingUpstream { .. } => 3,
            CliError::Numerical(_) => 4,
            _ => 1,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}
