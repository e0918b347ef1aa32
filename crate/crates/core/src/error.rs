use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("singular design: column(s) {} linearly dependent on earlier columns", columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("no convergence after {iterations} sweeps (last max change {max_change:e})")]
    NonConvergence {
        iterations: usize,
        max_change: f64,
        /// Coefficients of the last iterate, original feature scale.
        last_iterate: Vec<f64>,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("geojson: {0}")]
    GeoJson(String),
}

impl Error {
    /// Process exit code for the command-line front end: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::InvalidGeometry(_)
            | Error::EmptyInput(_)
            | Error::Schema(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::GeoJson(_) => 3,
            Error::SingularDesign { .. }
            | Error::NonConvergence { .. }
            | Error::Degenerate(_)
            | Error::Numerical(_) => 4,
        }
    }

    /// Short machine-readable category used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::Contract(_) => "contract",
            Error::EmptyInput(_) => "empty_input",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::SingularDesign { .. } => "singular_design",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Degenerate(_) => "degenerate",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::GeoJson(_) => "geojson",
        }
    }
}
