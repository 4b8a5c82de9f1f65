use thiserror::Error;

/// Errors produced by the estimation, simulation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid degree k={k} for a graph with N={n} nodes (need 1 <= k <= N-1)")]
    InvalidDegree { n: usize, k: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("ill-conditioned regressors: {0}")]
    IllConditioned(String),
    #[error("collinear design: {0}")]
    CollinearDesign(String),
    #[error("degenerate factors: {0}")]
    DegenerateFactors(String),
    #[error("loss diverged: {0}; try a smaller step size")]
    Divergence(String),
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad inputs (files, shapes, configuration)
    /// as opposed to numerical breakdown inside a solver.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::InvalidDegree { .. }
                | Error::InsufficientData(_)
                | Error::Infeasible(_)
                | Error::RankMismatch(_)
                | Error::InvalidInput(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
