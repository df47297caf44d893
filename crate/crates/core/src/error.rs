use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry violation: {0}")]
    GeometryViolation(String),
    #[error("mesh failure: {0}")]
    MeshFailure(String),
    #[error("solve failure: {0}")]
    SolveFailure(String),
    #[error("fields live on different meshes")]
    MeshMismatch,
    #[error("region is not simply connected: {0}")]
    RegionNotSimplyConnected(String),
    #[error("{count} candidates exceed the budget of {cap}")]
    BudgetExceeded { count: usize, cap: usize },
    #[error("annulus not resolved: {0}")]
    AnnulusUnresolved(String),
    #[error("tip geometry invalid: {0}")]
    TipGeometryInvalid(String),
    #[error("loading program is not proportional")]
    NotProportional,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
