use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape contract violated: {0}")]
    ShapeContract(String),

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("band {band} out of range ({bands} bands)")]
    BandIndex { band: usize, bands: usize },

    #[error("tensor for layer {layer} head {head} is already post-rope")]
    DoubleRotation { layer: usize, head: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version: {0}")]
    Version(String),

    #[error("integrity error: expected {expected} payload bytes, found {actual} ({})", deficit_note(*.expected, *.actual))]
    Integrity { expected: u64, actual: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn deficit_note(expected: u64, actual: u64) -> String {
    if actual < expected {
        format!("{} bytes short", expected - actual)
    } else {
        format!("{} trailing bytes", actual - expected)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
