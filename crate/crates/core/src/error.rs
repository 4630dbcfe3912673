use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch for {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("odometry does not bracket timestamp {0} ns")]
    OdometryGap(i64),
    #[error("odometry samples must be strictly increasing in time")]
    OdometryOrder,
    #[error("pose is outside the map extent")]
    OutsideMap,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point lies behind the camera")]
    BehindCamera,
    #[error("depth estimate rejected: {0}")]
    DepthRejected(&'static str),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("{skipped} of {total} frames skipped")]
    TooManySkipped { skipped: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
