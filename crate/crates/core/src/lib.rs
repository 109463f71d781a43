//! Detection of small anomalies in images by self-similarity analysis.
//!
//! The pipeline removes everything a non-local patch model can explain,
//! calibrates what is left against a generalized Gaussian background model,
//! and then scans the calibrated residual at several scales with disk
//! filters, reporting only pixels whose filter response is too large to be
//! chance under a global number-of-false-alarms budget.
//!
//! Modules follow the processing order: [`image`] holds containers and
//! filtering, [`residual`] the patch-based background subtraction,
//! [`features`] optional input transforms, [`calibrate`] the statistical
//! normalization, and [`detect`] the multi-scale scan and grouping.

pub mod calibrate;
pub mod detect;
pub mod features;
pub mod image;
pub mod reference;
pub mod residual;
pub mod special;

pub use error::Error;

mod error {
    /// Crate-wide error type.
    #[derive(Debug, thiserror::Error)]
    pub enum Error {
        #[error("invalid parameter: {0}")]
        InvalidParameter(String),
        #[error("image too small: {0}")]
        ImageTooSmall(String),
        #[error("not enough patch candidates: {0}")]
        NotEnoughCandidates(String),
        #[error("degenerate data: {0}")]
        DegenerateData(String),
        #[error("malformed feature map: {0}")]
        MalformedFeatureMap(String),
        #[error("i/o error: {0}")]
        Io(#[from] std::io::Error),
    }
}
