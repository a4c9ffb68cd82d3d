use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the articulation engine.
///
/// Every variant maps to a stable machine-readable code (see [`Error::code`])
/// which the service forwards to clients.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} outside articulation range [0, {max}]")]
    RangeViolation { value: f64, max: f64 },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty geometry")]
    EmptyGeometry,

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("no surface under pixel ({x}, {y})")]
    NoSurface { x: usize, y: usize },

    #[error("ambiguous sketch: {reason}")]
    AmbiguousSketch {
        reason: String,
        candidates: Vec<usize>,
    },

    #[error("arrow shaft too short ({length:.1} px)")]
    ArrowTooShort { length: f64 },

    #[error("insufficient foreground coverage along hinge ({coverage:.2})")]
    InsufficientCoverage { coverage: f64 },

    #[error("predicted mask is empty")]
    EmptyMask,

    #[error("no part found (best IoU {best_iou:.3})")]
    NoPartFound {
        best_iou: f64,
        /// Up to three `(node_id, iou)` candidates in descending IoU order.
        candidates: Vec<(usize, f64)>,
    },

    #[error("empty part")]
    EmptyPart,

    #[error("flat or empty heatmap")]
    FlatHeatmap,

    #[error("joint is blocked at rest pose")]
    BlockedJoint { first_hit: f64 },

    #[error("tensor format: {0}")]
    TensorFormat(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("overlapping masks at {count} cells")]
    OverlappingMasks { count: usize },

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("backend timed out after {secs} s")]
    Timeout { secs: u64 },

    #[error("name collision: {0}")]
    NameCollision(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::RangeViolation { .. } => "range-violation",
            Error::Parse { .. } => "parse-error",
            Error::EmptyGeometry => "empty-geometry",
            Error::Degenerate(_) => "degenerate",
            Error::NoSurface { .. } => "no-surface",
            Error::AmbiguousSketch { .. } => "ambiguous-sketch",
            Error::ArrowTooShort { .. } => "arrow-too-short",
            Error::InsufficientCoverage { .. } => "insufficient-coverage",
            Error::EmptyMask => "empty-mask",
            Error::NoPartFound { .. } => "no-part-found",
            Error::EmptyPart => "empty-part",
            Error::FlatHeatmap => "flat-heatmap",
            Error::BlockedJoint { .. } => "blocked-joint",
            Error::TensorFormat(_) => "tensor-format",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::OverlappingMasks { .. } => "overlapping-masks",
            Error::Backend(_) => "backend-failure",
            Error::Timeout { .. } => "timeout",
            Error::NameCollision(_) => "name-collision",
            Error::Io(_) => "io-error",
            Error::Json(_) => "json-error",
        }
    }

    /// True for errors caused by the environment rather than the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
