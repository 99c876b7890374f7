use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite sample position {0:?}")]
    NonFinitePosition([f64; 3]),

    #[error("centerline is degenerate: {0}")]
    DegenerateCenterline(String),

    #[error("frames {frames:?} map outside the centerline extent [0, {length:.3}] mm")]
    OutOfExtent { frames: Vec<usize>, length: f64 },

    #[error("frames {0:?} sample entirely outside the volume")]
    OutsideVolume(Vec<usize>),

    #[error("structure coverage exceeds the full circumference at slice {slice}")]
    OverlappingStructures { slice: usize },

    #[error("only {unmasked} of {total} (theta, z) bins are unmasked; at least 10% required")]
    DegenerateMask { unmasked: usize, total: usize },

    #[error("intensities are constant over the unmasked region of image `{0}`")]
    DegenerateHistogram(&'static str),

    #[error("no feasible longitudinal offset for the pullback on this centerline")]
    EmptySearchRange,

    #[error("non-finite loss in component `{component}` at iteration {iteration}")]
    NonFiniteLoss { component: &'static str, iteration: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Stable machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid(_) => "invalid",
            Error::Shape(_) => "shape",
            Error::NonFinitePosition(_) => "non_finite_position",
            Error::DegenerateCenterline(_) => "degenerate_centerline",
            Error::OutOfExtent { .. } => "out_of_extent",
            Error::OutsideVolume(_) => "outside_volume",
            Error::OverlappingStructures { .. } => "overlapping_structures",
            Error::DegenerateMask { .. } => "degenerate_mask",
            Error::DegenerateHistogram(_) => "degenerate_histogram",
            Error::EmptySearchRange => "empty_search_range",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }
}
