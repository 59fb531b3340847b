use std::path::PathBuf;

/// Errors raised anywhere in the feature pipeline.
///
/// Every variant maps onto a stable upper-case code (see [`Error::code`]) so
/// that callers and the command line can report failures without parsing
/// messages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape violation: {0}")]
    ShapeViolation(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("unsupported dump version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("corrupt block {}: {reason}", .path.display())]
    CorruptBlock { path: PathBuf, reason: String },
    #[error("checksum mismatch for {}", .0.display())]
    ChecksumMismatch(PathBuf),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("document `{0}` has no head-averaged attention stream")]
    MissingStream(String),
    #[error("attention stream for `{doc_id}` out of order at layer {layer}")]
    OutOfOrder { doc_id: String, layer: usize },
    #[error("missing block: {0}")]
    MissingBlock(String),
    #[error("missing pass `{0}`")]
    MissingPass(String),
    #[error("the dump has no prior pass, required by config {0}")]
    MissingPriorPass(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("top-k must be one of 5, 10, 20 (got {0})")]
    InvalidK(usize),
    #[error("attention row is all zeros")]
    ZeroAttention,
    #[error("unknown feature config `{0}`")]
    UnknownConfig(String),
    #[error("model too small for schedule: {0}")]
    ScheduleTooSmall(String),
    #[error("unknown entity type `{0}`")]
    UnknownEntity(String),
    #[error("degenerate config: {0}")]
    DegenerateConfig(String),
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("registry mismatch: {0}")]
    RegistryMismatch(String),
    #[error("metric undefined for single-class input")]
    UndefinedMetric,
    #[error("malformed span: {0}")]
    MalformedSpan(String),
    #[error("need at least {needed} documents, found {found}")]
    TooFewDocuments { needed: usize, found: usize },
    #[error("unknown report format `{0}`")]
    UnknownFormat(String),
    #[error("hidden-state cross-check failed: {0}")]
    CrossCheck(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeViolation(_) => "SHAPE_VIOLATION",
            Error::NonFinite(_) => "NON_FINITE",
            Error::DuplicateDocument(_) => "DUPLICATE_DOC_ID",
            Error::MissingFile(_) => "MISSING_FILE",
            Error::UnsupportedVersion { .. } => "UNSUPPORTED_VERSION",
            Error::CorruptBlock { .. } => "CORRUPT_BLOCK",
            Error::ChecksumMismatch(_) => "CHECKSUM_MISMATCH",
            Error::UnknownDocument(_) => "UNKNOWN_DOCUMENT",
            Error::MissingStream(_) => "MISSING_STREAM",
            Error::OutOfOrder { .. } => "OUT_OF_ORDER",
            Error::MissingBlock(_) => "MISSING_BLOCK",
            Error::MissingPass(_) => "MISSING_PASS",
            Error::MissingPriorPass(_) => "MISSING_PRIOR_PASS",
            Error::InvalidDistribution(_) => "INVALID_DISTRIBUTION",
            Error::EmptyInput(_) => "EMPTY_INPUT",
            Error::DimMismatch { .. } => "DIM_MISMATCH",
            Error::InvalidK(_) => "INVALID_K",
            Error::ZeroAttention => "ZERO_ATTENTION",
            Error::UnknownConfig(_) => "UNKNOWN_CONFIG",
            Error::ScheduleTooSmall(_) => "SCHEDULE_TOO_SMALL",
            Error::UnknownEntity(_) => "UNKNOWN_ENTITY",
            Error::DegenerateConfig(_) => "DEGENERATE_CONFIG",
            Error::DegenerateLabels => "DEGENERATE_LABELS",
            Error::RegistryMismatch(_) => "REGISTRY_MISMATCH",
            Error::UndefinedMetric => "UNDEFINED_METRIC",
            Error::MalformedSpan(_) => "MALFORMED_SPAN",
            Error::TooFewDocuments { .. } => "TOO_FEW_DOCUMENTS",
            Error::UnknownFormat(_) => "UNKNOWN_FORMAT",
            Error::CrossCheck(_) => "CROSS_CHECK_FAILED",
            Error::Context { source, .. } => source.code(),
            Error::Io { .. } => "IO",
            Error::Json { .. } => "JSON",
        }
    }

    /// Wraps the error with a location such as `doc_17 token 42`.
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Error {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
