use thiserror::Error;

/// Errors raised anywhere in the modeling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),

    #[error("all faces incident to vertex {0} are degenerate")]
    DegenerateVertex(usize),

    #[error("invalid outline: {0}")]
    InvalidOutline(String),

    #[error("non-disk topology: {0}")]
    NonDiskTopology(String),

    #[error("no landmark pairs and no rotation segment")]
    NoRotationCue,

    #[error("landmarks need oblique plane")]
    FrontalPlane,

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("no projection constraints or anchors; the system has a null space")]
    Unanchored,

    #[error("empty constraint set")]
    EmptyConstraints,

    #[error("nothing to copy from")]
    EmptySource,

    #[error("parameterization failed: {0}")]
    Parameterization(String),

    #[error("part {0} is disconnected; position manually")]
    Disconnected(String),

    #[error("ray missed the parent part {0}")]
    RayMiss(String),

    #[error("parent too thin for pairing ({0})")]
    ParentTooThin(String),

    #[error("shape-context matching could not map junction to junction; provide key pairs")]
    JunctionMismatch,

    #[error("parts {0} and {1} are declared connected but do not intersect")]
    NotIntersecting(String, String),

    #[error("boolean union failed: {0}")]
    Boolean(String),

    #[error("invalid project: {0}")]
    InvalidProject(String),

    #[error("part {part}: {message} (hint: {hint})")]
    Stage {
        part: String,
        message: String,
        hint: String,
    },

    #[error("image hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("project schema version {found} is newer than supported version {supported}")]
    SchemaTooNew { found: u32, supported: u32 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("nothing to export")]
    NothingToExport,

    #[error("cancelled")]
    Cancelled,

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
