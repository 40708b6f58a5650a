use alloc::string::String;

use crate::dataset::ClassKey;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {0} has no source images")]
    EmptyClass(ClassKey),
    #[error("class {class} has only one source image; cannot populate both splits")]
    SingleImageClass { class: ClassKey },
    #[error("image {image_id} is {width}x{height}, smaller than the {patch_size}px patch")]
    ImageTooSmall {
        image_id: String,
        width: usize,
        height: usize,
        patch_size: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("channel {0} has zero variance")]
    ZeroVariance(usize),
    #[error("patch {0} is already standardized")]
    AlreadyStandardized(String),
    #[error("channel stats scope `{stats}` does not match train split `{split}`")]
    ScopeMismatch { stats: String, split: String },
    #[error("duplicate patch id {0}")]
    DuplicatePatchId(String),
    #[error("unknown patch id {0}")]
    UnknownPatch(String),
    #[error("class {class} has {available} patches, episode needs {required}")]
    InsufficientPatches {
        class: ClassKey,
        available: usize,
        required: usize,
    },
    #[error("episode asks for {requested} classes, only {available} available")]
    InsufficientClasses { requested: usize, available: usize },
    #[error("class label {0} has no support examples")]
    MissingClass(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value at row {0}")]
    NonFinite(usize),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("at least two values are needed for a standard deviation, got {0}")]
    InsufficientSamples(usize),
    #[error("parameter `{0}` not found")]
    UnknownParameter(String),
    #[error("parameter `{name}` expects {expected} values, got {got}")]
    ParameterShape {
        name: String,
        expected: usize,
        got: usize,
    },
}
