use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] protonet_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Config { path: PathBuf, source: toml::de::Error },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("unknown class directory {}", .0.display())]
    UnknownClass(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Bad input or configuration, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        use protonet_core::Error as E;
        match self {
            Error::Config { .. } | Error::UnknownClass(_) | Error::Invalid(_) => true,
            Error::Core(e) => matches!(
                e,
                E::InvalidArgument(_)
                    | E::EmptyClass(_)
                    | E::SingleImageClass { .. }
                    | E::ImageTooSmall { .. }
                    | E::InsufficientPatches { .. }
                    | E::InsufficientClasses { .. }
                    | E::ScopeMismatch { .. }
                    | E::UnknownParameter(_)
                    | E::ParameterShape { .. }
            ),
            _ => false,
        }
    }

    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        path: path.to_path_buf(),
        source,
    }
}
