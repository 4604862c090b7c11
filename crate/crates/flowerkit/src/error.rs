use crate::config::ConfigError;
use crate::container::ContainerError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] flowerkit_core::Error),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// `1` for a rejected request, `2` for a failure while carrying it out.
    pub fn exit_code(&self) -> i32 {
        use flowerkit_core::Error as C;
        match self {
            Error::Config(_) | Error::Usage(_) => 1,
            Error::Core(e) => match e {
                C::ConfigInvalid(_)
                | C::ShapeNotDivisible { .. }
                | C::OddShape { .. }
                | C::InvalidGeometry(_)
                | C::UnknownBlock(_)
                | C::InvalidFamilyParams { .. }
                | C::ShockWithinHorizon { .. }
                | C::DatasetTooShort { .. }
                | C::HorizonExceedsTruth { .. }
                | C::InvalidSpeed(_)
                | C::EvenKernel(_)
                | C::FluxDerivative { .. } => 1,
                _ => 2,
            },
            Error::Container(_) | Error::Io(_) | Error::Format { .. } | Error::Failed(_) => 2,
        }
    }
}
