use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite activation in encoder layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("invalid raw track {flight_id}: {reason}")]
    InvalidTrack { flight_id: String, reason: String },
    #[error("underdetermined reconstruction for {0}: normal equations are singular")]
    UnderdeterminedReconstruction(String),
    #[error("trajectory too short: {0}")]
    TrajectoryTooShort(String),
    #[error("zero standard deviation for feature {0}")]
    ZeroStd(usize),
    #[error("empty valid set for loss {0}")]
    EmptyLoss(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        expected: impl core::fmt::Display,
        got: impl core::fmt::Display,
    ) -> Self {
        use alloc::string::ToString;
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
