use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("malformed CIFAR-10 data: {0}")]
    Data(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("cannot sample {needed} distinct peers from a pool of {pool}")]
    RoleSampling { needed: usize, pool: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("probe error: {0}")]
    Probe(String),

    #[error("unknown plot kind `{0}`")]
    UnknownPlotKind(String),
}
