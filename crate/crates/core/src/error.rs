use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("loss root must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset already carries injected labels")]
    AlreadyInjected,
    #[error("split would leave an empty partition ({train} train / {test} test)")]
    DegenerateSplit { train: usize, test: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("annotation transcript has no entry for sample {sample_id} in round {round}")]
    TranscriptMissing { round: usize, sample_id: usize },
    #[error("annotator failure: {0}")]
    Annotator(String),
    #[error("run pair mismatch: {0}")]
    PairMismatch(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}
