use thiserror::Error;

use crate::data::ComplianceType;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Classification is only defined for a positive first-stage slope.
    #[error("first-stage sign: beta1 must be positive, got {0}")]
    FirstStageSign(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("labels contain a single class; a ridge penalty is required")]
    SingleClass,

    #[error("rank-deficient design: column(s) {0:?} are collinear with earlier columns")]
    RankDeficient(Vec<String>),

    #[error("empty cell ({z},{d})")]
    EmptyCell { z: u8, d: u8 },

    #[error("no compliance signal: first-stage difference is zero")]
    NoComplianceSignal,

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("LI decomposition degenerate: {share:.3} of rows below the denominator floor in {which}")]
    DegenerateDecomposition { which: &'static str, share: f64 },

    #[error("no {0:?} rows in simulated data")]
    NoType(ComplianceType),

    #[error("unknown selector `{0}`")]
    UnknownSelector(String),

    #[error("estimator {0} needs latent simulation data")]
    OracleOnly(&'static str),
}

impl Error {
    /// Stable short name of the variant, used for failure histograms.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::FirstStageSign(_) => "first_stage_sign",
            Self::InvalidConfig(_) => "invalid_config",
            Self::InvalidDataset(_) => "invalid_dataset",
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::SingleClass => "single_class",
            Self::RankDeficient(_) => "rank_deficient",
            Self::EmptyCell { .. } => "empty_cell",
            Self::NoComplianceSignal => "no_compliance_signal",
            Self::ZeroDenominator(_) => "zero_denominator",
            Self::DegenerateDecomposition { .. } => "degenerate_decomposition",
            Self::NoType(_) => "no_type",
            Self::UnknownSelector(_) => "unknown_selector",
            Self::OracleOnly(_) => "oracle_only",
        }
    }
}
