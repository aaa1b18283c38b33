use thiserror::Error;

use crate::model::{ContractId, Period, SupplierId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("attribute `{attribute}` has no utility for label `{label}`")]
    UnknownLabel { attribute: String, label: String },

    #[error("attribute `{attribute}` expects a {expected} value")]
    WrongValueKind { attribute: String, expected: &'static str },

    #[error("preference weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },

    #[error("preference weight for `{attribute}` is negative ({weight})")]
    NegativeWeight { attribute: String, weight: f64 },

    #[error("malformed binary program: {0}")]
    InvalidProgram(String),

    #[error("binary program is infeasible")]
    Infeasible,

    #[error("branch-and-bound exceeded its node limit of {limit}")]
    NodeLimit { limit: u64 },

    #[error("contract {contract} targets supplier {actual}, not {expected}")]
    ContractRouting {
        contract: ContractId,
        expected: SupplierId,
        actual: SupplierId,
    },

    #[error("supplier {supplier} expands to more than {cap} bundles")]
    BundleBudget { supplier: SupplierId, cap: usize },

    #[error("audit configuration: {0}")]
    AuditConfig(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("period {period}: {source}")]
    AtPeriod {
        period: Period,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by a computational budget rather than bad input.
    pub fn is_resource(&self) -> bool {
        match self {
            Error::NodeLimit { .. } | Error::BundleBudget { .. } => true,
            Error::AtPeriod { source, .. } => source.is_resource(),
            _ => false,
        }
    }

    pub fn at_period(self, period: Period) -> Error {
        Error::AtPeriod {
            period,
            source: Box::new(self),
        }
    }
}
