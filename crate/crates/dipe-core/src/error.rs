//! Error type shared by every module of the crate.

use std::fmt;

/// Errors raised by configuration validation, planning and attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A vector or array does not match the configured head dimension.
    DimMismatch { expected: usize, got: usize },
    /// A chunk partition is inconsistent with the rope configuration.
    BadPartition { detail: String },
    /// A visual segment's grid does not match its token count.
    BadGrid { detail: String },
    /// A plan was requested for an empty segment list.
    EmptySequence,
    /// Malformed JSON input. `offset` is the byte offset of the failure.
    ParseError { offset: usize, detail: String },
    /// A decode step or case is inconsistent with its plan.
    PlanMismatch { detail: String },
    /// A configuration invariant does not hold.
    InvalidConfig { detail: String },
}

impl Error {
    /// Stable machine-readable code for each error class.
    pub fn code(&self) -> &'static str {
        match self {
            Self::DimMismatch { .. } => "dim_mismatch",
            Self::BadPartition { .. } => "bad_partition",
            Self::BadGrid { .. } => "bad_grid",
            Self::EmptySequence => "empty_sequence",
            Self::ParseError { .. } => "parse_error",
            Self::PlanMismatch { .. } => "plan_mismatch",
            Self::InvalidConfig { .. } => "invalid_config",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch { expected, got } => {
                write!(f, "dim_mismatch: expected {expected} components, got {got}")
            }
            Self::BadPartition { detail } => write!(f, "bad_partition: {detail}"),
            Self::BadGrid { detail } => write!(f, "bad_grid: {detail}"),
            Self::EmptySequence => write!(f, "empty_sequence: at least one segment is required"),
            Self::ParseError { offset, detail } => {
                write!(f, "parse_error at byte {offset}: {detail}")
            }
            Self::PlanMismatch { detail } => write!(f, "plan_mismatch: {detail}"),
            Self::InvalidConfig { detail } => write!(f, "invalid_config: {detail}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
