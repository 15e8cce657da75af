//! Error types shared by the core modules.

use alloc::string::String;
use core::fmt;

/// Domain-rule violations raised by the environment, encoders, fusion
/// kernel, and oracle calibration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainError {
    /// Action destination outside the grid.
    OutOfBounds { row: i32, col: i32 },
    /// Both depth slots of the destination cell are occupied.
    CellFull { row: usize, col: usize },
    /// Action references an object id not present in the scene.
    NoSuchObject { id: u32 },
    /// Answer variant does not match the goal variant.
    AnswerKindMismatch,
    /// Observation cell is not a valid one-hot encoding.
    MalformedObservation { row: usize, col: usize, reason: &'static str },
    /// Fusion called with zero total tokens.
    EmptyFusionInput,
    /// Feature dimension does not match the kernel dimension.
    DimMismatch { expected: usize, got: usize },
    /// Calibration targets are not strictly increasing inside (0, 100).
    BadCalibration(String),
}

impl fmt::Display for DomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainError::OutOfBounds { row, col } => {
                write!(f, "destination ({row}, {col}) is outside the 8x8 grid")
            }
            DomainError::CellFull { row, col } => {
                write!(f, "cell ({row}, {col}) has both depth slots occupied")
            }
            DomainError::NoSuchObject { id } => write!(f, "no object with id {id} in scene"),
            DomainError::AnswerKindMismatch => {
                write!(f, "answer variant does not match the goal variant")
            }
            DomainError::MalformedObservation { row, col, reason } => {
                write!(f, "malformed observation cell ({row}, {col}): {reason}")
            }
            DomainError::EmptyFusionInput => write!(f, "fusion requires at least one input token"),
            DomainError::DimMismatch { expected, got } => {
                write!(f, "feature dimension mismatch: expected {expected}, got {got}")
            }
            DomainError::BadCalibration(msg) => write!(f, "bad calibration targets: {msg}"),
        }
    }
}

impl core::error::Error for DomainError {}

/// Failures of a reasoning backend call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Transport failure or timeout while contacting a remote backend.
    Unreachable(String),
    /// Reply received but not parseable into a response.
    BadReply(String),
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Unreachable(msg) => write!(f, "backend unreachable: {msg}"),
            BackendError::BadReply(msg) => write!(f, "backend reply unparseable: {msg}"),
        }
    }
}

impl core::error::Error for BackendError {}
