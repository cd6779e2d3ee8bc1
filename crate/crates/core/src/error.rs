// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use crate::analytic::CurveError;
use crate::estimation::EstimationError;
use crate::fields::FieldError;
use crate::io::IoError;
use crate::propagator::PropagationError;
use crate::sequence::SequenceError;

/// Any failure surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("configuration error: {0}")]
    Config(String),
}
