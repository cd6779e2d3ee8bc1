// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! CSV and JSON persistence.
//!
//! A contrast curve is stored as `name.csv` with a `param,contrast` header
//! and a `name.json` sidecar holding the configuration that produced it.
//! Floats use the shortest round-trip representation, so identical data
//! always produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{ContrastCurve, ReadoutModel, SweepParameter};
use crate::fields::{FieldConfig, ModulationConfig};
use crate::sequence::SequenceSpec;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Everything in a [`ContrastCurve`] except the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub sweep_param: SweepParameter,
    pub cfg: FieldConfig,
    pub modulation: ModulationConfig,
    #[serde(default)]
    pub readout: ReadoutModel,
    pub sequence: SequenceSpec,
}

impl CurveMetadata {
    pub fn of(curve: &ContrastCurve) -> Self {
        Self {
            sweep_param: curve.sweep_param,
            cfg: curve.cfg,
            modulation: curve.modulation,
            readout: curve.readout,
            sequence: curve.sequence,
        }
    }

    pub fn with_samples(self, samples: Vec<(f64, f64)>) -> ContrastCurve {
        ContrastCurve {
            sweep_param: self.sweep_param,
            samples,
            cfg: self.cfg,
            modulation: self.modulation,
            readout: self.readout,
            sequence: self.sequence,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    param: f64,
    contrast: f64,
}

/// Sidecar path for a data file: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::File {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, to_json_string(value)).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes any serializable rows as CSV with a header from the field names.
pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::File {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

/// Writes `curve` to `csv_path` and its metadata to the sidecar.
pub fn write_curve(curve: &ContrastCurve, csv_path: &Path) -> Result<(), IoError> {
    let rows: Vec<Row> = curve
        .samples
        .iter()
        .map(|&(param, contrast)| Row { param, contrast })
        .collect();
    write_rows(&rows, csv_path)?;
    write_json(&CurveMetadata::of(curve), &sidecar_path(csv_path))
}

/// Reads samples from `csv_path` and metadata from its sidecar.
pub fn read_curve(csv_path: &Path) -> Result<ContrastCurve, IoError> {
    let meta: CurveMetadata = read_json(&sidecar_path(csv_path))?;
    read_curve_with(csv_path, meta)
}

/// Reads samples from `csv_path` and attaches externally supplied metadata,
/// for measured data without a sidecar.
pub fn read_curve_with(csv_path: &Path, meta: CurveMetadata) -> Result<ContrastCurve, IoError> {
    let rows: Vec<Row> = read_rows(csv_path)?;
    if rows.is_empty() {
        return Err(IoError::Format {
            path: csv_path.to_path_buf(),
            message: "no samples".into(),
        });
    }
    if let Some(i) = rows.iter().position(|r| !(r.param.is_finite() && r.contrast.is_finite())) {
        return Err(IoError::Format {
            path: csv_path.to_path_buf(),
            message: format!("non-finite value in data row {}", i + 1),
        });
    }
    Ok(meta.with_samples(rows.into_iter().map(|r| (r.param, r.contrast)).collect()))
}
