//! Domain types, validation, and CSV ingestion/emission for ensemble
//! prediction data.
//!
//! The on-disk schema is one CSV row per example:
//!
//! ```text
//! example_id,label,severity,y_1,...,y_K
//! ```
//!
//! `label` is the binary ground truth (0/1), `severity` an optional grade
//! in 0..=4 (empty when absent), and `y_k` the k-th member prediction in
//! [0, 1]. Probabilities are emitted via [`Real::to_decimal`], which uses
//! enough significant digits that a load/save/load cycle reproduces the
//! exact same bits.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Decision threshold and log-clamp used when turning probabilities into
/// labels and scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionConfig<F> {
    threshold: F,
    clamp_epsilon: F,
}

impl<F: Real> DecisionConfig<F> {
    /// Requires `0 < threshold < 1` and `0 < clamp_epsilon < 0.5`.
    pub fn new(threshold: F, clamp_epsilon: F) -> Result<Self> {
        if !(threshold > F::zero() && threshold < F::one()) {
            return Err(Error::InvalidParameter(format!(
                "decision threshold must lie in (0, 1), got {threshold}"
            )));
        }
        let half = F::from(0.5).unwrap();
        if !(clamp_epsilon > F::zero() && clamp_epsilon < half) {
            return Err(Error::InvalidParameter(format!(
                "clamp epsilon must lie in (0, 0.5), got {clamp_epsilon}"
            )));
        }
        Ok(Self {
            threshold,
            clamp_epsilon,
        })
    }

    /// Decision threshold tau.
    pub fn threshold(&self) -> F {
        self.threshold
    }

    /// Log-safety clamp epsilon.
    pub fn clamp_epsilon(&self) -> F {
        self.clamp_epsilon
    }

    /// Clamp a probability into `[epsilon, 1 - epsilon]` before taking logs.
    pub fn clamp(&self, p: F) -> F {
        p.max(self.clamp_epsilon).min(F::one() - self.clamp_epsilon)
    }
}

impl<F: Real> Default for DecisionConfig<F> {
    fn default() -> Self {
        Self {
            threshold: F::from(0.5).unwrap(),
            clamp_epsilon: F::from(1e-12).unwrap(),
        }
    }
}

/// One example: id, ground-truth label, optional severity level, and the
/// K member predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord<F> {
    example_id: String,
    label: bool,
    severity: Option<u8>,
    members: Vec<F>,
}

impl<F: Real> PredictionRecord<F> {
    /// Validates that at least one member prediction is present, that every
    /// prediction lies in [0, 1], and that any severity level is in 0..=4.
    pub fn new(
        example_id: impl Into<String>,
        label: bool,
        severity: Option<u8>,
        members: Vec<F>,
    ) -> Result<Self> {
        let example_id = example_id.into();
        if members.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "example {example_id:?} has no member predictions"
            )));
        }
        for (k, &p) in members.iter().enumerate() {
            if !(p >= F::zero() && p <= F::one()) {
                return Err(Error::ProbabilityOutOfRange {
                    line: 0,
                    column: format!("y_{}", k + 1),
                    value: format!("{p}"),
                    example_id,
                });
            }
        }
        if let Some(sl) = severity {
            if sl > 4 {
                return Err(Error::InvalidParameter(format!(
                    "example {example_id:?}: severity level {sl} outside 0..=4"
                )));
            }
        }
        Ok(Self {
            example_id,
            label,
            severity,
            members,
        })
    }

    pub fn example_id(&self) -> &str {
        &self.example_id
    }

    /// Ground-truth label; `true` is the positive class.
    pub fn label(&self) -> bool {
        self.label
    }

    pub fn severity(&self) -> Option<u8> {
        self.severity
    }

    pub fn members(&self) -> &[F] {
        &self.members
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    /// Ensemble output: unweighted arithmetic mean of the member predictions.
    pub fn ensemble_output(&self) -> F {
        let sum: F = self.members.iter().copied().sum();
        sum / F::from_usize(self.members.len()).unwrap()
    }

    /// Predicted label at threshold tau; the tie `y_e == tau` classifies
    /// positive, the safe direction for a screening application.
    pub fn predicted_label(&self, cfg: &DecisionConfig<F>) -> bool {
        self.ensemble_output() >= cfg.threshold()
    }

    /// Referable convention: severity 0..=1 must carry label 0, severity
    /// 2..=4 must carry label 1.
    pub fn severity_consistent(&self) -> bool {
        match self.severity {
            None => true,
            Some(sl) => (sl >= 2) == self.label,
        }
    }

    fn check_severity_consistency(&self) -> Result<()> {
        if self.severity_consistent() {
            Ok(())
        } else {
            Err(Error::SeverityLabelMismatch {
                example_id: self.example_id.clone(),
                severity: self.severity.unwrap(),
                label: self.label as u8,
            })
        }
    }
}

/// Options applied while building or loading a dataset.
#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Reject records whose severity level contradicts the label under the
    /// referable convention. Defaults to on; real datasets contain grading
    /// noise, so it can be disabled.
    pub check_severity_consistency: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            check_severity_consistency: true,
        }
    }
}

/// Validated collection of records with a uniform ensemble size K.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDataset<F> {
    records: Vec<PredictionRecord<F>>,
    ensemble_size: usize,
}

impl<F: Real> EnsembleDataset<F> {
    /// Validates uniform K, unique example ids, and (by default) the
    /// severity/label convention. Row order is preserved.
    pub fn from_records(
        records: Vec<PredictionRecord<F>>,
        opts: &ValidationOptions,
    ) -> Result<Self> {
        let ensemble_size = match records.first() {
            Some(r) => r.ensemble_size(),
            None => return Err(Error::EmptyDataset),
        };
        let mut seen = HashSet::with_capacity(records.len());
        for (row, record) in records.iter().enumerate() {
            if record.ensemble_size() != ensemble_size {
                return Err(Error::InconsistentEnsembleSize {
                    line: row as u64 + 2, // header is line 1
                    expected: ensemble_size,
                    found: record.ensemble_size(),
                });
            }
            if !seen.insert(record.example_id().to_owned()) {
                return Err(Error::DuplicateExampleId {
                    example_id: record.example_id().to_owned(),
                });
            }
            if opts.check_severity_consistency {
                record.check_severity_consistency()?;
            }
        }
        Ok(Self {
            records,
            ensemble_size,
        })
    }

    pub fn records(&self) -> &[PredictionRecord<F>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dataset-wide ensemble size K.
    pub fn ensemble_size(&self) -> usize {
        self.ensemble_size
    }

    /// Load from a CSV file (see the module docs for the schema).
    pub fn load_csv(path: impl AsRef<Path>, opts: &ValidationOptions) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, opts)
    }

    /// Load from any reader holding CSV data.
    pub fn read_csv(reader: impl Read, opts: &ValidationOptions) -> Result<Self> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);

        let headers = csv_reader
            .headers()
            .map_err(|e| Error::Malformed {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let ensemble_size = validate_header(&headers)?;

        let mut records = Vec::new();
        for row in csv_reader.records() {
            let row = row.map_err(|e| Error::Malformed {
                line: e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(records.len() as u64 + 2),
                message: e.to_string(),
            })?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            records.push(parse_row(&row, line, ensemble_size)?);
        }
        Self::from_records(records, opts)
    }

    /// Write in the same CSV schema the loader accepts; probabilities are
    /// emitted with round-trip precision.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "example_id".to_owned(),
            "label".to_owned(),
            "severity".to_owned(),
        ];
        header.extend((1..=self.ensemble_size).map(|k| format!("y_{k}")));
        w.write_record(&header).map_err(csv_io_error)?;
        for record in &self.records {
            let mut fields = vec![
                record.example_id().to_owned(),
                (record.label() as u8).to_string(),
                record.severity().map(|s| s.to_string()).unwrap_or_default(),
            ];
            fields.extend(record.members().iter().map(|p| p.to_decimal()));
            w.write_record(&fields).map_err(csv_io_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Convenience wrapper around [`Self::write_csv`] for a file path.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }
}

fn csv_io_error(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Malformed {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Header must be exactly `example_id,label,severity,y_1,...,y_K`; returns K.
fn validate_header(headers: &csv::StringRecord) -> Result<usize> {
    let fixed = ["example_id", "label", "severity"];
    if headers.len() < 4 {
        return Err(Error::Malformed {
            line: 1,
            message: format!(
                "header must be example_id,label,severity,y_1,...,y_K; found {} columns",
                headers.len()
            ),
        });
    }
    for (i, name) in fixed.iter().enumerate() {
        if headers.get(i).map(str::trim) != Some(*name) {
            return Err(Error::Malformed {
                line: 1,
                message: format!(
                    "header column {} must be {:?}, found {:?}",
                    i + 1,
                    name,
                    headers.get(i).unwrap_or("")
                ),
            });
        }
    }
    let ensemble_size = headers.len() - fixed.len();
    for k in 0..ensemble_size {
        let expected = format!("y_{}", k + 1);
        if headers.get(k + 3).map(str::trim) != Some(expected.as_str()) {
            return Err(Error::Malformed {
                line: 1,
                message: format!(
                    "header column {} must be {:?}, found {:?}",
                    k + 4,
                    expected,
                    headers.get(k + 3).unwrap_or("")
                ),
            });
        }
    }
    Ok(ensemble_size)
}

fn parse_row<F: Real>(
    row: &csv::StringRecord,
    line: u64,
    ensemble_size: usize,
) -> Result<PredictionRecord<F>> {
    if row.len() != ensemble_size + 3 {
        return Err(Error::InconsistentEnsembleSize {
            line,
            expected: ensemble_size,
            found: row.len().saturating_sub(3),
        });
    }
    let example_id = row.get(0).unwrap_or("").trim().to_owned();
    if example_id.is_empty() {
        return Err(Error::Malformed {
            line,
            message: "empty example_id".to_owned(),
        });
    }
    let label = match row.get(1).map(str::trim) {
        Some("0") => false,
        Some("1") => true,
        other => {
            return Err(Error::Malformed {
                line,
                message: format!("label must be 0 or 1, found {:?}", other.unwrap_or("")),
            })
        }
    };
    let severity_field = row.get(2).map(str::trim).unwrap_or("");
    let severity = if severity_field.is_empty() {
        None
    } else {
        let sl: u8 = severity_field.parse().map_err(|_| Error::Malformed {
            line,
            message: format!("severity must be an integer in 0..=4, found {severity_field:?}"),
        })?;
        if sl > 4 {
            return Err(Error::Malformed {
                line,
                message: format!("severity must be an integer in 0..=4, found {severity_field:?}"),
            });
        }
        Some(sl)
    };
    let mut members = Vec::with_capacity(ensemble_size);
    for k in 0..ensemble_size {
        let column = format!("y_{}", k + 1);
        let field = row.get(k + 3).unwrap_or("");
        let value = F::from_decimal(field).ok_or_else(|| Error::Malformed {
            line,
            message: format!("column {column}: cannot parse probability {field:?}"),
        })?;
        if !(value >= F::zero() && value <= F::one()) {
            return Err(Error::ProbabilityOutOfRange {
                line,
                column,
                value: field.trim().to_owned(),
                example_id,
            });
        }
        members.push(value);
    }
    PredictionRecord::new(example_id, label, severity, members)
}
