//! Per-example uncertainty scores.
//!
//! Four metrics over the K member predictions of a record, all returning a
//! nonnegative score where larger means more uncertain:
//!
//! - `MEAN` (margin): `1 - |y_e - tau|`, maximal when the ensemble output
//!   sits exactly on the decision threshold.
//! - `ENTROPY`: binary cross-entropy `-[y_e ln y_e + (1-y_e) ln(1-y_e)]`
//!   of the ensemble output, natural log.
//! - `VAR`: unbiased sample variance of the member predictions.
//! - `KL`: mean binary KL divergence from each member's prediction to the
//!   ensemble output.
//!
//! `VAR` and `KL` measure member disagreement only: when every member
//! predicts exactly 0.5 both are zero even though the decision is maximally
//! uncertain, while `MEAN` (at tau = 0.5) is maximal there. At tau = 0.5,
//! `ENTROPY` and `MEAN` induce the same ranking.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DecisionConfig, EnsembleDataset, PredictionRecord};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uncertainty metric selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mean,
    Entropy,
    Var,
    Kl,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Mean,
        MetricKind::Entropy,
        MetricKind::Var,
        MetricKind::Kl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mean => "mean",
            MetricKind::Entropy => "entropy",
            MetricKind::Var => "var",
            MetricKind::Kl => "kl",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(MetricKind::Mean),
            "entropy" => Ok(MetricKind::Entropy),
            "var" => Ok(MetricKind::Var),
            "kl" => Ok(MetricKind::Kl),
            other => Err(Error::InvalidParameter(format!(
                "unknown metric {other:?} (expected mean, entropy, var or kl)"
            ))),
        }
    }
}

/// How the KL metric treats the per-member divergence term.
///
/// `Full` is the two-term binary KL `p ln(p/q) + (1-p) ln((1-p)/(1-q))`.
/// `Literal` keeps only the first term; it is provided for comparison with
/// sources that write the divergence that way.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMode {
    #[default]
    Full,
    Literal,
}

/// Margin score `1 - |y_e - tau|`.
pub fn score_mean<F: Real>(record: &PredictionRecord<F>, cfg: &DecisionConfig<F>) -> F {
    F::one() - (record.ensemble_output() - cfg.threshold()).abs()
}

/// Binary cross-entropy of the ensemble output, natural log. The output is
/// clamped into `[eps, 1 - eps]` before the logs, so certain predictions
/// score approximately (not exactly) zero.
pub fn score_entropy<F: Real>(record: &PredictionRecord<F>, cfg: &DecisionConfig<F>) -> F {
    let q = cfg.clamp(record.ensemble_output());
    let one = F::one();
    -(q * q.ln() + (one - q) * (one - q).ln())
}

/// Unbiased sample variance of the member predictions; requires K >= 2.
pub fn score_var<F: Real>(record: &PredictionRecord<F>) -> Result<F> {
    let k = record.ensemble_size();
    if k < 2 {
        return Err(Error::MetricUndefined {
            metric: "var".to_owned(),
            example_id: record.example_id().to_owned(),
            reason: "sample variance requires at least 2 member predictions".to_owned(),
        });
    }
    let mean = record.ensemble_output();
    let sum_sq: F = record
        .members()
        .iter()
        .map(|&y| {
            let d = y - mean;
            d * d
        })
        .sum();
    Ok(sum_sq / F::from_usize(k - 1).unwrap())
}

/// Mean KL divergence from each member's prediction to the ensemble output.
///
/// Members are clamped into `[eps, 1 - eps]` first and the reference `q` is
/// the mean of the clamped members, which keeps the score exactly zero on
/// consensus and nonnegative otherwise (Jensen, since ln is concave).
pub fn score_kl<F: Real>(record: &PredictionRecord<F>, cfg: &DecisionConfig<F>, mode: KlMode) -> F {
    let k = F::from_usize(record.ensemble_size()).unwrap();
    let one = F::one();
    let q = record.members().iter().map(|&y| cfg.clamp(y)).sum::<F>() / k;
    let total: F = record
        .members()
        .iter()
        .map(|&y| {
            let p = cfg.clamp(y);
            match mode {
                KlMode::Full => p * (p / q).ln() + (one - p) * ((one - p) / (one - q)).ln(),
                KlMode::Literal => p * (p / q).ln(),
            }
        })
        .sum();
    total / k
}

/// Score one record under `metric`.
pub fn score_record<F: Real>(
    record: &PredictionRecord<F>,
    metric: MetricKind,
    cfg: &DecisionConfig<F>,
    kl_mode: KlMode,
) -> Result<F> {
    match metric {
        MetricKind::Mean => Ok(score_mean(record, cfg)),
        MetricKind::Entropy => Ok(score_entropy(record, cfg)),
        MetricKind::Var => score_var(record),
        MetricKind::Kl => Ok(score_kl(record, cfg, kl_mode)),
    }
}

/// One scored example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreEntry<F> {
    pub example_id: String,
    pub score: F,
}

/// Per-example scores under one metric, in dataset row order.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport<F> {
    metric: MetricKind,
    threshold: F,
    entries: Vec<ScoreEntry<F>>,
}

impl<F: Real> UncertaintyReport<F> {
    /// Build from prescored entries; every score must be finite and >= 0.
    pub fn from_entries(
        metric: MetricKind,
        threshold: F,
        entries: Vec<ScoreEntry<F>>,
    ) -> Result<Self> {
        for entry in &entries {
            if !entry.score.is_finite() || entry.score < F::zero() {
                return Err(Error::InvalidParameter(format!(
                    "score for example {:?} must be finite and nonnegative, got {}",
                    entry.example_id, entry.score
                )));
            }
        }
        Ok(Self {
            metric,
            threshold,
            entries,
        })
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    /// Decision threshold the scores were computed at.
    pub fn threshold(&self) -> F {
        self.threshold
    }

    pub fn entries(&self) -> &[ScoreEntry<F>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by descending score, ties broken by ascending id.
    pub fn ranked(&self) -> Vec<&ScoreEntry<F>> {
        let mut out: Vec<&ScoreEntry<F>> = self.entries.iter().collect();
        // scores are validated finite, so the comparison is total
        out.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.example_id.cmp(&b.example_id))
        });
        out
    }

    /// Emit `example_id,score` rows with round-trip precision.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["example_id", "score"])
            .map_err(|e| Error::Malformed {
                line: 0,
                message: e.to_string(),
            })?;
        for entry in &self.entries {
            w.write_record([entry.example_id.as_str(), &entry.score.to_decimal()])
                .map_err(|e| Error::Malformed {
                    line: 0,
                    message: e.to_string(),
                })?;
        }
        w.flush()?;
        Ok(())
    }
}

impl<F: Real + Serialize> UncertaintyReport<F> {
    /// Emit the entries as a JSON array.
    pub fn write_json(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.entries).map_err(|e| Error::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(())
    }
}

/// Sidecar describing how a score report was produced.
#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta<F> {
    pub metric: MetricKind,
    pub threshold: F,
    pub clamp_epsilon: F,
    pub kl_mode: KlMode,
    pub n_examples: usize,
}

/// Score the whole dataset under `metric`; one entry per record, in row
/// order. Fails up front when the metric is undefined for the dataset's K.
pub fn score_dataset<F: Real>(
    dataset: &EnsembleDataset<F>,
    metric: MetricKind,
    cfg: &DecisionConfig<F>,
    kl_mode: KlMode,
) -> Result<UncertaintyReport<F>> {
    if metric == MetricKind::Var && dataset.ensemble_size() < 2 {
        return Err(Error::MetricUndefined {
            metric: "var".to_owned(),
            example_id: String::new(),
            reason: format!(
                "sample variance requires K >= 2, dataset has K = {}",
                dataset.ensemble_size()
            ),
        });
    }
    let entries = dataset
        .records()
        .iter()
        .map(|record| {
            let score = score_record(record, metric, cfg, kl_mode)?;
            Ok(ScoreEntry {
                example_id: record.example_id().to_owned(),
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    UncertaintyReport::from_entries(metric, cfg.threshold(), entries)
}
