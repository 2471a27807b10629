//! Uncertainty-informed triage of negative predictions.
//!
//! Records predicted negative are ranked by uncertainty score; the top q%
//! are flagged for human re-examination. Re-examined cases are corrected
//! by an assumed-perfect reviewer, so every false negative inside the
//! flagged set is found and the rest remain. [`evaluate_triage`] does that
//! accounting: false-negative precision (FNP, the fraction of flagged
//! negatives that are truly positive), remaining false negatives, and the
//! percent reduction against the q = 0 baseline where negatives are never
//! reviewed.
//!
//! Also here: the MEAN+VAR union selection (flag anything either metric
//! flags at the same q), severity-level breakdowns of the top-ranked
//! examples, and histogram emission for score-distribution plots.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{DecisionConfig, EnsembleDataset, PredictionRecord};
use crate::error::{Error, Result};
use crate::metrics::{score_dataset, KlMode, MetricKind, UncertaintyReport};
use crate::scalar::Real;

/// Selection rule: a single metric, or the union of MEAN and VAR picks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageMetric {
    Metric(MetricKind),
    UnionMeanVar,
}

impl TriageMetric {
    pub fn name(&self) -> &'static str {
        match self {
            TriageMetric::Metric(m) => m.name(),
            TriageMetric::UnionMeanVar => "mean+var",
        }
    }
}

impl std::fmt::Display for TriageMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TriageMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "union" | "mean+var" | "mean_var" => Ok(TriageMetric::UnionMeanVar),
            other => Ok(TriageMetric::Metric(other.parse()?)),
        }
    }
}

/// Uncertain-negative rate q, selection rule, and decision settings.
#[derive(Debug, Clone, Copy)]
pub struct TriageConfig<F> {
    /// Percentage of negative predictions to flag, in [0, 100].
    pub q_percent: f64,
    pub metric: TriageMetric,
    pub decision: DecisionConfig<F>,
    pub kl_mode: KlMode,
}

impl<F: Real> TriageConfig<F> {
    pub fn new(q_percent: f64, metric: TriageMetric, decision: DecisionConfig<F>) -> Result<Self> {
        if !(0.0..=100.0).contains(&q_percent) {
            return Err(Error::InvalidParameter(format!(
                "q must lie in [0, 100], got {q_percent}"
            )));
        }
        Ok(Self {
            q_percent,
            metric,
            decision,
            kl_mode: KlMode::default(),
        })
    }
}

/// Counts from one triage evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriageOutcome {
    /// Records predicted negative.
    pub n_negatives: usize,
    /// Flagged uncertain negatives.
    pub n_uncertain: usize,
    /// False negatives inside the flagged set.
    pub n_false_neg_found: usize,
    /// found / uncertain; `None` when nothing was flagged (never 0, which
    /// would skew averages).
    pub fnp: Option<f64>,
    /// All false negatives in the dataset.
    pub n_false_neg_total: usize,
    /// False negatives the scheme does not surface.
    pub n_false_neg_remaining: usize,
    /// 100 * found / total, 0 when there are no false negatives.
    pub reduction_pct: f64,
}

/// Which examples a ranking-based selection draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    All,
    Negatives,
}

/// Severity-level proportions of the top-ranked theta percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeverityBreakdown {
    pub theta: f64,
    pub population: Population,
    pub n_selected: usize,
    /// Proportions of severity levels 0..=4 among the selected examples;
    /// they sum to 1.
    pub proportions: [f64; 5],
}

/// Per-bin counts of a score histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// `(lo, hi)` edges of bin `i`.
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + i as f64 * width, self.lo + (i + 1) as f64 * width)
    }

    /// Emit `bin_lo,bin_hi,count` rows.
    pub fn write_csv(&self, mut writer: impl Write) -> Result<()> {
        writeln!(writer, "bin_lo,bin_hi,count")?;
        for (i, count) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(i);
            writeln!(writer, "{},{},{}", lo.to_decimal(), hi.to_decimal(), count)?;
        }
        Ok(())
    }
}

/// Number of items selected at `pct` percent out of `n`: `ceil(pct/100 * n)`,
/// so any positive rate selects at least one item. The 1e-9 slack keeps
/// float dust in `pct/100 * n` from bumping an exact integer to the next one.
pub fn selection_count(pct: f64, n: usize) -> usize {
    let x = pct / 100.0 * n as f64;
    let k = (x - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

fn check_coverage<F: Real>(
    dataset: &EnsembleDataset<F>,
    report: &UncertaintyReport<F>,
) -> Result<()> {
    if dataset.len() != report.len() {
        return Err(Error::ReportMismatch {
            reason: format!(
                "dataset has {} records, report has {} entries",
                dataset.len(),
                report.len()
            ),
        });
    }
    for (record, entry) in dataset.records().iter().zip(report.entries()) {
        if record.example_id() != entry.example_id {
            return Err(Error::ReportMismatch {
                reason: format!(
                    "row order differs: dataset {:?} vs report {:?}",
                    record.example_id(),
                    entry.example_id
                ),
            });
        }
    }
    Ok(())
}

/// Ids of the top-q% scored records among those predicted negative.
///
/// The selected count is `ceil(q/100 * n_negatives)`; ties are broken by
/// descending score then ascending id, so the selection is deterministic.
/// Errors when no record is predicted negative.
pub fn select_uncertain_negatives<F: Real>(
    dataset: &EnsembleDataset<F>,
    report: &UncertaintyReport<F>,
    cfg: &TriageConfig<F>,
) -> Result<BTreeSet<String>> {
    check_coverage(dataset, report)?;
    let mut negatives: Vec<(&PredictionRecord<F>, F)> = dataset
        .records()
        .iter()
        .zip(report.entries())
        .filter(|(record, _)| !record.predicted_label(&cfg.decision))
        .map(|(record, entry)| (record, entry.score))
        .collect();
    if negatives.is_empty() {
        return Err(Error::EmptyNegativeSet);
    }
    let take = selection_count(cfg.q_percent, negatives.len());
    negatives.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.example_id().cmp(b.0.example_id()))
    });
    Ok(negatives
        .into_iter()
        .take(take)
        .map(|(record, _)| record.example_id().to_owned())
        .collect())
}

/// Union of the MEAN and VAR selections at the same q. The union is not
/// capped back to q, so it is at least as large as either component.
pub fn select_union_mean_var<F: Real>(
    dataset: &EnsembleDataset<F>,
    cfg: &TriageConfig<F>,
) -> Result<BTreeSet<String>> {
    let mut selected = BTreeSet::new();
    for metric in [MetricKind::Mean, MetricKind::Var] {
        let report = score_dataset(dataset, metric, &cfg.decision, cfg.kl_mode)?;
        let sub_cfg = TriageConfig {
            metric: TriageMetric::Metric(metric),
            ..*cfg
        };
        selected.extend(select_uncertain_negatives(dataset, &report, &sub_cfg)?);
    }
    Ok(selected)
}

/// Ids flagged under the configured selection rule.
pub fn select_triage_set<F: Real>(
    dataset: &EnsembleDataset<F>,
    cfg: &TriageConfig<F>,
) -> Result<BTreeSet<String>> {
    match cfg.metric {
        TriageMetric::Metric(metric) => {
            let report = score_dataset(dataset, metric, &cfg.decision, cfg.kl_mode)?;
            select_uncertain_negatives(dataset, &report, cfg)
        }
        TriageMetric::UnionMeanVar => select_union_mean_var(dataset, cfg),
    }
}

/// Full triage accounting for one (metric, q) cell.
///
/// Found and remaining false negatives are counted independently (not
/// derived from one another), so the conservation invariant
/// `found + remaining == total` is a checked property of the
/// implementation rather than an artifact of it.
pub fn evaluate_triage<F: Real>(
    dataset: &EnsembleDataset<F>,
    cfg: &TriageConfig<F>,
) -> Result<TriageOutcome> {
    let selected = select_triage_set(dataset, cfg)?;

    let mut n_negatives = 0usize;
    let mut n_false_neg_total = 0usize;
    let mut n_false_neg_found = 0usize;
    let mut n_false_neg_remaining = 0usize;
    for record in dataset.records() {
        if record.predicted_label(&cfg.decision) {
            continue;
        }
        n_negatives += 1;
        let false_negative = record.label();
        if false_negative {
            n_false_neg_total += 1;
        }
        if selected.contains(record.example_id()) {
            if false_negative {
                n_false_neg_found += 1;
            }
        } else if false_negative {
            n_false_neg_remaining += 1;
        }
    }

    let n_uncertain = selected.len();
    let fnp = (n_uncertain > 0).then(|| n_false_neg_found as f64 / n_uncertain as f64);
    let reduction_pct = if n_false_neg_total > 0 {
        100.0 * n_false_neg_found as f64 / n_false_neg_total as f64
    } else {
        0.0
    };
    Ok(TriageOutcome {
        n_negatives,
        n_uncertain,
        n_false_neg_found,
        fnp,
        n_false_neg_total,
        n_false_neg_remaining,
        reduction_pct,
    })
}

/// Severity-level proportions among the top-theta% ranked examples.
///
/// The ranking runs over the whole dataset by default (`Population::All`);
/// pass `Population::Negatives` to rank predicted negatives only. Every
/// ranked record must carry a severity level.
pub fn severity_breakdown<F: Real>(
    dataset: &EnsembleDataset<F>,
    report: &UncertaintyReport<F>,
    theta: f64,
    population: Population,
    decision: &DecisionConfig<F>,
) -> Result<SeverityBreakdown> {
    if !(theta > 0.0 && theta <= 100.0) {
        return Err(Error::InvalidParameter(format!(
            "theta must lie in (0, 100], got {theta}"
        )));
    }
    check_coverage(dataset, report)?;

    let mut ranked: Vec<(&PredictionRecord<F>, F)> = dataset
        .records()
        .iter()
        .zip(report.entries())
        .filter(|(record, _)| match population {
            Population::All => true,
            Population::Negatives => !record.predicted_label(decision),
        })
        .map(|(record, entry)| (record, entry.score))
        .collect();
    if ranked.is_empty() {
        return Err(Error::EmptyNegativeSet);
    }
    for (record, _) in &ranked {
        if record.severity().is_none() {
            return Err(Error::MissingSeverity {
                example_id: record.example_id().to_owned(),
            });
        }
    }
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.example_id().cmp(b.0.example_id()))
    });
    let take = selection_count(theta, ranked.len());
    let mut counts = [0usize; 5];
    for (record, _) in ranked.iter().take(take) {
        counts[record.severity().unwrap() as usize] += 1;
    }
    let mut proportions = [0.0f64; 5];
    for (p, &c) in proportions.iter_mut().zip(&counts) {
        *p = c as f64 / take as f64;
    }
    Ok(SeverityBreakdown {
        theta,
        population,
        n_selected: take,
        proportions,
    })
}

/// Equal-width histogram of the report's scores over `[lo, hi]`.
///
/// Scores outside the range are clipped into the end bins, so the counts
/// always sum to the number of examples.
pub fn score_histogram<F: Real>(
    report: &UncertaintyReport<F>,
    bins: usize,
    lo: F,
    hi: F,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be >= 1".to_owned()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "histogram range must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / F::from_usize(bins).unwrap();
    for entry in report.entries() {
        let idx = ((entry.score - lo) / width)
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        lo: lo.to_f64().unwrap(),
        hi: hi.to_f64().unwrap(),
        counts,
    })
}

/// One row of the triage results table.
#[derive(Debug, Clone, Serialize)]
pub struct TriageTableRow {
    pub ensemble: String,
    pub q: f64,
    pub metric: String,
    pub fn_found: usize,
    pub n_uncertain: usize,
    /// FNP as a percentage; `None` when undefined.
    pub fnp_pct: Option<f64>,
    pub remaining: usize,
    pub reduction_pct: f64,
}

impl TriageTableRow {
    pub fn new(ensemble: &str, q: f64, metric: TriageMetric, outcome: &TriageOutcome) -> Self {
        Self {
            ensemble: ensemble.to_owned(),
            q,
            metric: metric.name().to_owned(),
            fn_found: outcome.n_false_neg_found,
            n_uncertain: outcome.n_uncertain,
            fnp_pct: outcome.fnp.map(|f| 100.0 * f),
            remaining: outcome.n_false_neg_remaining,
            reduction_pct: outcome.reduction_pct,
        }
    }
}

/// Emit the triage table: one row per (metric, q) cell.
pub fn write_triage_csv(rows: &[TriageTableRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "ensemble",
        "q",
        "metric",
        "fn_found",
        "n_uncertain",
        "fnp_pct",
        "remaining",
        "reduction_pct",
    ])
    .map_err(|e| Error::Malformed {
        line: 0,
        message: e.to_string(),
    })?;
    for row in rows {
        w.write_record([
            row.ensemble.clone(),
            row.q.to_string(),
            row.metric.clone(),
            row.fn_found.to_string(),
            row.n_uncertain.to_string(),
            row.fnp_pct.map(|v| v.to_string()).unwrap_or_default(),
            row.remaining.to_string(),
            row.reduction_pct.to_string(),
        ])
        .map_err(|e| Error::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Emit severity breakdowns: one row per (metric, theta) cell.
pub fn write_severity_csv(
    rows: &[(String, SeverityBreakdown)],
    mut writer: impl Write,
) -> Result<()> {
    writeln!(
        writer,
        "metric,theta,population,n_selected,sl0,sl1,sl2,sl3,sl4"
    )?;
    for (metric, b) in rows {
        let pop = match b.population {
            Population::All => "all",
            Population::Negatives => "negatives",
        };
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{},{}",
            metric,
            b.theta,
            pop,
            b.n_selected,
            b.proportions[0],
            b.proportions[1],
            b.proportions[2],
            b.proportions[3],
            b.proportions[4],
        )?;
    }
    Ok(())
}
