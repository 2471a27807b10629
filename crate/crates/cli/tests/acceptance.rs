//! Acceptance suite: the release checks for this artifact, one test per
//! criterion. Run with `--nocapture` to see one PASS line per criterion.
//!
//! C1  analytic ordering delta_mean > delta_var > 0 on >= 1000 random
//!     admissible triples, zero failures, under 1 second
//! C2  Monte Carlo misranking: p_mean <= p_var on the default triple at
//!     n in {5,10,20,50}, margin >= 3 combined SE for n >= 10, under 60 s
//! C3  bound decay: log-log slope of p_mean vs n is <= -0.5 and p_mean
//!     drops at least 5x from n=5 to n=100
//! C4  infinite-limit agreement between MEAN and VAR orderings >= 0.99
//! C5  Chebyshev soundness: p_mean <= bound_mean + 3 SE wherever the
//!     bound is nonvacuous
//! C6  entropy and margin rankings identical at tau = 0.5 on 1000 random
//!     datasets with distinct ensemble outputs
//! C7  triage accounting matches an independent brute-force oracle
//!     exactly on 1000 random instances
//! C8  found + remaining = total false negatives on 10^4 fuzzed instances
//! C9  the MEAN+VAR union finds at least as many false negatives as
//!     either component on 10^4 fuzzed instances
//! C10 method-of-moments recovers B(3,7) within 10% per parameter from
//!     10^4 draws on >= 19 of 20 seeds
//! C11 `verify-theory` reports are byte-identical across reruns and
//!     across different --threads values

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use et_core::beta::{
    corollary_check, fit_beta, pairwise_theory, simulate_misranking, BetaEnsembleSpec, BetaSampler,
    MisrankEstimate,
};
use et_core::data::{DecisionConfig, EnsembleDataset, PredictionRecord, ValidationOptions};
use et_core::metrics::{score_dataset, score_record, KlMode, MetricKind};
use et_core::triage::{evaluate_triage, TriageConfig, TriageMetric, TriageOutcome};

const TRIALS: u64 = 100_000;
const SEED: u64 = 0xACCE97;

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn no_consistency() -> ValidationOptions {
    ValidationOptions {
        check_severity_consistency: false,
    }
}

/// Default-triple estimates shared by C2 and C5, with the time the
/// simulation took.
fn default_grid_estimates() -> &'static (Vec<MisrankEstimate<f64>>, Duration) {
    static SIM: OnceLock<(Vec<MisrankEstimate<f64>>, Duration)> = OnceLock::new();
    SIM.get_or_init(|| {
        let spec_i = BetaEnsembleSpec::new(2.0, 8.0, 10, TRIALS, SEED).unwrap();
        let spec_j = BetaEnsembleSpec::new(4.0, 6.0, 10, TRIALS, SEED).unwrap();
        let started = Instant::now();
        let est =
            simulate_misranking(&spec_i, &spec_j, &[5, 10, 20, 50], TRIALS, SEED, 0.5).unwrap();
        (est, started.elapsed())
    })
}

#[test]
fn c01_analytic_ordering_on_random_triples() {
    let mut rng = rng(SEED);
    let triples = 2_000;
    let started = Instant::now();
    for i in 0..triples {
        let c: f64 = rng.gen_range(0.5..40.0);
        let alpha_j = (c / 2.0) * rng.gen_range(0.01..=1.0);
        let alpha_i = alpha_j * rng.gen_range(0.01..=0.99);
        let theory = pairwise_theory(alpha_i, alpha_j, c, 10, 0.5).unwrap();
        assert!(
            theory.ordering_holds(),
            "triple {i} ({alpha_i}, {alpha_j}, {c}): delta_mean={} delta_var={}",
            theory.delta_mean,
            theory.delta_var
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!("ACCEPTANCE C1 analytic_ordering: PASS ({triples} triples, {elapsed:?})");
}

#[test]
fn c02_misranking_ordering_with_margin() {
    let (estimates, elapsed) = default_grid_estimates();
    assert!(
        *elapsed < Duration::from_secs(60),
        "simulation took {elapsed:?}"
    );
    for e in estimates {
        assert!(
            e.p_mean <= e.p_var,
            "n={}: p_mean={} > p_var={}",
            e.ensemble_size,
            e.p_mean,
            e.p_var
        );
        if e.ensemble_size >= 10 {
            let combined = (e.se_mean.powi(2) + e.se_var.powi(2)).sqrt();
            assert!(
                e.p_var - e.p_mean >= 3.0 * combined,
                "n={}: margin {} below 3 x combined SE {}",
                e.ensemble_size,
                e.p_var - e.p_mean,
                3.0 * combined
            );
        }
    }
    println!(
        "ACCEPTANCE C2 misranking_ordering: PASS (4 sizes, {} trials, {elapsed:?})",
        TRIALS
    );
}

#[test]
fn c03_p_mean_decays_with_ensemble_size() {
    // a closer pair than the default triple, so the misranking event stays
    // observable at n = 100 with 1e5 trials
    let spec_i = BetaEnsembleSpec::<f64>::new(4.5, 5.5, 10, TRIALS, SEED).unwrap();
    let spec_j = BetaEnsembleSpec::<f64>::new(5.0, 5.0, 10, TRIALS, SEED).unwrap();
    let grid = [5usize, 10, 20, 50, 100];
    let estimates = simulate_misranking(&spec_i, &spec_j, &grid, TRIALS, SEED, 0.5).unwrap();
    for e in &estimates {
        assert!(
            e.p_mean > 0.0,
            "n={}: no misranking events; grid not informative",
            e.ensemble_size
        );
    }
    let points: Vec<(f64, f64)> = estimates
        .iter()
        .map(|e| ((e.ensemble_size as f64).ln(), e.p_mean.ln()))
        .collect();
    let x_bar = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let y_bar = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let slope = points
        .iter()
        .map(|p| (p.0 - x_bar) * (p.1 - y_bar))
        .sum::<f64>()
        / points.iter().map(|p| (p.0 - x_bar).powi(2)).sum::<f64>();
    assert!(slope <= -0.5, "log-log slope {slope} not decaying");

    let first = estimates.first().unwrap().p_mean;
    let last = estimates.last().unwrap().p_mean;
    assert!(
        first >= 5.0 * last,
        "p_mean(5)={first} not 5x above p_mean(100)={last}"
    );
    println!(
        "ACCEPTANCE C3 bound_decay: PASS (slope={slope:.3}, drop={:.1}x)",
        first / last
    );
}

#[test]
fn c04_infinite_limit_agreement() {
    let est = corollary_check(2.0f64, 4.0, 10.0, 10_000, 10_000, SEED, 0.5).unwrap();
    assert!(
        est.agreement >= 0.99,
        "agreement {} below 0.99",
        est.agreement
    );
    println!(
        "ACCEPTANCE C4 corollary_agreement: PASS (agreement={} at n=10000)",
        est.agreement
    );
}

#[test]
fn c05_chebyshev_bound_soundness() {
    let (estimates, _) = default_grid_estimates();
    let mut checked = 0;
    for e in estimates {
        let theory = pairwise_theory(2.0f64, 4.0, 10.0, e.ensemble_size, 0.5).unwrap();
        if theory.bound_mean <= 1.0 {
            assert!(
                e.p_mean <= theory.bound_mean + 3.0 * e.se_mean,
                "n={}: p_mean={} exceeds bound {} + 3 SE",
                e.ensemble_size,
                e.p_mean,
                theory.bound_mean
            );
            checked += 1;
        }
    }
    assert!(checked > 0, "no nonvacuous bounds in the grid");
    println!("ACCEPTANCE C5 chebyshev_soundness: PASS ({checked} nonvacuous bounds held)");
}

/// Random dataset on a coarse probability grid whose ensemble outputs are
/// pairwise distinct AND sit at pairwise-distinct distances from tau = 0.5.
/// Both conditions are enforced on the exact rational grid values: a mirror
/// pair (means m and 1 - m) would tie under the margin and entropy metrics
/// alike, turning the ranking comparison into a comparison of how floating
/// point rounds two mathematically equal ties.
fn distinct_mean_dataset(rng: &mut ChaCha12Rng) -> EnsembleDataset<f64> {
    let k = rng.gen_range(1..=5usize);
    let n = rng.gen_range(2..50usize);
    let mut margin_keys: HashSet<u64> = HashSet::new();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let members: Vec<u32> = loop {
            let candidate: Vec<u32> = (0..k).map(|_| rng.gen_range(0..=10_000)).collect();
            let total: i64 = candidate.iter().map(|&u| u as i64).sum();
            // |mean - 1/2| as an exact integer: |2 * total - k * 10000|
            let key = (2 * total - (k as i64) * 10_000).unsigned_abs();
            if margin_keys.insert(key) {
                break candidate;
            }
        };
        let members: Vec<f64> = members.iter().map(|&u| u as f64 / 10_000.0).collect();
        records.push(
            PredictionRecord::new(format!("e{i:03}"), rng.gen::<bool>(), None, members).unwrap(),
        );
    }
    EnsembleDataset::from_records(records, &no_consistency()).unwrap()
}

#[test]
fn c06_entropy_and_margin_rank_identically() {
    let mut rng = rng(SEED ^ 0x6);
    let cfg = DecisionConfig::<f64>::default();
    let datasets = 1_000;
    for case in 0..datasets {
        let ds = distinct_mean_dataset(&mut rng);
        let by_margin = score_dataset(&ds, MetricKind::Mean, &cfg, KlMode::Full).unwrap();
        let by_entropy = score_dataset(&ds, MetricKind::Entropy, &cfg, KlMode::Full).unwrap();
        let margin_order: Vec<&str> = by_margin
            .ranked()
            .iter()
            .map(|e| e.example_id.as_str())
            .collect();
        let entropy_order: Vec<&str> = by_entropy
            .ranked()
            .iter()
            .map(|e| e.example_id.as_str())
            .collect();
        assert_eq!(
            margin_order, entropy_order,
            "case {case}: rankings diverged"
        );
    }
    println!("ACCEPTANCE C6 entropy_margin_equivalence: PASS ({datasets} datasets)");
}

/// Random triage instance; guaranteed to contain at least one predicted
/// negative at tau = 0.5.
fn random_instance(rng: &mut ChaCha12Rng, max_n: usize) -> EnsembleDataset<f64> {
    let k = rng.gen_range(2..=5usize);
    loop {
        let n = rng.gen_range(2..=max_n);
        let records: Vec<PredictionRecord<f64>> = (0..n)
            .map(|i| {
                let members: Vec<f64> = (0..k)
                    .map(|_| rng.gen_range(0..=1_000u32) as f64 / 1_000.0)
                    .collect();
                PredictionRecord::new(format!("e{i:03}"), rng.gen::<bool>(), None, members).unwrap()
            })
            .collect();
        let ds = EnsembleDataset::from_records(records, &no_consistency()).unwrap();
        let cfg = DecisionConfig::<f64>::default();
        if ds.records().iter().any(|r| !r.predicted_label(&cfg)) {
            return ds;
        }
    }
}

/// Independent re-implementation of the triage accounting: its own label
/// rule, its own sorting, selection and counting. Shares only the
/// per-record score formulas with the library.
fn brute_force_triage(
    ds: &EnsembleDataset<f64>,
    metric: TriageMetric,
    q: f64,
    cfg: &DecisionConfig<f64>,
) -> TriageOutcome {
    let tau = cfg.threshold();
    let is_negative = |r: &PredictionRecord<f64>| {
        let mean = r.members().iter().copied().sum::<f64>() / r.members().len() as f64;
        mean < tau
    };

    let pick = |kind: MetricKind| -> BTreeSet<String> {
        let mut scored: Vec<(String, f64)> = ds
            .records()
            .iter()
            .filter(|r| is_negative(r))
            .map(|r| {
                (
                    r.example_id().to_owned(),
                    score_record(r, kind, cfg, KlMode::Full).unwrap(),
                )
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let n = scored.len();
        let take = (((q / 100.0 * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n);
        scored.into_iter().take(take).map(|(id, _)| id).collect()
    };

    let selected: BTreeSet<String> = match metric {
        TriageMetric::Metric(kind) => pick(kind),
        TriageMetric::UnionMeanVar => {
            let mut set = pick(MetricKind::Mean);
            set.extend(pick(MetricKind::Var));
            set
        }
    };

    let mut n_negatives = 0;
    let mut total = 0;
    let mut found = 0;
    let mut remaining = 0;
    for r in ds.records() {
        if !is_negative(r) {
            continue;
        }
        n_negatives += 1;
        if r.label() {
            total += 1;
            if selected.contains(r.example_id()) {
                found += 1;
            } else {
                remaining += 1;
            }
        }
    }
    let n_uncertain = selected.len();
    TriageOutcome {
        n_negatives,
        n_uncertain,
        n_false_neg_found: found,
        fnp: (n_uncertain > 0).then(|| found as f64 / n_uncertain as f64),
        n_false_neg_total: total,
        n_false_neg_remaining: remaining,
        reduction_pct: if total > 0 {
            100.0 * found as f64 / total as f64
        } else {
            0.0
        },
    }
}

const TRIAGE_METRICS: [TriageMetric; 5] = [
    TriageMetric::Metric(MetricKind::Mean),
    TriageMetric::Metric(MetricKind::Entropy),
    TriageMetric::Metric(MetricKind::Var),
    TriageMetric::Metric(MetricKind::Kl),
    TriageMetric::UnionMeanVar,
];

#[test]
fn c07_triage_matches_brute_force_oracle() {
    let mut rng = rng(SEED ^ 0x7);
    let instances = 1_000;
    for case in 0..instances {
        let ds = random_instance(&mut rng, 50);
        let q = match case % 5 {
            0 => 0.0,
            1 => 100.0,
            _ => rng.gen_range(0.0..=100.0),
        };
        let metric = TRIAGE_METRICS[case % TRIAGE_METRICS.len()];
        let cfg = TriageConfig::new(q, metric, DecisionConfig::default()).unwrap();
        let ours = evaluate_triage(&ds, &cfg).unwrap();
        let oracle = brute_force_triage(&ds, metric, q, &cfg.decision);
        assert_eq!(ours, oracle, "case {case}: metric {metric} q={q}");
    }
    println!("ACCEPTANCE C7 oracle_equivalence: PASS ({instances} instances, exact)");
}

#[test]
fn c08_conservation_of_false_negatives() {
    let mut rng = rng(SEED ^ 0x8);
    let instances = 10_000;
    for case in 0..instances {
        let ds = random_instance(&mut rng, 20);
        let q = match case % 4 {
            0 => 0.0,
            1 => 100.0,
            _ => rng.gen_range(0.0..=100.0),
        };
        let metric = TRIAGE_METRICS[case % TRIAGE_METRICS.len()];
        let cfg = TriageConfig::new(q, metric, DecisionConfig::default()).unwrap();
        let out = evaluate_triage(&ds, &cfg).unwrap();
        assert_eq!(
            out.n_false_neg_found + out.n_false_neg_remaining,
            out.n_false_neg_total,
            "case {case}"
        );
    }
    println!("ACCEPTANCE C8 conservation: PASS ({instances} instances, zero violations)");
}

#[test]
fn c09_union_dominates_either_component() {
    let mut rng = rng(SEED ^ 0x9);
    let instances = 10_000;
    for case in 0..instances {
        let ds = random_instance(&mut rng, 20);
        let q = rng.gen_range(0.0..=100.0);
        let run = |metric| {
            let cfg = TriageConfig::new(q, metric, DecisionConfig::default()).unwrap();
            evaluate_triage(&ds, &cfg).unwrap()
        };
        let union = run(TriageMetric::UnionMeanVar);
        let mean = run(TriageMetric::Metric(MetricKind::Mean));
        let var = run(TriageMetric::Metric(MetricKind::Var));
        assert!(
            union.n_false_neg_found >= mean.n_false_neg_found.max(var.n_false_neg_found),
            "case {case}: union found {} vs mean {} var {}",
            union.n_false_neg_found,
            mean.n_false_neg_found,
            var.n_false_neg_found
        );
    }
    println!("ACCEPTANCE C9 union_dominance: PASS ({instances} instances, zero violations)");
}

#[test]
fn c10_method_of_moments_recovers_beta_parameters() {
    let sampler = BetaSampler::new(3.0f64, 7.0).unwrap();
    let mut passes = 0;
    for seed in 0..20u64 {
        let mut r = rng(1_000 + seed);
        let draws: Vec<f64> = (0..10_000).map(|_| sampler.sample(&mut r)).collect();
        let (alpha, beta) = fit_beta(&draws, None).unwrap();
        if (alpha - 3.0).abs() / 3.0 < 0.10 && (beta - 7.0).abs() / 7.0 < 0.10 {
            passes += 1;
        }
    }
    assert!(passes >= 19, "only {passes}/20 seeds within 10%");
    println!("ACCEPTANCE C10 beta_fitting: PASS ({passes}/20 seeds within 10%)");
}

#[test]
fn c11_verify_theory_reports_are_byte_identical() {
    let base = std::env::temp_dir().join(format!("et-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).unwrap();

    let run = |out: &PathBuf, threads: &str| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_et"))
            .args([
                "verify-theory",
                "--n-grid",
                "5,10",
                "--trials",
                "3000",
                "--corollary-n",
                "1000",
                "--corollary-trials",
                "2000",
                "--seed",
                "4242",
                "--threads",
                threads,
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    };
    let a = base.join("threads1");
    let b = base.join("threads4");
    let c = base.join("threads1-again");
    run(&a, "1");
    run(&b, "4");
    run(&c, "1");

    for name in ["report.json", "report.csv", "assertions.csv"] {
        let ra = std::fs::read(a.join(name)).unwrap();
        let rb = std::fs::read(b.join(name)).unwrap();
        let rc = std::fs::read(c.join(name)).unwrap();
        assert_eq!(ra, rb, "{name} differs between --threads 1 and 4");
        assert_eq!(ra, rc, "{name} differs between identical reruns");
    }
    println!("ACCEPTANCE C11 determinism: PASS (reports identical across reruns and threads)");
}
