//! Train-to-test transfer experiments and transfer metrics.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cmdp::TabularCmdp;
use crate::control::{run_baseline_mc, run_prior_guided, ControlConfig};
use crate::curve::LearningCurve;
use crate::error::{Error, Result};
use crate::info::{
    bound_report, build_joint, concept_diagnostics, transfer_bound, lift_abstract_policy, marginal_abstract_policy,
    BoundReport, ConceptDiagnostics, Witness,
};
use crate::learner::{
    abstract_policy_seed, baseline_context_free, baseline_likelihood, collect_triples, learn, objective,
    random_abstract_policy, ConceptClassifier, Concepts, LearnConfig, LearnMethod,
};
use crate::par;
use crate::rng::derive_seed;
use crate::solver::{regret_against, solve, Solution, SolveOptions};
use crate::trmc::{run_trmc, TrmcConfig};

/// Mean and population standard error of several aligned curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub n_seeds: usize,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// Aligns curves on episode index (truncating to the shortest) and reduces
/// them to mean and `std / sqrt(n)`.
pub fn summarize_curves(curves: &[LearningCurve]) -> CurveSummary {
    let n = curves.len();
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    let mut mean = vec![0.0; len];
    let mut std_err = vec![0.0; len];
    for i in 0..len {
        let xs: Vec<f64> = curves.iter().map(|c| c.records[i].ret).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        mean[i] = m;
        std_err[i] = (var / n as f64).sqrt();
    }
    CurveSummary {
        n_seeds: n,
        mean,
        std_err,
    }
}

/// Trailing moving average over up to `window` points.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TimeToThreshold {
    Reached {
        ratio: f64,
        baseline_episodes: usize,
        treatment_episodes: usize,
    },
    NotReached {
        baseline_episodes: Option<usize>,
        treatment_episodes: Option<usize>,
    },
}

impl TimeToThreshold {
    pub fn ratio(&self) -> Option<f64> {
        match self {
            TimeToThreshold::Reached { ratio, .. } => Some(*ratio),
            TimeToThreshold::NotReached { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricWindows {
    /// Episodes averaged for the jumpstart.
    pub jumpstart: usize,
    /// Final points averaged for the asymptotic gap.
    pub asymptotic: usize,
    /// Trailing average applied before threshold crossing is detected; only
    /// full windows count as crossings.
    pub smoothing: usize,
}

impl Default for MetricWindows {
    fn default() -> Self {
        MetricWindows {
            jumpstart: 5,
            asymptotic: 10,
            smoothing: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub fraction: f64,
    pub threshold: f64,
    pub result: TimeToThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMetrics {
    /// `mean(treatment first E0) - mean(baseline first E0)`
    pub jumpstart: f64,
    /// `mean(baseline last Ea) - mean(treatment last Ea)`; positive means the treatment ends worse.
    pub asymptotic_gap: f64,
    pub time_to_threshold: Vec<ThresholdResult>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Episodes until the smoothed curve first reaches `threshold`, counting only
/// points whose trailing window is full.
fn first_reaching(smoothed: &[f64], threshold: f64, window: usize) -> Option<usize> {
    let skip = window.max(1) - 1;
    smoothed
        .iter()
        .enumerate()
        .skip(skip)
        .find(|(_, &v)| v >= threshold)
        .map(|(i, _)| i + 1)
}

/// Jumpstart, asymptotic gap and time-to-threshold ratios between two mean
/// curves. Thresholds are fractions of the smoothed baseline maximum.
pub fn transfer_metrics(
    baseline: &[f64],
    treatment: &[f64],
    thresholds: &[f64],
    windows: MetricWindows,
) -> Result<TransferMetrics> {
    if baseline.len() != treatment.len() {
        return Err(Error::DimensionMismatch(format!(
            "curves have lengths {} and {}",
            baseline.len(),
            treatment.len()
        )));
    }
    let n = baseline.len();
    if n == 0 || windows.jumpstart == 0 || windows.asymptotic == 0 {
        return Err(Error::InvalidArgument("curves and windows must be non-empty".into()));
    }
    let e0 = windows.jumpstart.min(n);
    let ea = windows.asymptotic.min(n);
    let jumpstart = mean(&treatment[..e0]) - mean(&baseline[..e0]);
    let asymptotic_gap = mean(&baseline[n - ea..]) - mean(&treatment[n - ea..]);
    let sb = smooth(baseline, windows.smoothing);
    let st = smooth(treatment, windows.smoothing);
    let max = sb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let time_to_threshold = thresholds
        .iter()
        .map(|&fraction| {
            let threshold = fraction * max;
            let w = windows.smoothing.min(n);
            let b = if threshold > max { None } else { first_reaching(&sb, threshold, w) };
            let t = if threshold > max { None } else { first_reaching(&st, threshold, w) };
            let result = match (b, t) {
                (Some(b), Some(t)) => TimeToThreshold::Reached {
                    ratio: b as f64 / t as f64,
                    baseline_episodes: b,
                    treatment_episodes: t,
                },
                (b, t) => TimeToThreshold::NotReached {
                    baseline_episodes: b,
                    treatment_episodes: t,
                },
            };
            ThresholdResult {
                fraction,
                threshold,
                result,
            }
        })
        .collect();
    Ok(TransferMetrics {
        jumpstart,
        asymptotic_gap,
        time_to_threshold,
    })
}

/// One-sided Welch test of `mean(a) > mean(b)`; returns the p-value. Two
/// constant samples give 0 or 1 by comparing their means.
pub fn welch_greater(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let var = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
    let (va, vb) = (var(a, ma) / na, var(b, mb) / nb);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return if ma > mb { 0.0 } else { 1.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    1.0 - dist.cdf(t)
}

/// How a concept classifier is obtained from the training environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConceptMethod {
    Exhaustive,
    Local,
    Gradient,
    Likelihood,
    ContextFree,
}

impl ConceptMethod {
    pub fn name(self) -> &'static str {
        match self {
            ConceptMethod::Exhaustive => "exhaustive",
            ConceptMethod::Local => "local",
            ConceptMethod::Gradient => "gradient",
            ConceptMethod::Likelihood => "likelihood",
            ConceptMethod::ContextFree => "context-free",
        }
    }
}

impl std::str::FromStr for ConceptMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "exhaustive" => ConceptMethod::Exhaustive,
            "local" | "local-search" | "local_search" => ConceptMethod::Local,
            "gradient" => ConceptMethod::Gradient,
            "likelihood" => ConceptMethod::Likelihood,
            "context-free" | "context_free" => ConceptMethod::ContextFree,
            other => return Err(Error::InvalidArgument(format!("unknown concept method {other:?}"))),
        })
    }
}

/// Number of training episodes behind the likelihood baseline's triples.
pub const LIKELIHOOD_EPISODES: usize = 200;

/// Fits a hard classifier on `(cmdp, solution)` with the chosen method.
pub fn fit_concepts(
    cmdp: &TabularCmdp,
    solution: &Solution,
    method: ConceptMethod,
    n_concepts: usize,
    config: &LearnConfig,
) -> Result<ConceptClassifier> {
    let classifier = match method {
        ConceptMethod::Exhaustive | ConceptMethod::Local | ConceptMethod::Gradient => {
            let cfg = LearnConfig {
                method: match method {
                    ConceptMethod::Exhaustive => LearnMethod::Exhaustive,
                    ConceptMethod::Local => LearnMethod::LocalSearch,
                    _ => LearnMethod::Gradient,
                },
                ..config.clone()
            };
            learn(cmdp, solution, n_concepts, &cfg)?.classifier
        }
        ConceptMethod::Likelihood => {
            let triples = collect_triples(cmdp, &solution.soft_optimal, LIKELIHOOD_EPISODES, config.seed)?;
            let pi = random_abstract_policy(
                cmdp.n_contexts,
                n_concepts,
                cmdp.n_actions,
                abstract_policy_seed(config.seed),
            );
            baseline_likelihood(&triples, cmdp.n_states, n_concepts, &pi, config)?.classifier
        }
        ConceptMethod::ContextFree => baseline_context_free(cmdp, solution, n_concepts, config)?.classifier,
    };
    Ok(classifier)
}

/// Regret of the lifted marginal abstract policy of `rows` on `(cmdp, solution)`,
/// measured against the softened optimal policy.
pub fn abstraction_regret(cmdp: &TabularCmdp, solution: &Solution, rows: &Array2<f64>) -> Result<f64> {
    let joint = build_joint(cmdp, solution, rows)?;
    let lifted = lift_abstract_policy(rows, &marginal_abstract_policy(&joint));
    regret_against(cmdp, &solution.soft_optimal, &lifted)
}

pub fn check_same_shape(train: &TabularCmdp, test: &TabularCmdp) -> Result<()> {
    if !train.same_shape(test) {
        return Err(Error::DimensionMismatch(format!(
            "train is {}x{}x{} (states x actions x contexts), test is {}x{}x{}",
            train.n_states, train.n_actions, train.n_contexts, test.n_states, test.n_actions, test.n_contexts
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub seed: u64,
    pub n_seeds: usize,
    pub n_concepts: usize,
    pub method: ConceptMethod,
    pub learner: LearnConfig,
    pub solver: SolveOptions,
    /// Episodes per curve; overrides the budgets inside `trmc` and `control`.
    pub episodes: usize,
    /// TRMC episodes spent building the prior before prior-guided control starts.
    pub warmup_episodes: usize,
    /// Starting exploration rate of the prior-guided phase. Exploration there
    /// samples from the prior, so it needs far less than the raw baseline.
    pub guided_epsilon_start: f64,
    /// Initial log-prior weight of the prior-guided phase.
    pub guided_kappa: f64,
    pub trmc: TrmcConfig,
    pub control: ControlConfig,
    pub thresholds: Vec<f64>,
    pub windows: MetricWindows,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            seed: 0,
            n_seeds: 8,
            n_concepts: 2,
            method: ConceptMethod::Local,
            learner: LearnConfig::default(),
            solver: SolveOptions::default(),
            episodes: 300,
            warmup_episodes: 50,
            guided_epsilon_start: 0.2,
            guided_kappa: 3.0,
            trmc: TrmcConfig::default(),
            control: ControlConfig::default(),
            thresholds: vec![0.5, 0.8],
            windows: MetricWindows::default(),
        }
    }
}

pub const BASELINE: &str = "baseline";
pub const TRMC: &str = "trmc";
pub const PRIOR_GUIDED: &str = "prior_guided";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub seed: u64,
    pub n_seeds: usize,
    pub episodes: usize,
    pub method: ConceptMethod,
    pub n_concepts: usize,
    pub assignment: Vec<usize>,
    /// Conditional objective of the classifier on the training environment.
    pub train_objective: f64,
    pub curves: BTreeMap<String, CurveSummary>,
    /// Metrics of each treatment against the raw baseline.
    pub metrics: BTreeMap<String, TransferMetrics>,
    /// Bound chain of the training classifier on the test environment.
    pub bound_report: BoundReport,
    pub transfer: (f64, Witness),
    /// Concept entropy and concept/context information on the training joint.
    pub diagnostics: ConceptDiagnostics,
    #[serde(skip)]
    pub seed_curves: BTreeMap<String, Vec<LearningCurve>>,
}

/// Solve train, learn concepts, then on test compare raw Monte Carlo control
/// against TRMC over the concepts and against prior-guided control whose
/// prior is a TRMC warm-up. Every curve spends the same number of episodes.
pub fn transfer_experiment(train: &TabularCmdp, test: &TabularCmdp, config: &TransferConfig) -> Result<TransferReport> {
    check_same_shape(train, test)?;
    if config.n_seeds == 0 || config.episodes == 0 {
        return Err(Error::InvalidArgument("n_seeds and episodes must be positive".into()));
    }
    if config.warmup_episodes > config.episodes {
        return Err(Error::InvalidArgument("warm-up exceeds the episode budget".into()));
    }
    let train_sol = solve(train, &config.solver)?;
    let test_sol = solve(test, &config.solver)?;
    let learner = LearnConfig {
        seed: derive_seed(config.seed, 0),
        ..config.learner.clone()
    };
    let classifier = fit_concepts(train, &train_sol, config.method, config.n_concepts, &learner)?;
    let rows = classifier.rows();
    let assignment = classifier.assignment();
    let train_objective = objective(train, &train_sol, &classifier)?;
    let diagnostics = concept_diagnostics(&build_joint(train, &train_sol, &rows)?);
    let test_joint = build_joint(test, &test_sol, &rows)?;
    let bounds = bound_report(test, &test_joint, &test_sol.soft_optimal)?;
    let transfer = transfer_bound(&test_joint)?;

    let nk = classifier.n_concepts;
    let runs = par::map_range(config.n_seeds, |i| -> Result<[LearningCurve; 3]> {
        let seed = derive_seed(derive_seed(config.seed, 1), i as u64);
        let control = ControlConfig {
            episode_budget: config.episodes,
            seed,
            ..config.control.clone()
        };
        let trmc = TrmcConfig {
            episode_budget: config.episodes,
            seed,
            ..config.trmc.clone()
        };
        let baseline = run_baseline_mc(test, &control)?.curve;
        let (_, trmc_curve) = run_trmc(test, &assignment, nk, &trmc)?;
        let warm = TrmcConfig {
            episode_budget: config.warmup_episodes,
            ..trmc
        };
        let (warm_state, warm_curve) = run_trmc(test, &assignment, nk, &warm)?;
        let guided_cfg = ControlConfig {
            episode_budget: config.episodes - config.warmup_episodes,
            epsilon_start: config.guided_epsilon_start,
            kappa: config.guided_kappa,
            ..control
        };
        let guided = run_prior_guided(test, &assignment, &warm_state.policy, &guided_cfg)?.curve;
        let mut combined = warm_curve.concat(&guided);
        combined.seed = seed;
        Ok([baseline, trmc_curve, combined])
    });
    let mut seed_curves: BTreeMap<String, Vec<LearningCurve>> = BTreeMap::new();
    for run in runs {
        let [b, t, g] = run?;
        seed_curves.entry(BASELINE.into()).or_default().push(b);
        seed_curves.entry(TRMC.into()).or_default().push(t);
        seed_curves.entry(PRIOR_GUIDED.into()).or_default().push(g);
    }
    let curves: BTreeMap<String, CurveSummary> =
        seed_curves.iter().map(|(k, v)| (k.clone(), summarize_curves(v))).collect();
    let mut metrics = BTreeMap::new();
    for name in [TRMC, PRIOR_GUIDED] {
        metrics.insert(
            name.to_string(),
            transfer_metrics(&curves[BASELINE].mean, &curves[name].mean, &config.thresholds, config.windows)?,
        );
    }
    Ok(TransferReport {
        seed: config.seed,
        n_seeds: config.n_seeds,
        episodes: config.episodes,
        method: config.method,
        n_concepts: nk,
        assignment,
        train_objective,
        curves,
        metrics,
        bound_report: bounds,
        transfer,
        diagnostics,
        seed_curves,
    })
}
