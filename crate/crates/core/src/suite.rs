//! Randomized verification of the regret/information bound chain.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cmdp::{build_random_cmdp, Policy, TabularCmdp};
use crate::error::Result;
use crate::info::{
    bound_report, build_joint, expected_kl, hard_assignment, marginal_abstract_policy, BoundReport, JointModel,
};
use crate::learner::{learn_local_search, random_abstract_policy, ConceptClassifier, Concepts, LearnConfig};
use crate::par;
use crate::rng::{derive_seed, stream_rng, streams};
use crate::solver::{soften_policy, solve, Solution, SolveOptions};

/// Margin below which an inequality counts as violated.
pub const MARGIN_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_contexts: usize,
    pub gamma: f64,
    /// Concepts used by the random and learned classifier families.
    pub n_concepts: usize,
    /// Random abstract policies tried against the marginal one per check.
    pub n_policies: usize,
}

impl Default for SizeSpec {
    fn default() -> Self {
        SizeSpec {
            n_states: 6,
            n_actions: 3,
            n_contexts: 2,
            gamma: 0.9,
            n_concepts: 3,
            n_policies: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Identity,
    Constant,
    RandomSoft,
    Learned,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Identity, Family::Constant, Family::RandomSoft, Family::Learned];
}

/// Counts of failed checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub kl: usize,
    pub mi: usize,
    pub kl_identity: usize,
    pub kl_argmin: usize,
    pub dissimilarity: usize,
    pub transfer: usize,
}

impl Violations {
    pub fn total(&self) -> usize {
        self.kl + self.mi + self.kl_identity + self.kl_argmin + self.dissimilarity + self.transfer
    }

    fn add(&mut self, o: &Violations) {
        self.kl += o.kl;
        self.mi += o.mi;
        self.kl_identity += o.kl_identity;
        self.kl_argmin += o.kl_argmin;
        self.dissimilarity += o.dissimilarity;
        self.transfer += o.transfer;
    }
}

/// Smallest margin seen per check (non-negative when every check held).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstMargins {
    pub kl: f64,
    pub mi: f64,
    pub kl_identity: f64,
    pub kl_argmin: f64,
    pub dissimilarity: f64,
    pub transfer: f64,
}

impl Default for WorstMargins {
    fn default() -> Self {
        WorstMargins {
            kl: f64::INFINITY,
            mi: f64::INFINITY,
            kl_identity: f64::INFINITY,
            kl_argmin: f64::INFINITY,
            dissimilarity: f64::INFINITY,
            transfer: f64::INFINITY,
        }
    }
}

impl WorstMargins {
    fn merge(&mut self, o: &WorstMargins) {
        self.kl = self.kl.min(o.kl);
        self.mi = self.mi.min(o.mi);
        self.kl_identity = self.kl_identity.min(o.kl_identity);
        self.kl_argmin = self.kl_argmin.min(o.kl_argmin);
        self.dissimilarity = self.dissimilarity.min(o.dissimilarity);
        self.transfer = self.transfer.min(o.transfer);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub instance: usize,
    pub family: Family,
    pub report: BoundReport,
    /// `min_pi U(pi) - F I` over the sampled abstract policies.
    pub argmin_margin: f64,
    pub violations: Violations,
    pub margins: WorstMargins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: Family,
    pub checks: usize,
    pub violations: Violations,
    pub worst_margins: WorstMargins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub n_instances: usize,
    pub size: SizeSpec,
    pub seed: u64,
    pub tampered: bool,
    pub families: Vec<FamilySummary>,
    pub violations: Violations,
    pub results: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.total() == 0
    }
}

fn random_soft(n_states: usize, n_concepts: usize, seed: u64) -> ConceptClassifier {
    let mut rng = stream_rng(seed, streams::SUITE);
    let logits = Array2::from_shape_fn((n_states, n_concepts), |_| rng.random_range(-2.0..2.0));
    ConceptClassifier::new(logits, 1.0, crate::learner::ClassifierMode::Soft).expect("finite logits")
}

/// Checks every bound for one classifier. `policy` is the reference policy
/// the joint is built from; regret is always measured against the true
/// softened optimum, so a tampered `policy` shows up as violations.
pub fn check_classifier(
    cmdp: &TabularCmdp,
    solution: &Solution,
    policy: &Policy,
    rows: &Array2<f64>,
    n_policies: usize,
    seed: u64,
) -> Result<(BoundReport, f64, Violations, WorstMargins)> {
    let joint = JointModel::from_parts(
        cmdp.p_context.clone(),
        solution.occupancy.clone(),
        rows.clone(),
        policy.probs.clone(),
        solution.f_constant,
    )?;
    let mut report = bound_report(cmdp, &joint, &solution.soft_optimal)?;
    if hard_assignment(rows).is_none() {
        // transfer bound on the hardened classifier, which has its own joint
        let hard = hardened(rows);
        let hj = JointModel::from_parts(
            cmdp.p_context.clone(),
            solution.occupancy.clone(),
            hard.clone(),
            policy.probs.clone(),
            solution.f_constant,
        )?;
        let hr = bound_report(cmdp, &hj, &solution.soft_optimal)?;
        report.transfer = hr.transfer;
        report.margins.transfer = hr.margins.transfer;
    }
    let f_mi = report.f_constant * report.conditional_mi;
    let mut argmin_margin = f64::INFINITY;
    for i in 0..n_policies {
        let pi = random_abstract_policy(
            cmdp.n_contexts,
            rows.ncols(),
            cmdp.n_actions,
            derive_seed(seed, i as u64),
        );
        let u = report.f_constant * expected_kl(&joint, &pi)?;
        argmin_margin = argmin_margin.min(u - f_mi);
    }
    let m = &report.margins;
    let margins = WorstMargins {
        kl: m.kl,
        mi: m.mi,
        kl_identity: m.kl_identity,
        kl_argmin: argmin_margin,
        dissimilarity: m.dissimilarity,
        transfer: m.transfer.unwrap_or(f64::INFINITY),
    };
    let bad = |x: f64| usize::from(x < -MARGIN_TOL);
    let violations = Violations {
        kl: bad(margins.kl),
        mi: bad(margins.mi),
        kl_identity: bad(margins.kl_identity),
        kl_argmin: bad(margins.kl_argmin),
        dissimilarity: bad(margins.dissimilarity),
        transfer: bad(margins.transfer),
    };
    Ok((report, argmin_margin, violations, margins))
}

fn hardened(rows: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(rows.dim());
    for (s, row) in rows.outer_iter().enumerate() {
        out[[s, crate::cmdp::argmax(row.iter().copied())]] = 1.0;
    }
    out
}

/// Reference policy with seeded Gaussian noise (scale `||r||_inf`) added to the
/// optimal action values before softening.
pub fn tampered_policy(cmdp: &TabularCmdp, solution: &Solution, seed: u64) -> Result<Policy> {
    let mut rng = stream_rng(seed, streams::TAMPER);
    let scale = cmdp.reward_sup_norm().max(1.0);
    let q = solution.q_values.mapv(|v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + scale * z
    });
    soften_policy(&q, solution.meta.softening)
}

fn classifier_rows(
    family: Family,
    cmdp: &TabularCmdp,
    solution: &Solution,
    size: &SizeSpec,
    seed: u64,
) -> Result<Array2<f64>> {
    let ns = cmdp.n_states;
    Ok(match family {
        Family::Identity => ConceptClassifier::identity(ns).rows(),
        Family::Constant => ConceptClassifier::constant(ns).rows(),
        Family::RandomSoft => random_soft(ns, size.n_concepts, derive_seed(seed, 1)).rows(),
        Family::Learned => {
            let cfg = LearnConfig {
                seed: derive_seed(seed, 2),
                restarts: 4,
                ..LearnConfig::default()
            };
            learn_local_search(cmdp, solution, size.n_concepts, &cfg)?.classifier.rows()
        }
    })
}

/// Verifies the bound chain on `n_instances` random environments for every
/// classifier family. With `tamper`, the joint is built from a perturbed
/// reference policy; a sound checker must then report violations.
pub fn verify_bounds_suite(n_instances: usize, size: SizeSpec, seed: u64, tamper: bool) -> Result<SuiteReport> {
    let per_instance = par::map_range(n_instances, |i| -> Result<Vec<CheckResult>> {
        let inst_seed = derive_seed(seed, i as u64);
        let cmdp = build_random_cmdp(size.n_states, size.n_actions, size.n_contexts, size.gamma, inst_seed)?;
        let solution = solve(&cmdp, &SolveOptions::default())?;
        let policy = if tamper {
            tampered_policy(&cmdp, &solution, inst_seed)?
        } else {
            solution.soft_optimal.clone()
        };
        let mut out = Vec::with_capacity(Family::ALL.len());
        for family in Family::ALL {
            let rows = classifier_rows(family, &cmdp, &solution, &size, inst_seed)?;
            let (report, argmin_margin, violations, margins) =
                check_classifier(&cmdp, &solution, &policy, &rows, size.n_policies, derive_seed(inst_seed, 3))?;
            out.push(CheckResult {
                instance: i,
                family,
                report,
                argmin_margin,
                violations,
                margins,
            });
        }
        Ok(out)
    });
    let mut results = Vec::new();
    for r in per_instance {
        results.extend(r?);
    }
    let mut total = Violations::default();
    let families = Family::ALL
        .iter()
        .map(|&family| {
            let mut v = Violations::default();
            let mut m = WorstMargins::default();
            let mut checks = 0;
            for r in results.iter().filter(|r| r.family == family) {
                v.add(&r.violations);
                m.merge(&r.margins);
                checks += 1;
            }
            total.add(&v);
            FamilySummary {
                family,
                checks,
                violations: v,
                worst_margins: m,
            }
        })
        .collect();
    Ok(SuiteReport {
        n_instances,
        size,
        seed,
        tampered: tamper,
        families,
        violations: total,
        results,
    })
}

/// Bound report for one environment and classifier under its own solution.
pub fn single_report(cmdp: &TabularCmdp, solution: &Solution, rows: &Array2<f64>) -> Result<BoundReport> {
    let joint = build_joint(cmdp, solution, rows)?;
    bound_report(cmdp, &joint, &solution.soft_optimal)
}

/// The marginal abstract policy as a convenience for callers holding rows.
pub fn marginal_for(cmdp: &TabularCmdp, solution: &Solution, rows: &Array2<f64>) -> Result<ndarray::Array3<f64>> {
    Ok(marginal_abstract_policy(&build_joint(cmdp, solution, rows)?))
}
