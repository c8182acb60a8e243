//! Trust Region Monte Carlo over concept observations.
//!
//! The agent sees only `(s_phi, reward)`. Action values are every-visit Monte
//! Carlo means per `(context, concept, action)`. Every few episodes each
//! visited row moves toward a softmax target whose temperature is tuned to an
//! entropy schedule, along the geometric path from the current row, as far as
//! a KL trust region allows.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cmdp::{default_horizon, rollout, EpisodeOptions, TabularCmdp, Termination};
use crate::curve::LearningCurve;
use crate::error::{Error, Result};
use crate::info::{entropy, kl_divergence};
use crate::rng::{sample_categorical, stream_rng, streams, StreamRng};
use crate::solver::softmax;

const ENTROPY_TOL: f64 = 1e-6;
const LAMBDA_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrmcConfig {
    pub epsilon_mc: f64,
    pub initial_entropy_frac: f64,
    pub entropy_decay: f64,
    pub entropy_floor: f64,
    pub update_period_episodes: usize,
    pub alpha_bounds: (f64, f64),
    pub episode_budget: usize,
    /// Fixed episode length; `None` uses the discount-derived default.
    pub horizon: Option<usize>,
    pub seed: u64,
}

impl Default for TrmcConfig {
    fn default() -> Self {
        TrmcConfig {
            epsilon_mc: 0.05,
            initial_entropy_frac: 0.95,
            entropy_decay: 0.95,
            entropy_floor: 0.01,
            update_period_episodes: 5,
            alpha_bounds: (1e-6, 1e6),
            episode_budget: 500,
            horizon: None,
            seed: 0,
        }
    }
}

impl TrmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.epsilon_mc >= 0.0) {
            return bad("epsilon_mc must be non-negative");
        }
        if !(self.initial_entropy_frac > 0.0 && self.initial_entropy_frac <= 1.0) {
            return bad("initial_entropy_frac must lie in (0, 1]");
        }
        if !(self.entropy_decay > 0.0 && self.entropy_decay <= 1.0) {
            return bad("entropy_decay must lie in (0, 1]");
        }
        if !(self.entropy_floor >= 0.0) {
            return bad("entropy_floor must be non-negative");
        }
        if self.update_period_episodes == 0 {
            return bad("update_period_episodes must be positive");
        }
        let (lo, hi) = self.alpha_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad("alpha bounds must satisfy 0 < min < max");
        }
        if self.horizon == Some(0) {
            return bad("horizon must be positive");
        }
        Ok(())
    }

    pub fn episode_options(&self, gamma: f64) -> EpisodeOptions {
        EpisodeOptions {
            horizon: self.horizon.unwrap_or_else(|| default_horizon(gamma)),
            termination: Termination::FixedHorizon,
        }
    }
}

/// Learner tables. All `[[c, k, a]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrmcState {
    pub q_table: Array3<f64>,
    pub visit_counts: Array3<u64>,
    pub policy: Array3<f64>,
    /// Last temperature chosen per `(c, k)`; zero before the first update.
    pub alphas: Array2<f64>,
    pub entropy_target: f64,
    pub n_updates: usize,
    /// Largest `KL(new || old)` over all row updates so far.
    pub max_kl_step: f64,
    pub config: TrmcConfig,
}

impl TrmcState {
    pub fn new(n_contexts: usize, n_concepts: usize, n_actions: usize, config: TrmcConfig) -> TrmcState {
        let mut state = TrmcState {
            q_table: Array3::zeros((n_contexts, n_concepts, n_actions)),
            visit_counts: Array3::zeros((n_contexts, n_concepts, n_actions)),
            policy: Array3::from_elem((n_contexts, n_concepts, n_actions), 1.0 / n_actions as f64),
            alphas: Array2::zeros((n_contexts, n_concepts)),
            entropy_target: 0.0,
            n_updates: 0,
            max_kl_step: 0.0,
            config,
        };
        state.entropy_target = state.scheduled_entropy(0);
        state
    }

    pub fn initial_entropy(&self) -> f64 {
        self.config.initial_entropy_frac * (self.policy.dim().2 as f64).ln()
    }

    /// `max(H_min, H_0 decay^n)`.
    pub fn scheduled_entropy(&self, n: usize) -> f64 {
        (self.initial_entropy() * self.config.entropy_decay.powi(n as i32)).max(self.config.entropy_floor)
    }

    fn row_visited(&self, c: usize, k: usize) -> bool {
        self.visit_counts.slice(s![c, k, ..]).iter().any(|&n| n > 0)
    }

    /// One round of temperature search, target softmax and trust-region step
    /// on every visited row, followed by one entropy decay.
    pub fn update_policy(&mut self) -> Result<()> {
        let (nc, nk, _) = self.policy.dim();
        for c in 0..nc {
            for k in 0..nk {
                if !self.row_visited(c, k) {
                    continue;
                }
                let q = self.q_table.slice(s![c, k, ..]).to_vec();
                let fit = temperature_search(&q, self.entropy_target, self.config.alpha_bounds);
                let target = softmax(&q, fit.alpha);
                let current = self.policy.slice(s![c, k, ..]).to_vec();
                let step = trust_region_project(&current, &target, self.config.epsilon_mc)?;
                self.max_kl_step = self.max_kl_step.max(step.kl);
                self.alphas[[c, k]] = fit.alpha;
                for (dst, v) in self.policy.slice_mut(s![c, k, ..]).iter_mut().zip(step.distribution) {
                    *dst = v;
                }
            }
        }
        self.n_updates += 1;
        self.entropy_target = self.scheduled_entropy(self.n_updates);
        Ok(())
    }
}

/// One observed step: concept, action, reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConceptStep {
    pub concept: usize,
    pub action: usize,
    pub reward: f64,
}

/// Folds every visit's discounted return into the running means.
pub fn update_q_every_visit(state: &mut TrmcState, context: usize, trajectory: &[ConceptStep], gamma: f64) {
    let mut g = 0.0;
    for step in trajectory.iter().rev() {
        g = step.reward + gamma * g;
        let idx = [context, step.concept, step.action];
        state.visit_counts[idx] += 1;
        let n = state.visit_counts[idx] as f64;
        state.q_table[idx] += (g - state.q_table[idx]) / n;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub alpha: f64,
    pub entropy: f64,
    /// Whether the target entropy was met within tolerance.
    pub attained: bool,
}

fn softmax_entropy(q: &[f64], alpha: f64) -> f64 {
    entropy(&softmax(q, alpha))
}

/// Temperature `alpha` such that `softmax(q / alpha)` has the target entropy,
/// by bisection on `ln alpha`. Targets outside the reachable range clamp to
/// the nearer bound.
pub fn temperature_search(q_row: &[f64], entropy_target: f64, alpha_bounds: (f64, f64)) -> TemperatureFit {
    let (lo, hi) = alpha_bounds;
    let fit = |alpha: f64| {
        let h = softmax_entropy(q_row, alpha);
        TemperatureFit {
            alpha,
            entropy: h,
            attained: (h - entropy_target).abs() <= ENTROPY_TOL,
        }
    };
    let h_hi = softmax_entropy(q_row, hi);
    if entropy_target >= h_hi {
        return fit(hi);
    }
    let h_lo = softmax_entropy(q_row, lo);
    if entropy_target <= h_lo {
        return fit(lo);
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let h = softmax_entropy(q_row, mid.exp());
        if (h - entropy_target).abs() <= 1e-12 {
            return fit(mid.exp());
        }
        if h < entropy_target {
            a = mid;
        } else {
            b = mid;
        }
    }
    fit((0.5 * (a + b)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub distribution: Vec<f64>,
    pub lambda: f64,
    /// `KL(distribution || current)`
    pub kl: f64,
}

fn geometric_mix(log_cur: &[f64], log_tgt: &[f64], lambda: f64) -> Vec<f64> {
    let logits: Vec<f64> = log_cur
        .iter()
        .zip(log_tgt)
        .map(|(c, t)| (1.0 - lambda) * c + lambda * t)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total).max(f64::MIN_POSITIVE)).collect()
}

/// Largest step `lambda` along `p ∝ current^(1-lambda) target^lambda` keeping
/// `KL(p || current) <= epsilon_mc`.
pub fn trust_region_project(current: &[f64], target: &[f64], epsilon_mc: f64) -> Result<Projection> {
    if current.len() != target.len() {
        return Err(Error::DimensionMismatch("trust region rows differ in length".into()));
    }
    for row in [current, target] {
        if let Some(i) = row.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::SupportViolation { index: i, p: row[i] });
        }
    }
    let log_cur: Vec<f64> = current.iter().map(|p| p.ln()).collect();
    let log_tgt: Vec<f64> = target.iter().map(|p| p.ln()).collect();
    let kl_at = |lambda: f64| {
        let p = geometric_mix(&log_cur, &log_tgt, lambda);
        let kl = kl_divergence(&p, current).expect("full support");
        (p, kl)
    };
    if epsilon_mc <= 0.0 {
        return Ok(Projection {
            distribution: current.to_vec(),
            lambda: 0.0,
            kl: 0.0,
        });
    }
    let full = kl_divergence(target, current)?;
    if full <= epsilon_mc {
        return Ok(Projection {
            distribution: target.to_vec(),
            lambda: 1.0,
            kl: full,
        });
    }
    let (mut a, mut b) = (0.0, 1.0);
    while b - a > LAMBDA_TOL {
        let mid = 0.5 * (a + b);
        if kl_at(mid).1 <= epsilon_mc {
            a = mid;
        } else {
            b = mid;
        }
    }
    let (distribution, kl) = kl_at(a);
    Ok(Projection {
        distribution,
        lambda: a,
        kl,
    })
}

/// Hard concept index per state.
pub fn hard_assignment_checked(assignment: &[usize], cmdp: &TabularCmdp, n_concepts: usize) -> Result<()> {
    if assignment.len() != cmdp.n_states {
        return Err(Error::DimensionMismatch(format!(
            "classifier covers {} states, environment has {}",
            assignment.len(),
            cmdp.n_states
        )));
    }
    if let Some(&k) = assignment.iter().find(|&&k| k >= n_concepts) {
        return Err(Error::IndexOutOfRange {
            what: "concept",
            index: k,
            size: n_concepts,
        });
    }
    Ok(())
}

/// Runs one episode under the current abstract policy and folds it into the
/// tables. Returns the context, discounted return and length.
pub fn trmc_episode(
    cmdp: &TabularCmdp,
    assignment: &[usize],
    state: &mut TrmcState,
    opts: EpisodeOptions,
    rng: &mut StreamRng,
) -> (usize, f64, usize) {
    let context = cmdp.sample_context(rng);
    let policy = &state.policy;
    let steps = rollout(cmdp, context, opts, rng, |s, rng| {
        let row = policy.slice(s![context, assignment[s], ..]);
        sample_categorical(rng, row.as_slice().expect("contiguous"))
    });
    let observed: Vec<ConceptStep> = steps
        .iter()
        .map(|st| ConceptStep {
            concept: assignment[st.state],
            action: st.action,
            reward: st.reward,
        })
        .collect();
    update_q_every_visit(state, context, &observed, cmdp.gamma);
    let ret = crate::cmdp::discounted_return(steps.iter().map(|s| s.reward), cmdp.gamma);
    (context, ret, steps.len())
}

/// Trust Region Monte Carlo with a hard classifier given as a per-state
/// concept assignment.
pub fn run_trmc(
    cmdp: &TabularCmdp,
    assignment: &[usize],
    n_concepts: usize,
    config: &TrmcConfig,
) -> Result<(TrmcState, LearningCurve)> {
    config.validate()?;
    hard_assignment_checked(assignment, cmdp, n_concepts)?;
    let mut state = TrmcState::new(cmdp.n_contexts, n_concepts, cmdp.n_actions, config.clone());
    let mut curve = LearningCurve::new(config.seed);
    let opts = config.episode_options(cmdp.gamma);
    let mut rng = stream_rng(config.seed, streams::CONTROL);
    for episode in 0..config.episode_budget {
        let (context, ret, steps) = trmc_episode(cmdp, assignment, &mut state, opts, &mut rng);
        curve.push(context, ret, steps);
        if (episode + 1) % config.update_period_episodes == 0 {
            state.update_policy()?;
        }
    }
    Ok((state, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{build_rental_car, rental_car_partition, Labels};
    use ndarray::{Array1, Array4};
    use proptest::prelude::*;

    fn bandit() -> TabularCmdp {
        TabularCmdp::new(
            0.0,
            Array4::ones((1, 1, 2, 1)),
            Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).unwrap(),
            Array1::ones(1),
            Array2::ones((1, 1)),
            Labels::default(),
        )
        .unwrap()
    }

    #[test]
    fn bandit_learns_best_arm() {
        let cfg = TrmcConfig {
            episode_budget: 200,
            ..TrmcConfig::default()
        };
        let (state, curve) = run_trmc(&bandit(), &[0], 1, &cfg).unwrap();
        assert!(state.policy[[0, 0, 0]] >= 0.9, "{}", state.policy[[0, 0, 0]]);
        assert_eq!(curve.len(), 200);
        assert!(state.max_kl_step <= cfg.epsilon_mc + 1e-6);
    }

    #[test]
    fn zero_budget_is_noop() {
        let cfg = TrmcConfig {
            episode_budget: 0,
            ..TrmcConfig::default()
        };
        let (state, curve) = run_trmc(&bandit(), &[0], 1, &cfg).unwrap();
        assert!(curve.is_empty());
        assert!(state.policy.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn rental_car_with_partition_reaches_optimum() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let cfg = TrmcConfig {
            episode_budget: 1000,
            ..TrmcConfig::default()
        };
        let (state, _) = run_trmc(&m, &rental_car_partition(), 2, &cfg).unwrap();
        let mut value = 0.0;
        for c in 0..2 {
            for s in 0..4 {
                let k = rental_car_partition()[s];
                for a in 0..2 {
                    value += 0.125 * state.policy[[c, k, a]] * m.rewards[[c, s, a]];
                }
            }
        }
        assert!(value >= 0.99, "{value}");
    }

    #[test]
    fn every_visit_examples() {
        let mut st = TrmcState::new(1, 1, 2, TrmcConfig::default());
        update_q_every_visit(&mut st, 0, &[ConceptStep { concept: 0, action: 0, reward: 1.0 }], 0.9);
        assert_eq!((st.q_table[[0, 0, 0]], st.visit_counts[[0, 0, 0]]), (1.0, 1));
        update_q_every_visit(&mut st, 0, &[ConceptStep { concept: 0, action: 0, reward: 0.0 }], 0.9);
        assert_eq!((st.q_table[[0, 0, 0]], st.visit_counts[[0, 0, 0]]), (0.5, 2));

        let mut st = TrmcState::new(1, 2, 1, TrmcConfig::default());
        let traj = [
            ConceptStep { concept: 0, action: 0, reward: 0.0 },
            ConceptStep { concept: 1, action: 0, reward: 1.0 },
        ];
        update_q_every_visit(&mut st, 0, &traj, 0.5);
        assert_eq!(st.q_table[[0, 0, 0]], 0.5);
        assert_eq!(st.q_table[[0, 1, 0]], 1.0);
    }

    #[test]
    fn temperature_search_examples() {
        let flat = temperature_search(&[0.3, 0.3, 0.3], 3f64.ln(), (1e-3, 1e3));
        assert_eq!(flat.alpha, 1e3);
        assert!(flat.attained);
        assert!(!temperature_search(&[0.3, 0.3, 0.3], 0.5, (1e-3, 1e3)).attained);

        let target = entropy(&softmax(&[1.0, 0.0], 1.0));
        assert!((target - 0.5822).abs() < 1e-4);
        let fit = temperature_search(&[1.0, 0.0], target, (1e-6, 1e6));
        assert!(fit.attained);
        assert!((fit.alpha - 1.0).abs() < 1e-5, "{}", fit.alpha);

        let zero = temperature_search(&[1.0, 0.0], 0.0, (1e-2, 1e2));
        assert_eq!(zero.alpha, 1e-2);
        assert!(zero.entropy > 0.0);
    }

    #[test]
    fn trust_region_examples() {
        let cur = [0.5, 0.5];
        let tgt = [0.9, 0.1];
        assert_eq!(trust_region_project(&cur, &tgt, 0.0).unwrap().distribution, cur.to_vec());
        let near = [0.55, 0.45];
        let p = trust_region_project(&cur, &near, 0.05).unwrap();
        assert_eq!((p.distribution, p.lambda), (near.to_vec(), 1.0));
        let p = trust_region_project(&cur, &tgt, 0.05).unwrap();
        assert!((p.kl - 0.05).abs() < 1e-6, "{}", p.kl);
        assert!(p.lambda > 0.0 && p.lambda < 1.0);
        assert!(trust_region_project(&[1.0, 0.0], &tgt, 0.05).is_err());
    }

    #[test]
    fn entropy_ratchet_is_exact() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let cfg = TrmcConfig {
            episode_budget: 400,
            ..TrmcConfig::default()
        };
        let (state, _) = run_trmc(&m, &rental_car_partition(), 2, &cfg).unwrap();
        assert_eq!(state.n_updates, 80);
        let expected = (0.95 * 2f64.ln() * 0.95f64.powi(80)).max(0.01);
        assert!((state.entropy_target - expected).abs() <= 1e-14 * expected);
    }

    #[test]
    fn runs_are_deterministic() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let cfg = TrmcConfig {
            episode_budget: 100,
            seed: 9,
            ..TrmcConfig::default()
        };
        let a = run_trmc(&m, &rental_car_partition(), 2, &cfg).unwrap();
        let b = run_trmc(&m, &rental_car_partition(), 2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn projection_respects_trust_region(
            a in 0.01f64..0.99, b in 0.01f64..0.99, eps in 0.0f64..0.5
        ) {
            let cur = [a, 1.0 - a];
            let tgt = [b, 1.0 - b];
            let p = trust_region_project(&cur, &tgt, eps).unwrap();
            prop_assert!(p.kl <= eps + 1e-6);
            prop_assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.distribution.iter().all(|&x| x > 0.0));
        }
    }
}
