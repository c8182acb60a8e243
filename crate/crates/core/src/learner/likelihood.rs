//! Maximum-likelihood classifier fitting against a fixed abstract policy.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::gradient::{fit_factored, Smooth};
use super::search::check_n_concepts;
use super::{one_hot, ConceptClassifier, LearnConfig};
use crate::cmdp::{rollout, EpisodeOptions, Policy, TabularCmdp};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, sample_categorical, stream_rng, streams, uniform_simplex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub context: usize,
    pub state: usize,
    pub action: usize,
}

/// `(c, s, a)` triples from `n_episodes` rollouts of `policy`, contexts drawn
/// from `p_C`.
pub fn collect_triples(cmdp: &TabularCmdp, policy: &Policy, n_episodes: usize, seed: u64) -> Result<Vec<Triple>> {
    policy.check_against(cmdp)?;
    let opts = EpisodeOptions::for_gamma(cmdp.gamma);
    let mut rng = stream_rng(seed, streams::TRIPLES);
    let mut out = Vec::new();
    for _ in 0..n_episodes {
        let context = cmdp.sample_context(&mut rng);
        let steps = rollout(cmdp, context, opts, &mut rng, |s, rng| {
            sample_categorical(rng, policy.row(context, s).as_slice().expect("contiguous"))
        });
        out.extend(steps.iter().map(|st| Triple {
            context,
            state: st.state,
            action: st.action,
        }));
    }
    Ok(out)
}

/// Abstract policy `[[c, k, a]]` with rows uniform on the simplex.
pub fn random_abstract_policy(n_contexts: usize, n_concepts: usize, n_actions: usize, seed: u64) -> Array3<f64> {
    let mut rng = stream_rng(seed, streams::ABSTRACT_POLICY);
    let mut out = Array3::zeros((n_contexts, n_concepts, n_actions));
    for c in 0..n_contexts {
        for k in 0..n_concepts {
            for (a, p) in uniform_simplex(&mut rng, n_actions).into_iter().enumerate() {
                out[[c, k, a]] = p;
            }
        }
    }
    out
}

/// `sum_i ln sum_k phi(k|s_i) pi_phi(a_i|k,c_i)`.
pub fn log_likelihood(triples: &[Triple], classifier_rows: &Array2<f64>, abstract_policy: &Array3<f64>) -> f64 {
    triples
        .iter()
        .map(|t| {
            let p: f64 = (0..classifier_rows.ncols())
                .map(|k| classifier_rows[[t.state, k]] * abstract_policy[[t.context, k, t.action]])
                .sum();
            p.ln()
        })
        .sum()
}

/// Negative mean log-likelihood over aggregated `(c, s, a)` counts.
struct NegLogLikelihood {
    counts: Array3<f64>,
    total: f64,
    policy: Array3<f64>,
}

impl NegLogLikelihood {
    fn predictions(&self, rows: &Array2<f64>) -> Array3<f64> {
        let (nc, ns, na) = self.counts.dim();
        Array3::from_shape_fn((nc, ns, na), |(c, s, a)| {
            if self.counts[[c, s, a]] == 0.0 {
                return 1.0;
            }
            (0..rows.ncols()).map(|k| rows[[s, k]] * self.policy[[c, k, a]]).sum()
        })
    }
}

impl Smooth for NegLogLikelihood {
    fn value(&self, rows: &Array2<f64>) -> f64 {
        let pred = self.predictions(rows);
        -self.counts.iter().zip(pred.iter()).map(|(&n, &p)| if n > 0.0 { n * p.ln() } else { 0.0 }).sum::<f64>()
            / self.total
    }

    fn value_and_gradient(&self, rows: &Array2<f64>) -> (f64, Array2<f64>) {
        let pred = self.predictions(rows);
        let (nc, ns, na) = self.counts.dim();
        let mut grad = Array2::zeros(rows.dim());
        let mut value = 0.0;
        for c in 0..nc {
            for s in 0..ns {
                for a in 0..na {
                    let n = self.counts[[c, s, a]];
                    if n == 0.0 {
                        continue;
                    }
                    let p = pred[[c, s, a]];
                    value -= n * p.ln();
                    for k in 0..rows.ncols() {
                        grad[[s, k]] -= n * self.policy[[c, k, a]] / p;
                    }
                }
            }
        }
        (value / self.total, grad / self.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRun {
    /// Argmax-hardened classifier.
    pub classifier: ConceptClassifier,
    pub soft: ConceptClassifier,
    /// Total log-likelihood of the hardened classifier.
    pub log_likelihood: f64,
    pub soft_log_likelihood: f64,
}

/// Gradient ascent on classifier logits maximizing the likelihood of
/// `triples` under `Pr(a|s,c) = sum_k phi(k|s) pi_phi(a|k,c)` with `pi_phi` fixed.
pub fn baseline_likelihood(
    triples: &[Triple],
    n_states: usize,
    n_concepts: usize,
    abstract_policy: &Array3<f64>,
    config: &LearnConfig,
) -> Result<LikelihoodRun> {
    check_n_concepts(n_concepts)?;
    if triples.is_empty() {
        return Err(Error::InvalidArgument("no triples to fit".into()));
    }
    let (nc, nk, na) = abstract_policy.dim();
    if nk != n_concepts {
        return Err(Error::DimensionMismatch(format!(
            "abstract policy has {nk} concepts, expected {n_concepts}"
        )));
    }
    let mut counts = Array3::zeros((nc, n_states, na));
    for t in triples {
        if t.context >= nc || t.state >= n_states || t.action >= na {
            return Err(Error::IndexOutOfRange {
                what: "triple",
                index: t.state,
                size: n_states,
            });
        }
        counts[[t.context, t.state, t.action]] += 1.0;
    }
    let loss = NegLogLikelihood {
        counts,
        total: triples.len() as f64,
        policy: abstract_policy.clone(),
    };
    let run = fit_factored(&loss, n_states, &[n_concepts], config)?;
    let soft = run.soft.factors[0].clone();
    let classifier = run.classifier.factors[0].clone();
    let hard_ll = log_likelihood(triples, &one_hot(&classifier.assignment(), n_concepts), abstract_policy);
    let soft_log_likelihood = log_likelihood(triples, &soft.soft_view(), abstract_policy);
    Ok(LikelihoodRun {
        classifier,
        soft,
        log_likelihood: hard_ll,
        soft_log_likelihood,
    })
}

/// Seed for the random abstract policy paired with a learner seed.
pub fn abstract_policy_seed(seed: u64) -> u64 {
    derive_seed(seed, 0xab57)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::build_rental_car;
    use crate::learner::{learn_gradient, Concepts};
    use crate::info::{lift_abstract_policy, marginal_abstract_policy, build_joint};
    use crate::solver::{regret_against, solve, SolveOptions};

    #[test]
    fn identity_with_true_policy_saturates() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        let triples = collect_triples(&m, &sol.soft_optimal, 200, 3).unwrap();
        let id = ConceptClassifier::identity(4).rows();
        let pi = sol.soft_optimal.probs.clone();
        let direct: f64 = triples.iter().map(|t| pi[[t.context, t.state, t.action]].ln()).sum();
        assert!((log_likelihood(&triples, &id, &pi) - direct).abs() < 1e-9);
    }

    #[test]
    fn uniform_policy_is_classifier_independent() {
        let triples: Vec<Triple> = (0..10)
            .map(|i| Triple {
                context: i % 2,
                state: i % 4,
                action: i % 2,
            })
            .collect();
        let uniform = Array3::from_elem((2, 3, 2), 0.5);
        for rows in [ConceptClassifier::identity(4).rows(), ConceptClassifier::uniform_soft(4, 3).rows()] {
            let r = if rows.ncols() == 3 { rows } else { Array2::from_shape_fn((4, 3), |(s, k)| if s % 3 == k { 1.0 } else { 0.0 }) };
            assert!((log_likelihood(&triples, &r, &uniform) + 10.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_fit_is_deterministic_and_improves() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        let triples = collect_triples(&m, &sol.soft_optimal, 100, 1).unwrap();
        let pi = random_abstract_policy(2, 2, 2, 5);
        let cfg = LearnConfig { max_iters: 200, ..LearnConfig::default() };
        let a = baseline_likelihood(&triples, 4, 2, &pi, &cfg).unwrap();
        let b = baseline_likelihood(&triples, 4, 2, &pi, &cfg).unwrap();
        assert_eq!(a, b);
        let start = log_likelihood(&triples, &ConceptClassifier::uniform_soft(4, 2).rows(), &pi);
        assert!(a.soft_log_likelihood >= start);
        assert!(baseline_likelihood(&[], 4, 2, &pi, &cfg).is_err());
    }

    #[test]
    fn likelihood_metric_transfers_worse_than_information_metric() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        let regret_of = |rows: &Array2<f64>| {
            let joint = build_joint(&m, &sol, rows).unwrap();
            let lifted = lift_abstract_policy(rows, &marginal_abstract_policy(&joint));
            regret_against(&m, &sol.soft_optimal, &lifted).unwrap()
        };
        let (mut ml, mut info) = (0.0, 0.0);
        for seed in 0..8 {
            let cfg = LearnConfig { seed, ..LearnConfig::default() };
            let triples = collect_triples(&m, &sol.soft_optimal, 200, seed).unwrap();
            let pi = random_abstract_policy(2, 2, 2, abstract_policy_seed(seed));
            ml += regret_of(&baseline_likelihood(&triples, 4, 2, &pi, &cfg).unwrap().classifier.rows());
            info += regret_of(&learn_gradient(&m, &sol, 2, &cfg).unwrap().classifier.rows());
        }
        assert!(ml > info, "likelihood {ml} vs information {info}");
    }
}
