//! Finite contextual MDPs: the environment tables, policies, validation and
//! episode sampling.

mod builders;
mod gridworld;
mod sample;

pub use builders::{build_random_cmdp, build_rental_car, rental_car_partition, RentalCar};
pub use gridworld::{
    build_contextual_gridworld, maze_test_spec, maze_train_spec, seek_avoid_spec, GridSpec, GridTask, Heading,
};
pub use sample::{
    default_horizon, discounted_return, rollout, sample_episode, EpisodeOptions, Step,
    Termination, Trajectory,
};

use std::fmt;

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability rows to count as normalized.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub states: Option<Vec<String>>,
    pub actions: Option<Vec<String>>,
    pub contexts: Option<Vec<String>>,
}

/// A finite contextual MDP `(S, A, C, r, T, p_C, p_S0, gamma)`.
///
/// Tables are indexed context-first: `transitions[[c, s, a, s']]`,
/// `rewards[[c, s, a]]`, `p_initial[[c, s]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_contexts: usize,
    pub gamma: f64,
    pub transitions: Array4<f64>,
    pub rewards: Array3<f64>,
    pub p_context: Array1<f64>,
    pub p_initial: Array2<f64>,
    pub labels: Labels,
}

/// One broken invariant found by [`TabularCmdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape {
        table: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    EmptySet(&'static str),
    TransitionRowSum {
        context: usize,
        state: usize,
        action: usize,
        sum: f64,
    },
    NegativeTransition {
        context: usize,
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
    ContextDistributionSum {
        sum: f64,
    },
    NegativeContextProbability {
        context: usize,
        value: f64,
    },
    InitialRowSum {
        context: usize,
        sum: f64,
    },
    NegativeInitialProbability {
        context: usize,
        state: usize,
        value: f64,
    },
    NonFiniteReward {
        context: usize,
        state: usize,
        action: usize,
    },
    Discount {
        gamma: f64,
    },
    LabelCount {
        kind: &'static str,
        expected: usize,
        found: usize,
    },
}

impl Violation {
    /// Signed distance from the constraint (`1 - sum` for row sums).
    pub fn deficit(&self) -> Option<f64> {
        match self {
            Violation::TransitionRowSum { sum, .. }
            | Violation::ContextDistributionSum { sum }
            | Violation::InitialRowSum { sum, .. } => Some(1.0 - sum),
            _ => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape {
                table,
                expected,
                found,
            } => write!(f, "{table}: expected shape {expected:?}, found {found:?}"),
            Violation::EmptySet(what) => write!(f, "{what} must be non-empty"),
            Violation::TransitionRowSum {
                context,
                state,
                action,
                sum,
            } => write!(
                f,
                "transitions[c={context}][s={state}][a={action}] sums to {sum} (deficit {:.3e})",
                1.0 - sum
            ),
            Violation::NegativeTransition {
                context,
                state,
                action,
                next_state,
                value,
            } => write!(
                f,
                "transitions[c={context}][s={state}][a={action}][s'={next_state}] is negative ({value})"
            ),
            Violation::ContextDistributionSum { sum } => {
                write!(f, "p_context sums to {sum} (deficit {:.3e})", 1.0 - sum)
            }
            Violation::NegativeContextProbability { context, value } => {
                write!(f, "p_context[{context}] is negative ({value})")
            }
            Violation::InitialRowSum { context, sum } => write!(
                f,
                "p_initial[c={context}] sums to {sum} (deficit {:.3e})",
                1.0 - sum
            ),
            Violation::NegativeInitialProbability {
                context,
                state,
                value,
            } => write!(f, "p_initial[c={context}][s={state}] is negative ({value})"),
            Violation::NonFiniteReward {
                context,
                state,
                action,
            } => write!(f, "rewards[c={context}][s={state}][a={action}] is not finite"),
            Violation::Discount { gamma } => {
                write!(f, "discount not < 1 (or negative): gamma = {gamma}")
            }
            Violation::LabelCount {
                kind,
                expected,
                found,
            } => write!(f, "{kind} labels: expected {expected}, found {found}"),
        }
    }
}

fn check_distribution(row: ArrayView1<f64>) -> (f64, Option<(usize, f64)>) {
    let sum = row.sum();
    let neg = row.iter().copied().enumerate().find(|(_, v)| *v < 0.0 || !v.is_finite());
    (sum, neg)
}

impl TabularCmdp {
    /// Builds and validates a CMDP; any violation is reported as
    /// [`Error::InvalidCmdp`] listing every broken invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gamma: f64,
        transitions: Array4<f64>,
        rewards: Array3<f64>,
        p_context: Array1<f64>,
        p_initial: Array2<f64>,
        labels: Labels,
    ) -> Result<Self> {
        let (n_contexts, n_states, n_actions, _) = transitions.dim();
        let cmdp = TabularCmdp {
            n_states,
            n_actions,
            n_contexts,
            gamma,
            transitions,
            rewards,
            p_context,
            p_initial,
            labels,
        };
        cmdp.ensure_valid()?;
        Ok(cmdp)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidCmdp(msg.join("; ")))
        }
    }

    /// Lists every invariant violation; empty iff the CMDP is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (nc, ns, na) = (self.n_contexts, self.n_states, self.n_actions);
        for (what, n) in [("states", ns), ("actions", na), ("contexts", nc)] {
            if n == 0 {
                out.push(Violation::EmptySet(what));
            }
        }
        let shapes: [(&'static str, Vec<usize>, Vec<usize>); 4] = [
            ("transitions", vec![nc, ns, na, ns], self.transitions.shape().to_vec()),
            ("rewards", vec![nc, ns, na], self.rewards.shape().to_vec()),
            ("p_context", vec![nc], self.p_context.shape().to_vec()),
            ("p_initial", vec![nc, ns], self.p_initial.shape().to_vec()),
        ];
        let mut shape_ok = true;
        for (table, expected, found) in shapes {
            if expected != found {
                shape_ok = false;
                out.push(Violation::Shape {
                    table,
                    expected,
                    found,
                });
            }
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            out.push(Violation::Discount { gamma: self.gamma });
        }
        if !shape_ok {
            return out;
        }
        for c in 0..nc {
            for s in 0..ns {
                for a in 0..na {
                    let row = self.transitions.slice(ndarray::s![c, s, a, ..]);
                    let (sum, neg) = check_distribution(row);
                    if let Some((next_state, value)) = neg {
                        out.push(Violation::NegativeTransition {
                            context: c,
                            state: s,
                            action: a,
                            next_state,
                            value,
                        });
                    }
                    if !((sum - 1.0).abs() <= PROB_TOL) {
                        out.push(Violation::TransitionRowSum {
                            context: c,
                            state: s,
                            action: a,
                            sum,
                        });
                    }
                    if !self.rewards[[c, s, a]].is_finite() {
                        out.push(Violation::NonFiniteReward {
                            context: c,
                            state: s,
                            action: a,
                        });
                    }
                }
            }
            let (sum, neg) = check_distribution(self.p_initial.row(c));
            if let Some((state, value)) = neg {
                out.push(Violation::NegativeInitialProbability {
                    context: c,
                    state,
                    value,
                });
            }
            if !((sum - 1.0).abs() <= PROB_TOL) {
                out.push(Violation::InitialRowSum { context: c, sum });
            }
        }
        let (sum, neg) = check_distribution(self.p_context.view());
        if let Some((context, value)) = neg {
            out.push(Violation::NegativeContextProbability { context, value });
        }
        if !((sum - 1.0).abs() <= PROB_TOL) {
            out.push(Violation::ContextDistributionSum { sum });
        }
        for (kind, labels, expected) in [
            ("state", &self.labels.states, ns),
            ("action", &self.labels.actions, na),
            ("context", &self.labels.contexts, nc),
        ] {
            if let Some(l) = labels {
                if l.len() != expected {
                    out.push(Violation::LabelCount {
                        kind,
                        expected,
                        found: l.len(),
                    });
                }
            }
        }
        out
    }

    /// `||r||_inf`.
    pub fn reward_sup_norm(&self) -> f64 {
        self.rewards.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// `F_M = 2 ||r||_inf / (1 - gamma)^2`.
    pub fn f_constant(&self) -> f64 {
        2.0 * self.reward_sup_norm() / (1.0 - self.gamma).powi(2)
    }

    pub fn check_context(&self, context: usize) -> Result<()> {
        if context >= self.n_contexts {
            return Err(Error::IndexOutOfRange {
                what: "context",
                index: context,
                size: self.n_contexts,
            });
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &TabularCmdp) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.n_contexts == other.n_contexts
    }

    /// Keeps only the listed contexts, renormalizing `p_context`.
    pub fn restrict_contexts(&self, contexts: &[usize]) -> Result<TabularCmdp> {
        if contexts.is_empty() {
            return Err(Error::InvalidArgument("no contexts selected".into()));
        }
        for &c in contexts {
            self.check_context(c)?;
        }
        let transitions = self.transitions.select(ndarray::Axis(0), contexts);
        let rewards = self.rewards.select(ndarray::Axis(0), contexts);
        let p_initial = self.p_initial.select(ndarray::Axis(0), contexts);
        let mut p_context = self.p_context.select(ndarray::Axis(0), contexts);
        let total = p_context.sum();
        if total <= 0.0 {
            p_context.fill(1.0 / contexts.len() as f64);
        } else {
            p_context /= total;
        }
        let labels = Labels {
            contexts: self
                .labels
                .contexts
                .as_ref()
                .map(|l| contexts.iter().map(|&c| l[c].clone()).collect()),
            ..self.labels.clone()
        };
        TabularCmdp::new(self.gamma, transitions, rewards, p_context, p_initial, labels)
    }
}

/// A per-context, per-state action distribution `pi(a | s, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// `probs[[c, s, a]]`.
    pub probs: Array3<f64>,
}

impl Policy {
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let policy = Policy { probs };
        policy.check()?;
        Ok(policy)
    }

    pub fn uniform(n_contexts: usize, n_states: usize, n_actions: usize) -> Self {
        Policy {
            probs: Array3::from_elem((n_contexts, n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    /// Deterministic greedy policy; ties go to the lowest action index.
    pub fn greedy(q_values: &Array3<f64>) -> Self {
        let (nc, ns, na) = q_values.dim();
        let mut probs = Array3::zeros((nc, ns, na));
        for c in 0..nc {
            for s in 0..ns {
                let a = argmax(q_values.slice(ndarray::s![c, s, ..]).iter().copied());
                probs[[c, s, a]] = 1.0;
            }
        }
        Policy { probs }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.probs.dim()
    }

    pub fn row(&self, context: usize, state: usize) -> ArrayView1<'_, f64> {
        self.probs.slice(ndarray::s![context, state, ..])
    }

    pub fn check(&self) -> Result<()> {
        let (nc, ns, _) = self.probs.dim();
        for c in 0..nc {
            for s in 0..ns {
                let (sum, neg) = check_distribution(self.row(c, s));
                if neg.is_some() || (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "policy row (c={c}, s={s}) is not a distribution (sum {sum})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_against(&self, cmdp: &TabularCmdp) -> Result<()> {
        let expected = (cmdp.n_contexts, cmdp.n_states, cmdp.n_actions);
        if self.dims() != expected {
            return Err(Error::DimensionMismatch(format!(
                "policy has shape {:?}, environment needs {:?}",
                self.dims(),
                expected
            )));
        }
        Ok(())
    }
}

/// Index of the maximum; the first index wins ties.
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
