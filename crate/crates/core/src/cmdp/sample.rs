use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, TabularCmdp};
use crate::error::{Error, Result};
use crate::rng::{sample_categorical, stream_rng, streams};

/// Horizon cap used by [`default_horizon`].
pub const MAX_HORIZON: usize = 10_000;
/// Discount mass below which an episode is truncated.
pub const TRUNCATION_TOL: f64 = 1e-6;

/// Smallest `T >= 1` with `gamma^T < 1e-6`, capped at 10,000.
pub fn default_horizon(gamma: f64) -> usize {
    let mut weight = 1.0;
    for t in 1..=MAX_HORIZON {
        weight *= gamma;
        if weight < TRUNCATION_TOL {
            return t;
        }
    }
    MAX_HORIZON
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Run exactly `horizon` steps.
    FixedHorizon,
    /// Stop after each step with probability `1 - gamma` (still capped at `horizon`).
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    pub horizon: usize,
    pub termination: Termination,
}

impl EpisodeOptions {
    pub fn for_gamma(gamma: f64) -> Self {
        EpisodeOptions {
            horizon: default_horizon(gamma),
            termination: Termination::FixedHorizon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub context: usize,
    pub steps: Vec<Step>,
    pub seed: u64,
}

impl Trajectory {
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        discounted_return(self.steps.iter().map(|s| s.reward), gamma)
    }
}

pub fn discounted_return<I: IntoIterator<Item = f64>>(rewards: I, gamma: f64) -> f64 {
    let mut g = 0.0;
    let mut w = 1.0;
    for r in rewards {
        g += w * r;
        w *= gamma;
    }
    g
}

impl TabularCmdp {
    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(rng, self.p_context.as_slice().expect("contiguous"))
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, context: usize, rng: &mut R) -> usize {
        let row = self.p_initial.row(context);
        sample_categorical(rng, row.as_slice().expect("contiguous"))
    }

    /// One environment transition: returns `(r(s, a, c), s')`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        context: usize,
        state: usize,
        action: usize,
        rng: &mut R,
    ) -> (f64, usize) {
        let row = self.transitions.slice(ndarray::s![context, state, action, ..]);
        let next = sample_categorical(rng, row.as_slice().expect("contiguous"));
        (self.rewards[[context, state, action]], next)
    }
}

/// Runs one episode in `context`, asking `choose(state, rng)` for each action.
pub fn rollout<R, F>(
    cmdp: &TabularCmdp,
    context: usize,
    options: EpisodeOptions,
    rng: &mut R,
    mut choose: F,
) -> Vec<Step>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut R) -> usize,
{
    let mut steps = Vec::with_capacity(options.horizon.min(1024));
    let mut state = cmdp.sample_initial(context, rng);
    for _ in 0..options.horizon {
        let action = choose(state, rng);
        let (reward, next_state) = cmdp.step(context, state, action, rng);
        steps.push(Step {
            state,
            action,
            reward,
            next_state,
        });
        state = next_state;
        if options.termination == Termination::Geometric {
            let u: f64 = rng.random();
            if u >= cmdp.gamma {
                break;
            }
        }
    }
    steps
}

/// Samples one episode of `policy` in `context`. Identical arguments give a
/// bit-identical trajectory.
pub fn sample_episode(
    cmdp: &TabularCmdp,
    policy: &Policy,
    context: usize,
    seed: u64,
    options: EpisodeOptions,
) -> Result<Trajectory> {
    cmdp.check_context(context)?;
    policy.check_against(cmdp)?;
    if options.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, streams::EPISODE);
    let steps = rollout(cmdp, context, options, &mut rng, |s, rng| {
        let row = policy.row(context, s);
        sample_categorical(rng, row.as_slice().expect("contiguous"))
    });
    Ok(Trajectory {
        context,
        steps,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{build_random_cmdp, Labels};
    use ndarray::{Array1, Array2, Array3, Array4};

    #[test]
    fn default_horizon_values() {
        // 0.9^131 = 1.0e-6 (just above), 0.9^132 = 9.0e-7
        assert_eq!(default_horizon(0.9), 132);
        assert!(0.9f64.powi(131) >= 1e-6 && 0.9f64.powi(132) < 1e-6);
        assert_eq!(default_horizon(0.0), 1);
        assert_eq!(default_horizon(0.5), 20);
        assert_eq!(default_horizon(0.999999), MAX_HORIZON);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let m = build_random_cmdp(5, 3, 2, 0.9, 11).unwrap();
        let pi = Policy::uniform(2, 5, 3);
        let opts = EpisodeOptions::for_gamma(0.9);
        let a = sample_episode(&m, &pi, 1, 99, opts).unwrap();
        let b = sample_episode(&m, &pi, 1, 99, opts).unwrap();
        assert_eq!(a, b);
        let c = sample_episode(&m, &pi, 1, 100, opts).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn absorbing_state_repeats() {
        let m = TabularCmdp::new(
            0.9,
            Array4::ones((1, 1, 2, 1)),
            Array3::zeros((1, 1, 2)),
            Array1::ones(1),
            Array2::ones((1, 1)),
            Labels::default(),
        )
        .unwrap();
        let pi = Policy::uniform(1, 1, 2);
        let opts = EpisodeOptions {
            horizon: 17,
            termination: Termination::FixedHorizon,
        };
        let t = sample_episode(&m, &pi, 0, 1, opts).unwrap();
        assert_eq!(t.steps.len(), 17);
        assert!(t.steps.iter().all(|s| s.state == 0 && s.next_state == 0));
    }

    #[test]
    fn transitions_have_positive_probability() {
        let m = build_random_cmdp(4, 2, 1, 0.8, 5).unwrap();
        let pi = Policy::uniform(1, 4, 2);
        let t = sample_episode(&m, &pi, 0, 3, EpisodeOptions::for_gamma(0.8)).unwrap();
        for s in &t.steps {
            assert!(m.transitions[[0, s.state, s.action, s.next_state]] > 0.0);
        }
    }

    #[test]
    fn bad_context_is_an_error() {
        let m = build_random_cmdp(3, 2, 2, 0.5, 1).unwrap();
        let pi = Policy::uniform(2, 3, 2);
        assert!(sample_episode(&m, &pi, 2, 0, EpisodeOptions::for_gamma(0.5)).is_err());
    }

    #[test]
    fn geometric_termination_respects_cap() {
        let m = build_random_cmdp(3, 2, 1, 0.5, 1).unwrap();
        let pi = Policy::uniform(1, 3, 2);
        let opts = EpisodeOptions {
            horizon: 50,
            termination: Termination::Geometric,
        };
        let lens: Vec<usize> = (0..200)
            .map(|seed| sample_episode(&m, &pi, 0, seed, opts).unwrap().steps.len())
            .collect();
        assert!(lens.iter().all(|&l| (1..=50).contains(&l)));
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        // expected length 1 / (1 - gamma) = 2
        assert!((mean - 2.0).abs() < 0.4, "mean length {mean}");
    }

    #[test]
    fn discounted_return_arithmetic() {
        assert_eq!(discounted_return([0.0, 1.0], 0.5), 0.5);
        assert_eq!(discounted_return([1.0, 1.0, 1.0], 0.5), 1.75);
    }
}
