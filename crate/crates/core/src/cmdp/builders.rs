use ndarray::{Array1, Array2, Array3, Array4};

use super::{Labels, TabularCmdp};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams, uniform_simplex};
use rand::Rng;

/// The car-rental example: four cars (two electric, two combustion), two
/// routes and two destination cities.
///
/// In city `c1` the short route `a1` is best for every car. In city `c2` the
/// electric cars do better on `a2` (charging point) while combustion cars keep
/// `a1`. The task is one-shot, so `gamma = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RentalCar {
    pub reward_long_route: f64,
    pub reward_short_route: f64,
}

impl Default for RentalCar {
    fn default() -> Self {
        RentalCar {
            reward_long_route: 0.5,
            reward_short_route: 1.0,
        }
    }
}

impl RentalCar {
    pub const ELECTRIC: [usize; 2] = [0, 1];
    pub const COMBUSTION: [usize; 2] = [2, 3];

    pub fn is_electric(state: usize) -> bool {
        state < 2
    }

    pub fn build(&self) -> Result<TabularCmdp> {
        build_rental_car(self.reward_long_route, self.reward_short_route)
    }
}

/// Hard assignment `[0, 0, 1, 1]`: electric cars in concept 0, combustion in 1.
pub fn rental_car_partition() -> Vec<usize> {
    vec![0, 0, 1, 1]
}

pub fn build_rental_car(reward_long_route: f64, reward_short_route: f64) -> Result<TabularCmdp> {
    if !(reward_short_route > reward_long_route) {
        return Err(Error::InvalidArgument(format!(
            "short route reward ({reward_short_route}) must exceed long route reward ({reward_long_route})"
        )));
    }
    let (nc, ns, na) = (2, 4, 2);
    let mut transitions = Array4::zeros((nc, ns, na, ns));
    let mut rewards = Array3::zeros((nc, ns, na));
    for c in 0..nc {
        for s in 0..ns {
            for a in 0..na {
                transitions[[c, s, a, s]] = 1.0;
                let best = if c == 1 && RentalCar::is_electric(s) { 1 } else { 0 };
                rewards[[c, s, a]] = if a == best {
                    reward_short_route
                } else {
                    reward_long_route
                };
            }
        }
    }
    let labels = Labels {
        states: Some(vec!["e1".into(), "e2".into(), "g1".into(), "g2".into()]),
        actions: Some(vec!["a1".into(), "a2".into()]),
        contexts: Some(vec!["c1".into(), "c2".into()]),
    };
    TabularCmdp::new(
        0.0,
        transitions,
        rewards,
        Array1::from_elem(nc, 1.0 / nc as f64),
        Array2::from_elem((nc, ns), 1.0 / ns as f64),
        labels,
    )
}

/// Random CMDP: transition rows, `p_context` and `p_initial` rows are
/// normalized exponential draws (a Dirichlet(1) sample); rewards are uniform
/// on `[-1, 1]`. Fully determined by `seed`.
pub fn build_random_cmdp(
    n_states: usize,
    n_actions: usize,
    n_contexts: usize,
    gamma: f64,
    seed: u64,
) -> Result<TabularCmdp> {
    if n_states == 0 || n_actions == 0 || n_contexts == 0 {
        return Err(Error::InvalidArgument("all counts must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, streams::CMDP_BUILD);
    let mut transitions = Array4::zeros((n_contexts, n_states, n_actions, n_states));
    let mut rewards = Array3::zeros((n_contexts, n_states, n_actions));
    for c in 0..n_contexts {
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = uniform_simplex(&mut rng, n_states);
                for (sp, p) in row.into_iter().enumerate() {
                    transitions[[c, s, a, sp]] = p;
                }
                rewards[[c, s, a]] = rng.random_range(-1.0..=1.0);
            }
        }
    }
    let p_context = Array1::from(uniform_simplex(&mut rng, n_contexts));
    let mut p_initial = Array2::zeros((n_contexts, n_states));
    for c in 0..n_contexts {
        for (s, p) in uniform_simplex(&mut rng, n_states).into_iter().enumerate() {
            p_initial[[c, s]] = p;
        }
    }
    TabularCmdp::new(gamma, transitions, rewards, p_context, p_initial, Labels::default())
}
