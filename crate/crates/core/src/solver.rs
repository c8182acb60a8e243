//! Exact per-context dynamic programming: optimal values, softened optimal
//! policies, discounted occupancy measures, policy evaluation and regret.

use ndarray::{s, Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::cmdp::{argmax, Policy, TabularCmdp};
use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::par;

/// Boltzmann temperature as a fraction of `||r||_inf` when none is given.
pub const DEFAULT_TAU_FRACTION: f64 = 0.05;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
/// Largest state count handled by the dense linear solves.
pub const MAX_DENSE_STATES: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Softening {
    Boltzmann { tau: f64 },
    EpsilonGreedy { eps: f64 },
}

/// Which policy drives the visitation measure `p_S(s|c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyPolicy {
    #[default]
    Softened,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// `None` means Boltzmann with `tau = 0.05 ||r||_inf`.
    pub softening: Option<Softening>,
    pub occupancy_policy: OccupancyPolicy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            softening: None,
            occupancy_policy: OccupancyPolicy::Softened,
        }
    }
}

impl SolveOptions {
    pub fn with_tau(tau: f64) -> Self {
        SolveOptions {
            softening: Some(Softening::Boltzmann { tau }),
            ..Default::default()
        }
    }

    pub fn softening_for(&self, cmdp: &TabularCmdp) -> Softening {
        self.softening.unwrap_or_else(|| {
            let norm = cmdp.reward_sup_norm();
            let tau = if norm > 0.0 {
                DEFAULT_TAU_FRACTION * norm
            } else {
                DEFAULT_TAU_FRACTION
            };
            Softening::Boltzmann { tau }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub tol: f64,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
    pub softening: Softening,
    pub occupancy_policy: OccupancyPolicy,
}

/// Everything the information quantities need from the exact solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// `q_values[[c, s, a]]`.
    pub q_values: Array3<f64>,
    /// `v_values[[c, s]] = max_a q_values[[c, s, a]]`.
    pub v_values: Array2<f64>,
    /// Full-support stand-in for the optimal policy.
    pub soft_optimal: Policy,
    /// `occupancy[[c, s]] = p_S(s | c)`.
    pub occupancy: Array2<f64>,
    pub f_constant: f64,
    pub meta: SolverMeta,
}

impl Solution {
    pub fn n_contexts(&self) -> usize {
        self.q_values.dim().0
    }
    pub fn n_states(&self) -> usize {
        self.q_values.dim().1
    }
    pub fn n_actions(&self) -> usize {
        self.q_values.dim().2
    }

    pub fn greedy_policy(&self) -> Policy {
        Policy::greedy(&self.q_values)
    }

    /// `R_M(pi*) = E_c E_{s0} V*(s0, c)`.
    pub fn optimal_return(&self, cmdp: &TabularCmdp) -> f64 {
        (0..cmdp.n_contexts)
            .map(|c| cmdp.p_context[c] * cmdp.p_initial.row(c).dot(&self.v_values.row(c)))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    /// `q[[s, a]]`
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn backup(cmdp: &TabularCmdp, context: usize, v: &Array1<f64>) -> Array2<f64> {
    let (ns, na) = (cmdp.n_states, cmdp.n_actions);
    let t = cmdp.transitions.slice(s![context, .., .., ..]);
    let t2 = t.to_shape((ns * na, ns)).expect("standard layout");
    let ev = t2.dot(v);
    let mut q = cmdp.rewards.slice(s![context, .., ..]).to_owned();
    q.iter_mut()
        .zip(ev.iter())
        .for_each(|(q, e)| *q += cmdp.gamma * e);
    q
}

/// Synchronous value iteration for one context until the sup-norm Bellman
/// residual drops below `tol`.
pub fn value_iteration(
    cmdp: &TabularCmdp,
    context: usize,
    tol: f64,
    max_iters: usize,
) -> Result<ValueIteration> {
    cmdp.check_context(context)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut v = Array1::zeros(cmdp.n_states);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let q = backup(cmdp, context, &v);
        let v_new: Array1<f64> = q
            .axis_iter(Axis(0))
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        residual = v_new
            .iter()
            .zip(v.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if residual < tol {
            return Ok(ValueIteration {
                q,
                v: v_new,
                iterations: it,
                residual,
            });
        }
        v = v_new;
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
        tol,
    })
}

fn softmax_into(q: impl Iterator<Item = f64> + Clone, tau: f64, out: &mut [f64]) {
    let max = q.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(q) {
        *o = ((v - max) / tau).exp().max(f64::MIN_POSITIVE);
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Softmax of `values / temperature` with every entry kept strictly positive.
pub fn softmax(values: &[f64], temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    softmax_into(values.iter().copied(), temperature, &mut out);
    out
}

/// Full-support relaxation of the greedy policy of `q_values`.
pub fn soften_policy(q_values: &Array3<f64>, mode: Softening) -> Result<Policy> {
    let (nc, ns, na) = q_values.dim();
    let mut probs = Array3::zeros((nc, ns, na));
    match mode {
        Softening::Boltzmann { tau } => {
            if !(tau > 0.0) {
                return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
            }
            for c in 0..nc {
                for st in 0..ns {
                    let row = q_values.slice(s![c, st, ..]);
                    let mut out = probs.slice_mut(s![c, st, ..]);
                    softmax_into(row.iter().copied(), tau, out.as_slice_mut().expect("contiguous"));
                }
            }
        }
        Softening::EpsilonGreedy { eps } => {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
            }
            for c in 0..nc {
                for st in 0..ns {
                    let best = argmax(q_values.slice(s![c, st, ..]).iter().copied());
                    for a in 0..na {
                        probs[[c, st, a]] = if a == best {
                            1.0 - eps + eps / na as f64
                        } else {
                            eps / na as f64
                        };
                    }
                }
            }
        }
    }
    Ok(Policy { probs })
}

/// `P_pi[s, s'] = sum_a pi(a|s,c) T(s'|s,a,c)`.
fn policy_transition(cmdp: &TabularCmdp, context: usize, policy: &Policy) -> Array2<f64> {
    let ns = cmdp.n_states;
    let mut p = Array2::zeros((ns, ns));
    for st in 0..ns {
        for a in 0..cmdp.n_actions {
            let w = policy.probs[[context, st, a]];
            if w == 0.0 {
                continue;
            }
            let row = cmdp.transitions.slice(s![context, st, a, ..]);
            p.row_mut(st).scaled_add(w, &row);
        }
    }
    p
}

fn check_dense(cmdp: &TabularCmdp) -> Result<()> {
    if cmdp.n_states > MAX_DENSE_STATES {
        return Err(Error::TooLarge(format!(
            "{} states exceeds the dense solver limit of {MAX_DENSE_STATES}",
            cmdp.n_states
        )));
    }
    Ok(())
}

/// Discounted state distribution `(1 - gamma) sum_t gamma^t Pr(s_t = s | pi, c)`,
/// obtained from `(I - gamma P_pi^T) x = (1 - gamma) p_S0(.|c)`.
pub fn discounted_occupancy(
    cmdp: &TabularCmdp,
    context: usize,
    policy: &Policy,
) -> Result<Array1<f64>> {
    cmdp.check_context(context)?;
    policy.check_against(cmdp)?;
    check_dense(cmdp)?;
    let ns = cmdp.n_states;
    let p = policy_transition(cmdp, context, policy);
    let mut a = Array2::<f64>::eye(ns);
    a.scaled_add(-cmdp.gamma, &p.t());
    let b = cmdp.p_initial.row(context).mapv(|x| (1.0 - cmdp.gamma) * x);
    let mut x = solve_dense(&a, &b, "occupancy")?;
    // clean rounding noise: the exact solution is a probability vector
    x.mapv_inplace(|v| v.max(0.0));
    let total = x.sum();
    x /= total;
    Ok(x)
}

/// `V_pi(.|c)` from `(I - gamma P_pi) V = r_pi`.
pub fn policy_values(cmdp: &TabularCmdp, context: usize, policy: &Policy) -> Result<Array1<f64>> {
    cmdp.check_context(context)?;
    policy.check_against(cmdp)?;
    check_dense(cmdp)?;
    let ns = cmdp.n_states;
    let p = policy_transition(cmdp, context, policy);
    let r: Array1<f64> = (0..ns)
        .map(|st| {
            (0..cmdp.n_actions)
                .map(|a| policy.probs[[context, st, a]] * cmdp.rewards[[context, st, a]])
                .sum()
        })
        .collect();
    let mut a = Array2::<f64>::eye(ns);
    a.scaled_add(-cmdp.gamma, &p);
    solve_dense(&a, &r, "policy evaluation")
}

/// Expected discounted return `R_M(pi)`.
pub fn evaluate_policy(cmdp: &TabularCmdp, policy: &Policy) -> Result<f64> {
    let per_context = par::map_range(cmdp.n_contexts, |c| {
        policy_values(cmdp, c, policy).map(|v| cmdp.p_initial.row(c).dot(&v))
    });
    let mut total = 0.0;
    for (c, r) in per_context.into_iter().enumerate() {
        total += cmdp.p_context[c] * r?;
    }
    Ok(total)
}

/// `R_M(pi*) - R_M(pi)` against the exact optimum.
pub fn regret(cmdp: &TabularCmdp, solution: &Solution, policy: &Policy) -> Result<f64> {
    Ok(solution.optimal_return(cmdp) - evaluate_policy(cmdp, policy)?)
}

/// `R_M(reference) - R_M(pi)`.
pub fn regret_against(cmdp: &TabularCmdp, reference: &Policy, policy: &Policy) -> Result<f64> {
    Ok(evaluate_policy(cmdp, reference)? - evaluate_policy(cmdp, policy)?)
}

/// Solves every context: value iteration, softening, occupancy.
pub fn solve(cmdp: &TabularCmdp, options: &SolveOptions) -> Result<Solution> {
    cmdp.ensure_valid()?;
    let (nc, ns, na) = (cmdp.n_contexts, cmdp.n_states, cmdp.n_actions);
    let runs = par::map_range(nc, |c| value_iteration(cmdp, c, options.tol, options.max_iters));
    let mut q_values = Array3::zeros((nc, ns, na));
    let mut v_values = Array2::zeros((nc, ns));
    let mut iterations = Vec::with_capacity(nc);
    let mut residuals = Vec::with_capacity(nc);
    for (c, run) in runs.into_iter().enumerate() {
        let run = run?;
        q_values.slice_mut(s![c, .., ..]).assign(&run.q);
        v_values.row_mut(c).assign(&run.v);
        iterations.push(run.iterations);
        residuals.push(run.residual);
    }
    let softening = options.softening_for(cmdp);
    let soft_optimal = soften_policy(&q_values, softening)?;
    let visit_policy = match options.occupancy_policy {
        OccupancyPolicy::Softened => soft_optimal.clone(),
        OccupancyPolicy::Greedy => Policy::greedy(&q_values),
    };
    let occ = par::map_range(nc, |c| discounted_occupancy(cmdp, c, &visit_policy));
    let mut occupancy = Array2::zeros((nc, ns));
    for (c, o) in occ.into_iter().enumerate() {
        occupancy.row_mut(c).assign(&o?);
    }
    Ok(Solution {
        q_values,
        v_values,
        soft_optimal,
        occupancy,
        f_constant: cmdp.f_constant(),
        meta: SolverMeta {
            tol: options.tol,
            iterations,
            residuals,
            softening,
            occupancy_policy: options.occupancy_policy,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{build_random_cmdp, build_rental_car, Labels};
    use ndarray::{Array1, Array4};

    fn single_state(gamma: f64) -> TabularCmdp {
        TabularCmdp::new(
            gamma,
            Array4::ones((1, 1, 1, 1)),
            Array3::ones((1, 1, 1)),
            Array1::ones(1),
            Array2::ones((1, 1)),
            Labels::default(),
        )
        .unwrap()
    }

    fn chain(gamma: f64) -> TabularCmdp {
        // s0 -> s1 (absorbing); r(s1) = 1
        let mut t = Array4::zeros((1, 2, 1, 2));
        t[[0, 0, 0, 1]] = 1.0;
        t[[0, 1, 0, 1]] = 1.0;
        TabularCmdp::new(
            gamma,
            t,
            Array3::from_shape_vec((1, 2, 1), vec![0.0, 1.0]).unwrap(),
            Array1::ones(1),
            Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap(),
            Labels::default(),
        )
        .unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let vi = value_iteration(&single_state(0.9), 0, 1e-10, 100_000).unwrap();
        assert!((vi.v[0] - 10.0).abs() < 1e-8);
    }

    #[test]
    fn chain_values() {
        // brute force: V(s1) = sum 0.5^t = 2, V(s0) = 0 + 0.5 * 2 = 1
        let brute_s1: f64 = (0..200).map(|t| 0.5f64.powi(t)).sum();
        let vi = value_iteration(&chain(0.5), 0, 1e-12, 100_000).unwrap();
        assert!((vi.v[1] - brute_s1).abs() < 1e-10);
        assert!((vi.v[0] - 0.5 * brute_s1).abs() < 1e-10);
    }

    #[test]
    fn myopic_values() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let vi = value_iteration(&m, 1, 1e-12, 10).unwrap();
        for st in 0..4 {
            assert_eq!(vi.v[st], 1.0);
        }
    }

    #[test]
    fn v_is_max_q() {
        let m = build_random_cmdp(6, 3, 2, 0.9, 3).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        for c in 0..2 {
            for st in 0..6 {
                let mx = sol.q_values.slice(s![c, st, ..]).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                assert_eq!(mx, sol.v_values[[c, st]]);
            }
            assert!((sol.occupancy.row(c).sum() - 1.0).abs() < 1e-8);
        }
        assert!((sol.f_constant - 200.0 * m.reward_sup_norm()).abs() < 1e-9);
    }

    #[test]
    fn nonconvergence_reported() {
        let err = value_iteration(&single_state(0.99), 0, 1e-10, 5).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
        assert!(value_iteration(&single_state(0.9), 0, 0.0, 5).is_err());
    }

    #[test]
    fn softmax_examples() {
        let q = Array3::from_shape_vec((1, 2, 2), vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let p = soften_policy(&q, Softening::Boltzmann { tau: 0.3 }).unwrap();
        assert_eq!(p.probs[[0, 0, 0]], 0.5);
        let p = soften_policy(&q, Softening::Boltzmann { tau: 1.0 }).unwrap();
        let e = std::f64::consts::E;
        assert!((p.probs[[0, 1, 0]] - e / (1.0 + e)).abs() < 1e-12);
        assert!((p.probs[[0, 1, 0]] - 0.7311).abs() < 1e-4);
        let p = soften_policy(&q, Softening::EpsilonGreedy { eps: 0.2 }).unwrap();
        assert!((p.probs[[0, 1, 0]] - 0.9).abs() < 1e-12);
        assert!((p.probs[[0, 1, 1]] - 0.1).abs() < 1e-12);
        assert!(soften_policy(&q, Softening::EpsilonGreedy { eps: 0.0 }).is_err());
        assert!(soften_policy(&q, Softening::Boltzmann { tau: 0.0 }).is_err());
    }

    #[test]
    fn softening_keeps_support_and_argmax() {
        let m = build_random_cmdp(6, 3, 2, 0.9, 9).unwrap();
        let sol = solve(&m, &SolveOptions::with_tau(1e-4)).unwrap();
        let g = sol.greedy_policy();
        for c in 0..2 {
            for st in 0..6 {
                let row = sol.soft_optimal.row(c, st);
                assert!(row.iter().all(|&p| p > 0.0));
                assert_eq!(g.probs[[c, st, argmax(row.iter().copied())]], 1.0);
            }
        }
    }

    #[test]
    fn occupancy_examples() {
        // gamma = 0: occupancy = p_initial
        let m = build_random_cmdp(4, 2, 1, 0.0, 1).unwrap();
        let pi = Policy::uniform(1, 4, 2);
        let occ = discounted_occupancy(&m, 0, &pi).unwrap();
        for st in 0..4 {
            assert!((occ[st] - m.p_initial[[0, st]]).abs() < 1e-12);
        }
        // deterministic two-cycle from s0 with gamma = 0.5:
        // occ(s0) = (1-g) / (1-g^2) = 2/3
        let mut t = Array4::zeros((1, 2, 1, 2));
        t[[0, 0, 0, 1]] = 1.0;
        t[[0, 1, 0, 0]] = 1.0;
        let m = TabularCmdp::new(
            0.5,
            t,
            Array3::zeros((1, 2, 1)),
            Array1::ones(1),
            Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap(),
            Labels::default(),
        )
        .unwrap();
        let occ = discounted_occupancy(&m, 0, &Policy::uniform(1, 2, 1)).unwrap();
        let g: f64 = 0.5;
        assert!((occ[0] - (1.0 - g) / (1.0 - g * g)).abs() < 1e-12);
        assert!((occ[1] - 1.0 / 3.0).abs() < 1e-12);
        let occ = discounted_occupancy(&single_state(0.9), 0, &Policy::uniform(1, 1, 1)).unwrap();
        assert_eq!(occ[0], 1.0);
    }

    #[test]
    fn evaluation_examples() {
        let m = single_state(0.9);
        assert!((evaluate_policy(&m, &Policy::uniform(1, 1, 1)).unwrap() - 10.0).abs() < 1e-9);

        let car = build_rental_car(0.5, 1.0).unwrap();
        let sol = solve(&car, &SolveOptions::default()).unwrap();
        // enumerate the one-step expectation of the uniform policy
        let mut brute = 0.0;
        for c in 0..2 {
            for st in 0..4 {
                for a in 0..2 {
                    brute += 0.5 * 0.25 * 0.5 * car.rewards[[c, st, a]];
                }
            }
        }
        let uniform = Policy::uniform(2, 4, 2);
        let r = evaluate_policy(&car, &uniform).unwrap();
        assert!((r - brute).abs() < 1e-12);
        assert!((r - 0.75).abs() < 1e-12);
        assert!((regret(&car, &sol, &uniform).unwrap() - 0.25).abs() < 1e-12);
        assert!(regret(&car, &sol, &sol.greedy_policy()).unwrap().abs() < 1e-8);
    }

    #[test]
    fn greedy_return_matches_optimal_values() {
        let m = build_random_cmdp(6, 3, 2, 0.9, 21).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        let r = evaluate_policy(&m, &sol.greedy_policy()).unwrap();
        assert!((r - sol.optimal_return(&m)).abs() < 1e-8);
        let bound = 2.0 * m.reward_sup_norm() / (1.0 - m.gamma);
        let reg = regret(&m, &sol, &Policy::uniform(2, 6, 3)).unwrap();
        assert!(reg >= -1e-8 && reg <= bound);
    }
}
