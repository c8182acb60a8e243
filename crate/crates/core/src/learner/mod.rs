//! Concept classifiers and the learners that fit them by minimizing the
//! conditional mutual information `I(S : A | S_phi, C)`.

mod gradient;
mod likelihood;
mod search;
mod table;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cmdp::{argmax, TabularCmdp};
use crate::error::{Error, Result};
use crate::solver::Solution;

pub use gradient::{
    baseline_context_free, learn_factored, learn_gradient, logit_gradient, GradientRun,
};
pub use likelihood::{
    abstract_policy_seed,
    baseline_likelihood, collect_triples, log_likelihood, random_abstract_policy, LikelihoodRun,
    Triple,
};
pub use search::{learn_exhaustive, learn_local_search, local_search_from, MAX_EXHAUSTIVE};
pub use table::BehaviorTable;

/// Logits are kept inside `[-LOGIT_CLIP, LOGIT_CLIP]`.
pub const LOGIT_CLIP: f64 = 30.0;
/// Soft rows never drop below this, so every log stays finite.
pub const ROW_FLOOR: f64 = 1e-200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierMode {
    Soft,
    Hard,
}

/// `phi(k | s)` parameterized by per-state logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptClassifier {
    pub n_concepts: usize,
    /// `logits[[s, k]]`
    pub logits: Array2<f64>,
    pub temperature: f64,
    pub mode: ClassifierMode,
}

/// Anything that yields a row-stochastic `[[s, k]]` classifier table.
pub trait Concepts {
    fn rows(&self) -> Array2<f64>;
    fn n_concepts(&self) -> usize;
}

pub(crate) fn soft_rows(logits: &Array2<f64>, temperature: f64) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (src, mut dst) in logits.outer_iter().zip(out.outer_iter_mut()) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &l) in dst.iter_mut().zip(src.iter()) {
            *d = ((l - max) / temperature).exp();
            total += *d;
        }
        dst.mapv_inplace(|x| (x / total).max(ROW_FLOOR));
    }
    out
}

pub(crate) fn one_hot(assignment: &[usize], n_concepts: usize) -> Array2<f64> {
    let mut rows = Array2::zeros((assignment.len(), n_concepts));
    for (s, &k) in assignment.iter().enumerate() {
        rows[[s, k]] = 1.0;
    }
    rows
}

impl ConceptClassifier {
    pub fn new(logits: Array2<f64>, temperature: f64, mode: ClassifierMode) -> Result<Self> {
        let c = ConceptClassifier {
            n_concepts: logits.ncols(),
            logits,
            temperature,
            mode,
        };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_concepts == 0 || self.logits.ncols() != self.n_concepts {
            return Err(Error::InvalidArgument(format!(
                "classifier declares {} concepts but has {} logit columns",
                self.n_concepts,
                self.logits.ncols()
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "classifier temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("classifier logits must be finite".into()));
        }
        Ok(())
    }

    /// Hard classifier with logit 1 on the assigned concept and 0 elsewhere.
    pub fn from_assignment(assignment: &[usize], n_concepts: usize) -> Result<Self> {
        if let Some(&k) = assignment.iter().find(|&&k| k >= n_concepts) {
            return Err(Error::IndexOutOfRange {
                what: "concept",
                index: k,
                size: n_concepts,
            });
        }
        Self::new(one_hot(assignment, n_concepts), 1.0, ClassifierMode::Hard)
    }

    pub fn identity(n_states: usize) -> Self {
        Self::from_assignment(&(0..n_states).collect::<Vec<_>>(), n_states.max(1))
            .expect("identity assignment is in range")
    }

    pub fn constant(n_states: usize) -> Self {
        Self::from_assignment(&vec![0; n_states], 1).expect("single concept")
    }

    pub fn uniform_soft(n_states: usize, n_concepts: usize) -> Self {
        ConceptClassifier {
            n_concepts,
            logits: Array2::zeros((n_states, n_concepts)),
            temperature: 1.0,
            mode: ClassifierMode::Soft,
        }
    }

    pub fn n_states(&self) -> usize {
        self.logits.nrows()
    }

    /// Argmax of the logits, lowest index on ties.
    pub fn assignment(&self) -> Vec<usize> {
        self.logits
            .axis_iter(Axis(0))
            .map(|row| argmax(row.iter().copied()))
            .collect()
    }

    pub fn hardened(&self) -> ConceptClassifier {
        ConceptClassifier {
            mode: ClassifierMode::Hard,
            ..self.clone()
        }
    }

    pub fn soft_view(&self) -> Array2<f64> {
        soft_rows(&self.logits, self.temperature)
    }

    pub fn hard_view(&self) -> Array2<f64> {
        one_hot(&self.assignment(), self.n_concepts)
    }

    /// Same classifier with concept `k` renamed to `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> ConceptClassifier {
        let mut logits = Array2::zeros(self.logits.dim());
        for s in 0..self.n_states() {
            for (k, &to) in perm.iter().enumerate() {
                logits[[s, to]] = self.logits[[s, k]];
            }
        }
        ConceptClassifier {
            logits,
            ..self.clone()
        }
    }
}

impl Concepts for ConceptClassifier {
    fn rows(&self) -> Array2<f64> {
        match self.mode {
            ClassifierMode::Soft => self.soft_view(),
            ClassifierMode::Hard => self.hard_view(),
        }
    }
    fn n_concepts(&self) -> usize {
        self.n_concepts
    }
}

impl Concepts for Array2<f64> {
    fn rows(&self) -> Array2<f64> {
        self.clone()
    }
    fn n_concepts(&self) -> usize {
        self.ncols()
    }
}

/// Tuple of independent classifiers; concept `(k_0, ..., k_{n-1})` maps to the
/// mixed-radix index with `k_0` most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredClassifier {
    pub factors: Vec<ConceptClassifier>,
}

impl FactoredClassifier {
    pub fn factor_sizes(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.n_concepts).collect()
    }

    pub fn product_index(sizes: &[usize], parts: &[usize]) -> usize {
        sizes.iter().zip(parts).fold(0, |acc, (&n, &k)| acc * n + k)
    }

    pub fn split_index(sizes: &[usize], mut index: usize) -> Vec<usize> {
        let mut parts = vec![0; sizes.len()];
        for (i, &n) in sizes.iter().enumerate().rev() {
            parts[i] = index % n;
            index /= n;
        }
        parts
    }

    /// Flat classifier over the product concepts, hard if any factor is hard.
    pub fn product(&self) -> ConceptClassifier {
        let rows = self.rows();
        let hard = self.factors.iter().any(|f| f.mode == ClassifierMode::Hard);
        if hard {
            let assignment: Vec<usize> = rows.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect();
            ConceptClassifier::from_assignment(&assignment, rows.ncols()).expect("in range")
        } else {
            ConceptClassifier {
                n_concepts: rows.ncols(),
                logits: rows.mapv(f64::ln),
                temperature: 1.0,
                mode: ClassifierMode::Soft,
            }
        }
    }

    pub fn hardened(&self) -> FactoredClassifier {
        FactoredClassifier {
            factors: self.factors.iter().map(|f| f.hardened()).collect(),
        }
    }
}

pub(crate) fn product_rows(factor_rows: &[Array2<f64>]) -> Array2<f64> {
    let ns = factor_rows[0].nrows();
    let mut rows = Array2::ones((ns, 1));
    for f in factor_rows {
        let nk = rows.ncols() * f.ncols();
        let mut next = Array2::zeros((ns, nk));
        for s in 0..ns {
            for a in 0..rows.ncols() {
                for b in 0..f.ncols() {
                    next[[s, a * f.ncols() + b]] = rows[[s, a]] * f[[s, b]];
                }
            }
        }
        rows = next;
    }
    rows
}

impl Concepts for FactoredClassifier {
    fn rows(&self) -> Array2<f64> {
        let rows: Vec<Array2<f64>> = self.factors.iter().map(|f| f.rows()).collect();
        product_rows(&rows)
    }
    fn n_concepts(&self) -> usize {
        self.factor_sizes().iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnMethod {
    Exhaustive,
    LocalSearch,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub initial: f64,
    /// Multiplier applied every `every` steps.
    pub decay: f64,
    pub every: usize,
    pub floor: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            initial: 1.0,
            decay: 0.97,
            every: 100,
            floor: 0.05,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: usize) -> f64 {
        let periods = (step / self.every.max(1)) as i32;
        (self.initial * self.decay.powi(periods)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub method: LearnMethod,
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    pub step_size: f64,
    pub temperature_schedule: TemperatureSchedule,
    pub tol: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            method: LearnMethod::LocalSearch,
            seed: 0,
            restarts: 8,
            max_iters: 2000,
            step_size: 1.0,
            temperature_schedule: TemperatureSchedule::default(),
            tol: 1e-9,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.temperature_schedule;
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.restarts == 0 || self.max_iters == 0 {
            return bad("restarts and max_iters must be positive");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if !(t.decay > 0.0 && t.decay <= 1.0) {
            return bad("temperature decay must lie in (0, 1]");
        }
        if !(t.initial > 0.0 && t.floor > 0.0 && t.every > 0) {
            return bad("temperature schedule must be positive");
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Learned {
    pub classifier: ConceptClassifier,
    pub objective: f64,
}

/// `I(S : A | S_phi, C)` of a classifier under the solution's joint.
pub fn objective<C: Concepts + ?Sized>(cmdp: &TabularCmdp, solution: &Solution, classifier: &C) -> Result<f64> {
    let table = BehaviorTable::conditional(cmdp, solution)?;
    let rows = classifier.rows();
    table.check_rows(&rows)?;
    Ok(table.value(&rows).max(0.0))
}

/// Runs whichever learner `config.method` names.
pub fn learn(cmdp: &TabularCmdp, solution: &Solution, n_concepts: usize, config: &LearnConfig) -> Result<Learned> {
    match config.method {
        LearnMethod::Exhaustive => learn_exhaustive(cmdp, solution, n_concepts),
        LearnMethod::LocalSearch => learn_local_search(cmdp, solution, n_concepts, config),
        LearnMethod::Gradient => learn_gradient(cmdp, solution, n_concepts, config).map(|r| Learned {
            classifier: r.classifier,
            objective: r.hardened_objective,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{build_random_cmdp, build_rental_car, rental_car_partition};
    use crate::info::{build_joint, conditional_mi};
    use crate::solver::{solve, SolveOptions};

    fn car() -> (TabularCmdp, Solution) {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        (m, sol)
    }

    #[test]
    fn soft_rows_sum_to_one() {
        let c = ConceptClassifier::new(
            Array2::from_shape_vec((2, 3), vec![0.1, -2.0, 5.0, 0.0, 0.0, 0.0]).unwrap(),
            0.7,
            ClassifierMode::Soft,
        )
        .unwrap();
        for row in c.rows().outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(c.assignment(), vec![2, 0]);
    }

    #[test]
    fn objective_examples() {
        let (m, sol) = car();
        let uniform = ConceptClassifier::uniform_soft(4, 2);
        let v = objective(&m, &sol, &uniform).unwrap();
        assert!((v - 0.3466).abs() < 1e-3);
        assert!(objective(&m, &sol, &ConceptClassifier::identity(4)).unwrap() < 1e-12);
        let sep = ConceptClassifier::from_assignment(&rental_car_partition(), 2).unwrap();
        assert!(objective(&m, &sol, &sep).unwrap() < 1e-12);
    }

    #[test]
    fn objective_matches_joint_computation() {
        for seed in 0..5 {
            let m = build_random_cmdp(5, 3, 3, 0.85, seed).unwrap();
            let sol = solve(&m, &SolveOptions::with_tau(0.2)).unwrap();
            let mut rng = crate::rng::stream_rng(seed, 11);
            let logits = Array2::from_shape_fn((5, 3), |_| rand::Rng::random_range(&mut rng, -2.0..2.0));
            let c = ConceptClassifier::new(logits, 0.8, ClassifierMode::Soft).unwrap();
            let a = objective(&m, &sol, &c).unwrap();
            let b = conditional_mi(&build_joint(&m, &sol, &c.rows()).unwrap());
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn product_rows_are_outer_products() {
        let a = ConceptClassifier::new(Array2::from_shape_vec((1, 2), vec![0.3, -0.2]).unwrap(), 1.0, ClassifierMode::Soft).unwrap();
        let b = ConceptClassifier::new(Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 2.0]).unwrap(), 1.0, ClassifierMode::Soft).unwrap();
        let f = FactoredClassifier {
            factors: vec![a.clone(), b.clone()],
        };
        let rows = f.rows();
        let (ra, rb) = (a.rows(), b.rows());
        for i in 0..2 {
            for j in 0..3 {
                assert!((rows[[0, FactoredClassifier::product_index(&[2, 3], &[i, j])]] - ra[[0, i]] * rb[[0, j]]).abs() < 1e-15);
            }
        }
        assert_eq!(FactoredClassifier::split_index(&[2, 3], 5), vec![1, 2]);
        assert_eq!(f.n_concepts(), 6);
    }

    #[test]
    fn schedule_and_config() {
        let t = TemperatureSchedule::default();
        assert_eq!(t.at(0), 1.0);
        assert_eq!(t.at(99), 1.0);
        assert!((t.at(100) - 0.97).abs() < 1e-15);
        assert_eq!(t.at(1_000_000), 0.05);
        assert!(LearnConfig::default().validate().is_ok());
        let bad = LearnConfig {
            step_size: 0.0,
            ..LearnConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
