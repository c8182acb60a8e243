//! Hard-assignment learners: exhaustive enumeration and hill climbing.

use ndarray::{Array2, Array3};
use rand::Rng;

use super::table::{xlogx, BehaviorTable};
use super::{one_hot, ConceptClassifier, LearnConfig, Learned};
use crate::cmdp::TabularCmdp;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::solver::Solution;
use crate::par;

/// Largest `n_concepts ^ n_states` the exhaustive learner accepts.
pub const MAX_EXHAUSTIVE: u64 = 10_000_000;
/// A candidate replaces the incumbent only if it is better by more than this.
const IMPROVE_TOL: f64 = 1e-12;
/// Target number of enumeration subtrees handed to the thread pool.
const SUBTREES: u64 = 256;

pub(crate) fn check_n_concepts(n_concepts: usize) -> Result<()> {
    if n_concepts == 0 {
        return Err(Error::InvalidArgument("n_concepts must be at least 1".into()));
    }
    Ok(())
}

fn finish(table: &BehaviorTable, assignment: &[usize], n_concepts: usize) -> Learned {
    let objective = table.value(&one_hot(assignment, n_concepts)).max(0.0);
    Learned {
        classifier: ConceptClassifier::from_assignment(assignment, n_concepts).expect("assignment in range"),
        objective,
    }
}

struct Levels {
    n: Vec<Array3<f64>>,
    p: Vec<Array2<f64>>,
}

impl Levels {
    fn new(table: &BehaviorTable, nk: usize) -> Levels {
        let (ng, ns, na) = table.masses.dim();
        Levels {
            n: vec![Array3::zeros((ng, nk, na)); ns + 1],
            p: vec![Array2::zeros((ng, nk)); ns + 1],
        }
    }

    /// Level `depth + 1` = level `depth` plus state `depth` assigned to `k`.
    fn push(&mut self, table: &BehaviorTable, depth: usize, k: usize) {
        let (ng, _, na) = table.masses.dim();
        let (lo, hi) = self.n.split_at_mut(depth + 1);
        hi[0].assign(&lo[depth]);
        let (plo, phi) = self.p.split_at_mut(depth + 1);
        phi[0].assign(&plo[depth]);
        for g in 0..ng {
            let w = table.weights[[g, depth]];
            if w <= 0.0 {
                continue;
            }
            phi[0][[g, k]] += w;
            for a in 0..na {
                hi[0][[g, k, a]] += table.masses[[g, depth, a]];
            }
        }
    }
}

fn dfs(
    table: &BehaviorTable,
    nk: usize,
    depth: usize,
    assign: &mut Vec<usize>,
    levels: &mut Levels,
    best: &mut (f64, Vec<usize>),
) {
    let ns = table.n_states();
    if depth == ns {
        let v = table.value_from(&levels.n[ns], &levels.p[ns]);
        if v < best.0 - IMPROVE_TOL {
            *best = (v, assign.clone());
        }
        return;
    }
    for k in 0..nk {
        levels.push(table, depth, k);
        assign[depth] = k;
        dfs(table, nk, depth + 1, assign, levels, best);
    }
}

pub(crate) fn exhaustive_on_table(table: &BehaviorTable, nk: usize) -> Result<Vec<usize>> {
    let ns = table.n_states();
    let total = (nk as u64).checked_pow(ns as u32).filter(|&t| t <= MAX_EXHAUSTIVE);
    if total.is_none() {
        return Err(Error::TooLarge(format!(
            "{nk}^{ns} assignments exceed the exhaustive limit of {MAX_EXHAUSTIVE}"
        )));
    }
    let mut prefix_len = 0;
    while prefix_len < ns && (nk as u64).pow(prefix_len as u32) < SUBTREES {
        prefix_len += 1;
    }
    let subtrees = nk.pow(prefix_len as u32);
    let results = par::map_range(subtrees, |idx| {
        let mut assign = vec![0; ns];
        let mut rest = idx;
        for d in (0..prefix_len).rev() {
            assign[d] = rest % nk;
            rest /= nk;
        }
        let mut levels = Levels::new(table, nk);
        for d in 0..prefix_len {
            levels.push(table, d, assign[d]);
        }
        let mut best = (f64::INFINITY, Vec::new());
        dfs(table, nk, prefix_len, &mut assign, &mut levels, &mut best);
        best
    });
    let mut best = (f64::INFINITY, Vec::new());
    for r in results {
        if r.0 < best.0 - IMPROVE_TOL {
            best = r;
        }
    }
    Ok(best.1)
}

/// Globally optimal hard classifier; ties go to the lexicographically
/// smallest assignment vector.
pub fn learn_exhaustive(cmdp: &TabularCmdp, solution: &Solution, n_concepts: usize) -> Result<Learned> {
    check_n_concepts(n_concepts)?;
    let table = BehaviorTable::conditional(cmdp, solution)?;
    if n_concepts == 1 {
        return Ok(finish(&table, &vec![0; cmdp.n_states], 1));
    }
    let assignment = exhaustive_on_table(&table, n_concepts)?;
    Ok(finish(&table, &assignment, n_concepts))
}

struct Climber<'a> {
    table: &'a BehaviorTable,
    assign: Vec<usize>,
    n: Array3<f64>,
    p: Array2<f64>,
}

impl<'a> Climber<'a> {
    fn new(table: &'a BehaviorTable, assign: Vec<usize>, nk: usize) -> Self {
        let (n, p) = table.aggregate(&one_hot(&assign, nk));
        Climber { table, assign, n, p }
    }

    /// Change in the objective if `s` moves to concept `to`.
    fn delta(&self, s: usize, to: usize) -> f64 {
        let from = self.assign[s];
        let t = self.table;
        let na = t.n_actions();
        let mut change = 0.0;
        for g in 0..t.n_groups() {
            let w = t.weights[[g, s]];
            if w <= 0.0 {
                continue;
            }
            let old = BehaviorTable::concept_term(&self.n, &self.p, g, from)
                + BehaviorTable::concept_term(&self.n, &self.p, g, to);
            let mut new = -xlogx(self.p[[g, from]] - w) - xlogx(self.p[[g, to]] + w);
            for a in 0..na {
                let v = t.masses[[g, s, a]];
                new += xlogx(self.n[[g, from, a]] - v) + xlogx(self.n[[g, to, a]] + v);
            }
            change -= new - old;
        }
        change
    }

    fn apply(&mut self, s: usize, to: usize) {
        let from = self.assign[s];
        let t = self.table;
        for g in 0..t.n_groups() {
            let w = t.weights[[g, s]];
            self.p[[g, from]] -= w;
            self.p[[g, to]] += w;
            for a in 0..t.n_actions() {
                let v = t.masses[[g, s, a]];
                self.n[[g, from, a]] -= v;
                self.n[[g, to, a]] += v;
            }
        }
        self.assign[s] = to;
    }

    /// Best-improvement hill climbing; equal moves resolve to the lowest
    /// `(state, concept)` pair.
    fn climb(mut self, nk: usize, max_iters: usize) -> Vec<usize> {
        for _ in 0..max_iters {
            let mut best = (-IMPROVE_TOL, None);
            for s in 0..self.assign.len() {
                for k in 0..nk {
                    if k == self.assign[s] {
                        continue;
                    }
                    let d = self.delta(s, k);
                    if d < best.0 {
                        best = (d, Some((s, k)));
                    }
                }
            }
            match best.1 {
                Some((s, k)) => self.apply(s, k),
                None => break,
            }
        }
        self.assign
    }
}

pub(crate) fn climb_on_table(table: &BehaviorTable, init: Vec<usize>, nk: usize, max_iters: usize) -> Vec<usize> {
    Climber::new(table, init, nk).climb(nk, max_iters)
}

/// Hill climbing from a given assignment.
pub fn local_search_from(
    cmdp: &TabularCmdp,
    solution: &Solution,
    init: &[usize],
    n_concepts: usize,
    max_iters: usize,
) -> Result<Learned> {
    check_n_concepts(n_concepts)?;
    let table = BehaviorTable::conditional(cmdp, solution)?;
    if init.len() != cmdp.n_states {
        return Err(Error::DimensionMismatch(format!(
            "initial assignment has {} entries for {} states",
            init.len(),
            cmdp.n_states
        )));
    }
    if let Some(&k) = init.iter().find(|&&k| k >= n_concepts) {
        return Err(Error::IndexOutOfRange {
            what: "concept",
            index: k,
            size: n_concepts,
        });
    }
    let assignment = climb_on_table(&table, init.to_vec(), n_concepts, max_iters);
    Ok(finish(&table, &assignment, n_concepts))
}

/// Hill climbing from `config.restarts` random assignments; restart `r`
/// draws its start from its own stream seeded by `derive_seed(seed, r)`.
pub fn learn_local_search(
    cmdp: &TabularCmdp,
    solution: &Solution,
    n_concepts: usize,
    config: &LearnConfig,
) -> Result<Learned> {
    check_n_concepts(n_concepts)?;
    config.validate()?;
    let table = BehaviorTable::conditional(cmdp, solution)?;
    if n_concepts == 1 {
        return Ok(finish(&table, &vec![0; cmdp.n_states], 1));
    }
    let ns = cmdp.n_states;
    let runs = par::map_range(config.restarts, |r| {
        let mut rng = stream_rng(derive_seed(config.seed, r as u64), streams::CLASSIFIER_INIT);
        let init: Vec<usize> = (0..ns).map(|_| rng.random_range(0..n_concepts)).collect();
        let assignment = climb_on_table(&table, init, n_concepts, config.max_iters);
        finish(&table, &assignment, n_concepts)
    });
    let mut best: Option<Learned> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.objective < b.objective - IMPROVE_TOL) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
