//! Gradient descent on classifier logits with an annealed softmax.

use ndarray::{Array2, Zip};
use rand_distr::{Distribution, StandardNormal};

use super::search::check_n_concepts;
use super::table::BehaviorTable;
use super::{
    one_hot, product_rows, soft_rows, ClassifierMode, ConceptClassifier, FactoredClassifier,
    LearnConfig, LOGIT_CLIP,
};
use crate::cmdp::TabularCmdp;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, stream_rng, streams};
use crate::solver::Solution;

const IMPROVE_TOL: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const MAX_STEP_GROWTH: f64 = 1e3;

/// A smooth loss over classifier tables, minimized by the engine below.
pub(crate) trait Smooth: Sync {
    fn value(&self, rows: &Array2<f64>) -> f64;
    fn value_and_gradient(&self, rows: &Array2<f64>) -> (f64, Array2<f64>);
}

impl Smooth for BehaviorTable {
    fn value(&self, rows: &Array2<f64>) -> f64 {
        BehaviorTable::value(self, rows)
    }
    fn value_and_gradient(&self, rows: &Array2<f64>) -> (f64, Array2<f64>) {
        BehaviorTable::value_and_gradient(self, rows)
    }
}

/// Result of one gradient-based fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRun<C> {
    /// Argmax-hardened classifier.
    pub classifier: C,
    /// Soft classifier at the end of optimization.
    pub soft: C,
    /// Loss at the start of every iteration, plus the final value.
    pub objective_trace: Vec<f64>,
    /// Temperature in force for each trace entry.
    pub temperature_trace: Vec<f64>,
    pub hardened_objective: f64,
    /// Index of the winning restart.
    pub restart: usize,
}

/// Chain rule from `dL/dphi` on the product table to each factor's logits.
fn factor_logit_gradients(
    factor_rows: &[Array2<f64>],
    sizes: &[usize],
    grad: &Array2<f64>,
    temperature: f64,
) -> Vec<Array2<f64>> {
    let ns = grad.nrows();
    let nk = grad.ncols();
    let mut out: Vec<Array2<f64>> = sizes.iter().map(|&n| Array2::zeros((ns, n))).collect();
    for s in 0..ns {
        for k in 0..nk {
            let g = grad[[s, k]];
            if g == 0.0 {
                continue;
            }
            let parts = FactoredClassifier::split_index(sizes, k);
            for i in 0..sizes.len() {
                let mut others = 1.0;
                for (j, &kj) in parts.iter().enumerate() {
                    if j != i {
                        others *= factor_rows[j][[s, kj]];
                    }
                }
                out[i][[s, parts[i]]] += g * others;
            }
        }
    }
    for (rows, g) in factor_rows.iter().zip(out.iter_mut()) {
        for s in 0..ns {
            let mean: f64 = rows.row(s).iter().zip(g.row(s).iter()).map(|(r, x)| r * x).sum();
            for u in 0..rows.ncols() {
                g[[s, u]] = rows[[s, u]] * (g[[s, u]] - mean) / temperature;
            }
        }
    }
    out
}

fn all_rows(logits: &[Array2<f64>], temperature: f64) -> Vec<Array2<f64>> {
    logits.iter().map(|l| soft_rows(l, temperature)).collect()
}

fn assignment_of(logits: &[Array2<f64>], sizes: &[usize]) -> Vec<usize> {
    let ns = logits[0].nrows();
    (0..ns)
        .map(|s| {
            let parts: Vec<usize> = logits
                .iter()
                .map(|l| crate::cmdp::argmax(l.row(s).iter().copied()))
                .collect();
            FactoredClassifier::product_index(sizes, &parts)
        })
        .collect()
}

struct Fit {
    logits: Vec<Array2<f64>>,
    temperature: f64,
    trace: Vec<f64>,
    temps: Vec<f64>,
    hardened: f64,
}

fn initial_logits(n_states: usize, sizes: &[usize], seed: u64) -> Vec<Array2<f64>> {
    let mut rng = stream_rng(seed, streams::CLASSIFIER_INIT);
    sizes
        .iter()
        .map(|&n| {
            Array2::from_shape_fn((n_states, n), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.clamp(-LOGIT_CLIP, LOGIT_CLIP)
            })
        })
        .collect()
}

fn fit<L: Smooth>(loss: &L, mut logits: Vec<Array2<f64>>, sizes: &[usize], config: &LearnConfig) -> Result<Fit> {
    let schedule = config.temperature_schedule;
    let mut trace = Vec::new();
    let mut temps = Vec::new();
    let mut eta = config.step_size;
    let mut it = 0;
    let mut temperature = schedule.at(0);
    while it < config.max_iters {
        temperature = schedule.at(it);
        let rows = all_rows(&logits, temperature);
        let (value, grad) = loss.value_and_gradient(&product_rows(&rows));
        trace.push(value);
        temps.push(temperature);
        let grads = factor_logit_gradients(&rows, sizes, &grad, temperature);
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteGradient(it));
        }
        let gnorm = grads.iter().flat_map(|g| g.iter()).fold(0.0_f64, |m, x| m.max(x.abs()));
        let at_floor = temperature <= schedule.floor;
        if gnorm <= config.tol {
            if at_floor {
                break;
            }
            it = next_boundary(it, schedule.every);
            continue;
        }

        let mut step = eta;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate: Vec<Array2<f64>> = logits
                .iter()
                .zip(&grads)
                .map(|(l, g)| {
                    let mut c = l.clone();
                    Zip::from(&mut c).and(g).for_each(|x, &d| *x = (*x - step * d).clamp(-LOGIT_CLIP, LOGIT_CLIP));
                    c
                })
                .collect();
            let decrease: f64 = logits
                .iter()
                .zip(&candidate)
                .zip(&grads)
                .map(|((l, c), g)| Zip::from(l).and(c).and(g).fold(0.0, |acc, &a, &b, &d| acc + d * (a - b)))
                .sum();
            let new_value = loss.value(&product_rows(&all_rows(&candidate, temperature)));
            if new_value <= value - ARMIJO * decrease && decrease > 0.0 {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(c) => {
                logits = c;
                eta = (step * 2.0).min(config.step_size * MAX_STEP_GROWTH);
                it += 1;
            }
            None if at_floor => break,
            None => it = next_boundary(it, schedule.every),
        }
    }
    let final_rows = product_rows(&all_rows(&logits, temperature));
    trace.push(loss.value(&final_rows));
    temps.push(temperature);
    let nk: usize = sizes.iter().product();
    let hardened = loss.value(&one_hot(&assignment_of(&logits, sizes), nk));
    Ok(Fit {
        logits,
        temperature,
        trace,
        temps,
        hardened,
    })
}

fn next_boundary(it: usize, every: usize) -> usize {
    (it / every + 1) * every
}

pub(crate) fn fit_factored<L: Smooth>(
    loss: &L,
    n_states: usize,
    sizes: &[usize],
    config: &LearnConfig,
) -> Result<GradientRun<FactoredClassifier>> {
    config.validate()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidArgument("factor sizes must be positive".into()));
    }
    let nk: usize = sizes.iter().product();
    if nk == 1 {
        let constant = ConceptClassifier::constant(n_states);
        let factors = FactoredClassifier {
            factors: vec![constant; sizes.len()],
        };
        let v = loss.value(&Array2::ones((n_states, 1)));
        return Ok(GradientRun {
            classifier: factors.clone(),
            soft: factors,
            objective_trace: vec![],
            temperature_trace: vec![],
            hardened_objective: v,
            restart: 0,
        });
    }
    let fits = par::map_range(config.restarts, |r| {
        let init = initial_logits(n_states, sizes, derive_seed(config.seed, r as u64));
        fit(loss, init, sizes, config)
    });
    let mut best: Option<(usize, Fit)> = None;
    for (r, f) in fits.into_iter().enumerate() {
        let f = f?;
        if best.as_ref().is_none_or(|(_, b)| f.hardened < b.hardened - IMPROVE_TOL) {
            best = Some((r, f));
        }
    }
    let (restart, f) = best.expect("at least one restart");
    let soft = FactoredClassifier {
        factors: f
            .logits
            .iter()
            .map(|l| ConceptClassifier {
                n_concepts: l.ncols(),
                logits: l.clone(),
                temperature: f.temperature,
                mode: ClassifierMode::Soft,
            })
            .collect(),
    };
    Ok(GradientRun {
        classifier: soft.hardened(),
        soft,
        objective_trace: f.trace,
        temperature_trace: f.temps,
        hardened_objective: f.hardened.max(0.0),
        restart,
    })
}

fn flatten(run: GradientRun<FactoredClassifier>) -> GradientRun<ConceptClassifier> {
    let mut soft = run.soft.factors;
    let mut hard = run.classifier.factors;
    GradientRun {
        classifier: hard.remove(0),
        soft: soft.remove(0),
        objective_trace: run.objective_trace,
        temperature_trace: run.temperature_trace,
        hardened_objective: run.hardened_objective,
        restart: run.restart,
    }
}

/// Minimizes `I(S : A | S_phi, C)` over soft classifier logits.
pub fn learn_gradient(
    cmdp: &TabularCmdp,
    solution: &Solution,
    n_concepts: usize,
    config: &LearnConfig,
) -> Result<GradientRun<ConceptClassifier>> {
    check_n_concepts(n_concepts)?;
    let table = BehaviorTable::conditional(cmdp, solution)?;
    fit_factored(&table, cmdp.n_states, &[n_concepts], config).map(flatten)
}

/// Same optimizer over a tuple of independent factors; the objective is
/// taken on the induced product classifier.
pub fn learn_factored(
    cmdp: &TabularCmdp,
    solution: &Solution,
    factor_sizes: &[usize],
    config: &LearnConfig,
) -> Result<GradientRun<FactoredClassifier>> {
    let table = BehaviorTable::conditional(cmdp, solution)?;
    fit_factored(&table, cmdp.n_states, factor_sizes, config)
}

/// Minimizes `I(S : A | S_phi)`, pooling all contexts before conditioning.
/// `hardened_objective` is reported under that context-free measure.
pub fn baseline_context_free(
    cmdp: &TabularCmdp,
    solution: &Solution,
    n_concepts: usize,
    config: &LearnConfig,
) -> Result<GradientRun<ConceptClassifier>> {
    check_n_concepts(n_concepts)?;
    let table = BehaviorTable::context_free(cmdp, solution)?;
    fit_factored(&table, cmdp.n_states, &[n_concepts], config).map(flatten)
}

/// Gradient of the conditional objective with respect to the logits of a
/// soft classifier, at its own temperature.
pub fn logit_gradient(cmdp: &TabularCmdp, solution: &Solution, classifier: &ConceptClassifier) -> Result<Array2<f64>> {
    let table = BehaviorTable::conditional(cmdp, solution)?;
    let rows = classifier.soft_view();
    table.check_rows(&rows)?;
    let (_, grad) = table.value_and_gradient(&rows);
    let mut g = factor_logit_gradients(&[rows], &[classifier.n_concepts], &grad, classifier.temperature);
    Ok(g.remove(0))
}
