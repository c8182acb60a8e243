use ndarray::{Array2, Array3};

use crate::cmdp::{TabularCmdp, PROB_TOL};
use crate::error::{Error, Result};
use crate::solver::Solution;

#[inline]
pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Weighted behavior data the objective is evaluated on: group weights
/// `w[[g, s]]` and joint masses `v[[g, s, a]] = w * pi(a|s,g)`. Groups are
/// contexts for the conditional objective, or a single pooled group when
/// contexts are marginalized away.
///
/// With `n[g,k,a] = sum_s phi(k|s) v[g,s,a]` and `P[g,k] = sum_s phi(k|s) w[g,s]`,
/// `I(phi) = sum v ln(v/w) - sum_{g,k} (sum_a n ln n - P ln P)`.
#[derive(Debug, Clone)]
pub struct BehaviorTable {
    pub weights: Array2<f64>,
    pub masses: Array3<f64>,
    baseline: f64,
}

impl BehaviorTable {
    pub fn new(weights: Array2<f64>, masses: Array3<f64>) -> BehaviorTable {
        let (ng, ns, na) = masses.dim();
        let mut baseline = 0.0;
        for g in 0..ng {
            for s in 0..ns {
                let w = weights[[g, s]];
                for a in 0..na {
                    let v = masses[[g, s, a]];
                    if v > 0.0 {
                        baseline += v * (v / w).ln();
                    }
                }
            }
        }
        BehaviorTable {
            weights,
            masses,
            baseline,
        }
    }

    pub fn conditional(cmdp: &TabularCmdp, solution: &Solution) -> Result<BehaviorTable> {
        let (nc, ns, na) = solution.soft_optimal.dims();
        if ns != cmdp.n_states || nc != cmdp.n_contexts {
            return Err(Error::DimensionMismatch("solution does not match environment".into()));
        }
        let mut w = Array2::zeros((nc, ns));
        let mut v = Array3::zeros((nc, ns, na));
        for c in 0..nc {
            for s in 0..ns {
                let wcs = cmdp.p_context[c] * solution.occupancy[[c, s]];
                w[[c, s]] = wcs;
                for a in 0..na {
                    v[[c, s, a]] = wcs * solution.soft_optimal.probs[[c, s, a]];
                }
            }
        }
        Ok(BehaviorTable::new(w, v))
    }

    pub fn context_free(cmdp: &TabularCmdp, solution: &Solution) -> Result<BehaviorTable> {
        let cond = BehaviorTable::conditional(cmdp, solution)?;
        let (nc, ns, na) = cond.masses.dim();
        let mut w = Array2::zeros((1, ns));
        let mut v = Array3::zeros((1, ns, na));
        for c in 0..nc {
            for s in 0..ns {
                w[[0, s]] += cond.weights[[c, s]];
                for a in 0..na {
                    v[[0, s, a]] += cond.masses[[c, s, a]];
                }
            }
        }
        Ok(BehaviorTable::new(w, v))
    }

    pub fn n_groups(&self) -> usize {
        self.masses.dim().0
    }
    pub fn n_states(&self) -> usize {
        self.masses.dim().1
    }
    pub fn n_actions(&self) -> usize {
        self.masses.dim().2
    }

    pub fn check_rows(&self, rows: &Array2<f64>) -> Result<()> {
        if rows.nrows() != self.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "classifier has {} rows, environment has {} states",
                rows.nrows(),
                self.n_states()
            )));
        }
        for (s, row) in rows.outer_iter().enumerate() {
            if (row.sum() - 1.0).abs() > PROB_TOL || row.iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidArgument(format!("classifier row {s} is not a distribution")));
            }
        }
        Ok(())
    }

    /// Concept-level sums `(n, P)`.
    pub fn aggregate(&self, rows: &Array2<f64>) -> (Array3<f64>, Array2<f64>) {
        let (ng, ns, na) = self.masses.dim();
        let nk = rows.ncols();
        let mut n = Array3::zeros((ng, nk, na));
        let mut p = Array2::zeros((ng, nk));
        for g in 0..ng {
            for s in 0..ns {
                let w = self.weights[[g, s]];
                if w <= 0.0 {
                    continue;
                }
                for k in 0..nk {
                    let phi = rows[[s, k]];
                    if phi == 0.0 {
                        continue;
                    }
                    p[[g, k]] += phi * w;
                    for a in 0..na {
                        n[[g, k, a]] += phi * self.masses[[g, s, a]];
                    }
                }
            }
        }
        (n, p)
    }

    pub(crate) fn concept_term(n: &Array3<f64>, p: &Array2<f64>, g: usize, k: usize) -> f64 {
        let mut t = -xlogx(p[[g, k]]);
        for a in 0..n.dim().2 {
            t += xlogx(n[[g, k, a]]);
        }
        t
    }

    pub(crate) fn value_from(&self, n: &Array3<f64>, p: &Array2<f64>) -> f64 {
        let (ng, nk) = p.dim();
        let mut total = 0.0;
        for g in 0..ng {
            for k in 0..nk {
                total += Self::concept_term(n, p, g, k);
            }
        }
        self.baseline - total
    }

    /// Objective at `rows` (not clamped; may sit a rounding error below zero).
    pub fn value(&self, rows: &Array2<f64>) -> f64 {
        let (n, p) = self.aggregate(rows);
        self.value_from(&n, &p)
    }

    /// Objective and its gradient with respect to the classifier table,
    /// `dI/dphi(k|s) = -sum_{g,a} v[g,s,a] ln(n[g,k,a] / P[g,k])`.
    /// Empty concepts take the limiting value `m = pi(.|s,g)`.
    pub fn value_and_gradient(&self, rows: &Array2<f64>) -> (f64, Array2<f64>) {
        let (n, p) = self.aggregate(rows);
        let value = self.value_from(&n, &p);
        let (ng, ns, na) = self.masses.dim();
        let nk = rows.ncols();
        let mut grad = Array2::zeros((ns, nk));
        for g in 0..ng {
            for s in 0..ns {
                let w = self.weights[[g, s]];
                if w <= 0.0 {
                    continue;
                }
                for k in 0..nk {
                    let pk = p[[g, k]];
                    let mut acc = 0.0;
                    for a in 0..na {
                        let v = self.masses[[g, s, a]];
                        if v <= 0.0 {
                            continue;
                        }
                        let m = if pk > 0.0 { n[[g, k, a]] / pk } else { v / w };
                        acc -= v * m.ln();
                    }
                    grad[[s, k]] += acc;
                }
            }
        }
        (value, grad)
    }
}
