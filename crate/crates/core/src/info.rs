//! Exact information quantities over the joint `p(c, s, s_phi, a)` and the
//! regret bounds built on them. All logarithms are natural (nats).

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::cmdp::{Policy, TabularCmdp, PROB_TOL};
use crate::error::{Error, Result};
use crate::solver::{evaluate_policy, Solution};

/// `sum_i p_i ln(p_i / q_i)` with `0 ln(0/q) = 0`. A positive `p_i` facing a
/// zero `q_i` is a [`Error::SupportViolation`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "KL arguments have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::SupportViolation { index: i, p: pi });
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(0.0))
}

fn kl_view(p: ArrayView1<f64>, q: ArrayView1<f64>) -> Result<f64> {
    match (p.as_slice(), q.as_slice()) {
        (Some(p), Some(q)) => kl_divergence(p, q),
        _ => kl_divergence(&p.to_vec(), &q.to_vec()),
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// The exact joint distribution
/// `p(c, s, k, a) = p_C(c) p_S(s|c) phi(k|s) pi*(a|s,c)` with cached marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub p_context: Array1<f64>,
    /// `occupancy[[c, s]] = p_S(s|c)`.
    pub occupancy: Array2<f64>,
    /// `classifier[[s, k]] = phi(k|s)`.
    pub classifier: Array2<f64>,
    /// Reference policy `pi*(a|s,c)` as `[[c, s, a]]`.
    pub policy: Array3<f64>,
    pub f_constant: f64,
    /// `probs[[c, s, k, a]]`.
    pub probs: Array4<f64>,
    /// `p_concept[[c, k]] = p(s_phi = k | c)`.
    pub p_concept: Array2<f64>,
    /// `state_given_concept[[c, k, s]] = p(s | s_phi = k, c)`; zero rows for unvisited concepts.
    pub state_given_concept: Array3<f64>,
    /// `abstract_policy[[c, k, a]] = p(a | s_phi = k, c)`; uniform rows for unvisited concepts.
    pub abstract_policy: Array3<f64>,
}

fn check_rows(rows: &Array2<f64>, what: &str) -> Result<()> {
    for (i, row) in rows.outer_iter().enumerate() {
        let sum = row.sum();
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidArgument(format!(
                "{what} row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

impl JointModel {
    pub fn from_parts(
        p_context: Array1<f64>,
        occupancy: Array2<f64>,
        classifier: Array2<f64>,
        policy: Array3<f64>,
        f_constant: f64,
    ) -> Result<JointModel> {
        let (nc, ns, na) = policy.dim();
        let nk = classifier.ncols();
        if classifier.nrows() != ns {
            return Err(Error::DimensionMismatch(format!(
                "classifier has {} rows, environment has {ns} states",
                classifier.nrows()
            )));
        }
        if occupancy.dim() != (nc, ns) || p_context.len() != nc {
            return Err(Error::DimensionMismatch("occupancy/context tables disagree with policy".into()));
        }
        if nk == 0 {
            return Err(Error::InvalidArgument("classifier has no concepts".into()));
        }
        check_rows(&classifier, "classifier")?;

        let mut probs = Array4::zeros((nc, ns, nk, na));
        let mut p_concept = Array2::zeros((nc, nk));
        let mut joint_ka = Array3::<f64>::zeros((nc, nk, na));
        let mut state_given_concept = Array3::zeros((nc, nk, ns));
        for c in 0..nc {
            for st in 0..ns {
                let w = occupancy[[c, st]];
                for k in 0..nk {
                    let wk = w * classifier[[st, k]];
                    p_concept[[c, k]] += wk;
                    state_given_concept[[c, k, st]] = wk;
                    for a in 0..na {
                        let m = wk * policy[[c, st, a]];
                        joint_ka[[c, k, a]] += m;
                        probs[[c, st, k, a]] = p_context[c] * m;
                    }
                }
            }
        }
        let mut abstract_policy = Array3::zeros((nc, nk, na));
        for c in 0..nc {
            for k in 0..nk {
                let pk = p_concept[[c, k]];
                if pk > 0.0 {
                    for a in 0..na {
                        abstract_policy[[c, k, a]] = joint_ka[[c, k, a]] / pk;
                    }
                    for st in 0..ns {
                        state_given_concept[[c, k, st]] /= pk;
                    }
                } else {
                    abstract_policy.slice_mut(s![c, k, ..]).fill(1.0 / na as f64);
                }
            }
        }
        Ok(JointModel {
            p_context,
            occupancy,
            classifier,
            policy,
            f_constant,
            probs,
            p_concept,
            state_given_concept,
            abstract_policy,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.policy.dim().0
    }
    pub fn n_states(&self) -> usize {
        self.policy.dim().1
    }
    pub fn n_actions(&self) -> usize {
        self.policy.dim().2
    }
    pub fn n_concepts(&self) -> usize {
        self.classifier.ncols()
    }
}

/// Joint under the softened optimal policy and occupancy of `solution`.
pub fn build_joint(cmdp: &TabularCmdp, solution: &Solution, classifier: &Array2<f64>) -> Result<JointModel> {
    if solution.n_states() != cmdp.n_states || solution.n_contexts() != cmdp.n_contexts {
        return Err(Error::DimensionMismatch("solution does not match environment".into()));
    }
    JointModel::from_parts(
        cmdp.p_context.clone(),
        solution.occupancy.clone(),
        classifier.clone(),
        solution.soft_optimal.probs.clone(),
        solution.f_constant,
    )
}

/// `I(S : A | S_phi, C)`, computed as `E_{C,S,S_phi} KL(pi*(.|s,c) || pi_phi*(.|s_phi,c))`.
pub fn conditional_mi(joint: &JointModel) -> f64 {
    expected_kl(joint, &joint.abstract_policy).expect("marginal policy covers the reference support")
}

/// `I(S : A | C)`: the conditional MI of the constant classifier.
pub fn state_action_mi(joint: &JointModel) -> f64 {
    let (nc, ns, na) = joint.policy.dim();
    let mut total = 0.0;
    for c in 0..nc {
        let mut marginal = vec![0.0; na];
        for st in 0..ns {
            for (a, m) in marginal.iter_mut().enumerate() {
                *m += joint.occupancy[[c, st]] * joint.policy[[c, st, a]];
            }
        }
        for st in 0..ns {
            let w = joint.p_context[c] * joint.occupancy[[c, st]];
            if w > 0.0 {
                let row = joint.policy.slice(s![c, st, ..]);
                total += w * kl_divergence(&row.to_vec(), &marginal).expect("mixture covers support");
            }
        }
    }
    total.max(0.0)
}

/// `I(S : A | S_phi)`: the same quantity with contexts marginalized out first.
pub fn context_free_mi(joint: &JointModel) -> f64 {
    let (nc, ns, na) = joint.policy.dim();
    let nk = joint.n_concepts();
    let mut p_state = vec![0.0; ns];
    let mut state_action = Array2::<f64>::zeros((ns, na));
    for c in 0..nc {
        for st in 0..ns {
            let w = joint.p_context[c] * joint.occupancy[[c, st]];
            p_state[st] += w;
            for a in 0..na {
                state_action[[st, a]] += w * joint.policy[[c, st, a]];
            }
        }
    }
    let mut concept_action = Array2::<f64>::zeros((nk, na));
    let mut p_k = vec![0.0; nk];
    for st in 0..ns {
        for k in 0..nk {
            let phi = joint.classifier[[st, k]];
            p_k[k] += phi * p_state[st];
            for a in 0..na {
                concept_action[[k, a]] += phi * state_action[[st, a]];
            }
        }
    }
    let mut total = 0.0;
    for st in 0..ns {
        if p_state[st] <= 0.0 {
            continue;
        }
        let row: Vec<f64> = state_action.row(st).iter().map(|x| x / p_state[st]).collect();
        for k in 0..nk {
            let w = p_state[st] * joint.classifier[[st, k]];
            if w > 0.0 {
                let m: Vec<f64> = concept_action.row(k).iter().map(|x| x / p_k[k]).collect();
                total += w * kl_divergence(&row, &m).expect("mixture covers support");
            }
        }
    }
    total.max(0.0)
}

/// `pi_phi*(a | s_phi, c) = sum_s pi*(a|s,c) p(s | s_phi, c)`, uniform where `p(s_phi|c) = 0`.
pub fn marginal_abstract_policy(joint: &JointModel) -> Array3<f64> {
    joint.abstract_policy.clone()
}

/// `E_{C,S,S_phi} KL(pi*(.|s,c) || pi_phi(.|s_phi,c))` for an abstract policy `[[c, k, a]]`.
pub fn expected_kl(joint: &JointModel, abstract_policy: &Array3<f64>) -> Result<f64> {
    let (nc, ns, na) = joint.policy.dim();
    let nk = joint.n_concepts();
    if abstract_policy.dim() != (nc, nk, na) {
        return Err(Error::DimensionMismatch(format!(
            "abstract policy has shape {:?}, expected {:?}",
            abstract_policy.dim(),
            (nc, nk, na)
        )));
    }
    let mut total = 0.0;
    for c in 0..nc {
        for st in 0..ns {
            let w = joint.p_context[c] * joint.occupancy[[c, st]];
            if w <= 0.0 {
                continue;
            }
            let row = joint.policy.slice(s![c, st, ..]);
            for k in 0..nk {
                let wk = w * joint.classifier[[st, k]];
                if wk > 0.0 {
                    total += wk * kl_view(row, abstract_policy.slice(s![c, k, ..]))?;
                }
            }
        }
    }
    Ok(total.max(0.0))
}

/// `U(pi_phi) = F_M E_{C,S,S_phi} KL(pi* || pi_phi)`.
pub fn kl_bound(joint: &JointModel, abstract_policy: &Array3<f64>) -> Result<f64> {
    Ok(joint.f_constant * expected_kl(joint, abstract_policy)?)
}

/// `D(s, s' | c) = KL(pi*(.|s,c) || pi*(.|s',c))`.
pub fn behavior_dissimilarity(policy: &Policy, s: usize, s_prime: usize, context: usize) -> Result<f64> {
    kl_view(policy.row(context, s), policy.row(context, s_prime))
}

/// `J_phi(s, s' | c) = sum_k phi(k|s) phi(k|s') / p(k|c)`.
pub fn coupling(joint: &JointModel, s: usize, s_prime: usize, context: usize) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..joint.n_concepts() {
        let num = joint.classifier[[s, k]] * joint.classifier[[s_prime, k]];
        if num > 0.0 {
            let pk = joint.p_concept[[context, k]];
            if pk <= 0.0 {
                return Err(Error::ZeroProbabilityConcept { concept: k, context });
            }
            total += num / pk;
        }
    }
    Ok(total)
}

/// `E_{C; S, S' iid p_S(.|c)} [J_phi(s, s'|c) D(s, s'|c)]`.
pub fn dissimilarity_bound(joint: &JointModel) -> Result<f64> {
    let (nc, ns, _) = joint.policy.dim();
    let policy = Policy {
        probs: joint.policy.clone(),
    };
    let mut total = 0.0;
    for c in 0..nc {
        let mut inner = 0.0;
        for st in 0..ns {
            let ws = joint.occupancy[[c, st]];
            if ws <= 0.0 {
                continue;
            }
            for sp in 0..ns {
                let wsp = joint.occupancy[[c, sp]];
                if wsp <= 0.0 || st == sp {
                    continue;
                }
                let j = coupling(joint, st, sp, c)?;
                if j > 0.0 {
                    inner += ws * wsp * j * behavior_dissimilarity(&policy, st, sp, c)?;
                }
            }
        }
        total += joint.p_context[c] * inner;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub state: usize,
    pub state_prime: usize,
    pub context: usize,
}

/// Hard assignment behind a deterministic classifier, or `None` if some row is
/// not one-hot.
pub fn hard_assignment(classifier: &Array2<f64>) -> Option<Vec<usize>> {
    classifier
        .outer_iter()
        .map(|row| {
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            (ones.len() == 1 && zeros == row.len() - 1).then(|| ones[0])
        })
        .collect()
}

/// `max D_test(s, s'|c)` over pairs coupled by a deterministic classifier
/// (`J_phi(s, s'|c) > 0`), evaluated on the test joint. Ties keep the first
/// `(c, s, s')` in lexicographic order.
pub fn transfer_bound(test_joint: &JointModel) -> Result<(f64, Witness)> {
    let assignment = hard_assignment(&test_joint.classifier).ok_or_else(|| {
        Error::InvalidArgument("transfer bound needs a deterministic classifier".into())
    })?;
    let (nc, ns, _) = test_joint.policy.dim();
    let policy = Policy {
        probs: test_joint.policy.clone(),
    };
    let mut best = 0.0;
    let mut witness = Witness {
        state: 0,
        state_prime: 0,
        context: 0,
    };
    for c in 0..nc {
        for st in 0..ns {
            for sp in 0..ns {
                let k = assignment[st];
                if assignment[sp] != k || test_joint.p_concept[[c, k]] <= 0.0 {
                    continue;
                }
                let d = behavior_dissimilarity(&policy, st, sp, c)?;
                if d > best {
                    best = d;
                    witness = Witness {
                        state: st,
                        state_prime: sp,
                        context: c,
                    };
                }
            }
        }
    }
    Ok((best, witness))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptDiagnostics {
    /// `H(S_phi)`
    pub concept_entropy: f64,
    /// `I(S_phi : C)`
    pub concept_context_mi: f64,
}

pub fn concept_diagnostics(joint: &JointModel) -> ConceptDiagnostics {
    let (nc, nk) = joint.p_concept.dim();
    let mut p_k = vec![0.0; nk];
    for c in 0..nc {
        for k in 0..nk {
            p_k[k] += joint.p_context[c] * joint.p_concept[[c, k]];
        }
    }
    let mut mi = 0.0;
    for c in 0..nc {
        if joint.p_context[c] <= 0.0 {
            continue;
        }
        let row = joint.p_concept.row(c).to_vec();
        mi += joint.p_context[c] * kl_divergence(&row, &p_k).expect("mixture covers support");
    }
    ConceptDiagnostics {
        concept_entropy: entropy(&p_k),
        concept_context_mi: mi.max(0.0),
    }
}

/// State policy executed by an agent that draws a concept and then an action:
/// `pi(a|s,c) = sum_k phi(k|s) pi_phi(a|k,c)`.
pub fn lift_abstract_policy(classifier: &Array2<f64>, abstract_policy: &Array3<f64>) -> Policy {
    let (nc, nk, na) = abstract_policy.dim();
    let ns = classifier.nrows();
    let mut probs = Array3::zeros((nc, ns, na));
    for c in 0..nc {
        for st in 0..ns {
            for k in 0..nk {
                let phi = classifier[[st, k]];
                if phi == 0.0 {
                    continue;
                }
                for a in 0..na {
                    probs[[c, st, a]] += phi * abstract_policy[[c, k, a]];
                }
            }
        }
    }
    Policy { probs }
}

/// Every quantity in the regret/information chain for one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub f_constant: f64,
    /// `R(pi*) - R(pi_phi*)` against the softened reference policy.
    pub regret: f64,
    pub regret_sq_over_f: f64,
    /// `I(S:A|S_phi,C)`
    pub conditional_mi: f64,
    /// `U(pi_phi*)`
    pub kl_bound: f64,
    pub dissimilarity_bound: f64,
    pub transfer: Option<(f64, Witness)>,
    pub margins: BoundMargins,
}

/// Non-negative when the corresponding inequality holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundMargins {
    /// `F I - regret^2`
    pub mi: f64,
    /// `U(pi_phi*) - regret^2`
    pub kl: f64,
    /// `-|U(pi_phi*) - F I|`: the minimum of `U` equals `F I`.
    pub kl_identity: f64,
    /// `dissimilarity_bound - I`
    pub dissimilarity: f64,
    /// `transfer - regret^2 / F`
    pub transfer: Option<f64>,
}

impl BoundReport {
    /// Smallest margin in the report.
    pub fn worst_margin(&self) -> f64 {
        let m = &self.margins;
        [m.mi, m.kl, m.dissimilarity, m.transfer.unwrap_or(f64::INFINITY)]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.worst_margin() >= -tol && self.margins.kl_identity >= -tol
    }
}

/// Evaluates the full chain for the classifier inside `joint`. `reference` is
/// the policy regret is measured against (normally the same softened policy
/// the joint was built from).
pub fn bound_report(cmdp: &TabularCmdp, joint: &JointModel, reference: &Policy) -> Result<BoundReport> {
    let marginal = marginal_abstract_policy(joint);
    let lifted = lift_abstract_policy(&joint.classifier, &marginal);
    let regret = evaluate_policy(cmdp, reference)? - evaluate_policy(cmdp, &lifted)?;
    let f = joint.f_constant;
    let mi = conditional_mi(joint);
    let kl = kl_bound(joint, &marginal)?;
    let t2 = dissimilarity_bound(joint)?;
    let transfer = match hard_assignment(&joint.classifier) {
        Some(_) => Some(transfer_bound(joint)?),
        None => None,
    };
    let regret_sq = regret * regret;
    let regret_sq_over_f = if f > 0.0 { regret_sq / f } else { 0.0 };
    let margins = BoundMargins {
        mi: f * mi - regret_sq,
        kl: kl - regret_sq,
        kl_identity: -(kl - f * mi).abs(),
        dissimilarity: t2 - mi,
        transfer: transfer.map(|(b, _)| b - regret_sq_over_f),
    };
    Ok(BoundReport {
        f_constant: f,
        regret,
        regret_sq_over_f,
        conditional_mi: mi,
        kl_bound: kl,
        dissimilarity_bound: t2,
        transfer,
        margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{build_random_cmdp, build_rental_car, rental_car_partition};
    use crate::solver::{solve, SolveOptions};
    use ndarray::Array2;

    fn one_hot(assign: &[usize], n: usize) -> Array2<f64> {
        let mut m = Array2::zeros((assign.len(), n));
        for (s, &k) in assign.iter().enumerate() {
            m[[s, k]] = 1.0;
        }
        m
    }

    /// Independent oracle: I(S:A|S_phi,C) from entropies of the full table.
    fn mi_by_entropies(joint: &JointModel) -> f64 {
        let (nc, ns, nk, na) = joint.probs.dim();
        let h = |v: Vec<f64>| entropy(&v);
        let mut a_k_c = vec![0.0; nc * nk * na];
        let mut k_c = vec![0.0; nc * nk];
        let mut s_k_c = vec![0.0; nc * ns * nk];
        let mut all = Vec::with_capacity(nc * ns * nk * na);
        for c in 0..nc {
            for st in 0..ns {
                for k in 0..nk {
                    for a in 0..na {
                        let p = joint.probs[[c, st, k, a]];
                        all.push(p);
                        a_k_c[(c * nk + k) * na + a] += p;
                        k_c[c * nk + k] += p;
                        s_k_c[(c * ns + st) * nk + k] += p;
                    }
                }
            }
        }
        // H(A|K,C) - H(A|S,K,C)
        (h(a_k_c) - h(k_c)) - (h(all) - h(s_k_c))
    }

    fn car() -> (TabularCmdp, Solution) {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        (m, sol)
    }

    fn greedy_joint(m: &TabularCmdp, sol: &Solution, rows: Array2<f64>) -> JointModel {
        JointModel::from_parts(
            m.p_context.clone(),
            sol.occupancy.clone(),
            rows,
            sol.greedy_policy().probs,
            sol.f_constant,
        )
        .unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let e = std::f64::consts::E;
        let (p, q) = (e / (1.0 + e), 1.0 / (1.0 + e));
        let direct = p * (p / q).ln() + q * (q / p).ln();
        let v = kl_divergence(&[p, q], &[q, p]).unwrap();
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.4621).abs() < 1e-4);
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::SupportViolation { index: 1, .. })
        ));
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn joint_shape_and_mass() {
        let (m, sol) = car();
        let j = build_joint(&m, &sol, &one_hot(&rental_car_partition(), 2)).unwrap();
        assert_eq!(j.probs.len(), 32);
        assert!((j.probs.sum() - 1.0).abs() < 1e-9);
        let bad = Array2::from_elem((3, 2), 0.5);
        assert!(build_joint(&m, &sol, &bad).is_err());
    }

    #[test]
    fn degenerate_joint_is_single_atom() {
        let j = JointModel::from_parts(
            Array1::from(vec![0.0, 1.0]),
            Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 0.0, 1.0]).unwrap(),
            one_hot(&[1, 0], 2),
            Array3::from_shape_vec((2, 2, 2), vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 1.0, 0.0]).unwrap(),
            1.0,
        )
        .unwrap();
        assert_eq!(j.probs[[1, 1, 0, 0]], 1.0);
        assert_eq!(j.probs.iter().filter(|&&p| p > 0.0).count(), 1);
    }

    #[test]
    fn rental_car_mi_values() {
        let (m, sol) = car();
        // deterministic optimum: only c2 contributes ln 2, weight 1/2
        let constant = greedy_joint(&m, &sol, Array2::ones((4, 1)));
        assert!((conditional_mi(&constant) - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((mi_by_entropies(&constant) - 0.5 * 2f64.ln()).abs() < 1e-12);
        // softened (tau = 0.05)
        let soft = build_joint(&m, &sol, &Array2::ones((4, 1))).unwrap();
        let v = conditional_mi(&soft);
        assert!((v - mi_by_entropies(&soft)).abs() < 1e-12);
        assert!((v - 0.3466).abs() < 1e-3, "{v}");
        let sep = build_joint(&m, &sol, &one_hot(&rental_car_partition(), 2)).unwrap();
        assert!(conditional_mi(&sep).abs() < 1e-12);
        let id = build_joint(&m, &sol, &Array2::eye(4)).unwrap();
        assert!(conditional_mi(&id).abs() < 1e-12);
    }

    #[test]
    fn mi_matches_entropy_oracle_on_random_instances() {
        for seed in 0..10 {
            let m = build_random_cmdp(5, 3, 2, 0.8, seed).unwrap();
            let sol = solve(&m, &SolveOptions::with_tau(0.3)).unwrap();
            let mut rng = crate::rng::stream_rng(seed, 9);
            let rows = Array2::from_shape_fn((5, 3), |_| 0.0)
                + &Array2::from_shape_vec(
                    (5, 3),
                    (0..5).flat_map(|_| crate::rng::uniform_simplex(&mut rng, 3)).collect(),
                )
                .unwrap();
            let j = build_joint(&m, &sol, &rows).unwrap();
            assert!((conditional_mi(&j) - mi_by_entropies(&j)).abs() < 1e-12);
            assert!(conditional_mi(&j) <= state_action_mi(&j) + 1e-12);
        }
    }

    #[test]
    fn context_free_examples() {
        let (m, sol) = car();
        let sep = build_joint(&m, &sol, &one_hot(&rental_car_partition(), 2)).unwrap();
        // electric states look alike once contexts are mixed
        assert!(context_free_mi(&sep).abs() < 1e-12);
        let constant = build_joint(&m, &sol, &Array2::ones((4, 1))).unwrap();
        assert!(context_free_mi(&constant) > 0.01);
        let id = build_joint(&m, &sol, &Array2::eye(4)).unwrap();
        assert!(context_free_mi(&id).abs() < 1e-12);
        let single = m.restrict_contexts(&[1]).unwrap();
        let sol1 = solve(&single, &SolveOptions::default()).unwrap();
        let rows = Array2::ones((4, 1));
        let j = build_joint(&single, &sol1, &rows).unwrap();
        assert!((context_free_mi(&j) - conditional_mi(&j)).abs() < 1e-12);
    }

    #[test]
    fn marginal_policy_examples() {
        // two equally likely states, opposite deterministic actions
        let j = JointModel::from_parts(
            Array1::ones(1),
            Array2::from_elem((1, 2), 0.5),
            Array2::ones((2, 1)),
            Array3::from_shape_vec((1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            1.0,
        )
        .unwrap();
        let pi = marginal_abstract_policy(&j);
        assert_eq!(pi.as_slice().unwrap(), &[0.5, 0.5]);

        let (m, sol) = car();
        let id = build_joint(&m, &sol, &Array2::eye(4)).unwrap();
        let pi = marginal_abstract_policy(&id);
        for c in 0..2 {
            for st in 0..4 {
                for a in 0..2 {
                    assert!((pi[[c, st, a]] - sol.soft_optimal.probs[[c, st, a]]).abs() < 1e-15);
                }
            }
        }
        let constant = build_joint(&m, &sol, &Array2::ones((4, 1))).unwrap();
        let pi = marginal_abstract_policy(&constant);
        assert!((pi[[1, 0, 0]] - 0.5).abs() < 1e-12);
        assert!((pi[[1, 0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unvisited_concepts_get_uniform_rows() {
        let (m, sol) = car();
        let j = build_joint(&m, &sol, &one_hot(&[0, 0, 0, 0], 3)).unwrap();
        assert_eq!(j.p_concept[[0, 2]], 0.0);
        assert_eq!(j.abstract_policy[[0, 2, 0]], 0.5);
    }

    #[test]
    fn kl_bound_examples() {
        let (m, sol) = car();
        let id = build_joint(&m, &sol, &Array2::eye(4)).unwrap();
        assert!(kl_bound(&id, &marginal_abstract_policy(&id)).unwrap().abs() < 1e-12);
        let r = build_random_cmdp(3, 2, 1, 0.9, 1).unwrap();
        let mut r = r;
        r.rewards.fill(0.5);
        r.rewards[[0, 0, 0]] = -1.0;
        assert!((r.f_constant() - 200.0).abs() < 1e-9);
        let sep = build_joint(&m, &sol, &one_hot(&rental_car_partition(), 2)).unwrap();
        let report = bound_report(&m, &sep, &sol.soft_optimal).unwrap();
        assert!(report.kl_bound >= report.regret.powi(2));
    }

    #[test]
    fn dissimilarity_examples() {
        let (_, sol) = car();
        assert_eq!(behavior_dissimilarity(&sol.soft_optimal, 1, 1, 0).unwrap(), 0.0);
        for st in 0..4 {
            for sp in 0..4 {
                assert!(behavior_dissimilarity(&sol.soft_optimal, st, sp, 0).unwrap() < 1e-12);
            }
        }
        let q = Array3::from_shape_vec((1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = crate::solver::soften_policy(&q, crate::solver::Softening::Boltzmann { tau: 1.0 }).unwrap();
        assert!((behavior_dissimilarity(&p, 0, 1, 0).unwrap() - 0.4621).abs() < 1e-4);
    }

    #[test]
    fn coupling_examples() {
        let occ = Array2::from_elem((1, 4), 0.25);
        let pol = Array3::from_elem((1, 4, 2), 0.5);
        let j = JointModel::from_parts(Array1::ones(1), occ.clone(), one_hot(&[0, 0, 1, 1], 2), pol.clone(), 1.0).unwrap();
        assert!((coupling(&j, 0, 1, 0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(coupling(&j, 0, 2, 0).unwrap(), 0.0);
        let u = JointModel::from_parts(Array1::ones(1), occ.clone(), Array2::from_elem((4, 2), 0.5), pol.clone(), 1.0).unwrap();
        assert!((coupling(&u, 0, 3, 0).unwrap() - 1.0).abs() < 1e-12);
        let mut occ0 = occ;
        occ0[[0, 2]] = 0.5;
        occ0[[0, 3]] = 0.5;
        occ0[[0, 0]] = 0.0;
        occ0[[0, 1]] = 0.0;
        let z = JointModel::from_parts(Array1::ones(1), occ0, one_hot(&[0, 0, 1, 1], 2), pol, 1.0).unwrap();
        assert!(matches!(coupling(&z, 0, 1, 0), Err(Error::ZeroProbabilityConcept { concept: 0, .. })));
    }

    #[test]
    fn dissimilarity_bound_examples() {
        let (m, sol) = car();
        let id = build_joint(&m, &sol, &Array2::eye(4)).unwrap();
        assert_eq!(dissimilarity_bound(&id).unwrap(), 0.0);
        let sep = build_joint(&m, &sol, &one_hot(&rental_car_partition(), 2)).unwrap();
        assert!(dissimilarity_bound(&sep).unwrap() < 1e-12);
        let constant = build_joint(&m, &sol, &Array2::ones((4, 1))).unwrap();
        let b = dissimilarity_bound(&constant).unwrap();
        assert!(b >= conditional_mi(&constant));
        assert!(b >= 0.3466 - 1e-3);
    }

    #[test]
    fn transfer_bound_examples() {
        let (m, sol) = car();
        let sep = build_joint(&m, &sol, &one_hot(&rental_car_partition(), 2)).unwrap();
        assert!(transfer_bound(&sep).unwrap().0 < 1e-12);
        let id = build_joint(&m, &sol, &Array2::eye(4)).unwrap();
        assert_eq!(transfer_bound(&id).unwrap().0, 0.0);
        let soft = build_joint(&m, &sol, &Array2::from_elem((4, 2), 0.5)).unwrap();
        assert!(transfer_bound(&soft).is_err());
    }

    #[test]
    fn diagnostics_examples() {
        let occ = Array2::from_elem((2, 4), 0.25);
        let pol = Array3::from_elem((2, 4, 2), 0.5);
        let j = JointModel::from_parts(Array1::from(vec![0.5, 0.5]), occ, Array2::eye(4), pol, 1.0).unwrap();
        let d = concept_diagnostics(&j);
        assert!((d.concept_entropy - 4f64.ln()).abs() < 1e-12);
        assert!(d.concept_context_mi.abs() < 1e-15);
    }
}
