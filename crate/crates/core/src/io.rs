//! File formats: environments, solutions, classifiers, curves and reports.
//!
//! JSON is written pretty-printed with a trailing newline. Floats use the
//! shortest representation that round-trips, so parse-then-write reproduces
//! an environment file byte for byte.

use ndarray::{Array1, Array2, Array3, Array4};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cmdp::{Labels, Policy, TabularCmdp};
use crate::curve::LearningCurve;
use crate::error::{Error, Result};
use crate::learner::{ClassifierMode, ConceptClassifier, FactoredClassifier};
use crate::solver::{Solution, SolverMeta};

pub const CMDP_VERSION: u32 = 1;
pub const SOLUTION_VERSION: u32 = 1;
pub const CLASSIFIER_VERSION: u32 = 1;
pub const CURVE_HEADER: &str = "episode,seed,context,return,steps";

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: ".".into(),
        message: e.to_string(),
    })?;
    s.push('\n');
    Ok(s)
}

/// Parses JSON, reporting the path of the offending key on failure.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn ragged(path: String, expected: usize, got: usize) -> Error {
    Error::Parse {
        path,
        message: format!("expected {expected} entries, found {got}"),
    }
}

fn nested2(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn nested3(a: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    a.outer_iter().map(|m| nested2(&m.to_owned())).collect()
}

fn nested4(a: &Array4<f64>) -> Vec<Vec<Vec<Vec<f64>>>> {
    a.outer_iter().map(|m| nested3(&m.to_owned())).collect()
}

fn check_len<T>(v: &[T], n: usize, path: &str) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(ragged(path.to_string(), n, v.len()))
    }
}

fn array1(v: &[f64], n: usize, path: &str) -> Result<Array1<f64>> {
    check_len(v, n, path)?;
    Ok(Array1::from(v.to_vec()))
}

fn array2(v: &[Vec<f64>], dim: (usize, usize), path: &str) -> Result<Array2<f64>> {
    check_len(v, dim.0, path)?;
    let mut out = Array2::zeros(dim);
    for (i, row) in v.iter().enumerate() {
        check_len(row, dim.1, &format!("{path}[{i}]"))?;
        for (j, &x) in row.iter().enumerate() {
            out[[i, j]] = x;
        }
    }
    Ok(out)
}

fn array3(v: &[Vec<Vec<f64>>], dim: (usize, usize, usize), path: &str) -> Result<Array3<f64>> {
    check_len(v, dim.0, path)?;
    let mut out = Array3::zeros(dim);
    for (i, m) in v.iter().enumerate() {
        let sub = array2(m, (dim.1, dim.2), &format!("{path}[{i}]"))?;
        out.index_axis_mut(ndarray::Axis(0), i).assign(&sub);
    }
    Ok(out)
}

fn array4(v: &[Vec<Vec<Vec<f64>>>], dim: (usize, usize, usize, usize), path: &str) -> Result<Array4<f64>> {
    check_len(v, dim.0, path)?;
    let mut out = Array4::zeros(dim);
    for (i, m) in v.iter().enumerate() {
        let sub = array3(m, (dim.1, dim.2, dim.3), &format!("{path}[{i}]"))?;
        out.index_axis_mut(ndarray::Axis(0), i).assign(&sub);
    }
    Ok(out)
}

fn check_version(found: u32, expected: u32, key: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::Parse {
            path: key.into(),
            message: format!("unsupported version {found}, expected {expected}"),
        })
    }
}

/// On-disk environment. Tables are nested arrays indexed context-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpFile {
    pub cmdp_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_contexts: usize,
    pub gamma: f64,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub p_context: Vec<f64>,
    pub p_initial: Vec<Vec<f64>>,
    #[serde(default)]
    pub labels: Labels,
}

impl From<&TabularCmdp> for CmdpFile {
    fn from(m: &TabularCmdp) -> Self {
        CmdpFile {
            cmdp_version: CMDP_VERSION,
            n_states: m.n_states,
            n_actions: m.n_actions,
            n_contexts: m.n_contexts,
            gamma: m.gamma,
            transitions: nested4(&m.transitions),
            rewards: nested3(&m.rewards),
            p_context: m.p_context.to_vec(),
            p_initial: nested2(&m.p_initial),
            labels: m.labels.clone(),
        }
    }
}

impl CmdpFile {
    pub fn into_cmdp(self) -> Result<TabularCmdp> {
        check_version(self.cmdp_version, CMDP_VERSION, "cmdp_version")?;
        let (nc, ns, na) = (self.n_contexts, self.n_states, self.n_actions);
        let transitions = array4(&self.transitions, (nc, ns, na, ns), "transitions")?;
        let rewards = array3(&self.rewards, (nc, ns, na), "rewards")?;
        let p_context = array1(&self.p_context, nc, "p_context")?;
        let p_initial = array2(&self.p_initial, (nc, ns), "p_initial")?;
        TabularCmdp::new(self.gamma, transitions, rewards, p_context, p_initial, self.labels)
    }
}

pub fn cmdp_to_json(cmdp: &TabularCmdp) -> Result<String> {
    to_json(&CmdpFile::from(cmdp))
}

pub fn cmdp_from_json(text: &str) -> Result<TabularCmdp> {
    from_json::<CmdpFile>(text)?.into_cmdp()
}

/// On-disk solution dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub solution_version: u32,
    /// Contexts of the source environment this solution covers.
    pub contexts: Vec<usize>,
    pub q_values: Vec<Vec<Vec<f64>>>,
    pub v_values: Vec<Vec<f64>>,
    pub soft_optimal: Vec<Vec<Vec<f64>>>,
    pub occupancy: Vec<Vec<f64>>,
    pub f_constant: f64,
    pub optimal_return: f64,
    pub meta: SolverMeta,
}

impl SolutionFile {
    pub fn new(solution: &Solution, contexts: Vec<usize>, optimal_return: f64) -> Self {
        SolutionFile {
            solution_version: SOLUTION_VERSION,
            contexts,
            q_values: nested3(&solution.q_values),
            v_values: nested2(&solution.v_values),
            soft_optimal: nested3(&solution.soft_optimal.probs),
            occupancy: nested2(&solution.occupancy),
            f_constant: solution.f_constant,
            optimal_return,
            meta: solution.meta.clone(),
        }
    }

    pub fn into_solution(self) -> Result<Solution> {
        check_version(self.solution_version, SOLUTION_VERSION, "solution_version")?;
        let nc = self.q_values.len();
        let ns = self.q_values.first().map_or(0, |m| m.len());
        let na = self.q_values.first().and_then(|m| m.first()).map_or(0, |r| r.len());
        Ok(Solution {
            q_values: array3(&self.q_values, (nc, ns, na), "q_values")?,
            v_values: array2(&self.v_values, (nc, ns), "v_values")?,
            soft_optimal: Policy::new(array3(&self.soft_optimal, (nc, ns, na), "soft_optimal")?)?,
            occupancy: array2(&self.occupancy, (nc, ns), "occupancy")?,
            f_constant: self.f_constant,
            meta: self.meta,
        })
    }
}

/// On-disk classifier. Factored classifiers store their factors' logits side
/// by side: columns `[0, sizes[0])` belong to the first factor, and so on.
/// `n_concepts` is the product of `factor_sizes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierFile {
    pub classifier_version: u32,
    pub n_concepts: usize,
    pub logits: Vec<Vec<f64>>,
    pub temperature: f64,
    pub mode: ClassifierMode,
    pub factor_sizes: Vec<usize>,
    /// Hard assignment over the (product) concepts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

impl ClassifierFile {
    pub fn from_classifier(c: &ConceptClassifier, objective: Option<f64>) -> Self {
        ClassifierFile {
            classifier_version: CLASSIFIER_VERSION,
            n_concepts: c.n_concepts,
            logits: nested2(&c.logits),
            temperature: c.temperature,
            mode: c.mode,
            factor_sizes: vec![c.n_concepts],
            assignment: Some(c.assignment()),
            objective,
        }
    }

    pub fn from_factored(f: &FactoredClassifier, objective: Option<f64>) -> Result<Self> {
        let first = f
            .factors
            .first()
            .ok_or_else(|| Error::InvalidArgument("factored classifier has no factors".into()))?;
        if f.factors.iter().any(|c| c.temperature != first.temperature || c.mode != first.mode) {
            return Err(Error::InvalidArgument(
                "factors must share temperature and mode to be stored together".into(),
            ));
        }
        let sizes = f.factor_sizes();
        let logits = (0..first.n_states())
            .map(|s| f.factors.iter().flat_map(|c| c.logits.row(s).to_vec()).collect())
            .collect();
        Ok(ClassifierFile {
            classifier_version: CLASSIFIER_VERSION,
            n_concepts: sizes.iter().product(),
            logits,
            temperature: first.temperature,
            mode: first.mode,
            factor_sizes: sizes,
            assignment: Some(f.product().assignment()),
            objective,
        })
    }

    pub fn into_factored(self) -> Result<FactoredClassifier> {
        check_version(self.classifier_version, CLASSIFIER_VERSION, "classifier_version")?;
        if self.factor_sizes.is_empty() || self.factor_sizes.contains(&0) {
            return Err(Error::Parse {
                path: "factor_sizes".into(),
                message: "factor sizes must be a non-empty list of positive integers".into(),
            });
        }
        let product: usize = self.factor_sizes.iter().product();
        if product != self.n_concepts {
            return Err(Error::Parse {
                path: "n_concepts".into(),
                message: format!("{} does not match the product of factor_sizes ({product})", self.n_concepts),
            });
        }
        let width: usize = self.factor_sizes.iter().sum();
        let all = array2(&self.logits, (self.logits.len(), width), "logits")?;
        let mut factors = Vec::with_capacity(self.factor_sizes.len());
        let mut start = 0;
        for &n in &self.factor_sizes {
            let logits = all.slice(ndarray::s![.., start..start + n]).to_owned();
            factors.push(ConceptClassifier::new(logits, self.temperature, self.mode)?);
            start += n;
        }
        Ok(FactoredClassifier { factors })
    }

    /// Flat classifier over the product concepts.
    pub fn into_classifier(self) -> Result<ConceptClassifier> {
        let mut f = self.into_factored()?;
        if f.factors.len() == 1 {
            Ok(f.factors.pop().expect("one factor"))
        } else {
            Ok(f.product())
        }
    }
}

pub fn classifier_from_json(text: &str) -> Result<ConceptClassifier> {
    from_json::<ClassifierFile>(text)?.into_classifier()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Serializes flat records as CSV, with a header taken from the field names.
pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct CurveRow {
    episode: usize,
    seed: u64,
    context: usize,
    #[serde(rename = "return")]
    ret: f64,
    steps: usize,
}

/// Curves as CSV with header `episode,seed,context,return,steps`.
pub fn curves_to_csv(curves: &[LearningCurve]) -> Result<String> {
    let rows: Vec<CurveRow> = curves
        .iter()
        .flat_map(|c| {
            c.records.iter().map(|r| CurveRow {
                episode: r.episode,
                seed: c.seed,
                context: r.context,
                ret: r.ret,
                steps: r.steps,
            })
        })
        .collect();
    if rows.is_empty() {
        return Ok(format!("{CURVE_HEADER}\n"));
    }
    rows_to_csv(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{build_random_cmdp, build_rental_car};
    use crate::learner::Concepts;
    use crate::solver::{solve, SolveOptions};

    #[test]
    fn environment_round_trip_is_byte_identical() {
        for m in [build_rental_car(0.5, 1.0).unwrap(), build_random_cmdp(5, 3, 2, 0.9, 4).unwrap()] {
            let a = cmdp_to_json(&m).unwrap();
            let back = cmdp_from_json(&a).unwrap();
            assert_eq!(back, m);
            assert_eq!(cmdp_to_json(&back).unwrap(), a);
        }
    }

    #[test]
    fn parse_errors_name_the_key() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let text = cmdp_to_json(&m).unwrap().replace("\"gamma\"", "\"gama\"");
        let err = cmdp_from_json(&text).unwrap_err().to_string();
        assert!(err.contains("gama"), "{err}");

        let mut file = CmdpFile::from(&m);
        file.rewards[1][2].pop();
        let err = cmdp_from_json(&to_json(&file).unwrap()).unwrap_err().to_string();
        assert!(err.contains("rewards[1][2]"), "{err}");

        let text = cmdp_to_json(&m).unwrap().replacen("\"n_states\": 4", "\"n_states\": \"four\"", 1);
        let err = cmdp_from_json(&text).unwrap_err().to_string();
        assert!(err.contains("n_states"), "{err}");
    }

    #[test]
    fn version_and_validation_are_checked() {
        let m = build_rental_car(0.5, 1.0).unwrap();
        let mut file = CmdpFile::from(&m);
        file.cmdp_version = 2;
        assert!(file.into_cmdp().unwrap_err().to_string().contains("cmdp_version"));
        let mut file = CmdpFile::from(&m);
        file.transitions[0][0][0][0] += 0.5;
        assert!(matches!(file.into_cmdp(), Err(Error::InvalidCmdp(_))));
    }

    #[test]
    fn solution_round_trip() {
        let m = build_random_cmdp(4, 2, 2, 0.8, 1).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        let file = SolutionFile::new(&sol, vec![0, 1], sol.optimal_return(&m));
        let text = to_json(&file).unwrap();
        let back = from_json::<SolutionFile>(&text).unwrap().into_solution().unwrap();
        assert_eq!(back, sol);
    }

    #[test]
    fn classifier_round_trips() {
        let c = ConceptClassifier::from_assignment(&[0, 0, 1, 1], 2).unwrap();
        let text = to_json(&ClassifierFile::from_classifier(&c, Some(0.0))).unwrap();
        assert_eq!(classifier_from_json(&text).unwrap(), c);

        let f = FactoredClassifier {
            factors: vec![
                ConceptClassifier::from_assignment(&[0, 1, 2, 0], 3).unwrap(),
                ConceptClassifier::from_assignment(&[1, 0, 1, 0], 2).unwrap(),
            ],
        };
        let file = ClassifierFile::from_factored(&f, None).unwrap();
        assert_eq!(file.n_concepts, 6);
        assert_eq!(file.assignment.as_deref(), Some(&[1, 2, 5, 0][..]));
        let back = from_json::<ClassifierFile>(&to_json(&file).unwrap()).unwrap();
        assert_eq!(back.clone().into_factored().unwrap(), f);
        assert_eq!(back.into_classifier().unwrap().rows(), f.product().rows());
    }

    #[test]
    fn classifier_product_mismatch_rejected() {
        let c = ConceptClassifier::from_assignment(&[0, 1], 2).unwrap();
        let mut file = ClassifierFile::from_classifier(&c, None);
        file.n_concepts = 3;
        assert!(file.into_classifier().unwrap_err().to_string().contains("n_concepts"));
    }

    #[test]
    fn curve_csv_layout() {
        let mut c = LearningCurve::new(7);
        c.push(1, 0.25, 12);
        let csv = curves_to_csv(&[c]).unwrap();
        assert_eq!(csv, "episode,seed,context,return,steps\n0,7,1,0.25,12\n");
        assert_eq!(curves_to_csv(&[]).unwrap(), "episode,seed,context,return,steps\n");
    }
}
