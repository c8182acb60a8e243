use std::fs;
use std::path::{Path, PathBuf};

use concept_cmdp::cmdp::{
    build_contextual_gridworld, build_random_cmdp, build_rental_car, maze_test_spec, maze_train_spec, seek_avoid_spec,
    TabularCmdp,
};
use concept_cmdp::info::{build_joint, concept_diagnostics, BoundReport, ConceptDiagnostics};
use concept_cmdp::io::{
    cmdp_from_json, cmdp_to_json, curves_to_csv, from_json, rows_to_csv, to_json, ClassifierFile, SolutionFile,
};
use concept_cmdp::learner::{learn_factored, objective, ConceptClassifier, Concepts, LearnConfig, LearnMethod};
use concept_cmdp::solver::{solve as solve_exact, Solution, SolveOptions};
use concept_cmdp::suite::{check_classifier, tampered_policy, verify_bounds_suite, CheckResult, Family, SizeSpec, Violations};
use concept_cmdp::transfer::{abstraction_regret, fit_concepts, transfer_experiment, ConceptMethod, TransferConfig};
use concept_cmdp::trmc::{run_trmc, TrmcConfig};
use concept_cmdp::{Error, ErrorClass};
use serde::Serialize;

use crate::{EnvKind, Format, LearnArgs, MakeEnvArgs, ReportArgs, SolveArgs, TransferArgs, TrmcArgs, VerifyArgs};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_CAPABILITY: u8 = 4;
pub const EXIT_VIOLATION: u8 = 5;

pub const THREADS_ENV: &str = "CONCEPT_CMDP_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Input => EXIT_INPUT,
            ErrorClass::Convergence => EXIT_CONVERGENCE,
            ErrorClass::Capability => EXIT_CAPABILITY,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub struct Ctx {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn emit(&self, text: &str) -> CliResult {
        match &self.out {
            Some(path) => write_file(path, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn emit_json<T: Serialize>(&self, value: &T) -> CliResult {
        self.emit(&to_json(value)?)
    }
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn in_file(path: &Path, e: Error) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{}: {}", path.display(), err.message);
    err
}

fn load_env(path: &Path) -> CliResult<TabularCmdp> {
    cmdp_from_json(&read_file(path)?).map_err(|e| in_file(path, e))
}

fn load_classifier(path: &Path) -> CliResult<ConceptClassifier> {
    let file: ClassifierFile = from_json(&read_file(path)?).map_err(|e| in_file(path, e))?;
    file.into_classifier().map_err(|e| in_file(path, e))
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        Some(p) => from_json(&read_file(p)?).map_err(|e| in_file(p, e)),
        None => Ok(T::default()),
    }
}

/// Sizes the global worker pool. The environment variable wins over the flag.
pub fn configure_threads(flag: Option<usize>) -> CliResult {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::input(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        ),
        Err(_) => flag,
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("cannot size thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

pub fn make_env(ctx: &Ctx, a: &MakeEnvArgs) -> CliResult {
    let m = match a.kind {
        EnvKind::RentalCar => build_rental_car(a.long_route, a.short_route)?,
        EnvKind::Random => build_random_cmdp(a.states, a.actions, a.contexts, a.gamma, ctx.seed())?,
        EnvKind::SeekAvoid => build_contextual_gridworld(&seek_avoid_spec(a.signatures))?,
        EnvKind::MazeTrain => build_contextual_gridworld(&maze_train_spec(a.signatures))?,
        EnvKind::MazeTest => build_contextual_gridworld(&maze_test_spec(a.signatures))?,
    };
    ctx.emit(&cmdp_to_json(&m)?)
}

#[derive(Serialize)]
struct QRow {
    context: usize,
    state: usize,
    action: usize,
    q: f64,
    soft_policy: f64,
}

pub fn solve(ctx: &Ctx, a: &SolveArgs) -> CliResult {
    let full = load_env(&a.env)?;
    let contexts: Vec<usize> = match a.context {
        Some(c) => {
            full.check_context(c)?;
            vec![c]
        }
        None => (0..full.n_contexts).collect(),
    };
    let m = if a.context.is_some() {
        full.restrict_contexts(&contexts)?
    } else {
        full
    };
    let options = a.tau.map(SolveOptions::with_tau).unwrap_or_default();
    let sol = solve_exact(&m, &options)?;
    match ctx.format {
        Format::Json => ctx.emit_json(&SolutionFile::new(&sol, contexts, sol.optimal_return(&m))),
        Format::Csv => {
            let (nc, ns, na) = sol.q_values.dim();
            let mut rows = Vec::with_capacity(nc * ns * na);
            for (i, &c) in contexts.iter().enumerate() {
                for s in 0..ns {
                    for act in 0..na {
                        rows.push(QRow {
                            context: c,
                            state: s,
                            action: act,
                            q: sol.q_values[[i, s, act]],
                            soft_policy: sol.soft_optimal.probs[[i, s, act]],
                        });
                    }
                }
            }
            ctx.emit(&rows_to_csv(&rows)?)
        }
    }
}

#[derive(Serialize)]
struct AssignmentRow {
    state: usize,
    concept: usize,
}

pub fn learn_concepts(ctx: &Ctx, a: &LearnArgs) -> CliResult {
    let m = load_env(&a.env)?;
    let sol = solve_exact(&m, &SolveOptions::default())?;
    let mut cfg = LearnConfig {
        seed: ctx.seed(),
        ..LearnConfig::default()
    };
    if let Some(r) = a.restarts {
        cfg.restarts = r;
    }
    if let Some(n) = a.max_iters {
        cfg.max_iters = n;
    }
    let file = match (&a.factor_sizes, a.n_concepts) {
        (Some(sizes), _) => {
            if a.method != ConceptMethod::Gradient {
                return Err(Error::Unsupported(format!(
                    "factored classifiers are learned by the gradient method only, not {}",
                    a.method.name()
                ))
                .into());
            }
            let run = learn_factored(
                &m,
                &sol,
                sizes,
                &LearnConfig {
                    method: LearnMethod::Gradient,
                    ..cfg
                },
            )?;
            ClassifierFile::from_factored(&run.classifier, Some(run.hardened_objective))?
        }
        (None, Some(n)) => {
            let c = fit_concepts(&m, &sol, a.method, n, &cfg)?;
            let obj = objective(&m, &sol, &c)?;
            ClassifierFile::from_classifier(&c, Some(obj))
        }
        (None, None) => return Err(CliError::input("either --n-concepts or --factor-sizes is required")),
    };
    match ctx.format {
        Format::Json => ctx.emit_json(&file),
        Format::Csv => {
            let rows: Vec<AssignmentRow> = file
                .assignment
                .unwrap_or_default()
                .into_iter()
                .enumerate()
                .map(|(state, concept)| AssignmentRow { state, concept })
                .collect();
            ctx.emit(&rows_to_csv(&rows)?)
        }
    }
}

#[derive(Serialize)]
struct CheckRow {
    instance: usize,
    family: Family,
    regret: f64,
    conditional_mi: f64,
    kl: f64,
    mi: f64,
    kl_identity: f64,
    kl_argmin: f64,
    dissimilarity: f64,
    transfer: f64,
    violations: usize,
}

impl From<&CheckResult> for CheckRow {
    fn from(r: &CheckResult) -> Self {
        CheckRow {
            instance: r.instance,
            family: r.family,
            regret: r.report.regret,
            conditional_mi: r.report.conditional_mi,
            kl: r.margins.kl,
            mi: r.margins.mi,
            kl_identity: r.margins.kl_identity,
            kl_argmin: r.margins.kl_argmin,
            dissimilarity: r.margins.dissimilarity,
            transfer: r.margins.transfer,
            violations: r.violations.total(),
        }
    }
}

#[derive(Serialize)]
struct EnvCheckReport {
    tampered: bool,
    violations: Violations,
    results: Vec<CheckResult>,
}

pub fn verify_bounds(ctx: &Ctx, a: &VerifyArgs) -> CliResult {
    let (results, violations) = if let Some(n) = a.random {
        let size = SizeSpec {
            n_states: a.states,
            n_actions: a.actions,
            n_contexts: a.contexts,
            gamma: a.gamma,
            n_concepts: a.concepts,
            n_policies: a.policies,
        };
        let report = verify_bounds_suite(n, size, ctx.seed(), a.tamper)?;
        let out = (report.results.clone(), report.violations);
        if ctx.format == Format::Json {
            ctx.emit_json(&report)?;
        }
        out
    } else {
        let path = a.env.as_ref().expect("clap requires --env without --random");
        let m = load_env(path)?;
        let sol = solve_exact(&m, &SolveOptions::default())?;
        let policy = if a.tamper {
            tampered_policy(&m, &sol, ctx.seed())?
        } else {
            sol.soft_optimal.clone()
        };
        let mut checks = vec![
            (Family::Identity, ConceptClassifier::identity(m.n_states).rows()),
            (Family::Constant, ConceptClassifier::constant(m.n_states).rows()),
        ];
        if let Some(p) = &a.classifier {
            let c = load_classifier(p)?;
            if c.n_states() != m.n_states {
                return Err(CliError::input(format!(
                    "classifier covers {} states, environment has {}",
                    c.n_states(),
                    m.n_states
                )));
            }
            checks.push((Family::Learned, c.rows()));
        }
        let mut results = Vec::new();
        let mut total = Violations::default();
        for (family, rows) in checks {
            let (report, argmin_margin, violations, margins) =
                check_classifier(&m, &sol, &policy, &rows, a.policies, ctx.seed())?;
            total.kl += violations.kl;
            total.mi += violations.mi;
            total.kl_identity += violations.kl_identity;
            total.kl_argmin += violations.kl_argmin;
            total.dissimilarity += violations.dissimilarity;
            total.transfer += violations.transfer;
            results.push(CheckResult {
                instance: 0,
                family,
                report,
                argmin_margin,
                violations,
                margins,
            });
        }
        if ctx.format == Format::Json {
            ctx.emit_json(&EnvCheckReport {
                tampered: a.tamper,
                violations: total,
                results: results.clone(),
            })?;
        }
        (results, total)
    };
    if ctx.format == Format::Csv {
        let rows: Vec<CheckRow> = results.iter().map(CheckRow::from).collect();
        ctx.emit(&rows_to_csv(&rows)?)?;
    }
    if violations.total() > 0 {
        return Err(CliError {
            code: EXIT_VIOLATION,
            message: format!("{} bound violation(s): {violations:?}", violations.total()),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct TrmcSummary {
    episodes: usize,
    n_updates: usize,
    entropy_target: f64,
    max_kl_step: f64,
    q_sup_norm: f64,
    /// `policy[c][k][a]`
    policy: Vec<Vec<Vec<f64>>>,
    config: TrmcConfig,
    returns: Vec<f64>,
}

pub fn trmc(ctx: &Ctx, a: &TrmcArgs) -> CliResult {
    let m = load_env(&a.env)?;
    let c = load_classifier(&a.classifier)?;
    let mut cfg: TrmcConfig = load_config(a.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.episodes {
        cfg.episode_budget = e;
    }
    let (state, curve) = run_trmc(&m, &c.assignment(), c.n_concepts, &cfg)?;
    match ctx.format {
        Format::Csv => ctx.emit(&curves_to_csv(&[curve])?),
        Format::Json => ctx.emit_json(&TrmcSummary {
            episodes: curve.len(),
            n_updates: state.n_updates,
            entropy_target: state.entropy_target,
            max_kl_step: state.max_kl_step,
            q_sup_norm: state.q_table.iter().fold(0.0f64, |m, q| m.max(q.abs())),
            policy: state
                .policy
                .outer_iter()
                .map(|p| p.outer_iter().map(|r| r.to_vec()).collect())
                .collect(),
            config: state.config.clone(),
            returns: curve.returns(),
        }),
    }
}

pub fn transfer(ctx: &Ctx, a: &TransferArgs) -> CliResult {
    let train = load_env(&a.train)?;
    let test = load_env(&a.test)?;
    let mut cfg: TransferConfig = load_config(a.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let report = transfer_experiment(&train, &test, &cfg)?;
    match &ctx.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
            write_file(&dir.join("report.json"), &to_json(&report)?)?;
            for (name, curves) in &report.seed_curves {
                write_file(&dir.join(format!("{name}.csv")), &curves_to_csv(curves)?)?;
            }
            Ok(())
        }
        None => match ctx.format {
            Format::Json => ctx.emit_json(&report),
            Format::Csv => Err(CliError::input("csv output of transfer needs --out <dir>")),
        },
    }
}

#[derive(Serialize)]
struct ClassifierReport {
    n_concepts: usize,
    objective: f64,
    regret: f64,
    bounds: BoundReport,
    diagnostics: ConceptDiagnostics,
}

#[derive(Serialize)]
struct QuantityRow {
    quantity: &'static str,
    value: f64,
}

fn classifier_report(m: &TabularCmdp, sol: &Solution, c: &ConceptClassifier) -> CliResult<ClassifierReport> {
    let rows = c.rows();
    let joint = build_joint(m, sol, &rows)?;
    Ok(ClassifierReport {
        n_concepts: c.n_concepts,
        objective: objective(m, sol, c)?,
        regret: abstraction_regret(m, sol, &rows)?,
        bounds: concept_cmdp::info::bound_report(m, &joint, &sol.soft_optimal)?,
        diagnostics: concept_diagnostics(&joint),
    })
}

pub fn report(ctx: &Ctx, a: &ReportArgs) -> CliResult {
    let m = load_env(&a.env)?;
    let c = load_classifier(&a.classifier)?;
    if c.n_states() != m.n_states {
        return Err(CliError::input(format!(
            "classifier covers {} states, environment has {}",
            c.n_states(),
            m.n_states
        )));
    }
    let sol = solve_exact(&m, &SolveOptions::default())?;
    let r = classifier_report(&m, &sol, &c)?;
    match ctx.format {
        Format::Json => ctx.emit_json(&r),
        Format::Csv => {
            let rows = [
                ("objective", r.objective),
                ("regret", r.regret),
                ("f_constant", r.bounds.f_constant),
                ("conditional_mi", r.bounds.conditional_mi),
                ("kl_bound", r.bounds.kl_bound),
                ("dissimilarity_bound", r.bounds.dissimilarity_bound),
                ("concept_entropy", r.diagnostics.concept_entropy),
                ("concept_context_mi", r.diagnostics.concept_context_mi),
            ]
            .map(|(quantity, value)| QuantityRow { quantity, value });
            ctx.emit(&rows_to_csv(&rows)?)
        }
    }
}
