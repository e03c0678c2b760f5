use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use psafe::analysis::AnalysisError;
use psafe::baseline::{check_safe_actions, BaselineError};
use psafe::learner::{LearnError, ProxyComparison};
use psafe::mdp::ModelError;
use psafe::planner::PlannerError;
use psafe::policy::PolicyError;
use psafe::*;
use rayon::prelude::*;
use serde::Serialize;

use crate::{BaselineArgs, EvaluateArgs, LearnArgs, ModelArgs, PlanArgs};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Model(String),
    Io(String),
    Infeasible(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Model(_) => 2,
            CliError::Io(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Model(m) | CliError::Io(m) | CliError::Infeasible(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) | ModelError::Parse(_) => CliError::Io(e.to_string()),
            ModelError::Invalid(violations) => {
                CliError::Model(violations.iter().map(|v| format!("\n  {v}")).collect())
            }
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<PlannerError> for CliError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::Domain(_) | PlannerError::DimensionMismatch(_) => {
                CliError::Usage(e.to_string())
            }
            // a non-transient taboo set breaks a model assumption
            PlannerError::Unbounded => CliError::Model(e.to_string()),
            PlannerError::InfeasibleModel | PlannerError::Lp(_) => {
                CliError::Infeasible(e.to_string())
            }
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::InvalidQ { .. } | BaselineError::Domain(_) => {
                CliError::Usage(e.to_string())
            }
            BaselineError::MissingSafeAction(_) | BaselineError::UnsafeAction { .. } => {
                CliError::Model(e.to_string())
            }
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Infeasible(e.to_string())
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Config(_) => CliError::Usage(e.to_string()),
            LearnError::Planner(e) => e.into(),
            LearnError::Baseline(e) => e.into(),
            LearnError::Analysis { .. } => CliError::Infeasible(e.to_string()),
            LearnError::Io(_) | LearnError::Csv(_) => CliError::Io(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_model(args: &ModelArgs) -> Result<Mdp, CliError> {
    let file = ModelFile::load(&args.model).map_err(|e| CliError::from(e).prefixed(&args.model))?;
    let mdp = validate_mdp(&file).map_err(|e| CliError::from(e).prefixed(&args.model))?;
    match args.horizon_bound {
        None => Ok(mdp),
        Some(0) => Err(CliError::Usage("--horizon-bound must be at least 1".into())),
        Some(t) => {
            if let Some(longest) = mdp.acyclic_horizon().filter(|&b| t < b) {
                log::warn!("--horizon-bound {t} is below the longest taboo path {longest}");
            }
            Ok(mdp.with_horizon_bound(t))
        }
    }
}

impl CliError {
    fn prefixed(self, path: &Path) -> Self {
        let tag = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Usage(m) => CliError::Usage(tag(m)),
            CliError::Model(m) => CliError::Model(tag(format!("invalid model{m}"))),
            CliError::Io(m) => CliError::Io(tag(m)),
            CliError::Infeasible(m) => CliError::Infeasible(tag(m)),
        }
    }
}

fn resolve_x0(mdp: &Mdp, x0: &Option<String>) -> Result<usize, CliError> {
    let Some(id) = x0 else {
        return Ok(mdp.taboo_states()[0]);
    };
    match mdp.state_index(id) {
        Some(x) if mdp.is_taboo(x) => Ok(x),
        Some(_) => Err(CliError::Usage(format!("--x0 {id} is not a taboo state"))),
        None => Err(CliError::Usage(format!("--x0 {id} is not a state of the model"))),
    }
}

fn open_unit(flag: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("--{flag} must lie in (0,1), got {v}")))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn id_set(
    mdp: &Mdp,
    ids: impl IntoIterator<Item = usize>,
    name: impl Fn(&Mdp, usize) -> &str,
) -> String {
    let items: Vec<&str> = ids.into_iter().map(|i| name(mdp, i)).collect();
    format!("{{{}}}", items.join(","))
}

fn policy_rows(mdp: &Mdp, policy: &Policy) -> String {
    let mut out = String::new();
    for &x in mdp.taboo_states() {
        let _ = write!(out, "  {}:", mdp.state_id(x));
        for a in 0..mdp.n_actions() {
            let _ = write!(out, " {}={:.6}", mdp.action_id(a), policy.prob(x, a));
        }
        out.push('\n');
    }
    out
}

pub fn validate(args: &ModelArgs) -> Result<(), CliError> {
    let mdp = load_model(args)?;
    let count = |k: StateKind| mdp.kinds().iter().filter(|&&x| x == k).count();
    println!(
        "valid: {} states ({} taboo, {} forbidden, {} target), {} actions",
        mdp.n_states(),
        count(StateKind::Taboo),
        count(StateKind::Forbidden),
        count(StateKind::Target),
        mdp.n_actions()
    );
    match mdp.acyclic_horizon() {
        Some(b) => println!(
            "horizon bound: {} (acyclic taboo graph, longest path {b})",
            mdp.horizon_bound()
        ),
        None => println!(
            "horizon bound: {} (cyclic taboo graph, trusted as given)",
            mdp.horizon_bound()
        ),
    }
    let mut safe = Vec::new();
    for &x in mdp.taboo_states() {
        let actions = mdp.find_safe_actions(x)?;
        safe.push(format!("{}:{}", mdp.state_id(x), id_set(&mdp, actions, |m, a| m.action_id(a))));
    }
    println!("safe actions: {{{}}}", safe.join(","));
    match mdp.proxy() {
        Some(proxy) => {
            let report = mdp.validate_proxy_set(proxy);
            let set = id_set(&mdp, proxy.iter().copied(), |m, x| m.state_id(x));
            if report.is_valid() {
                println!("proxy {set}: valid");
            } else {
                println!("proxy {set}: invalid");
                return Err(CliError::Model("proxy set is invalid".into()));
            }
        }
        None => println!("proxy: none declared, all taboo states are treated as proxy states"),
    }
    Ok(())
}

pub fn plan(args: &PlanArgs) -> Result<(), CliError> {
    let p = open_unit("p", args.p)?;
    let mdp = load_model(&args.model)?;
    let x0 = resolve_x0(&mdp, &args.x0)?;
    let plan = exact_safe_lp(&mdp, x0, p)?;
    let s = safety_function(&mdp, &plan.policy)?.at(x0);
    println!("J={:.6} S={:.6}", plan.objective, s);
    print!("{}", policy_rows(&mdp, &plan.policy));
    create_dir(&args.out)?;
    let path = args.out.join("policy.json");
    write_file(&path, &plan.policy.to_json(&mdp))?;
    println!("policy written to {}", path.display());
    Ok(())
}

pub fn baseline(args: &BaselineArgs) -> Result<(), CliError> {
    let p = open_unit("p", args.p)?;
    let mdp = load_model(&args.model)?;
    let x0 = resolve_x0(&mdp, &args.x0)?;
    let spec = BaselineSpec::from_model(&mdp, p, args.q)?;
    check_safe_actions(&mdp, &spec)?;
    let policy = safe_baseline(&mdp, &spec, x0)?;
    let s = safety_function(&mdp, &policy)?;
    let bound = spec.horizon_bound as f64 * (1.0 - spec.q);
    println!("q={:.6} bound={:.6} S={:.6}", spec.q, bound, s.at(x0));
    for (x, v) in s.iter() {
        println!("  S({})={v:.6}", mdp.state_id(x));
    }
    print!("{}", policy_rows(&mdp, &policy));
    create_dir(&args.out)?;
    let path = args.out.join("baseline.json");
    write_file(&path, &policy.to_json(&mdp))?;
    println!("baseline written to {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest {
    model: PathBuf,
    x0: String,
    p: f64,
    w: f64,
    episodes: usize,
    q: f64,
    compare_proxy: bool,
    runs: Vec<RunEntry>,
}

#[derive(Debug, Serialize)]
struct RunEntry {
    seed: u64,
    arm: &'static str,
    file: PathBuf,
    cumulative_regret: f64,
    violations: usize,
    feasible_episodes: usize,
    cap_exceeded: usize,
}

fn write_run(out: &Path, arm: &'static str, log: &LearningLog) -> Result<RunEntry, CliError> {
    let file = if arm == "single" {
        PathBuf::from(format!("seed_{}.csv", log.seed))
    } else {
        Path::new(arm).join(format!("seed_{}.csv", log.seed))
    };
    let path = out.join(&file);
    let handle = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
    log.write_csv(std::io::BufWriter::new(handle))?;
    Ok(RunEntry {
        seed: log.seed,
        arm,
        file,
        cumulative_regret: log.cumulative_regret(),
        violations: log.violations(),
        feasible_episodes: log.feasible_episodes(),
        cap_exceeded: log.cap_exceeded(),
    })
}

fn run_seed(
    mdp: &Mdp,
    args: &LearnArgs,
    config: LearnerConfig,
) -> Result<(Vec<RunEntry>, Option<ProxyComparison>), CliError> {
    if args.compare_proxy {
        let cmp = compare_proxy_knowledge(mdp, &config)?;
        let entries = vec![
            write_run(&args.out, "with_proxy", &cmp.with_proxy)?,
            write_run(&args.out, "without_proxy", &cmp.without_proxy)?,
        ];
        Ok((entries, Some(cmp)))
    } else {
        let log = run_learning(mdp, &config)?;
        Ok((vec![write_run(&args.out, "single", &log)?], None))
    }
}

pub fn learn(args: &LearnArgs) -> Result<(), CliError> {
    let p = open_unit("p", args.p)?;
    let w = open_unit("w", args.w)?;
    if args.episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    if args.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let mdp = load_model(&args.model)?;
    let x0 = resolve_x0(&mdp, &args.x0)?;
    if args.compare_proxy && mdp.proxy().is_none() {
        return Err(CliError::Usage("--compare-proxy needs a model with a proxy set".into()));
    }
    let spec = BaselineSpec::from_model(&mdp, p, args.q)?;
    check_safe_actions(&mdp, &spec)?;

    create_dir(&args.out)?;
    if args.compare_proxy {
        create_dir(&args.out.join("with_proxy"))?;
        create_dir(&args.out.join("without_proxy"))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        args.seeds
            .par_iter()
            .map(|&seed| {
                let mut config = LearnerConfig::for_model(&mdp, x0, p, w, args.episodes, seed)?;
                config.baseline = spec.clone();
                run_seed(&mdp, args, config)
            })
            .collect()
    });

    let mut runs = Vec::new();
    let mut worst: Option<CliError> = None;
    let mut pairs = 0;
    let mut helped = 0;
    for (seed, result) in args.seeds.iter().zip(results) {
        match result {
            Ok((entries, cmp)) => {
                if let Some(cmp) = cmp {
                    pairs += 1;
                    helped += usize::from(cmp.proxy_helps());
                    println!(
                        "seed {seed}: cum_regret with proxy {:.6}, without {:.6}",
                        cmp.with_proxy.cumulative_regret(),
                        cmp.without_proxy.cumulative_regret()
                    );
                }
                for e in &entries {
                    println!(
                        "seed {seed} [{}]: violations {}, feasible {}/{}, cum_regret {:.6}",
                        e.arm,
                        e.violations,
                        e.feasible_episodes,
                        args.episodes,
                        e.cumulative_regret
                    );
                }
                runs.extend(entries);
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                if worst.as_ref().is_none_or(|w| e.code() > w.code()) {
                    worst = Some(e);
                }
            }
        }
    }
    if pairs > 0 {
        println!("proxy knowledge no worse in {helped}/{pairs} pairs");
    }
    let violations: usize = runs.iter().map(|r| r.violations).sum();
    println!("total violations: {violations}");

    let manifest = Manifest {
        model: args.model.model.clone(),
        x0: mdp.state_id(x0).to_string(),
        p,
        w,
        episodes: args.episodes,
        q: spec.q,
        compare_proxy: args.compare_proxy,
        runs,
    };
    let path = args.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&path, &text)?;
    match worst {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    if let Some(p) = args.p {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Usage(format!("--p must lie in [0,1], got {p}")));
        }
    }
    if args.mc == 0 {
        return Err(CliError::Usage("--mc must be at least 1".into()));
    }
    let mdp = load_model(&args.model)?;
    let text = fs::read_to_string(&args.policy).map_err(|e| io_error(&args.policy, e))?;
    let policy = Policy::from_json(&mdp, &text).map_err(|e| match e {
        PolicyError::Parse(_) => CliError::Io(format!("{}: {e}", args.policy.display())),
        other => CliError::Infeasible(format!("{}: {other}", args.policy.display())),
    })?;
    let x0 = policy.initial_state();
    let s = safety_function(&mdp, &policy)?.at(x0);
    let j = value_function(&mdp, &policy)?.at(x0);
    let mc = monte_carlo_safety(&mdp, &policy, args.mc, args.seed)?;
    println!("S={s:.6} J={j:.6}");
    println!(
        "mc: S={:.6} ({}/{} episodes), 99% interval [{:.6}, {:.6}]",
        mc.estimate, mc.hits, mc.episodes, mc.lower, mc.upper
    );
    if mc.cap_exceeded > 0 {
        println!("mc: {} episodes hit the step cap", mc.cap_exceeded);
    }
    println!("agree within 3 sigma: {}", if mc.agrees_with(s, 3.0) { "yes" } else { "no" });
    if let Some(p) = args.p {
        let verdict = if s <= p { "yes" } else { "no" };
        println!("p-safe at p={p}: {verdict} (margin {:.6})", p - s);
    }
    Ok(())
}
