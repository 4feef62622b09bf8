use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lukconvex::collective::{manifold_rows, solve_collective, ManifoldRelation, PriorTable};
use lukconvex::ground::ground_atom_name;
use lukconvex::kernel::{assemble_primal, logic_constraints, read_dataset, train, KernelSpec, PredicateData, TrainingSets};
use lukconvex::parser::print_kb;
use lukconvex::psl::{learn_weights, map_inference, split_training, WeightedRuleSet};
use lukconvex::qp::{self, QpProblem};
use lukconvex::{classify, compile, find_mixing, normalize, parse_kb, parse_values, soft_constraints, write_csv, write_values, ExperimentConfig, Formula, FragmentLabel, GroundOptions, GroundingMap, SourceKb};

#[derive(Parser)]
#[command(name = "lukconvex", version, about = "Compile Łukasiewicz knowledge bases into convex problems and solve them")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// KKT tolerance of the QP solver
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Iteration cap of the QP solver
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Random seed (experiment)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ground even when the leaf count exceeds the safety limit
    #[arg(long, global = true)]
    override_grounding_guard: bool,
}

impl Global {
    fn tol(&self) -> f64 {
        self.tol.unwrap_or(qp::DEFAULT_TOL)
    }

    fn max_iter(&self) -> usize {
        self.max_iter.unwrap_or(qp::DEFAULT_MAX_ITER)
    }

    fn ground_options(&self) -> GroundOptions {
        GroundOptions { override_guard: self.override_grounding_guard, ..Default::default() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compile every rule to its min/max-of-affine form (JSON lines)
    Compile {
        kb: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Ground every rule over the declared domains (JSON)
    Ground {
        kb: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train kernel predicates under pointwise, consistency and logical constraints
    SolveKernel {
        /// TOML file describing predicates, datasets and constants
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Adjust priors to satisfy the rules of a knowledge base
    SolveCollective {
        kb: PathBuf,
        priors: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        /// Weigh each rule's slack by its rule weight
        #[arg(long)]
        weighted: bool,
        /// Manifold term `PRED=SIGMA` over the points of `--points`
        #[arg(long, requires = "points")]
        manifold: Vec<String>,
        /// CSV with an `id` column naming constants, then features
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// MAP state of the hinge-loss MRF given evidence
    PslMap {
        kb: PathBuf,
        evidence: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Learn rule weights from a training interpretation (`fixed` lines are evidence)
    PslLearn {
        kb: PathBuf,
        training: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        rate: f64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Knowledge base with the learned weights
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the rectangles experiment and write `fraction,rep,variant,class,f1`
    Experiment {
        /// TOML configuration; defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Solve a QP stored as JSON
    SolveQp {
        problem: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Compile { kb, out } => cmd_compile(kb, out.as_deref()),
        Command::Ground { kb, out } => cmd_ground(g, kb, out.as_deref()),
        Command::SolveKernel { config, out } => cmd_solve_kernel(g, config, out.as_deref()),
        Command::SolveCollective { kb, priors, c1, weighted, manifold, points, out } => {
            cmd_solve_collective(g, kb, priors, *c1, *weighted, manifold, points.as_deref(), out.as_deref())
        }
        Command::PslMap { kb, evidence, out } => cmd_psl_map(g, kb, evidence, out.as_deref()),
        Command::PslLearn { kb, training, rate, steps, out } => cmd_psl_learn(g, kb, training, *rate, *steps, out.as_deref()),
        Command::Experiment { config, out } => cmd_experiment(g, config.as_deref(), out.as_deref()),
        Command::SolveQp { problem, out } => {
            let p = QpProblem::from_json(&read(problem)?)?;
            let sol = qp::solve(&p, g.tol(), g.max_iter())?;
            emit(out.as_deref(), &(sol.to_json()? + "\n"))
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_kb(path: &Path) -> Result<SourceKb> {
    let kb = parse_kb(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    kb.validate()?;
    Ok(kb)
}

/// Strips the outer `∀` prefix and turns atoms into variables named after
/// them, so a rule template compiles like a propositional formula.
fn template(f: &Formula) -> Result<Formula> {
    let mut body = f;
    while let Formula::ForAll(_, inner) = body {
        body = inner;
    }
    fn go(f: &Formula) -> Result<Formula> {
        Ok(match f {
            Formula::Atom(a) => Formula::var(ground_atom_name(&a.predicate, &a.args)),
            Formula::Not(g) => go(g)?.not(),
            Formula::Implies(a, b) => Formula::implies(go(a)?, go(b)?),
            Formula::Apply(op, args) => Formula::Apply(*op, args.iter().map(go).collect::<Result<_>>()?),
            Formula::ForAll(..) | Formula::Exists(..) => bail!("quantifier below the outer universal prefix; ground the rule instead"),
            other => other.clone(),
        })
    }
    go(body)
}

fn cmd_compile(kb_path: &Path, out: Option<&Path>) -> Result<()> {
    let kb = load_kb(kb_path)?;
    let mut text = String::new();
    let mut failures = Vec::new();
    for rule in &kb.rules {
        let body = normalize(&template(&rule.formula).with_context(|| format!("rule `{}`", rule.name))?);
        let label = classify(&body)?;
        let target = match label {
            FragmentLabel::Neither => {
                let detail = find_mixing(&body).map(|m| m.to_string()).unwrap_or_else(|| body.to_string());
                failures.push(format!("rule `{}` is in neither fragment: {detail}", rule.name));
                continue;
            }
            FragmentLabel::Convex => FragmentLabel::Convex,
            _ => FragmentLabel::Concave,
        };
        let form = compile(&body, target)?;
        let line = json!({
            "rule": rule.name,
            "label": label.to_string(),
            "form": serde_json::from_str::<serde_json::Value>(&form.to_json()?)?,
            "text": form.to_string(),
        });
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    emit(out, &text)?;
    if !failures.is_empty() {
        bail!("{}", failures.join("\n"));
    }
    Ok(())
}

fn cmd_ground(g: &Global, kb_path: &Path, out: Option<&Path>) -> Result<()> {
    let kb = load_kb(kb_path)?;
    let map = GroundingMap::from_kb(&kb)?;
    let mut rules = Vec::new();
    for rule in &kb.rules {
        let (grounded, _) = lukconvex::ground(&rule.formula, &kb, g.ground_options())?;
        rules.push(json!({ "rule": rule.name, "weight": rule.weight, "grounded": grounded.to_string() }));
    }
    let doc = json!({ "map": serde_json::from_str::<serde_json::Value>(&map.to_json()?)?, "rules": rules });
    emit(out, &(serde_json::to_string_pretty(&doc)? + "\n"))
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct KernelConfig {
    /// Knowledge base whose rules become logical constraints.
    kb: Option<PathBuf>,
    #[serde(default = "default_c1")]
    c1: f64,
    #[serde(default = "default_c2")]
    c2: f64,
    predicate: Vec<PredicateConfig>,
}

fn default_c1() -> f64 {
    15.0
}

fn default_c2() -> f64 {
    10.0
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PredicateConfig {
    name: String,
    data: PathBuf,
    kernel: KernelSpec,
}

fn cmd_solve_kernel(g: &Global, config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg: KernelConfig = toml::from_str(&read(config)?).with_context(|| format!("parsing {}", config.display()))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let mut data = TrainingSets::default();
    for p in &cfg.predicate {
        let path = base.join(&p.data);
        let ds = read_dataset(fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?).with_context(|| format!("reading {}", path.display()))?;
        for (id, x) in ds.ids.iter().zip(&ds.points) {
            if let Some(prev) = data.constants.insert(id.clone(), x.clone()) {
                if &prev != x {
                    bail!("constant `{id}` has two different points");
                }
            }
        }
        data.predicates.push(PredicateData::from_dataset(&p.name, p.kernel, &ds));
    }
    let logic = match &cfg.kb {
        Some(kb) => logic_constraints(&load_kb(&base.join(kb))?, &data, g.ground_options())?,
        None => Vec::new(),
    };
    let problem = assemble_primal(&data, &logic, cfg.c1, cfg.c2)?;
    let model = train(&problem, g.tol(), g.max_iter())?;
    emit(out, &(model.to_json()? + "\n"))
}

fn read_points(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("opening {}", path.display()))?;
    if rdr.headers()?.get(0) != Some("id") {
        bail!("{}: first column must be `id`", path.display());
    }
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let x = rec.iter().skip(1).map(|v| v.parse::<f64>().map_err(|_| anyhow!("{}:{}: `{v}` is not a number", path.display(), k + 2))).collect::<Result<Vec<_>>>()?;
        out.insert(rec[0].to_string(), x);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve_collective(g: &Global, kb_path: &Path, priors: &Path, c1: f64, weighted: bool, manifold: &[String], points: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let kb = load_kb(kb_path)?;
    let map = GroundingMap::from_kb(&kb)?;
    let table = parse_values(&read(priors)?).with_context(|| format!("reading {}", priors.display()))?;
    let priors = PriorTable::from_values(&table, &map)?;
    let mut constraints = soft_constraints(&kb, &|v: &str| map.index_of(v), g.ground_options())?;
    if !manifold.is_empty() {
        let pts = read_points(points.expect("clap enforces --points"))?;
        for spec in manifold {
            let (pred, sigma) = spec.split_once('=').ok_or_else(|| anyhow!("manifold `{spec}` is not PRED=SIGMA"))?;
            let sigma: f64 = sigma.parse().map_err(|_| anyhow!("manifold sigma `{sigma}` is not a number"))?;
            let groundings = map.predicate(pred).ok_or_else(|| anyhow!("unknown predicate `{pred}`"))?;
            let mut located = Vec::new();
            for (k, tuple) in groundings.tuples.iter().enumerate() {
                let [c] = tuple.as_slice() else { bail!("manifold predicate `{pred}` must be unary") };
                let x = pts.get(c).ok_or_else(|| anyhow!("no point for constant `{c}`"))?;
                located.push((groundings.offset + k, x.clone()));
            }
            constraints.extend(manifold_rows(&ManifoldRelation::new(pred, sigma, located)?, 1.0));
        }
    }
    let sol = solve_collective(&priors, &constraints, c1, weighted, g.tol(), g.max_iter())?;
    emit(out, &write_values(&sol.to_values(&map, &constraints)))
}

fn cmd_psl_map(g: &Global, kb_path: &Path, evidence: &Path, out: Option<&Path>) -> Result<()> {
    let rules = WeightedRuleSet::from_kb(&load_kb(kb_path)?, g.ground_options())?;
    let table = parse_values(&read(evidence)?).with_context(|| format!("reading {}", evidence.display()))?;
    let ev = rules.evidence(&table)?;
    let m = map_inference(&rules, &ev, g.tol(), g.max_iter())?;
    emit(out, &write_values(&m.to_values(&rules.map)))
}

fn cmd_psl_learn(g: &Global, kb_path: &Path, training: &Path, rate: f64, steps: usize, out: Option<&Path>) -> Result<()> {
    let mut kb = load_kb(kb_path)?;
    let mut rules = WeightedRuleSet::from_kb(&kb, g.ground_options())?;
    let table = parse_values(&read(training)?).with_context(|| format!("reading {}", training.display()))?;
    let (evidence, full) = split_training(&rules, &table)?;
    learn_weights(&mut rules, &evidence, &full, rate, steps, g.tol(), g.max_iter())?;
    for (rule, w) in kb.rules.iter_mut().zip(&rules.weights) {
        rule.weight = *w;
    }
    emit(out, &print_kb(&kb))
}

fn cmd_experiment(g: &Global, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::from_toml(&read(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.tol {
        cfg.tol = t;
    }
    if let Some(m) = g.max_iter {
        cfg.max_iter = m;
    }
    let rows = lukconvex::run_experiment(&cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    emit(out, std::str::from_utf8(&buf)?)
}
