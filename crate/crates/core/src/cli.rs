//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning                                                   |
//! |------|-----------------------------------------------------------|
//! | 0    | success; query verdict TRUE                               |
//! | 1    | KB syntax or arity error; query verdict FALSE             |
//! | 2    | KB semantic error                                         |
//! | 3    | solve produced a partial ensemble                         |
//! | 4    | query verdict UNKNOWN                                     |
//! | 5    | compare found a soundness violation                       |
//! | 6    | compare exceeded the oracle's enumeration cap             |
//! | 10   | any other failure (usage, I/O, malformed documents)       |

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use embedlogic::config::SolveConfig;
use embedlogic::geometry::{model_from_json, satisfies_kb};
use embedlogic::inference::{binding_verdicts, explain, query_closed, Verdict};
use embedlogic::logic::{parse_formula, parse_kb, parse_queries, Formula, KnowledgeBase, ParseError, Variable};
use embedlogic::oracle::{compare, OracleError};
use embedlogic::similarity::{disparity_score_eps, jaccard_similarity, pair_disparities, SimilarityMatrix};
use embedlogic::solver::{generate_ensemble, Ensemble, EnsembleStatus, Outcome};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "embedlogic", version, about = "Vector-space models for first-order knowledge bases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a KB, printing symbol and statement counts.
    Validate {
        kb: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Generate an ensemble of preferred models satisfying a KB.
    Solve(SolveArgs),
    /// Score one model document against a KB.
    Score {
        model: PathBuf,
        kb: PathBuf,
        /// Similarity matrix file; Jaccard similarity from the KB when omitted.
        #[arg(long)]
        sim: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Answer a query (a formula, or the name of a query in the KB) by
    /// checking it in every ensemble member.
    Query {
        ensemble: PathBuf,
        kb: PathBuf,
        query: String,
        /// Free variable of a binding query; prints the terms it binds to.
        #[arg(long)]
        var: Option<String>,
        #[arg(long)]
        explain: bool,
        #[arg(long)]
        json: bool,
    },
    /// Compare ensemble verdicts with the finite-domain oracle.
    Compare {
        ensemble: PathBuf,
        kb: PathBuf,
        /// File of `query name: formula.` statements; the KB's own queries
        /// when omitted.
        queries: Option<PathBuf>,
        /// Also write the report as JSON to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// KB file; taken from the manifest with --from-manifest.
    kb: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Similarity matrix file; Jaccard similarity from the KB when omitted.
    #[arg(long)]
    sim: Option<PathBuf>,
    /// Re-run exactly the run recorded in a manifest.
    #[arg(long, conflicts_with_all = ["kb", "config", "sim", "dim", "delta", "ensemble", "seed", "iters", "sim_weight", "pref_threshold"])]
    from_manifest: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    sim_weight: Option<f64>,
    /// Disparity threshold for accepting members, or `none`.
    #[arg(long)]
    pref_threshold: Option<String>,
    #[arg(long)]
    json: bool,
}

/// Everything needed to reproduce a solve run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub kb_path: PathBuf,
    pub sim_path: Option<PathBuf>,
    pub config: SolveConfig,
    /// Candidate seeds in the order they are tried.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Files written, relative to `out_dir`; empty until the run finishes.
    pub outputs: Vec<String>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
struct Exit(i32, anyhow::Error);

trait ExitCode<T> {
    fn code(self, code: i32) -> std::result::Result<T, Exit>;
}

impl<T, E: Into<anyhow::Error>> ExitCode<T> for std::result::Result<T, E> {
    fn code(self, code: i32) -> std::result::Result<T, Exit> {
        self.map_err(|e| Exit(code, e.into()))
    }
}

const OTHER: i32 = 10;

/// Runs the CLI and returns the process exit code.
pub fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { OTHER } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Validate { kb, json } => cmd_validate(&kb, json),
        Command::Solve(args) => cmd_solve(&args),
        Command::Score { model, kb, sim, json } => cmd_score(&model, &kb, sim.as_deref(), json),
        Command::Query { ensemble, kb, query, var, explain, json } => {
            cmd_query(&ensemble, &kb, &query, var.as_deref(), explain, json)
        }
        Command::Compare { ensemble, kb, queries, report, json } => {
            cmd_compare(&ensemble, &kb, queries.as_deref(), report.as_deref(), json)
        }
    };
    match result {
        Ok(code) => code,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            code
        }
    }
}

fn read(path: &Path) -> std::result::Result<String, Exit> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).code(OTHER)
}

fn parse_error_code(e: &ParseError) -> i32 {
    if e.kind.is_syntactic() {
        1
    } else {
        2
    }
}

fn load_kb(path: &Path) -> std::result::Result<KnowledgeBase, Exit> {
    let text = read(path)?;
    parse_kb(&text).map_err(|e| Exit(parse_error_code(&e), anyhow!("{}: {e}", path.display())))
}

fn load_similarity(path: Option<&Path>, kb: &KnowledgeBase) -> std::result::Result<SimilarityMatrix, Exit> {
    match path {
        None => Ok(jaccard_similarity(kb)),
        Some(p) => {
            let s = SimilarityMatrix::parse(&read(p)?).with_context(|| format!("{}", p.display())).code(OTHER)?;
            s.aligned_to(kb).with_context(|| format!("{}", p.display())).code(OTHER)
        }
    }
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory and a rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> std::result::Result<(), Exit> {
    println!("{}", serde_json::to_string_pretty(value).code(OTHER)?);
    Ok(())
}

fn cmd_validate(path: &Path, json: bool) -> std::result::Result<i32, Exit> {
    let kb = load_kb(path)?;
    #[derive(Serialize)]
    struct Counts {
        terms: usize,
        predicates: usize,
        triples: usize,
        axioms: usize,
        constraints: usize,
        queries: usize,
    }
    let c = Counts {
        terms: kb.terms().len(),
        predicates: kb.predicates().len(),
        triples: kb.triple_count(),
        axioms: kb.axiom_count(),
        constraints: kb.constraints().len(),
        queries: kb.queries().len(),
    };
    if json {
        print_json(&c)?;
    } else {
        println!("terms: {}", c.terms);
        println!("predicates: {}", c.predicates);
        println!("triples: {}", c.triples);
        println!("axioms: {}", c.axioms);
        println!("constraints: {}", c.constraints);
        println!("queries: {}", c.queries);
    }
    Ok(0)
}

fn parse_threshold(s: &str) -> Result<Option<f64>> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: f64 = s.parse().with_context(|| format!("--pref-threshold expects a number or `none`, got `{s}`"))?;
    Ok(Some(v))
}

fn resolve_config(args: &SolveArgs) -> Result<SolveConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SolveConfig::from_toml(&text).with_context(|| format!("{}", p.display()))?
        }
        None => SolveConfig::default(),
    };
    if let Some(v) = args.dim {
        cfg.dimension = v;
    }
    if let Some(v) = args.delta {
        cfg.delta = v;
    }
    if let Some(v) = args.ensemble {
        cfg.ensemble = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.iters {
        cfg.max_iters = v;
    }
    if let Some(v) = args.sim_weight {
        cfg.w_sim = v;
    }
    if let Some(s) = &args.pref_threshold {
        cfg.preference_threshold = parse_threshold(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn candidate_seeds(cfg: &SolveConfig) -> Vec<u64> {
    (0..(cfg.ensemble * cfg.retry_factor) as u64).map(|k| cfg.seed.wrapping_add(k)).collect()
}

fn cmd_solve(args: &SolveArgs) -> std::result::Result<i32, Exit> {
    let mut manifest = match &args.from_manifest {
        Some(p) => {
            let m: RunManifest = serde_json::from_str(&read(p)?)
                .with_context(|| format!("manifest {}", p.display()))
                .code(OTHER)?;
            m.config.validate().code(OTHER)?;
            RunManifest { out_dir: args.out.clone().unwrap_or(m.out_dir), outputs: Vec::new(), ..m }
        }
        None => {
            let kb_path = args.kb.clone().ok_or_else(|| anyhow!("a KB path is required")).code(OTHER)?;
            let config = resolve_config(args).code(OTHER)?;
            RunManifest {
                tool_version: VERSION.to_string(),
                kb_path,
                sim_path: args.sim.clone(),
                seeds: candidate_seeds(&config),
                config,
                out_dir: args.out.clone().unwrap_or_else(|| PathBuf::from("ensemble")),
                outputs: Vec::new(),
            }
        }
    };
    let kb = load_kb(&manifest.kb_path)?;
    let sim = load_similarity(manifest.sim_path.as_deref(), &kb)?;
    let out = manifest.out_dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display())).code(OTHER)?;
    let manifest_path = out.join(MANIFEST_FILE);
    let write_manifest = |m: &RunManifest| -> std::result::Result<(), Exit> {
        write_atomic(&manifest_path, &(serde_json::to_string_pretty(m).code(OTHER)? + "\n")).code(OTHER)
    };
    write_manifest(&manifest)?;

    let ensemble = generate_ensemble(&kb, &sim, &manifest.config).code(OTHER)?;
    let files = ensemble.to_files().code(OTHER)?;
    for (name, contents) in &files {
        write_atomic(&out.join(name), contents).code(OTHER)?;
    }
    manifest.outputs = files.into_iter().map(|(name, _)| name).collect();
    write_manifest(&manifest)?;

    for a in &ensemble.attempts {
        if a.outcome != Outcome::Accepted {
            eprintln!(
                "seed {}: {} (loss {:.3e}, constraint loss {:.3e}, {} iterations)",
                a.seed,
                serde_json::to_value(a.outcome).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                a.final_loss,
                a.hard_loss,
                a.iterations
            );
        }
    }
    let status = ensemble.status();
    if args.json {
        #[derive(Serialize)]
        struct Summary<'a> {
            status: EnsembleStatus,
            accepted: usize,
            requested: usize,
            out_dir: &'a Path,
            attempts: &'a [embedlogic::solver::Attempt],
        }
        print_json(&Summary {
            status,
            accepted: ensemble.len(),
            requested: ensemble.requested,
            out_dir: &out,
            attempts: &ensemble.attempts,
        })?;
    } else {
        println!(
            "{} of {} members accepted after {} attempts; written to {}",
            ensemble.len(),
            ensemble.requested,
            ensemble.attempts.len(),
            out.display()
        );
    }
    Ok(match status {
        EnsembleStatus::Complete => 0,
        EnsembleStatus::Partial => 3,
    })
}

fn cmd_score(model: &Path, kb_path: &Path, sim: Option<&Path>, json: bool) -> std::result::Result<i32, Exit> {
    let kb = load_kb(kb_path)?;
    let m = model_from_json(&read(model)?).with_context(|| format!("{}", model.display())).code(OTHER)?;
    let s = load_similarity(sim, &kb)?;
    let eps = embedlogic::similarity::DEFAULT_EPS_SD;
    let score = disparity_score_eps(&s, &m, eps).code(OTHER)?;
    let pairs = pair_disparities(&s, &m, eps).code(OTHER)?;
    let sat = satisfies_kb(&m, &kb).code(OTHER)?;
    let violations: Vec<String> = sat.violations.iter().map(|v| describe_violation(v, &kb)).collect();
    if json {
        #[derive(Serialize)]
        struct Score {
            disparity_score: f64,
            pairs: usize,
            satisfies_kb: bool,
            violations: Vec<String>,
        }
        print_json(&Score { disparity_score: score, pairs: pairs.len(), satisfies_kb: sat.satisfied, violations })?;
    } else {
        println!("disparity_score: {score:.17e}");
        println!("pairs: {}", pairs.len());
        println!("satisfies_kb: {}", if sat.satisfied { "SAT" } else { "UNSAT" });
        for v in &violations {
            println!("  violated: {v}");
        }
    }
    Ok(0)
}

fn describe_violation(v: &embedlogic::geometry::Violation, kb: &KnowledgeBase) -> String {
    use embedlogic::geometry::Violation;
    match v {
        Violation::Triple(t) => t.to_string(),
        Violation::AxiomInstance { axiom, term } => match kb.axioms().nth(*axiom) {
            Some(ax) => format!("{} at x = {term}", ax.to_formula()),
            None => v.to_string(),
        },
        Violation::Constraint(i) => kb.constraints().get(*i).map_or_else(|| v.to_string(), |c| c.to_string()),
    }
}

/// A named KB query, or a formula parsed against the KB.
fn resolve_query(kb: &KnowledgeBase, text: &str, var: Option<&str>) -> std::result::Result<(Formula, Option<Variable>), Exit> {
    if let Some(q) = kb.query(text) {
        return Ok((q.formula.clone(), q.var.clone()));
    }
    let f = parse_formula(text, Some(kb), var).map_err(|e| Exit(OTHER, anyhow!("query: {e}")))?;
    Ok((f, var.map(Variable::new)))
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::True => 0,
        Verdict::False => 1,
        Verdict::Unknown => 4,
    }
}

fn cmd_query(
    dir: &Path,
    kb_path: &Path,
    text: &str,
    var: Option<&str>,
    want_explain: bool,
    json: bool,
) -> std::result::Result<i32, Exit> {
    let kb = load_kb(kb_path)?;
    let e = Ensemble::load(dir).with_context(|| format!("ensemble {}", dir.display())).code(OTHER)?;
    let (f, var) = resolve_query(&kb, text, var)?;
    if var.is_some() {
        let rows = binding_verdicts(&e, &f, &kb).code(OTHER)?;
        // Exit code of the best verdict over the bindings.
        let best = if rows.iter().any(|(_, v)| v.value == Verdict::True) {
            Verdict::True
        } else if rows.iter().any(|(_, v)| v.value == Verdict::Unknown) {
            Verdict::Unknown
        } else {
            Verdict::False
        };
        if json {
            #[derive(Serialize)]
            struct Row<'a> {
                term: &'a str,
                verdict: &'a embedlogic::inference::QueryVerdict,
            }
            let rows: Vec<Row> = rows.iter().map(|(t, v)| Row { term: t.as_str(), verdict: v }).collect();
            print_json(&rows)?;
        } else {
            for (t, _) in rows.iter().filter(|(_, v)| v.value == Verdict::True) {
                println!("{t}");
            }
            if want_explain {
                for (t, v) in &rows {
                    eprintln!("{t}: {v}");
                }
            }
        }
        return Ok(verdict_code(best));
    }
    let verdict = query_closed(&e, &f, &kb).code(OTHER)?;
    if want_explain {
        let ex = explain(&e, &f, &kb).code(OTHER)?;
        if json {
            print_json(&ex)?;
        } else {
            print!("{ex}");
        }
    } else if json {
        print_json(&verdict)?;
    } else {
        println!("{verdict}");
    }
    Ok(verdict_code(verdict.value))
}

fn cmd_compare(
    dir: &Path,
    kb_path: &Path,
    queries: Option<&Path>,
    report_path: Option<&Path>,
    json: bool,
) -> std::result::Result<i32, Exit> {
    let kb = load_kb(kb_path)?;
    let e = Ensemble::load(dir).with_context(|| format!("ensemble {}", dir.display())).code(OTHER)?;
    let qs = match queries {
        Some(p) => parse_queries(&read(p)?, &kb).map_err(|err| Exit(parse_error_code(&err), anyhow!("{}: {err}", p.display())))?,
        None => kb.queries().to_vec(),
    };
    if qs.is_empty() {
        return Err(Exit(OTHER, anyhow!("no queries to compare")));
    }
    let report = match compare(&e, &kb, &qs) {
        Ok(r) => r,
        Err(err @ OracleError::CapExceeded { .. }) => return Err(Exit(6, err.into())),
        Err(err) => return Err(Exit(OTHER, err.into())),
    };
    if let Some(p) = report_path {
        write_atomic(p, &(report.to_json() + "\n")).code(OTHER)?;
    }
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{report}");
    }
    Ok(if report.has_violations() { 5 } else { 0 })
}
