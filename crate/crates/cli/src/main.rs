use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use minimax_ais::ais::{self, CertifyParams};
use minimax_ais::general_dp::{contraction_check, extract_policy, iterate_t};
use minimax_ais::info_state::{explore_info_states, verify_info_state, InfoStateKind, INFO_STATE_BUDGET, VIOLATION_TOL};
use minimax_ais::observable::{
    build_observable_state, contraction_check_flat, extract_flat_policy, flat_policy_csv, flat_from_rho,
    iterate_tbar, observable_cost_check, verify_flat_info_state,
};
use minimax_ais::oracle::solve_finite_horizon;
use minimax_ais::pursuit::{self, PursuitConfig, QLearnConfig};
use minimax_ais::report::{fmt12, write_file};
use minimax_ais::{catalog, schema, Error, StateSpaceSpec};

#[derive(Parser)]
#[command(name = "minimax-ais", version, about = "Worst-case dynamic programming over information states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration over information states.
    Solve(SolveArgs),
    /// Check an information-state condition and write a certificate.
    Verify(VerifyArgs),
    /// Finite-horizon memory dynamic program.
    Oracle(OracleArgs),
    /// Aggregate exact states within a radius.
    Compress(CompressArgs),
    /// Measure epsilon and certify the value and policy-loss bounds.
    Certify(CertifyArgs),
    /// Exact solve, Q-learning and agent comparison on the pursuit grid.
    BenchPursuit(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// System file, or `builtin:NAME` for a shipped system.
    #[arg(long)]
    spec: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Memory depth used for verification.
    #[arg(long, default_value_t = 3)]
    depth: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    General,
    Observable,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "general")]
    mode: Mode,
    /// Information state for general mode: perfect, window:K, accrued, range.
    #[arg(long, default_value = "range")]
    kind: String,
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    InfoState,
    ObservableCost,
    FlatInfoState,
    Epsilon,
    Alternate,
    Contraction,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    what: What,
    #[arg(long, default_value = "range")]
    kind: String,
    /// Aggregation radius for `epsilon` and `alternate`.
    #[arg(long, default_value_t = 0.0)]
    radius: f64,
    /// Seed of the random value pairs for `contraction`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    radius: f64,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Oracle horizon; picked from the bound when omitted.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Pursuit config file; defaults to a 3x3 grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Q-learning config for the belief agent.
    #[arg(long)]
    qconfig: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long)]
    episodes: Option<usize>,
    /// Tail bound of the worst-case evaluation.
    #[arg(long, default_value_t = 0.5)]
    tol: f64,
}

fn load_spec(arg: &str) -> Result<StateSpaceSpec, Error> {
    match arg.strip_prefix("builtin:") {
        Some(name) => catalog::try_load(name),
        None => schema::load_system(Path::new(arg)),
    }
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), Error> {
    write_file(&out.join(name), contents)
}

fn write_json(out: &Path, name: &str, doc: &Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    write(out, name, &text)
}

fn solve(a: &SolveArgs) -> Result<Value, Error> {
    let spec = load_spec(&a.common.spec)?;
    let out = &a.common.out;
    let doc = match a.mode {
        Mode::General => {
            let kind = InfoStateKind::parse(&a.kind)?;
            let (map, kernel) = minimax_ais::info_state::build_info_state(&spec, &kind, a.common.depth)?;
            let (lambda, report) = iterate_t(&kernel, a.iters, Some(a.tol))?;
            let policy = extract_policy(&kernel, &lambda)?;
            write(out, "values.csv", &lambda.to_csv(&map))?;
            write(out, "policy.csv", &policy.to_csv(&map, &spec))?;
            json!({
                "system": spec.name(),
                "mode": "general",
                "kind": kind.name(),
                "states": map.len(),
                "k_sat": kernel.k_sat(),
                "iteration": report,
            })
        }
        Mode::Observable => {
            let (map, kernel) = build_observable_state(&spec, a.common.depth)?;
            let (lambda, report) = iterate_tbar(&kernel, a.iters, Some(a.tol))?;
            let policy = extract_flat_policy(&kernel, &lambda)?;
            write(out, "values.csv", &lambda.to_csv(&kernel.states))?;
            write(out, "policy.csv", &flat_policy_csv(&kernel, &policy, &spec))?;
            json!({
                "system": spec.name(),
                "mode": "observable",
                "kind": map.kind.name(),
                "states": map.len(),
                "iteration": report,
            })
        }
    };
    write_json(out, "report.json", &doc)?;
    Ok(doc)
}

fn verify(a: &VerifyArgs) -> Result<Value, Error> {
    let spec = load_spec(&a.common.spec)?;
    let depth = a.common.depth;
    let doc = match a.what {
        What::InfoState => {
            let kind = InfoStateKind::parse(&a.kind)?;
            let (map, kernel) = explore_info_states(&spec, &kind, INFO_STATE_BUDGET)?;
            let r = verify_info_state(&spec, &map, &kernel, depth)?;
            json!({ "check": "info-state", "pass": r.max_violation <= VIOLATION_TOL, "report": r })
        }
        What::ObservableCost => {
            let r = observable_cost_check(&spec, depth)?;
            json!({ "check": "observable-cost", "pass": r.max_violation <= VIOLATION_TOL, "report": r })
        }
        What::FlatInfoState => {
            if !spec.observable_cost() {
                return Err(Error::NotObservableCost);
            }
            let (map, rho) = explore_info_states(&spec, &InfoStateKind::ConditionalRange, INFO_STATE_BUDGET)?;
            let kernel = flat_from_rho(&map, &rho);
            let r = verify_flat_info_state(&spec, &map, &kernel, depth)?;
            json!({ "check": "flat-info-state", "pass": r.max_violation <= VIOLATION_TOL, "report": r })
        }
        What::Epsilon | What::Alternate => {
            let (map, exact) = build_observable_state(&spec, depth)?;
            let (agg, approx) = ais::compress(&exact, a.radius)?;
            let r = match a.what {
                What::Epsilon => ais::epsilon_of(&spec, &map, &agg, &approx, depth)?,
                _ => ais::alternate_characterization_check(&spec, &map, &agg, depth)?,
            };
            json!({
                "check": if matches!(a.what, What::Epsilon) { "epsilon" } else { "alternate" },
                "radius": fmt12(a.radius),
                "representatives": agg.len(),
                "report": r,
            })
        }
        What::Contraction => {
            let kind = InfoStateKind::parse(&a.kind)?;
            let (map, rho) = explore_info_states(&spec, &kind, INFO_STATE_BUDGET)?;
            let general = contraction_check(&rho, 100, a.seed)?;
            let mut doc = json!({
                "check": "contraction",
                "kind": map.kind.name(),
                "general": general,
                "pass": general.max_ratio <= spec.gamma() + 1e-9,
            });
            if spec.observable_cost() {
                let (_, flat) = build_observable_state(&spec, depth)?;
                let f = contraction_check_flat(&flat, 100, a.seed)?;
                doc["pass"] = json!(doc["pass"].as_bool().unwrap_or(false) && f.max_ratio <= spec.gamma() + 1e-9);
                doc["flat"] = json!(f);
            }
            doc
        }
    };
    write_json(&a.common.out, "certificate.json", &doc)?;
    Ok(doc)
}

fn oracle(a: &OracleArgs) -> Result<Value, Error> {
    let spec = load_spec(&a.common.spec)?;
    let table = solve_finite_horizon(&spec, a.common.depth)?;
    write(&a.common.out, "memory_values.csv", &table.to_csv(&spec))?;
    let doc = json!({
        "system": spec.name(),
        "horizon": a.common.depth,
        "memories": table.tree.len(),
        "envelope_width": fmt12(table.envelope_width()),
    });
    write_json(&a.common.out, "report.json", &doc)?;
    Ok(doc)
}

fn compress(a: &CompressArgs) -> Result<Value, Error> {
    let spec = load_spec(&a.common.spec)?;
    let (_, exact) = build_observable_state(&spec, a.common.depth)?;
    let (agg, approx) = ais::compress(&exact, a.radius)?;
    let mut rows = String::from("state,representative\n");
    for (s, &r) in agg.assign.iter().enumerate() {
        rows.push_str(&format!("{},{}\n", quote(exact.states.label(s)), quote(agg.space.label(r))));
    }
    write(&a.common.out, "aggregation.csv", &rows)?;
    write(&a.common.out, "kernel.csv", &approx.to_csv(&spec))?;
    let doc = json!({
        "system": spec.name(),
        "radius": fmt12(a.radius),
        "exact_states": exact.num_states(),
        "representatives": agg.len(),
        "kernel_epsilon": fmt12(ais::epsilon_of_kernel(&exact, &agg, &approx)),
    });
    write_json(&a.common.out, "report.json", &doc)?;
    Ok(doc)
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn certify(a: &CertifyArgs) -> Result<Value, Error> {
    let spec = load_spec(&a.common.spec)?;
    let params = CertifyParams {
        horizon: a.horizon,
        max_horizon: 12,
        beta_horizon: 6,
        max_iters: a.iters,
        tol: a.tol,
    };
    let (_, approx, cert) = ais::certify(&spec, a.radius, a.common.depth, &params)?;
    write(&a.common.out, "kernel.csv", &approx.to_csv(&spec))?;
    write(&a.common.out, "summary.txt", &cert.summary())?;
    let doc = json!({ "pass": cert.pass(), "certificate": cert });
    write_json(&a.common.out, "certificate.json", &doc)?;
    Ok(doc)
}

fn bench(a: &BenchArgs) -> Result<Value, Error> {
    let cfg = match &a.config {
        Some(p) => PursuitConfig::load(p)?,
        None => PursuitConfig::grid(3, 3),
    };
    let mut ais_q = match &a.qconfig {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            let q: QLearnConfig = serde_json::from_str(&text)?;
            q.validate()?;
            q
        }
        None => QLearnConfig {
            episodes: 50_000,
            ..Default::default()
        },
    };
    if let Some(n) = a.episodes {
        ais_q.episodes = n;
    }
    let base_q = QLearnConfig {
        episodes: ais_q.episodes,
        explore: ais_q.explore,
        alpha: ais_q.alpha,
        episode_cap: ais_q.episode_cap,
        ..QLearnConfig::baseline(0)
    };
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let report = pursuit::run_benchmark(&cfg, &ais_q, &base_q, &seeds, a.tol)?;
    let out = &a.out;
    write(out, "exact.csv", &report.exact.to_csv())?;
    write(out, "summary.csv", &report.summary_csv())?;
    for s in &report.seeds {
        write(out, &format!("comparison_seed{}.csv", s.seed), &s.grid.to_csv())?;
        write(out, &format!("train_log_seed{}.csv", s.seed), &s.ais_table.log_csv())?;
        write(out, &format!("baseline_log_seed{}.csv", s.seed), &s.baseline_table.log_csv())?;
    }
    let doc = json!({ "config": cfg, "ais_qconfig": ais_q, "baseline_qconfig": base_q, "report": report });
    write_json(out, "summary.json", &doc)?;
    Ok(doc)
}

/// Load and input errors exit with 2, everything else with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_)
        | Error::Parse(_)
        | Error::InvalidSystem(_)
        | Error::InvalidMetric(_)
        | Error::UnknownLabel { .. }
        | Error::InvalidConfig(_) => 2,
        _ => 1,
    }
}

fn error_doc(code: &str, message: &str) -> String {
    let doc = json!({ "error": { "code": code, "message": message } });
    serde_json::to_string_pretty(&doc).expect("static shape")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_doc("usage", e.render().to_string().trim()));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Verify(a) => verify(a),
        Command::Oracle(a) => oracle(a),
        Command::Compress(a) => compress(a),
        Command::Certify(a) => certify(a),
        Command::BenchPursuit(a) => bench(a),
    };
    match result {
        Ok(doc) => {
            // a closed pipe downstream is not our failure
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&doc).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut msg = e.to_string();
            if matches!(e, Error::BudgetExceeded { .. }) && matches!(cli.command, Command::BenchPursuit(_)) {
                msg.push_str("; try a smaller grid");
            }
            eprintln!("{}", error_doc(e.code(), &msg));
            ExitCode::from(exit_code(&e))
        }
    }
}

