//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use minimax_ais::ais::{self, CertifyParams};
use minimax_ais::catalog;
use minimax_ais::general_dp::{contraction_check, iterates_t, value_interval};
use minimax_ais::info_state::{build_info_state, explore_info_states, verify_info_state, InfoStateKind, INFO_STATE_BUDGET};
use minimax_ais::observable::{
    build_observable_state, contraction_check_flat, flat_from_rho, iterates_tbar, observable_cost_check, flat_value_interval,
};
use minimax_ais::oracle::{memory_tree, solve_on_tree};
use minimax_ais::pursuit::{self, PursuitConfig, QLearnConfig};
use minimax_ais::StateSpaceSpec;

type Outcome = Result<String, String>;
type Snapshot = Vec<(String, Vec<u8>)>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Shipped systems with at most 3 states, 2 actions and 2 disturbances,
/// each paired with an information state that verifies exactly.
fn small_systems() -> Vec<(StateSpaceSpec, InfoStateKind)> {
    let pairs = [
        ("perfect_chain", InfoStateKind::Perfect),
        ("noisy_three", InfoStateKind::ConditionalRange),
        ("action_cost", InfoStateKind::ConditionalRange),
        ("adversarial_pair", InfoStateKind::AccruedFunction),
        ("two_behavior", InfoStateKind::ConditionalRange),
        ("two_step_chain", InfoStateKind::ConditionalRange),
    ];
    pairs
        .into_iter()
        .map(|(n, k)| (catalog::load(n), k))
        .filter(|(s, _)| s.num_states() <= 3 && s.num_actions() <= 2 && s.disturbances().len() <= 2)
        .collect()
}

/// Max `|J_t - (gamma^t Lambda^(T-t+1)(sigma(m), t) + a_t)|` over memories
/// and horizons `T <= 4`.
fn identity_gap(spec: &StateSpaceSpec, kind: &InfoStateKind) -> Result<f64, String> {
    let (map, kernel) = build_info_state(spec, kind, 4).map_err(|e| e.to_string())?;
    let lambdas = iterates_t(&kernel, 5).map_err(|e| e.to_string())?;
    let tree = memory_tree(spec, 4).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for horizon in 0..=4 {
        let table = solve_on_tree(spec, tree.clone(), horizon).map_err(|e| e.to_string())?;
        for (t, i, node) in table.tree.nodes().filter(|(t, _, _)| *t <= horizon) {
            let s = map.sigma(spec, node).map_err(|e| e.to_string())?;
            let rebuilt = spec.gamma().powi(t as i32) * lambdas[horizon - t + 1].get(s, t) + node.sup_accrued();
            worst = worst.max((rebuilt - table.value(t, i)).abs());
        }
    }
    Ok(worst)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let systems = small_systems();
    let mut names = Vec::new();
    for (spec, kind) in &systems {
        let (map, kernel) = explore_info_states(spec, kind, INFO_STATE_BUDGET).map_err(|e| e.to_string())?;
        let report = verify_info_state(spec, &map, &kernel, 4).map_err(|e| e.to_string())?;
        check(report.max_violation == 0.0, format!("{} violation {}", spec.name(), report.max_violation))?;
        let gap = identity_gap(spec, kind)?;
        check(gap <= 1e-9, format!("{} identity gap {gap:e}", spec.name()))?;
        names.push(spec.name().to_string());
    }
    check(names.len() >= 3, format!("only {} systems", names.len()))?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("{} systems ({}), gap <= 1e-9, {:.2?}", names.len(), names.join(", "), elapsed))
}

fn contraction() -> Outcome {
    let tol = 1e-9;
    let mut worst = [0.0f64; 3];
    let mut count = [0usize; 3];
    let trials = 100;
    // general operator
    for (name, kind) in [
        ("hidden_fork", InfoStateKind::AccruedFunction),
        ("hidden_fork", InfoStateKind::ConditionalRange),
        ("perfect_chain", InfoStateKind::Perfect),
        ("action_cost", InfoStateKind::ConditionalRange),
        ("adversarial_pair", InfoStateKind::AccruedFunction),
    ] {
        let spec = catalog::load(name);
        let (_, rho) = explore_info_states(&spec, &kind, INFO_STATE_BUDGET).map_err(|e| e.to_string())?;
        let r = contraction_check(&rho, trials, 17).map_err(|e| e.to_string())?;
        check(r.max_ratio <= spec.gamma() + tol, format!("T on {name}: {}", r.max_ratio))?;
        worst[0] = worst[0].max(r.max_ratio - spec.gamma());
        count[0] += 1;
    }
    // flat and aggregated operators
    for name in ["noisy_three", "two_behavior"] {
        let spec = catalog::load(name);
        let (_, flat) = build_observable_state(&spec, 3).map_err(|e| e.to_string())?;
        let r = contraction_check_flat(&flat, trials, 23).map_err(|e| e.to_string())?;
        check(r.max_ratio <= spec.gamma() + tol, format!("T-bar on {name}: {}", r.max_ratio))?;
        worst[1] = worst[1].max(r.max_ratio - spec.gamma());
        count[1] += 1;
        for radius in [1.0, f64::INFINITY] {
            let (_, approx) = ais::compress(&flat, radius).map_err(|e| e.to_string())?;
            let r = contraction_check_flat(&approx, trials, 29).map_err(|e| e.to_string())?;
            check(r.max_ratio <= spec.gamma() + tol, format!("T-hat on {name} r={radius}: {}", r.max_ratio))?;
            worst[2] = worst[2].max(r.max_ratio - spec.gamma());
            count[2] += 1;
        }
    }
    Ok(format!(
        "{trials} pairs per kernel; max ratio - gamma: general {:.3e} ({} kernels), flat {:.3e} ({}), aggregated {:.3e} ({})",
        worst[0], count[0], worst[1], count[1], worst[2], count[2]
    ))
}

/// Worst separation between the two intervals (negative means overlap) and
/// worst endpoint mismatch.
fn sandwich(spec: &StateSpaceSpec, kind: &InfoStateKind) -> Result<(f64, f64, f64), String> {
    let (map, kernel) = build_info_state(spec, kind, 4).map_err(|e| e.to_string())?;
    let lambdas = iterates_t(&kernel, 5).map_err(|e| e.to_string())?;
    let tree = memory_tree(spec, 4).map_err(|e| e.to_string())?;
    let (mut separation, mut mismatch, mut width) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for horizon in 0..=4 {
        let table = solve_on_tree(spec, tree.clone(), horizon).map_err(|e| e.to_string())?;
        let env = table.envelope();
        for (t, i, node) in table.tree.nodes().filter(|(t, _, _)| *t <= horizon) {
            let s = map.sigma(spec, node).map_err(|e| e.to_string())?;
            // n + t = T + 1
            let (lo, hi) = value_interval(&lambdas[horizon - t + 1], s, t, node.sup_accrued(), spec.c_min(), spec.c_max());
            let (olo, ohi) = env[t][i];
            separation = separation.max(lo.max(olo) - hi.min(ohi));
            mismatch = mismatch.max((lo - olo).abs()).max((hi - ohi).abs());
            width = width.max(hi - lo).max(ohi - olo);
        }
    }
    Ok((separation, mismatch, width))
}

fn envelope_sandwich() -> Outcome {
    let mut parts = Vec::new();
    for (name, kind) in [
        ("hidden_fork", InfoStateKind::AccruedFunction),
        ("noisy_three", InfoStateKind::ConditionalRange),
    ] {
        let spec = catalog::load(name);
        check(!spec.is_perfectly_observed(), format!("{name} is perfectly observed"))?;
        let (sep, _, _) = sandwich(&spec, &kind)?;
        check(sep <= 1e-9, format!("{name}: intervals separated by {sep}"))?;
        parts.push(format!("{name} intersect"));

        let flat = spec.with_constant_cost(2.0).map_err(|e| e.to_string())?;
        let (sep, mismatch, width) = sandwich(&flat, &kind)?;
        check(width == 0.0, format!("{name} constant cost: width {width}"))?;
        check(mismatch <= 1e-9 && sep <= 1e-9, format!("{name} constant cost: endpoints differ by {mismatch}"))?;
        parts.push(format!("{name}/constant width 0, |diff| {mismatch:.1e}"));
    }
    Ok(parts.join("; "))
}

fn observable_specs() -> Vec<StateSpaceSpec> {
    let mut specs: Vec<StateSpaceSpec> = catalog::names().map(catalog::load).filter(|s| s.observable_cost()).collect();
    specs.push(pursuit::to_state_space_spec(&PursuitConfig::grid(2, 1)).expect("pursuit strip"));
    specs
}

fn observable_specialization() -> Outcome {
    let mut names = Vec::new();
    let (mut flat_gap, mut ident_gap) = (0.0f64, 0.0f64);
    for spec in observable_specs() {
        let name = spec.name().to_string();
        let r = observable_cost_check(&spec, 4).map_err(|e| e.to_string())?;
        check(r.max_violation == 0.0, format!("{name}: observable-cost violation {}", r.max_violation))?;

        let (map, rho) = explore_info_states(&spec, &InfoStateKind::ConditionalRange, INFO_STATE_BUDGET)
            .map_err(|e| e.to_string())?;
        let flat = flat_from_rho(&map, &rho);
        let general = iterates_t(&rho, 60).map_err(|e| e.to_string())?;
        let bars = iterates_tbar(&flat, 60).map_err(|e| e.to_string())?;
        for (g, b) in general.iter().zip(&bars) {
            for s in 0..flat.num_states() {
                for k in 0..=rho.k_sat() + 1 {
                    flat_gap = flat_gap.max((g.get(s, k) - b.get(s)).abs());
                }
            }
        }

        let tree = memory_tree(&spec, 4).map_err(|e| e.to_string())?;
        for horizon in 0..=4 {
            let table = solve_on_tree(&spec, tree.clone(), horizon).map_err(|e| e.to_string())?;
            for (t, i, node) in table.tree.nodes().filter(|(t, _, _)| *t <= horizon) {
                let s = map.sigma(&spec, node).map_err(|e| e.to_string())?;
                let lambda = &bars[horizon - t + 1];
                let rebuilt = spec.gamma().powi(t as i32) * lambda.get(s) + node.sup_accrued();
                ident_gap = ident_gap.max((rebuilt - table.value(t, i)).abs());
                let (lo, hi) = flat_value_interval(lambda, s, t, node.sup_accrued(), spec.c_min(), spec.c_max());
                check(lo <= hi, "empty interval")?;
            }
        }
        names.push(name);
    }
    check(flat_gap <= 1e-9, format!("flat vs indexed differ by {flat_gap:e}"))?;
    check(ident_gap <= 1e-9, format!("identity gap {ident_gap:e}"))?;
    Ok(format!(
        "observable-cost violation 0 on {}; flat vs indexed {flat_gap:.1e}; identity {ident_gap:.1e}",
        names.join(", ")
    ))
}

fn certificate() -> Outcome {
    let spec = catalog::load("two_behavior");
    let mut params = CertifyParams {
        horizon: None,
        max_horizon: 16,
        beta_horizon: 0,
        max_iters: 10_000,
        tol: 1e-13,
    };
    let (_, _, first) = ais::certify(&spec, f64::INFINITY, 4, &params).map_err(|e| e.to_string())?;
    // rerun with the recursion checked up to the chosen horizon
    params.beta_horizon = first.horizon;
    let (agg, _, cert) = ais::certify(&spec, f64::INFINITY, 4, &params).map_err(|e| e.to_string())?;
    check(agg.len() == 1, "not a single cluster")?;
    let eps = cert.epsilon.epsilon;
    check(eps > 0.0, "epsilon is zero")?;
    let tail = spec.gamma().powi(cert.horizon as i32 + 1) * spec.a_max();
    check(tail <= 1e-3 * cert.value_bound, format!("horizon {} too short: tail {tail}", cert.horizon))?;
    check(cert.value_pass, format!("value gap fails\n{}", cert.summary()))?;
    check(cert.policy_pass, format!("policy gap fails\n{}", cert.summary()))?;
    check(cert.beta_pass, "beta recursion fails")?;
    check(cert.beta.iter().any(|b| b.horizon == cert.horizon), "beta not checked at T")?;
    let worst_v = cert.initial.iter().map(|g| g.value_gap).fold(0.0, f64::max);
    let worst_p = cert.initial.iter().map(|g| g.policy_gap).fold(0.0, f64::max);

    let params0 = CertifyParams {
        horizon: Some(cert.horizon),
        beta_horizon: 4,
        ..params
    };
    let (_, _, exact) = ais::certify(&spec, 0.0, 4, &params0).map_err(|e| e.to_string())?;
    check(exact.epsilon.epsilon == 0.0, format!("r=0 epsilon {}", exact.epsilon.epsilon))?;
    for g in &exact.initial {
        check(
            g.value_gap <= exact.envelope_width + 1e-9 && g.policy_gap <= exact.envelope_width + 1e-9,
            format!("r=0 gaps {} / {} exceed width {}", g.value_gap, g.policy_gap, exact.envelope_width),
        )?;
    }
    Ok(format!(
        "eps {eps}, L_hat {}, T {}: value gap {worst_v:.6} <= {}, policy gap {worst_p:.6} <= {}, beta ok for t <= {}; r=0 eps 0",
        cert.lipschitz.l_hat, cert.horizon, cert.value_bound, cert.policy_bound, cert.horizon
    ))
}

fn alternate_route() -> Outcome {
    let mut cases = 0;
    let mut positive = 0;
    let mut skipped = Vec::new();
    for name in ["two_behavior", "noisy_three"] {
        let spec = catalog::load(name);
        let (map, exact) = build_observable_state(&spec, 4).map_err(|e| e.to_string())?;
        for radius in [0.0, 1.0, 2.0, f64::INFINITY] {
            let (agg, approx) = ais::compress(&exact, radius).map_err(|e| e.to_string())?;
            for depth in 0..=4 {
                let alt = match ais::alternate_characterization_check(&spec, &map, &agg, depth) {
                    Ok(r) => r,
                    Err(minimax_ais::Error::UpdateViolation { .. }) => {
                        skipped.push(format!("{name}/r={radius}"));
                        break;
                    }
                    Err(e) => return Err(e.to_string()),
                };
                let direct = ais::epsilon_of(&spec, &map, &agg, &approx, depth).map_err(|e| e.to_string())?;
                check(
                    direct.epsilon <= alt.epsilon + 1e-12,
                    format!("{name} r={radius} D={depth}: {} > {}", direct.epsilon, alt.epsilon),
                )?;
                cases += 1;
                if direct.epsilon > 0.0 {
                    positive += 1;
                }
            }
        }
    }
    check(positive > 0, "no case with positive epsilon")?;
    skipped.dedup();
    Ok(format!(
        "{cases} (system, radius, depth) cases, {positive} with eps > 0; update not state-like for {}",
        skipped.join(", ")
    ))
}

fn pursuit_benchmark() -> Outcome {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let cfg = PursuitConfig::grid(3, 3);
    check(
        cfg.move_cost == 2.0 && cfg.terminal_weight == 10.0 && cfg.gamma == 0.97,
        "benchmark parameters changed",
    )?;
    let ais_q = QLearnConfig {
        episodes: 50_000,
        ..Default::default()
    };
    check(ais_q.kappa == 0.9, "kappa changed")?;
    let base_q = QLearnConfig {
        episodes: 50_000,
        ..QLearnConfig::baseline(0)
    };
    let report = pool
        .install(|| pursuit::run_benchmark(&cfg, &ais_q, &base_q, &[0, 1, 2], 0.5))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = report.seeds.iter().map(|s| s.optimality.max_relative_gap).fold(0.0, f64::max);
    let fractions: Vec<String> = report.seeds.iter().map(|s| format!("{:.3}", s.fraction_improved)).collect();
    check(report.optimality_pass, format!("learned policy off by {worst:.4} relative"))?;
    check(elapsed < Duration::from_secs(600), format!("took {elapsed:?}"))?;
    Ok(format!(
        "3x3, {} beliefs, H {}: max relative gap {worst:.4} <= 0.05 over 3 seeds, {:.2?} on one thread; \
         belief agent no worse on fractions [{}] of starts (target >= 0.6, not gating: {})",
        report.beliefs,
        report.horizon,
        elapsed,
        fractions.join(", "),
        if report.majority_pass { "met" } else { "missed" },
    ))
}

fn snapshot(dir: &Path) -> Snapshot {
    let mut files: Snapshot = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_minimax-ais");
    let commands: Vec<Vec<&str>> = vec![
        vec!["solve", "--spec", "builtin:hidden_fork", "--kind", "accrued"],
        vec!["solve", "--spec", "builtin:noisy_three", "--mode", "observable"],
        vec!["verify", "--spec", "builtin:noisy_three", "--what", "info-state"],
        vec!["verify", "--spec", "builtin:noisy_three", "--what", "observable-cost"],
        vec!["verify", "--spec", "builtin:noisy_three", "--what", "flat-info-state"],
        vec!["verify", "--spec", "builtin:two_behavior", "--what", "epsilon", "--radius", "10"],
        vec!["verify", "--spec", "builtin:two_behavior", "--what", "alternate", "--radius", "10"],
        vec!["verify", "--spec", "builtin:noisy_three", "--what", "contraction", "--seed", "9"],
        vec!["oracle", "--spec", "builtin:action_cost", "--depth", "3"],
        vec!["compress", "--spec", "builtin:noisy_three", "--radius", "1"],
        vec!["certify", "--spec", "builtin:two_behavior", "--radius", "10"],
        vec!["bench-pursuit", "--seed", "7", "--seeds", "3"],
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for (c, args) in commands.iter().enumerate() {
        let mut runs = Vec::new();
        for r in 0..2 {
            let dir = tmp.path().join(format!("c{c}r{r}"));
            let out = Command::new(bin)
                .args(args)
                .arg("--out")
                .arg(&dir)
                .output()
                .map_err(|e| e.to_string())?;
            check(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
            runs.push((out.stdout, snapshot(&dir)));
        }
        check(runs[0] == runs[1], format!("{args:?} differs between runs"))?;
        files += runs[0].1.len();
    }
    Ok(format!("{} commands, {files} files byte-identical across reruns", commands.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("contraction", contraction),
        ("envelope sandwich", envelope_sandwich),
        ("observable-cost specialization", observable_specialization),
        ("aggregation certificate", certificate),
        ("update-route epsilon", alternate_route),
        ("pursuit benchmark", pursuit_benchmark),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
