//! Command-line surface: solve models, run the bundled cyber-deception
//! experiment, inspect exported policies, and validate `.ipx` documents.
//!
//! Exit codes: 0 on success, 2 on validation errors (unreadable, unparsable,
//! or inconsistent inputs), 3 on solver or output failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ipomdpx::domain::{
    self, attacker_document, defender_document, AttackerType, DomainParams, SolveConfig,
};
use ipomdpx::ipomdp::{expand_reach, Frame, IPOMDPX};
use ipomdpx::model::{self, ModelDocument};
use ipomdpx::pomdp::{AlphaVector, FactoredPOMDP, PolicyExport, ValueFunction};
use ipomdpx::sim::{run_experiment, write_outputs, Strategy, TrialConfig};

#[derive(Parser)]
#[command(
    name = "ipomdpx",
    version,
    about = "Factored interactive POMDP planning over algebraic decision diagrams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a level-0 or level-1 model and export the policy
    Solve {
        /// Path to the `.ipx` model document
        #[arg(long)]
        model: PathBuf,
        /// Strategic level: 0 (single-agent) or 1 (interactive)
        #[arg(long)]
        level: u8,
        /// Number of projected belief points
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Reach-expansion horizon for the opponent model space (level 1)
        #[arg(long = "reach-h", default_value_t = domain::DEFAULT_REACH_H)]
        reach_h: usize,
        /// Perseus stopping threshold on value improvement
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for `policy.json` (and `model_set.json` at level 1)
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the attacker-vs-defender simulation experiment
    Simulate {
        /// Defender strategy: ipomdpx, noop-no-decoy, noop-all-decoys, or all
        #[arg(long, default_value = "all")]
        defender: String,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "max-steps", default_value_t = 15)]
        max_steps: usize,
        /// Attacker prior probability that deception is in use
        #[arg(long = "aware-prior", default_value_t = 0.0)]
        aware_prior: f64,
        /// Output directory for `report.json`, `ce_curve.csv`, and traces
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize an exported policy, optionally evaluating a belief
    Inspect {
        /// Path to a `policy.json` produced by `solve`
        #[arg(long)]
        policy: PathBuf,
        /// JSON array of per-state probabilities to evaluate against
        #[arg(long)]
        belief: Option<PathBuf>,
    },
    /// Parse and validate a model document
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Write the bundled domain documents and default parameters
    ExportDomain {
        #[arg(long, default_value = "domains")]
        out: PathBuf,
        /// Attacker prior probability that deception is in use
        #[arg(long = "aware-prior", default_value_t = 0.0)]
        aware_prior: f64,
    },
}

struct CliError {
    code: u8,
    msg: String,
}

fn invalid(msg: impl ToString) -> CliError {
    CliError {
        code: 2,
        msg: msg.to_string(),
    }
}

fn failure(msg: impl ToString) -> CliError {
    CliError {
        code: 3,
        msg: msg.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ipomdpx: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Solve {
            model,
            level,
            points,
            reach_h,
            epsilon,
            seed,
            out,
        } => cmd_solve(&model, level, points, reach_h, epsilon, seed, &out),
        Command::Simulate {
            defender,
            trials,
            seed,
            max_steps,
            aware_prior,
            out,
        } => cmd_simulate(&defender, trials, seed, max_steps, aware_prior, &out),
        Command::Inspect { policy, belief } => cmd_inspect(&policy, belief.as_deref()),
        Command::Validate { model } => cmd_validate(&model),
        Command::ExportDomain { out, aware_prior } => cmd_export_domain(&out, aware_prior),
    }
}

fn load_document(path: &Path) -> Result<ModelDocument, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    model::parse(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(failure)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| failure(format!("{}: {e}", path.display())))
}

fn cmd_solve(
    model: &Path,
    level: u8,
    points: usize,
    reach_h: usize,
    epsilon: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let doc = load_document(model)?;
    let cfg = SolveConfig {
        points,
        epsilon,
        seed,
        ..SolveConfig::default()
    };
    std::fs::create_dir_all(out).map_err(|e| failure(format!("{}: {e}", out.display())))?;
    match level {
        0 => {
            if doc.is_interactive() {
                return Err(invalid(
                    "document declares frames; solve it with --level 1",
                ));
            }
            let mut pomdp = FactoredPOMDP::from_document(&doc).map_err(invalid)?;
            let beliefs = pomdp
                .project_beliefs(pomdp.initial_belief, cfg.depth, cfg.points, cfg.seed)
                .map_err(failure)?;
            let (v, stats) = pomdp
                .perseus_solve(&beliefs, cfg.epsilon, cfg.max_iterations, cfg.seed)
                .map_err(failure)?;
            let export = pomdp.export_policy(&v, &stats, epsilon, seed).map_err(failure)?;
            write_json(&out.join("policy.json"), &export)?;
            println!(
                "solved level-0 model: {} states, {} actions, |V|={}, {} iterations",
                pomdp.state_count(),
                pomdp.actions.len(),
                v.vectors.len(),
                stats.iterations
            );
        }
        1 => {
            if !doc.is_interactive() {
                return Err(invalid(
                    "document declares no frames; solve it with --level 0",
                ));
            }
            let base = model.parent().unwrap_or_else(|| Path::new("."));
            let mut frames = Vec::new();
            for decl in &doc.frames {
                let frame_doc = load_document(&base.join(&decl.path))?;
                if frame_doc.is_interactive() {
                    return Err(invalid(format!(
                        "frame `{}` is itself interactive",
                        decl.name
                    )));
                }
                let mut pomdp = FactoredPOMDP::from_document(&frame_doc).map_err(invalid)?;
                if let Some(trees) = &decl.belief {
                    pomdp.initial_belief =
                        pomdp.belief_from_trees(trees).map_err(invalid)?;
                }
                let beliefs = pomdp
                    .project_beliefs(pomdp.initial_belief, cfg.depth, cfg.points, cfg.seed)
                    .map_err(failure)?;
                let (value, stats) = pomdp
                    .perseus_solve(&beliefs, cfg.epsilon, cfg.max_iterations, cfg.seed)
                    .map_err(failure)?;
                println!(
                    "frame `{}`: |V|={}, {} iterations",
                    decl.name,
                    value.vectors.len(),
                    stats.iterations
                );
                let initial_belief = pomdp.initial_belief;
                frames.push(Frame {
                    name: decl.name.clone(),
                    pomdp,
                    value,
                    initial_belief,
                });
            }
            let model_set = expand_reach(&frames, reach_h).map_err(failure)?;
            let mut ip = IPOMDPX::compile(&doc, frames, model_set).map_err(invalid)?;
            let beliefs = ip
                .project_beliefs(ip.initial_belief, cfg.depth, cfg.points, cfg.seed)
                .map_err(failure)?;
            let (v, stats) = ip
                .perseus_solve(&beliefs, cfg.epsilon, cfg.max_iterations, cfg.seed)
                .map_err(failure)?;
            let export = ip.export_policy(&v, &stats, epsilon, seed).map_err(failure)?;
            write_json(&out.join("policy.json"), &export)?;
            write_json(&out.join("model_set.json"), &ip.export_model_set())?;
            println!(
                "solved level-1 model: {} model nodes (H={reach_h}), |V|={}, {} iterations",
                ip.model_set.nodes.len(),
                v.vectors.len(),
                stats.iterations
            );
        }
        other => return Err(invalid(format!("unsupported level {other}; use 0 or 1"))),
    }
    Ok(())
}

fn cmd_simulate(
    defender: &str,
    trials: usize,
    seed: u64,
    max_steps: usize,
    aware_prior: f64,
    out: &Path,
) -> Result<(), CliError> {
    if trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    if max_steps == 0 {
        return Err(invalid("--max-steps must be at least 1"));
    }
    if !(0.0..=1.0).contains(&aware_prior) {
        return Err(invalid("--aware-prior must be in [0, 1]"));
    }
    let strategies: Vec<Strategy> = if defender == "all" {
        Strategy::ALL.to_vec()
    } else {
        vec![Strategy::parse(defender)
            .ok_or_else(|| invalid(format!("unknown defender strategy `{defender}`")))?]
    };
    let params = DomainParams::load().map_err(invalid)?;

    let frame_cfg = SolveConfig {
        seed,
        ..SolveConfig::default()
    };
    eprintln!("solving attacker frames...");
    let frames = domain::build_frames(&params, aware_prior, &frame_cfg).map_err(failure)?;
    let mut ip = domain::build_defender_ipomdpx(&params, frames, domain::DEFAULT_REACH_H)
        .map_err(failure)?;

    let policy = if strategies.contains(&Strategy::Ipomdpx) {
        eprintln!("solving defender model...");
        let defender_cfg = SolveConfig {
            seed,
            ..SolveConfig::defender_default()
        };
        domain::solve_defender(&mut ip, &defender_cfg).map_err(failure)?.0
    } else {
        // Baselines never consult the policy; a NOP placeholder keeps the
        // harness interface uniform.
        let nop = ip.action_index("NOP").expect("defender has NOP");
        ValueFunction {
            vectors: vec![AlphaVector {
                action: nop,
                values: ip.engine.leaf(0.0).map_err(failure)?,
            }],
        }
    };

    let tcfg = TrialConfig {
        base_seed: seed,
        trials,
        max_steps,
        aware_prior,
    };
    let (report, traces) = run_experiment(&ip, &policy, &strategies, &tcfg).map_err(failure)?;
    write_outputs(out, &report, &traces).map_err(failure)?;
    for s in &report.strategies {
        println!(
            "{}: mean engagement {:.2} +/- {:.2} (max {}), impact rate {:.2}",
            s.strategy, s.mean_engagement, s.std_err_engagement, s.max_engagement, s.impact_rate
        );
    }
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

fn cmd_inspect(policy: &Path, belief: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(policy)
        .map_err(|e| invalid(format!("{}: {e}", policy.display())))?;
    let export: PolicyExport = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", policy.display())))?;
    let state_count: usize = export
        .state_variables
        .iter()
        .map(|(_, vals)| vals.len())
        .product();
    println!(
        "policy: {} alpha-vectors over {} states ({} variables), {} actions",
        export.vectors.len(),
        state_count,
        export.state_variables.len(),
        export.actions.len()
    );
    println!(
        "solver: {} iterations, {} backups, epsilon {}, seed {}",
        export.iterations, export.backups, export.epsilon, export.seed
    );
    for (i, v) in export.vectors.iter().enumerate() {
        match &v.values {
            Some(vals) => {
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                println!(
                    "  alpha[{i}]: action {}, {} nodes, values in [{lo:.4}, {hi:.4}]",
                    v.action, v.node_count
                );
            }
            None => println!("  alpha[{i}]: action {}, {} nodes", v.action, v.node_count),
        }
    }
    if let Some(bpath) = belief {
        let btext = std::fs::read_to_string(bpath)
            .map_err(|e| invalid(format!("{}: {e}", bpath.display())))?;
        let b: Vec<f64> = serde_json::from_str(&btext)
            .map_err(|e| invalid(format!("{}: {e}", bpath.display())))?;
        if b.len() != state_count {
            return Err(invalid(format!(
                "belief has {} entries, expected {state_count}",
                b.len()
            )));
        }
        let total: f64 = b.iter().sum();
        if (total - 1.0).abs() > 1e-6 || b.iter().any(|&p| p < 0.0) {
            return Err(invalid("belief entries must be nonnegative and sum to 1"));
        }
        let mut best: Option<(f64, &str)> = None;
        for v in &export.vectors {
            let vals = v.values.as_ref().ok_or_else(|| {
                invalid("policy has no enumerated values; cannot evaluate a belief")
            })?;
            let dot: f64 = vals.iter().zip(&b).map(|(x, p)| x * p).sum();
            if best.map_or(true, |(bv, _)| dot > bv) {
                best = Some((dot, &v.action));
            }
        }
        let (value, action) = best.ok_or_else(|| invalid("policy has no alpha-vectors"))?;
        println!("belief value {value:.4}, best action {action}");
    }
    Ok(())
}

fn cmd_validate(model: &Path) -> Result<(), CliError> {
    let doc = load_document(model)?;
    println!(
        "{}: valid {} model — {} state variables ({} states), {} actions, {} observation variables, {} frames",
        model.display(),
        if doc.is_interactive() { "level-1" } else { "level-0" },
        doc.variables.len(),
        doc.joint_state_count(),
        doc.actions.len(),
        doc.observations.len(),
        doc.frames.len()
    );
    Ok(())
}

fn cmd_export_domain(out: &Path, aware_prior: f64) -> Result<(), CliError> {
    let params = DomainParams::load().map_err(invalid)?;
    std::fs::create_dir_all(out).map_err(|e| failure(format!("{}: {e}", out.display())))?;
    for ty in AttackerType::ALL {
        let doc = attacker_document(ty, &params, aware_prior);
        let path = out.join(format!("{}.ipx", ty.name()));
        std::fs::write(&path, model::serialize(&doc))
            .map_err(|e| failure(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    let path = out.join("defender.ipx");
    std::fs::write(&path, model::serialize(&defender_document(&params)))
        .map_err(|e| failure(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    let path = out.join("params.toml");
    let toml = toml::to_string_pretty(&params).map_err(failure)?;
    std::fs::write(&path, toml).map_err(|e| failure(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}
