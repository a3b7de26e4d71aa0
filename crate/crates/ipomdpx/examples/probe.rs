//! Full-pipeline benchmark: solve the attacker frames, expand Reach,
//! compile and solve the level-1 defender model, then run the
//! three-strategy experiment, with wall-clock timings on stderr.
//!
//! Usage: `probe [reach_h] [points] [aware_prior]` (defaults 5, 200, 0).

use std::time::Instant;

use ipomdpx::domain::{
    build_defender_ipomdpx, build_frames, AttackerType, DomainParams, SolveConfig,
};
use ipomdpx::ipomdp::expand_reach;
use ipomdpx::sim::{run_experiment, Strategy, TrialConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reach_h: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let points: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let aware: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let p = DomainParams::default();
    let cfg = SolveConfig::default();
    let t0 = Instant::now();
    let frames = build_frames(&p, aware, &cfg).unwrap();
    eprintln!("frames solved in {:.1}s", t0.elapsed().as_secs_f64());
    for (frame, ty) in frames.iter().zip(AttackerType::ALL) {
        let a = frame.pomdp.best_action(&frame.value, frame.initial_belief).unwrap();
        eprintln!("  {}: |V|={}, initial={}", ty.name(), frame.value.vectors.len(), frame.pomdp.actions[a]);
    }

    let t0 = Instant::now();
    let ms = expand_reach(&frames, reach_h).unwrap();
    eprintln!(
        "Reach(H={reach_h}): {} nodes, {} transitions in {:.1}s",
        ms.nodes.len(),
        ms.transitions.len(),
        t0.elapsed().as_secs_f64()
    );

    let t0 = Instant::now();
    let mut ip = build_defender_ipomdpx(&p, frames, reach_h).unwrap();
    eprintln!("defender compiled in {:.1}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let dcfg = SolveConfig {
        points,
        ..SolveConfig::defender_default()
    };
    let beliefs = ip
        .project_beliefs(ip.initial_belief, dcfg.depth, dcfg.points, dcfg.seed)
        .unwrap();
    eprintln!("projected {} interactive beliefs in {:.1}s", beliefs.len(), t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let (policy, stats) = ip
        .perseus_solve(&beliefs, dcfg.epsilon, dcfg.max_iterations, dcfg.seed)
        .unwrap();
    eprintln!(
        "level-1 solved in {:.1}s: iters={}, backups={}, |V|={}, mean backup {:.2}s",
        t0.elapsed().as_secs_f64(),
        stats.iterations,
        stats.backups,
        policy.vectors.len(),
        stats.backup_seconds / stats.backups.max(1) as f64
    );
    let b0_action = ip.best_action(&policy, ip.initial_belief).unwrap();
    eprintln!("defender initial action: {}", ip.actions[b0_action]);

    let t0 = Instant::now();
    let tcfg = TrialConfig {
        base_seed: 0,
        trials: 30,
        max_steps: 15,
        aware_prior: aware,
    };
    let (report, _traces) = run_experiment(&ip, &policy, &Strategy::ALL, &tcfg).unwrap();
    eprintln!("experiment ran in {:.1}s", t0.elapsed().as_secs_f64());
    for s in &report.strategies {
        eprintln!(
            "  {}: mean={:.2} +/- {:.2}, max={}, impact_rate={:.2}",
            s.strategy, s.mean_engagement, s.std_err_engagement, s.max_engagement, s.impact_rate
        );
        let curve: Vec<String> = s
            .ce_curve
            .iter()
            .map(|c| format!("{}:{:.2}({})", c.step, c.mean_ce, c.trials_active))
            .collect();
        eprintln!("    ce: {}", curve.join(" "));
    }
}
