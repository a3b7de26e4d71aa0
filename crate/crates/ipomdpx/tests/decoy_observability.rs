//! Invariant: with perfect decoy-interaction observations and a
//! data-targeting attacker, the defender's cross-entropy on the true
//! attacker type does not increase in expectation across the first
//! decoy-interaction step. Tested as: mean CE after the first
//! decoy-interaction observation is strictly below the mean CE just before
//! it, over at least 100 trials with decoys everywhere.

use ipomdpx::domain::{
    build_defender_ipomdpx, build_frames, AttackerType, DomainParams, SolveConfig, DEFAULT_REACH_H,
};
use ipomdpx::pomdp::{AlphaVector, ValueFunction};
use ipomdpx::sim::{run_experiment, Strategy, TrialConfig};

#[test]
fn ce_drops_across_first_decoy_interaction() {
    let params = DomainParams {
        p_decoy_intr_obs: 1.0,
        ..DomainParams::default()
    };
    params.validate().unwrap();

    let frames = build_frames(&params, 0.0, &SolveConfig::default()).unwrap();
    let ip = build_defender_ipomdpx(&params, frames, DEFAULT_REACH_H).unwrap();

    // Which defender observation variables are the decoy-interaction
    // channels, and which of their values is the firing one.
    let cat = ip.engine.catalog();
    let intr_channels: Vec<(usize, String)> = ip
        .obs_i_vars
        .iter()
        .enumerate()
        .filter(|(_, &v)| cat.info(v).name.ends_with("_DECOY_INTR"))
        .map(|(j, &v)| {
            let yes = cat.info(v).values[cat.value_index(v, "yes").unwrap()].clone();
            (j, yes)
        })
        .collect();
    assert_eq!(intr_channels.len(), 2, "expected both decoy-interaction channels");

    // The baseline never consults the policy; a NOP placeholder keeps the
    // harness interface uniform.
    let nop = ip.action_index("NOP").unwrap();
    let policy = ValueFunction {
        vectors: vec![AlphaVector {
            action: nop,
            values: ip.engine.leaf(0.0).unwrap(),
        }],
    };

    let prior = ip.frame_marginal(ip.initial_belief).unwrap();
    let tcfg = TrialConfig {
        base_seed: 0,
        trials: 160,
        max_steps: 15,
        aware_prior: 0.0,
    };
    let (_, traces) = run_experiment(&ip, &policy, &[Strategy::NoopAllDecoys], &tcfg).unwrap();
    let traces = &traces[&Strategy::NoopAllDecoys];

    let mut before = Vec::new();
    let mut after = Vec::new();
    for trace in traces {
        if trace.attacker_type.target_data().is_none() {
            continue; // the invariant is about data-targeting attackers
        }
        let first = trace.steps.iter().position(|s| {
            intr_channels
                .iter()
                .any(|(j, yes)| s.defender_obs.get(*j) == Some(yes))
        });
        let Some(k) = first else { continue };
        let pre = if k == 0 {
            let ty = AttackerType::ALL
                .iter()
                .position(|&t| t == trace.attacker_type)
                .unwrap();
            -prior[ty].max(1e-12).ln()
        } else {
            trace.steps[k - 1].cross_entropy
        };
        before.push(pre);
        after.push(trace.steps[k].cross_entropy);
    }

    let n = before.len();
    assert!(n >= 100, "only {n} trials had a decoy interaction; need >= 100");
    let mean_before: f64 = before.iter().sum::<f64>() / n as f64;
    let mean_after: f64 = after.iter().sum::<f64>() / n as f64;
    println!(
        "decoy-interaction CE: mean before {mean_before:.4}, after {mean_after:.4}, {n} trials"
    );
    assert!(
        mean_after < mean_before,
        "mean CE rose across the first decoy interaction: {mean_before:.4} -> {mean_after:.4}"
    );
}
