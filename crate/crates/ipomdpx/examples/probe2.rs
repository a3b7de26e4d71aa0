//! Scratch probe: time the level-1 backup primitives.

use std::time::Instant;

use ipomdpx::domain::{build_defender_ipomdpx, build_frames, DomainParams, SolveConfig};
use ipomdpx::ipomdp::expand_reach;
use ipomdpx::pomdp::{AlphaVector, ValueFunction};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reach_h: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);

    let p = DomainParams::default();
    let cfg = SolveConfig {
        points: 50,
        max_iterations: 60,
        ..SolveConfig::default()
    };
    let t0 = Instant::now();
    let frames = build_frames(&p, 0.0, &cfg).unwrap();
    eprintln!("frames solved in {:.1}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let ms = expand_reach(&frames, reach_h).unwrap();
    eprintln!(
        "Reach(H={reach_h}): {} nodes in {:.1}s",
        ms.nodes.len(),
        t0.elapsed().as_secs_f64()
    );
    let ip = build_defender_ipomdpx(&p, frames, reach_h).unwrap();

    // time a single regress + backup with a trivial V
    let seed_vec = AlphaVector {
        action: 0,
        values: ip.engine.leaf(-10.0).unwrap(),
    };
    let v = ValueFunction { vectors: vec![seed_vec] };
    for action in [0, 1, 6] {
        let t0 = Instant::now();
        let g = ip.regress(seed_vec.values, action).unwrap();
        eprintln!(
            "regress(seed, a{action}) in {:.2}s, {} nodes",
            t0.elapsed().as_secs_f64(),
            ip.engine.node_count(g)
        );
    }
    let t0 = Instant::now();
    let alpha = ip.point_backup(ip.initial_belief, &v).unwrap();
    eprintln!(
        "point_backup(b0) in {:.2}s, alpha nodes = {}",
        t0.elapsed().as_secs_f64(),
        ip.engine.node_count(alpha.values)
    );
    // a second backup against the 1-vector result to see growth
    let v2 = ValueFunction { vectors: vec![alpha] };
    let t0 = Instant::now();
    let alpha2 = ip.point_backup(ip.initial_belief, &v2).unwrap();
    eprintln!(
        "second backup in {:.2}s, alpha nodes = {}",
        t0.elapsed().as_secs_f64(),
        ip.engine.node_count(alpha2.values)
    );
    eprintln!("stored nodes total: {}", ip.engine.stored_nodes());
}
