//! Closed-loop attacker-vs-defender simulation: the level-1 defender (or a
//! NO-OP baseline) against a sampled attacker type playing its solved
//! level-0 policy. Ground truth evolves by the defender document's joint
//! dynamics; each agent only sees its own observation channels.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::add::{Add, Assignment, Op, VarId};
use crate::domain::{sample_scenario, AttackerType, Scenario};
use crate::ipomdp::{InteractiveBelief, IPOMDPX};
use crate::pomdp::{Belief, PomdpError, ValueFunction};

/// Probability floor inside the cross-entropy logarithm.
pub const CE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Play the solved level-1 policy.
    Ipomdpx,
    /// Passive observer: no decoys, always NOP.
    NoopNoDecoy,
    /// Indiscriminate deception: both decoy types and the vulnerability
    /// deployed up front, then always NOP.
    NoopAllDecoys,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ipomdpx, Strategy::NoopNoDecoy, Strategy::NoopAllDecoys];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ipomdpx => "ipomdpx",
            Strategy::NoopNoDecoy => "noop_no_decoy",
            Strategy::NoopAllDecoys => "noop_all_decoys",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "ipomdpx" => Some(Strategy::Ipomdpx),
            "noop-no-decoy" | "noop_no_decoy" => Some(Strategy::NoopNoDecoy),
            "noop-all-decoys" | "noop_all_decoys" => Some(Strategy::NoopAllDecoys),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialConfig {
    pub base_seed: u64,
    pub trials: usize,
    pub max_steps: usize,
    pub aware_prior: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            base_seed: 0,
            trials: 30,
            max_steps: 15,
            aware_prior: 0.0,
        }
    }
}

/// Why a trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCause {
    Exit,
    Inactive,
    Cap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub attacker_action: String,
    pub defender_action: String,
    /// Next true state after both actions, as variable labels.
    pub state: Vec<String>,
    pub defender_obs: Vec<String>,
    pub attacker_obs: Vec<String>,
    /// Defender's belief over attacker frames after updating.
    pub frame_marginal: Vec<f64>,
    /// -ln of the defender's posterior on the true frame (floored).
    pub cross_entropy: f64,
    /// The attacker's subjective filter rejected the observation (belief
    /// kept from the previous step).
    pub attacker_surprised: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialTrace {
    pub trial: usize,
    pub strategy: String,
    pub seed: u64,
    pub attacker_type: AttackerType,
    pub engagement_length: usize,
    pub impact_caused: bool,
    pub cause: StopCause,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CePoint {
    pub step: usize,
    pub mean_ce: f64,
    pub ce_stderr: f64,
    pub trials_active: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub trials: usize,
    pub mean_engagement: f64,
    pub std_err_engagement: f64,
    pub max_engagement: usize,
    pub impact_rate: f64,
    pub ce_curve: Vec<CePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub base_seed: u64,
    pub trials: usize,
    pub max_steps: usize,
    pub aware_prior: f64,
    pub strategies: Vec<StrategyReport>,
}

// ---------------------------------------------------------------------------
// Sampling helpers
// ---------------------------------------------------------------------------

fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    debug_assert!((total - 1.0).abs() < 1e-6, "unnormalized row: {probs:?}");
    let mut u = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// The true world as value indices over the defender's state variables.
struct World<'a> {
    ip: &'a IPOMDPX,
    state: Vec<usize>,
}

impl<'a> World<'a> {
    fn from_scenario(ip: &'a IPOMDPX, scenario: &Scenario) -> World<'a> {
        let state = ip
            .state_vars
            .iter()
            .map(|&v| {
                let info = ip.engine.catalog().info(v);
                let label = scenario.value(&info.name);
                info.values.iter().position(|l| l == label).expect("label")
            })
            .collect();
        World { ip, state }
    }

    fn base_assignment(&self, a_j: usize) -> Assignment {
        let mut asg = Assignment::new();
        for (&v, &x) in self.ip.state_vars.iter().zip(&self.state) {
            asg.set(v, x);
        }
        asg.set(self.ip.opp_var, a_j);
        asg
    }

    fn distribution(&self, f: Add, asg: &Assignment, var: VarId) -> Vec<f64> {
        let arity = self.ip.engine.catalog().arity(var);
        (0..arity)
            .map(|i| {
                let mut a = asg.clone();
                a.set(var, i);
                self.ip.engine.evaluate(f, &a).expect("full assignment")
            })
            .collect()
    }

    /// Sample the successor state under (defender action, attacker action).
    fn step(&mut self, rng: &mut ChaCha8Rng, a_i: usize, a_j: usize) {
        let asg = self.base_assignment(a_j);
        let mut next = Vec::with_capacity(self.state.len());
        for (k, &v) in self.ip.state_vars.iter().enumerate() {
            let primed = self.ip.engine.catalog().primed(v);
            let probs = self.distribution(self.ip.transitions[a_i][k], &asg, primed);
            next.push(sample_index(rng, &probs));
        }
        self.state = next;
    }

    /// Sample one agent's observation vector given the post-action state.
    fn observe(
        &self,
        rng: &mut ChaCha8Rng,
        channels: &[Add],
        obs_vars: &[VarId],
        a_j: usize,
    ) -> Vec<usize> {
        let mut asg = Assignment::new();
        for (&v, &x) in self.ip.state_vars.iter().zip(&self.state) {
            asg.set(self.ip.engine.catalog().primed(v), x);
        }
        asg.set(self.ip.opp_var, a_j);
        channels
            .iter()
            .zip(obs_vars)
            .map(|(&f, &y)| {
                let probs = self.distribution(f, &asg, y);
                sample_index(rng, &probs)
            })
            .collect()
    }

    fn value_of(&self, var_name: &str) -> &str {
        let (i, &v) = self
            .ip
            .state_vars
            .iter()
            .enumerate()
            .find(|(_, &v)| self.ip.engine.catalog().info(v).name == var_name)
            .expect("known variable");
        &self.ip.engine.catalog().info(v).values[self.state[i]]
    }

    fn labels(&self) -> Vec<String> {
        self.ip
            .state_vars
            .iter()
            .zip(&self.state)
            .map(|(&v, &x)| self.ip.engine.catalog().info(v).values[x].clone())
            .collect()
    }
}

fn labels_for(ip: &IPOMDPX, vars: &[VarId], values: &[usize]) -> Vec<String> {
    vars.iter()
        .zip(values)
        .map(|(&v, &x)| ip.engine.catalog().info(v).values[x].clone())
        .collect()
}

/// Force some state variables of an interactive belief to fixed values
/// (used to align baseline beliefs with their modified start states).
fn force_belief_vars(
    ip: &IPOMDPX,
    b: InteractiveBelief,
    fixes: &[(&str, &str)],
) -> Result<InteractiveBelief, PomdpError> {
    let mut f = b.0;
    for (var, label) in fixes {
        let v = ip.engine.catalog().var(var)?;
        let idx = ip
            .engine
            .catalog()
            .info(v)
            .values
            .iter()
            .position(|l| l == label)
            .expect("label");
        let marginalized = ip.engine.sum_out(f, &[v])?;
        let ind = ip.engine.indicator(v, idx)?;
        f = ip.engine.apply(Op::Product, marginalized, ind)?;
    }
    Ok(InteractiveBelief(f))
}

// ---------------------------------------------------------------------------
// Trial loop
// ---------------------------------------------------------------------------

/// Deterministic per-trial world seed.
fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    base_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(trial as u64)
}

/// Run one closed-loop trial. The scenario (true attacker type and start
/// state) is derived from the same seed for every strategy, so trials are
/// paired across strategies.
pub fn run_trial(
    ip: &IPOMDPX,
    policy: &ValueFunction,
    strategy: Strategy,
    trial: usize,
    cfg: &TrialConfig,
) -> Result<TrialTrace, PomdpError> {
    let seed = trial_seed(cfg.base_seed, trial);
    let mut scenario = sample_scenario(seed);
    if strategy == Strategy::NoopAllDecoys {
        scenario.set("S_DATA_DECOYS", "yes");
        scenario.set("C_DATA_DECOYS", "yes");
        scenario.set("HOST_HAS_VULN", "yes");
    }
    let frame_index = ip
        .frames
        .iter()
        .position(|f| f.name == scenario.attacker.name())
        .expect("frame per attacker type");
    let frame = &ip.frames[frame_index];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = World::from_scenario(ip, &scenario);
    let mut attacker_belief: Belief = frame.initial_belief;
    let mut defender_belief = match strategy {
        Strategy::NoopAllDecoys => force_belief_vars(
            ip,
            ip.initial_belief,
            &[
                ("S_DATA_DECOYS", "yes"),
                ("C_DATA_DECOYS", "yes"),
                ("HOST_HAS_VULN", "yes"),
            ],
        )?,
        _ => ip.initial_belief,
    };
    let nop = ip.action_index("NOP").expect("NOP action");

    let mut steps = Vec::new();
    let mut cause = StopCause::Cap;
    for step in 1..=cfg.max_steps {
        let a_j = frame.pomdp.best_action(&frame.value, attacker_belief)?;
        let a_i = match strategy {
            Strategy::Ipomdpx => ip.best_action(policy, defender_belief)?,
            _ => nop,
        };

        world.step(&mut rng, a_i, a_j);
        let obs_i = world.observe(&mut rng, &ip.obs_i[a_i], &ip.obs_i_vars, a_j);
        let obs_j = world.observe(&mut rng, &ip.obs_j[a_i], &ip.obs_j_vars, a_j);

        // Attacker's subjective filter; frames share observation-variable
        // order and value order with the defender's opponent channels.
        let mut attacker_surprised = false;
        match frame.pomdp.belief_update(attacker_belief, a_j, &obs_j) {
            Ok(nb) => attacker_belief = nb,
            Err(PomdpError::ImpossibleObservation) => attacker_surprised = true,
            Err(e) => return Err(e),
        }
        match ip.belief_update(defender_belief, a_i, &obs_i) {
            Ok(nb) => defender_belief = nb,
            Err(PomdpError::ImpossibleObservation) => {}
            Err(e) => return Err(e),
        }

        let frame_marginal = ip.frame_marginal(defender_belief)?;
        let cross_entropy = -(frame_marginal[frame_index].max(CE_FLOOR)).ln();
        steps.push(StepRecord {
            step,
            attacker_action: frame.pomdp.actions[a_j].clone(),
            defender_action: ip.actions[a_i].clone(),
            state: world.labels(),
            defender_obs: labels_for(ip, &ip.obs_i_vars, &obs_i),
            attacker_obs: labels_for(ip, &ip.obs_j_vars, &obs_j),
            frame_marginal,
            cross_entropy,
            attacker_surprised,
        });

        if frame.pomdp.actions[a_j] == "EXIT" {
            cause = StopCause::Exit;
            break;
        }
        if world.value_of("ATTACKER_STATUS") == "inactive" {
            cause = StopCause::Inactive;
            break;
        }
    }

    let impact_caused = world.value_of("IMPACT_CAUSED") == "yes";
    Ok(TrialTrace {
        trial,
        strategy: strategy.name().to_string(),
        seed,
        attacker_type: scenario.attacker,
        engagement_length: steps.len(),
        impact_caused,
        cause,
        steps,
    })
}

/// Run `cfg.trials` paired trials for each strategy.
pub fn run_experiment(
    ip: &IPOMDPX,
    policy: &ValueFunction,
    strategies: &[Strategy],
    cfg: &TrialConfig,
) -> Result<(ExperimentReport, HashMap<Strategy, Vec<TrialTrace>>), PomdpError> {
    let mut traces: HashMap<Strategy, Vec<TrialTrace>> = HashMap::new();
    let mut reports = Vec::new();
    for &strategy in strategies {
        let mut runs = Vec::with_capacity(cfg.trials);
        for trial in 0..cfg.trials {
            runs.push(run_trial(ip, policy, strategy, trial, cfg)?);
        }
        reports.push(summarize(strategy, &runs, cfg.max_steps));
        traces.insert(strategy, runs);
    }
    Ok((
        ExperimentReport {
            base_seed: cfg.base_seed,
            trials: cfg.trials,
            max_steps: cfg.max_steps,
            aware_prior: cfg.aware_prior,
            strategies: reports,
        },
        traces,
    ))
}

pub fn summarize(strategy: Strategy, runs: &[TrialTrace], max_steps: usize) -> StrategyReport {
    let n = runs.len();
    let lengths: Vec<f64> = runs.iter().map(|t| t.engagement_length as f64).collect();
    let mean = lengths.iter().sum::<f64>() / n.max(1) as f64;
    let var = if n > 1 {
        lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let std_err = (var / n.max(1) as f64).sqrt();
    let mut ce_curve = Vec::new();
    for step in 1..=max_steps {
        let values: Vec<f64> = runs
            .iter()
            .filter_map(|t| t.steps.iter().find(|s| s.step == step))
            .map(|s| s.cross_entropy)
            .collect();
        if values.is_empty() {
            break;
        }
        let m = values.len();
        let mean_ce = values.iter().sum::<f64>() / m as f64;
        let ce_var = if m > 1 {
            values.iter().map(|v| (v - mean_ce).powi(2)).sum::<f64>() / (m - 1) as f64
        } else {
            0.0
        };
        ce_curve.push(CePoint {
            step,
            mean_ce,
            ce_stderr: (ce_var / m as f64).sqrt(),
            trials_active: m,
        });
    }
    StrategyReport {
        strategy: strategy.name().to_string(),
        trials: n,
        mean_engagement: mean,
        std_err_engagement: std_err,
        max_engagement: runs.iter().map(|t| t.engagement_length).max().unwrap_or(0),
        impact_rate: runs.iter().filter(|t| t.impact_caused).count() as f64 / n.max(1) as f64,
        ce_curve,
    }
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

/// Write `report.json`, `ce_curve.csv`, and per-trial traces under
/// `traces/<strategy>/trial_####.json`. Output bytes are a pure function of
/// the report and traces (no timestamps), so identical seeds reproduce
/// identical files.
pub fn write_outputs(
    out_dir: &Path,
    report: &ExperimentReport,
    traces: &HashMap<Strategy, Vec<TrialTrace>>,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut f = std::fs::File::create(out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;

    // Schema: per-step cross-entropy rows, then one `summary` row per
    // strategy carrying mean/stderr of engagement length instead of CE.
    let mut csv = String::from("strategy,step,ce_mean,ce_stderr,trials\n");
    for s in &report.strategies {
        for p in &s.ce_curve {
            csv.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                s.strategy, p.step, p.mean_ce, p.ce_stderr, p.trials_active
            ));
        }
    }
    for s in &report.strategies {
        csv.push_str(&format!(
            "{},summary,{:.6},{:.6},{}\n",
            s.strategy, s.mean_engagement, s.std_err_engagement, s.trials
        ));
    }
    std::fs::write(out_dir.join("ce_curve.csv"), csv)?;

    let mut strategies: Vec<&Strategy> = traces.keys().collect();
    strategies.sort_by_key(|s| s.name());
    for strategy in strategies {
        let dir = out_dir.join("traces").join(strategy.name());
        std::fs::create_dir_all(&dir)?;
        for trace in &traces[strategy] {
            let mut f = std::fs::File::create(dir.join(format!("trial_{:04}.json", trace.trial)))?;
            serde_json::to_writer_pretty(&mut f, trace)?;
            f.write_all(b"\n")?;
        }
    }
    Ok(())
}
