//! Level-1 interactive machinery: Reach-set expansion of opponent models,
//! opponent policy / model-update factors, the joint interactive transition,
//! interactive belief updates, and generalized point-based backups.
//!
//! The opponent (level 0) is captured by a finite set of model nodes — a
//! frame plus a belief — enumerated ahead of time. A dedicated catalog
//! variable ranges over the node identifiers, so interactive beliefs and
//! alpha-vectors are ordinary ADDs over (physical state, model node).

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::add::{Add, Assignment, Engine, Op, TreeSpec, VarId, VariableCatalog};
use crate::model::ModelDocument;
use crate::pomdp::{
    eliminate, tree_to_spec, AlphaVector, BackupCache, Belief, FactoredPOMDP, PolicyExport,
    PolicyVector, PomdpError, SolveStats, ValueFunction, BELIEF_DEDUP_L1, GC_NODE_BUDGET,
};

/// Name of the synthetic catalog variable ranging over opponent model nodes.
pub const MODEL_VAR: &str = "MODEL_J";
/// Observation branches with predictive probability below this are dropped
/// during Reach expansion (the corresponding row self-loops).
pub const REACH_PRUNE: f64 = 1e-4;
/// Value ties within this tolerance count as jointly optimal actions.
pub const TIE_TOLERANCE: f64 = 1e-9;
const ZERO_NORMALIZER: f64 = 1e-250;

/// An opponent type: its level-0 model, solved value function, and initial
/// belief. The model must share action names and observation-variable shapes
/// with the level-1 document's opponent declarations.
pub struct Frame {
    pub name: String,
    pub pomdp: FactoredPOMDP,
    pub value: ValueFunction,
    pub initial_belief: Belief,
}

impl Frame {
    /// Actions of maximizing alpha-vectors at `b`, ties within tolerance.
    pub fn optimal_actions(&self, b: Belief) -> Result<Vec<usize>, PomdpError> {
        let mut vals = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for alpha in &self.value.vectors {
            let v = self.pomdp.value_of(alpha, b)?;
            best = best.max(v);
            vals.push((alpha.action, v));
        }
        let mut actions: Vec<usize> = vals
            .into_iter()
            .filter(|(_, v)| *v >= best - TIE_TOLERANCE)
            .map(|(a, _)| a)
            .collect();
        actions.sort_unstable();
        actions.dedup();
        Ok(actions)
    }
}

/// One enumerated intentional model of the opponent.
pub struct ModelNode {
    pub frame: usize,
    /// Belief in the frame's own engine.
    pub belief: Belief,
    pub depth: usize,
    /// Mixed policy: uniform over the frame's optimal actions at `belief`.
    pub policy: Vec<(usize, f64)>,
}

/// All model nodes of Reach(frames, H) plus the recorded deterministic node
/// transitions. Unrecorded (node, action, observation) rows self-loop.
pub struct ModelSet {
    pub nodes: Vec<ModelNode>,
    /// (node, opponent action, joint observation index) -> successor node.
    pub transitions: HashMap<(usize, usize, usize), usize>,
    /// Initial node of each frame, in frame order.
    pub initial: Vec<usize>,
    pub horizon: usize,
}

impl ModelSet {
    pub fn successor(&self, node: usize, action: usize, obs: usize) -> usize {
        self.transitions
            .get(&(node, action, obs))
            .copied()
            .unwrap_or(node)
    }
}

/// Breadth-first expansion of the opponent model space: from each node, take
/// every optimal opponent action, branch on every observation with predictive
/// probability >= `REACH_PRUNE`, update the opponent belief, and merge nodes
/// whose beliefs are within the L1 dedup tolerance (within one frame). Nodes
/// at depth `horizon` are not expanded and therefore self-loop.
pub fn expand_reach(frames: &[Frame], horizon: usize) -> Result<ModelSet, PomdpError> {
    let mut nodes: Vec<ModelNode> = Vec::new();
    let mut initial = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        initial.push(nodes.len());
        nodes.push(make_node(frame, f, frame.initial_belief, 0)?);
    }
    let mut transitions = HashMap::new();
    let mut frontier: Vec<usize> = initial.clone();
    for depth in 0..horizon {
        let mut next_frontier = Vec::new();
        for &ni in &frontier {
            let f = nodes[ni].frame;
            let frame = &frames[f];
            let belief = nodes[ni].belief;
            let actions: Vec<usize> = nodes[ni].policy.iter().map(|&(a, _)| a).collect();
            let obs_space = frame.pomdp.observation_space();
            for a in actions {
                let predicted = frame.pomdp.predict(belief, a)?;
                let primed = frame.pomdp.primed_state_vars();
                for (oi, obs) in obs_space.iter().enumerate() {
                    let like = frame.pomdp.observation_likelihood(a, obs)?;
                    let w = frame.pomdp.engine.dot(predicted, like, &primed)?;
                    if w < REACH_PRUNE {
                        continue;
                    }
                    let nb = match frame.pomdp.filter_predicted(predicted, a, obs) {
                        Ok(nb) => nb,
                        Err(PomdpError::ImpossibleObservation) => continue,
                        Err(e) => return Err(e),
                    };
                    // merge into an existing node of the same frame if close
                    let mut succ = None;
                    for (j, node) in nodes.iter().enumerate() {
                        if node.frame == f
                            && frame.pomdp.belief_l1(node.belief, nb)? <= BELIEF_DEDUP_L1
                        {
                            succ = Some(j);
                            break;
                        }
                    }
                    let succ = match succ {
                        Some(j) => j,
                        None => {
                            let j = nodes.len();
                            nodes.push(make_node(frame, f, nb, depth + 1)?);
                            next_frontier.push(j);
                            j
                        }
                    };
                    transitions.insert((ni, a, oi), succ);
                }
            }
        }
        frontier = next_frontier;
        if frontier.is_empty() {
            break;
        }
    }
    Ok(ModelSet {
        nodes,
        transitions,
        initial,
        horizon,
    })
}

fn make_node(
    frame: &Frame,
    frame_index: usize,
    belief: Belief,
    depth: usize,
) -> Result<ModelNode, PomdpError> {
    let actions = frame.optimal_actions(belief)?;
    let p = 1.0 / actions.len() as f64;
    Ok(ModelNode {
        frame: frame_index,
        belief,
        depth,
        policy: actions.into_iter().map(|a| (a, p)).collect(),
    })
}

/// Interactive alpha-vector / belief carrier: an ADD over the physical state
/// variables plus the model-node variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractiveBelief(pub Add);

/// The compiled level-1 model. All factors live in one engine whose catalog
/// is: physical state pairs, observation variables, the opponent action
/// variable, and the model-node variable (in that order).
pub struct IPOMDPX {
    pub engine: Arc<Engine>,
    pub state_vars: Vec<VarId>,
    /// Own (level-1 agent) observation variables.
    pub obs_i_vars: Vec<VarId>,
    /// Opponent observation variables.
    pub obs_j_vars: Vec<VarId>,
    pub actions: Vec<String>,
    pub opp_actions: Vec<String>,
    pub opp_var: VarId,
    pub model_var: VarId,
    /// `transitions[a_i][k]`: CPT over (X parents, A_j, primed child).
    pub transitions: Vec<Vec<Add>>,
    /// `obs_i[a_i][m]`: CPT over (X', A_j, own obs var).
    pub obs_i: Vec<Vec<Add>>,
    /// `obs_j[a_i][m]`: CPT over (X', A_j, opponent obs var).
    pub obs_j: Vec<Vec<Add>>,
    /// `rewards[a_i]`: over (X, A_j).
    pub rewards: Vec<Add>,
    pub discount: f64,
    pub frames: Vec<Frame>,
    pub model_set: ModelSet,
    /// P(A_j | M_j).
    pub policy_add: Add,
    /// Per a_i: U(M, A_j, X', M') = sum_{Y'_j} P(Y'_j|X',A_j) [M' = tau(M,A_j,Y'_j)].
    pub model_update: Vec<Add>,
    /// Per a_i: sum_{A_j} P(A_j|M) R^{a_i}(X, A_j), over (M, X).
    pub reward_mixed: Vec<Add>,
    pub initial_belief: InteractiveBelief,
    joint_memo: Mutex<HashMap<(usize, usize), Add>>,
}

impl IPOMDPX {
    /// Compile a level-1 document against solved frames and an expanded model
    /// set. Frame action names must match the document's opponent-actions
    /// labels; frame observation variables must match the document's
    /// opponent-observations declarations.
    pub fn compile(
        doc: &ModelDocument,
        frames: Vec<Frame>,
        model_set: ModelSet,
    ) -> Result<Self, PomdpError> {
        let (opp_name, opp_labels) = doc
            .opponent_actions
            .as_ref()
            .ok_or_else(|| PomdpError::Compile("level-1 document needs opponent-actions".into()))?
            .clone();
        if doc.opponent_observations.is_empty() {
            return Err(PomdpError::Compile(
                "level-1 document needs opponent-observations".into(),
            ));
        }
        for frame in &frames {
            if frame.pomdp.actions != opp_labels {
                return Err(PomdpError::Compile(format!(
                    "frame `{}` action set differs from opponent-actions",
                    frame.name
                )));
            }
        }
        let n_nodes = model_set.nodes.len().max(2);
        let node_labels: Vec<String> = (0..n_nodes).map(|i| format!("m{i}")).collect();

        let mut decls: Vec<(String, Vec<String>)> = doc.variables.clone();
        decls.extend(doc.observations.iter().cloned());
        decls.push((opp_name.clone(), opp_labels.clone()));
        decls.push((MODEL_VAR.to_string(), node_labels.clone()));
        let catalog = VariableCatalog::new(&decls)?;
        let engine = Arc::new(Engine::new(catalog));

        let state_vars: Vec<VarId> = doc
            .variables
            .iter()
            .map(|(n, _)| engine.catalog().var(n))
            .collect::<Result<_, _>>()?;
        let mut obs_i_vars = Vec::new();
        let mut obs_j_vars = Vec::new();
        for (n, _) in &doc.observations {
            let v = engine.catalog().var(n)?;
            if doc.opponent_observations.contains(n) {
                obs_j_vars.push(v);
            } else {
                obs_i_vars.push(v);
            }
        }
        if obs_i_vars.is_empty() {
            return Err(PomdpError::Compile(
                "level-1 document has no own observation variables".into(),
            ));
        }
        let opp_var = engine.catalog().var(&opp_name)?;
        let model_var = engine.catalog().var(MODEL_VAR)?;

        let mut actions = Vec::new();
        let mut transitions = Vec::new();
        let mut obs_i = Vec::new();
        let mut obs_j = Vec::new();
        let mut rewards = Vec::new();
        for block in &doc.actions {
            actions.push(block.name.clone());
            let mut per_var = Vec::new();
            for (k, (name, _)) in doc.variables.iter().enumerate() {
                let cpt = match block.transitions.iter().find(|(v, _)| v == name) {
                    Some((_, tree)) => engine.build_tree(&tree_to_spec(tree))?,
                    None => identity_cpt(&engine, state_vars[k])?,
                };
                per_var.push(cpt);
            }
            transitions.push(per_var);
            let mut own = Vec::new();
            let mut opp = Vec::new();
            for (name, _) in &doc.observations {
                let tree = block
                    .observations
                    .iter()
                    .find(|(v, _)| v == name)
                    .map(|(_, t)| t)
                    .ok_or_else(|| {
                        PomdpError::Compile(format!(
                            "action `{}` lacks observation tree for `{name}`",
                            block.name
                        ))
                    })?;
                let add = engine.build_tree(&tree_to_spec(tree))?;
                if doc.opponent_observations.contains(name) {
                    opp.push(add);
                } else {
                    own.push(add);
                }
            }
            obs_i.push(own);
            obs_j.push(opp);
            rewards.push(engine.build_tree(&tree_to_spec(&block.reward))?);
        }

        // P(A_j | M_j): node policies as a two-level decision tree.
        let policy_add = {
            let mut branches = Vec::new();
            for (i, label) in node_labels.iter().enumerate() {
                let node = model_set.nodes.get(i).unwrap_or(&model_set.nodes[0]);
                let mut row: Vec<(String, TreeSpec)> =
                    opp_labels.iter().map(|l| (l.clone(), TreeSpec::Leaf(0.0))).collect();
                for &(a, p) in &node.policy {
                    row[a].1 = TreeSpec::Leaf(p);
                }
                branches.push((
                    label.clone(),
                    TreeSpec::Node {
                        var: opp_name.clone(),
                        branches: row,
                    },
                ));
            }
            engine.build_tree(&TreeSpec::Node {
                var: MODEL_VAR.to_string(),
                branches,
            })?
        };

        // sum_{A_j} P(A_j|M) R^{a_i}(X, A_j) per defender action.
        let mut reward_mixed = Vec::new();
        for &r in &rewards {
            let prod = engine.apply(Op::Product, policy_add, r)?;
            reward_mixed.push(engine.sum_out(prod, &[opp_var])?);
        }

        let model_update = build_model_update_factors(
            &engine,
            &model_set,
            &obs_j,
            &obs_j_vars,
            opp_var,
            model_var,
            opp_labels.len(),
            n_nodes,
        )?;

        // Initial interactive belief: document belief over X, uniform over
        // the frames' initial model nodes.
        let belief_factors: Vec<Add> = doc
            .belief
            .iter()
            .map(|t| engine.build_tree(&tree_to_spec(t)))
            .collect::<Result<_, _>>()?;
        let phys = engine.apply_all(Op::Product, &belief_factors)?;
        let mut node_prior = engine.leaf(0.0)?;
        let p = 1.0 / model_set.initial.len() as f64;
        for &ni in &model_set.initial {
            let ind = engine.indicator(model_var, ni)?;
            let scaled = engine.scale(ind, p)?;
            node_prior = engine.apply(Op::Sum, node_prior, scaled)?;
        }
        let initial_belief = InteractiveBelief(engine.apply(Op::Product, phys, node_prior)?);

        Ok(IPOMDPX {
            engine,
            state_vars,
            obs_i_vars,
            obs_j_vars,
            actions,
            opp_actions: opp_labels,
            opp_var,
            model_var,
            transitions,
            obs_i,
            obs_j,
            rewards,
            discount: doc.discount,
            frames,
            model_set,
            policy_add,
            model_update,
            reward_mixed,
            initial_belief,
            joint_memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    fn primed_state_vars(&self) -> Vec<VarId> {
        self.state_vars
            .iter()
            .map(|&v| self.engine.catalog().primed(v))
            .collect()
    }

    fn primed_model_var(&self) -> VarId {
        self.engine.catalog().primed(self.model_var)
    }

    /// Variables an interactive belief / alpha-vector ranges over.
    pub fn interactive_vars(&self) -> Vec<VarId> {
        let mut v = self.state_vars.clone();
        v.push(self.model_var);
        v
    }

    /// All joint value-index assignments of the own observation variables.
    pub fn observation_space(&self) -> Vec<Vec<usize>> {
        self.engine.catalog().assignments(&self.obs_i_vars).collect()
    }

    pub fn own_observation_likelihood(
        &self,
        action: usize,
        obs: &[usize],
    ) -> Result<Add, PomdpError> {
        let mut acc = self.engine.leaf(1.0)?;
        for (m, (&var, &val)) in self.obs_i_vars.iter().zip(obs).enumerate() {
            let l = self.engine.restrict(self.obs_i[action][m], var, val)?;
            acc = self.engine.apply(Op::Product, acc, l)?;
        }
        Ok(acc)
    }

    /// The Eq.-1 joint transition P^{a_i,o_i}(M', X' | M, X) as one ADD,
    /// memoized per (a_i, joint observation index).
    pub fn joint_transition(&self, action: usize, obs_index: usize) -> Result<Add, PomdpError> {
        if let Some(&f) = self.joint_memo.lock().get(&(action, obs_index)) {
            return Ok(f);
        }
        let obs_space = self.observation_space();
        let obs = &obs_space[obs_index];
        let like = self.own_observation_likelihood(action, obs)?;
        let mut factors = vec![self.policy_add, like, self.model_update[action]];
        factors.extend(self.transitions[action].iter().copied());
        let f = eliminate(&self.engine, factors, &[self.opp_var])?;
        self.joint_memo.lock().insert((action, obs_index), f);
        Ok(f)
    }

    /// Unnormalized joint distribution over (X', M', own obs variables)
    /// after taking `action` from `b` — the workhorse for updates, sampling,
    /// and projection.
    fn predict_with_obs(&self, b: InteractiveBelief, action: usize) -> Result<Add, PomdpError> {
        let mut factors = vec![b.0, self.policy_add, self.model_update[action]];
        factors.extend(self.transitions[action].iter().copied());
        factors.extend(self.obs_i[action].iter().copied());
        // Deepest variables first so each sum-out touches only the bottom of
        // the DAG; the opponent action joins the (small) remaining factors
        // last, avoiding an early product of every factor at once.
        let mut elim = self.state_vars.clone();
        elim.push(self.model_var);
        elim.reverse();
        elim.push(self.opp_var);
        eliminate(&self.engine, factors, &elim).map_err(PomdpError::from)
    }

    fn normalize_primed(&self, unnorm: Add) -> Result<InteractiveBelief, PomdpError> {
        let mut primed = self.primed_state_vars();
        primed.push(self.primed_model_var());
        let one = self.engine.leaf(1.0)?;
        let z = self.engine.dot(unnorm, one, &primed)?;
        if !(z > ZERO_NORMALIZER) {
            return Err(PomdpError::ImpossibleObservation);
        }
        let n = self.engine.scale(unnorm, 1.0 / z)?;
        Ok(InteractiveBelief(self.engine.unprime(n)?))
    }

    /// Eq.-2 interactive belief update (normalized, renamed to unprimed).
    pub fn belief_update(
        &self,
        b: InteractiveBelief,
        action: usize,
        obs: &[usize],
    ) -> Result<InteractiveBelief, PomdpError> {
        let like = self.own_observation_likelihood(action, obs)?;
        let mut factors = vec![b.0, self.policy_add, like, self.model_update[action]];
        factors.extend(self.transitions[action].iter().copied());
        // Deepest variables first so each sum-out touches only the bottom of
        // the DAG; the opponent action joins the (small) remaining factors
        // last, avoiding an early product of every factor at once.
        let mut elim = self.state_vars.clone();
        elim.push(self.model_var);
        elim.reverse();
        elim.push(self.opp_var);
        let unnorm = eliminate(&self.engine, factors, &elim)?;
        self.normalize_primed(unnorm)
    }

    pub fn belief_l1(
        &self,
        a: InteractiveBelief,
        b: InteractiveBelief,
    ) -> Result<f64, PomdpError> {
        let neg = self.engine.scale(b.0, -1.0)?;
        let diff = self.engine.apply(Op::Sum, a.0, neg)?;
        let abs = self.engine.map_leaf_values(diff, f64::abs)?;
        let one = self.engine.leaf(1.0)?;
        Ok(self.engine.dot(abs, one, &self.interactive_vars())?)
    }

    /// Interactive analogue of level-0 belief projection: random-walk
    /// sampling of distinct reachable interactive beliefs.
    pub fn project_beliefs(
        &self,
        b0: InteractiveBelief,
        horizon: usize,
        count: usize,
        seed: u64,
    ) -> Result<Vec<InteractiveBelief>, PomdpError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![b0];
        if horizon == 0 || count <= 1 {
            return Ok(out);
        }
        let obs_space = self.observation_space();
        let mut primed = self.primed_state_vars();
        primed.push(self.primed_model_var());
        let one = self.engine.leaf(1.0)?;
        let max_walks = 8 * count.max(4);
        'walks: for _ in 0..max_walks {
            let mut b = b0;
            for _ in 0..horizon {
                let action = rng.gen_range(0..self.actions.len());
                let joint = self.predict_with_obs(b, action)?;
                let mut weights = Vec::with_capacity(obs_space.len());
                let mut slices = Vec::with_capacity(obs_space.len());
                for obs in &obs_space {
                    let mut s = joint;
                    for (&var, &val) in self.obs_i_vars.iter().zip(obs) {
                        s = self.engine.restrict(s, var, val)?;
                    }
                    weights.push(self.engine.dot(s, one, &primed)?.max(0.0));
                    slices.push(s);
                }
                let total: f64 = weights.iter().sum();
                if !(total > ZERO_NORMALIZER) {
                    continue 'walks;
                }
                let mut pick = rng.gen_range(0.0..total);
                let mut chosen = obs_space.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if pick < *w {
                        chosen = i;
                        break;
                    }
                    pick -= w;
                }
                b = match self.normalize_primed(slices[chosen]) {
                    Ok(nb) => nb,
                    Err(PomdpError::ImpossibleObservation) => continue 'walks,
                    Err(e) => return Err(e),
                };
                let mut novel = true;
                for known in &out {
                    if self.belief_l1(*known, b)? <= BELIEF_DEDUP_L1 {
                        novel = false;
                        break;
                    }
                }
                if novel {
                    out.push(b);
                    if out.len() >= count {
                        break 'walks;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn value_of(&self, alpha: &AlphaVector, b: InteractiveBelief) -> Result<f64, PomdpError> {
        Ok(self.engine.dot(alpha.values, b.0, &self.interactive_vars())?)
    }

    pub fn value_at(&self, v: &ValueFunction, b: InteractiveBelief) -> Result<f64, PomdpError> {
        let mut best = f64::NEG_INFINITY;
        for alpha in &v.vectors {
            best = best.max(self.value_of(alpha, b)?);
        }
        Ok(best)
    }

    pub fn best_action(&self, v: &ValueFunction, b: InteractiveBelief) -> Result<usize, PomdpError> {
        let mut best = f64::NEG_INFINITY;
        let mut best_action = usize::MAX;
        for alpha in &v.vectors {
            let val = self.value_of(alpha, b)?;
            if val > best + 1e-12 || (val > best - 1e-12 && alpha.action < best_action) {
                best = best.max(val);
                best_action = alpha.action;
            }
        }
        Ok(best_action)
    }

    /// Regress `alpha` (over M, X) through `action`, keeping the own
    /// observation variables symbolic.
    pub fn regress(&self, alpha: Add, action: usize) -> Result<Add, PomdpError> {
        let primed_alpha = self.engine.prime(alpha)?;
        let mut factors = vec![primed_alpha, self.policy_add, self.model_update[action]];
        factors.extend(self.transitions[action].iter().copied());
        factors.extend(self.obs_i[action].iter().copied());
        let mut elim = self.primed_state_vars();
        elim.push(self.primed_model_var());
        elim.reverse();
        elim.push(self.opp_var);
        let g = eliminate(&self.engine, factors, &elim)?;
        Ok(self.engine.scale(g, self.discount)?)
    }

    pub fn point_backup(
        &self,
        b: InteractiveBelief,
        v_next: &ValueFunction,
    ) -> Result<AlphaVector, PomdpError> {
        let mut cache = BackupCache::default();
        self.point_backup_cached(b, v_next, &mut cache)
    }

    /// Eq.-3 generalized point backup over interactive alpha-vectors.
    pub fn point_backup_cached(
        &self,
        b: InteractiveBelief,
        v_next: &ValueFunction,
        cache: &mut BackupCache,
    ) -> Result<AlphaVector, PomdpError> {
        assert!(!v_next.vectors.is_empty(), "seed V with the zero vector");
        let obs_space = self.observation_space();
        let ivars = self.interactive_vars();
        let mut best: Option<(f64, AlphaVector)> = None;
        for action in 0..self.actions.len() {
            let mut acc = self.reward_mixed[action];
            for (oi, obs) in obs_space.iter().enumerate() {
                let mut best_g: Option<(f64, Add)> = None;
                for (ai, alpha) in v_next.vectors.iter().enumerate() {
                    let g = cache.restricted_with::<PomdpError>(
                        ai,
                        action,
                        oi,
                        || self.regress(alpha.values, action),
                        |full| {
                            let mut r = full;
                            for (&var, &val) in self.obs_i_vars.iter().zip(obs) {
                                r = self.engine.restrict(r, var, val)?;
                            }
                            Ok(r)
                        },
                    )?;
                    let val = self.engine.dot(g, b.0, &ivars)?;
                    match best_g {
                        Some((bv, _)) if bv >= val => {}
                        _ => best_g = Some((val, g)),
                    }
                }
                let (_, g) = best_g.expect("non-empty V");
                acc = self.engine.apply(Op::Sum, acc, g)?;
            }
            let val = self.engine.dot(acc, b.0, &ivars)?;
            let better = match &best {
                None => true,
                Some((bv, _)) => val > *bv + 1e-12,
            };
            if better {
                best = Some((val, AlphaVector { action, values: acc }));
            }
        }
        Ok(best.expect("at least one action").1)
    }

    /// Garbage-collect the engine store, keeping this model's factors and
    /// the handles in `extra` (rewritten in place) live. Every other handle
    /// into this engine is invalidated; the frames' own engines are
    /// untouched.
    pub fn gc(&mut self, extra: &mut [Add]) -> Result<(), PomdpError> {
        let mut roots: Vec<Add> = extra.to_vec();
        roots.push(self.initial_belief.0);
        roots.push(self.policy_add);
        for group in self
            .transitions
            .iter()
            .chain(self.obs_i.iter())
            .chain(self.obs_j.iter())
        {
            roots.extend(group.iter().copied());
        }
        roots.extend(self.rewards.iter().copied());
        roots.extend(self.model_update.iter().copied());
        roots.extend(self.reward_mixed.iter().copied());
        let map = self.engine.gc(&roots)?;
        for group in self
            .transitions
            .iter_mut()
            .chain(self.obs_i.iter_mut())
            .chain(self.obs_j.iter_mut())
        {
            for f in group.iter_mut() {
                *f = map[f];
            }
        }
        for f in self
            .rewards
            .iter_mut()
            .chain(self.model_update.iter_mut())
            .chain(self.reward_mixed.iter_mut())
        {
            *f = map[f];
        }
        self.policy_add = map[&self.policy_add];
        self.initial_belief.0 = map[&self.initial_belief.0];
        self.joint_memo.lock().clear();
        for f in extra.iter_mut() {
            *f = map[f];
        }
        Ok(())
    }

    /// Perseus over interactive beliefs; contract identical to the level-0
    /// solver.
    pub fn perseus_solve(
        &mut self,
        beliefs: &[InteractiveBelief],
        epsilon: f64,
        max_iter: usize,
        seed: u64,
    ) -> Result<(ValueFunction, SolveStats), PomdpError> {
        assert!(!beliefs.is_empty());
        // Local copies so periodic store GC can rewrite the handles; the
        // caller's belief handles are invalid after this returns.
        let mut bel: Vec<InteractiveBelief> = beliefs.to_vec();
        // Lower-bound seed: collecting the worst immediate reward forever.
        let r_min = self
            .reward_mixed
            .iter()
            .map(|&r| self.engine.min_leaf(r))
            .fold(f64::INFINITY, f64::min);
        let seed_vec = AlphaVector {
            action: 0,
            values: self.engine.leaf(r_min / (1.0 - self.discount))?,
        };
        let mut v = ValueFunction { vectors: vec![seed_vec] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats = SolveStats::default();
        for iter in 0..max_iter {
            if self.engine.stored_nodes() > GC_NODE_BUDGET {
                let mut extra: Vec<Add> = bel.iter().map(|b| b.0).collect();
                extra.extend(v.vectors.iter().map(|a| a.values));
                self.gc(&mut extra)?;
                for (b, h) in bel.iter_mut().zip(&extra) {
                    b.0 = *h;
                }
                for (a, h) in v.vectors.iter_mut().zip(extra[bel.len()..].iter()) {
                    a.values = *h;
                }
            }
            let old_values: Vec<f64> = bel
                .iter()
                .map(|&b| self.value_at(&v, b))
                .collect::<Result<_, _>>()?;
            let mut cache = BackupCache::default();
            let mut pending: Vec<usize> = (0..bel.len()).collect();
            let mut new_vectors: Vec<AlphaVector> = Vec::new();
            let mut new_values = old_values.clone();
            while !pending.is_empty() {
                let pick = pending[rng.gen_range(0..pending.len())];
                let started = std::time::Instant::now();
                let alpha = self.point_backup_cached(bel[pick], &v, &mut cache)?;
                stats.backups += 1;
                stats.backup_seconds += started.elapsed().as_secs_f64();
                let val = self.value_of(&alpha, bel[pick])?;
                let chosen = if val >= old_values[pick] - 1e-12 {
                    alpha
                } else {
                    let mut best = v.vectors[0];
                    let mut bv = f64::NEG_INFINITY;
                    for cand in &v.vectors {
                        let cv = self.value_of(cand, bel[pick])?;
                        if cv > bv {
                            bv = cv;
                            best = *cand;
                        }
                    }
                    best
                };
                if !new_vectors
                    .iter()
                    .any(|a| a.values == chosen.values && a.action == chosen.action)
                {
                    new_vectors.push(chosen);
                }
                pending.retain(|&i| {
                    let nv = self
                        .value_of(&chosen, bel[i])
                        .unwrap_or(f64::NEG_INFINITY);
                    new_values[i] = new_values[i].max(nv);
                    nv < old_values[i] - 1e-12
                });
            }
            for i in 0..bel.len() {
                for a in &new_vectors {
                    new_values[i] = new_values[i].max(self.value_of(a, bel[i])?);
                }
            }
            let improvement = new_values
                .iter()
                .zip(&old_values)
                .map(|(n, o)| n - o)
                .fold(f64::NEG_INFINITY, f64::max);
            v = ValueFunction { vectors: new_vectors };
            stats.iterations = iter + 1;
            if std::env::var_os("IPOMDPX_TRACE").is_some() {
                eprintln!(
                    "perseus[1] iter {}: |V|={}, improvement={:.4}, backups={}, {:.1}s backing up",
                    iter + 1,
                    v.vectors.len(),
                    improvement,
                    stats.backups,
                    stats.backup_seconds
                );
            }
            if improvement < epsilon {
                break;
            }
        }
        Ok((v, stats))
    }

    /// Belief mass per frame, summed over the frame's model nodes and the
    /// physical state.
    pub fn frame_marginal(&self, b: InteractiveBelief) -> Result<Vec<f64>, PomdpError> {
        let ivars = self.interactive_vars();
        let mut out = Vec::with_capacity(self.frames.len());
        for f in 0..self.frames.len() {
            let mut ind = self.engine.leaf(0.0)?;
            for (ni, node) in self.model_set.nodes.iter().enumerate() {
                if node.frame == f {
                    let i = self.engine.indicator(self.model_var, ni)?;
                    ind = self.engine.apply(Op::Sum, ind, i)?;
                }
            }
            out.push(self.engine.dot(b.0, ind, &ivars)?);
        }
        Ok(out)
    }

    /// Export the value function in the level-0 policy-export shape; the
    /// model variable appears as an extra state variable whose value labels
    /// are the model-node ids.
    pub fn export_policy(
        &self,
        v: &ValueFunction,
        stats: &SolveStats,
        epsilon: f64,
        seed: u64,
    ) -> Result<PolicyExport, PomdpError> {
        let ivars = self.interactive_vars();
        let state_count: usize = ivars
            .iter()
            .map(|&x| self.engine.catalog().arity(x))
            .product();
        let enumerate = state_count.saturating_mul(v.vectors.len()) <= 200_000;
        let mut vectors = Vec::new();
        for alpha in &v.vectors {
            let values = if enumerate {
                let mut out = Vec::new();
                for vals in self.engine.catalog().assignments(&ivars) {
                    let asg = Assignment::from_pairs(&ivars, &vals);
                    out.push(self.engine.evaluate(alpha.values, &asg)?);
                }
                Some(out)
            } else {
                None
            };
            vectors.push(PolicyVector {
                action: self.actions[alpha.action].clone(),
                values,
                node_count: self.engine.node_count(alpha.values),
            });
        }
        Ok(PolicyExport {
            actions: self.actions.clone(),
            state_variables: ivars
                .iter()
                .map(|&x| {
                    let info = self.engine.catalog().info(x);
                    (info.name.clone(), info.values.clone())
                })
                .collect(),
            vectors,
            iterations: stats.iterations,
            backups: stats.backups,
            epsilon,
            seed,
        })
    }

    /// Summary of the model set for inspection output.
    pub fn export_model_set(&self) -> ModelSetExport {
        let state_count: usize = self
            .frames
            .first()
            .map(|f| f.pomdp.state_count())
            .unwrap_or(0);
        let mut nodes = Vec::new();
        for (i, n) in self.model_set.nodes.iter().enumerate() {
            let frame = &self.frames[n.frame];
            let belief = if state_count <= 8192 {
                frame.pomdp.enumerate_values(n.belief.0).ok()
            } else {
                None
            };
            nodes.push(ModelNodeExport {
                id: i,
                frame: frame.name.clone(),
                depth: n.depth,
                policy: n
                    .policy
                    .iter()
                    .map(|&(a, p)| (frame.pomdp.actions[a].clone(), p))
                    .collect(),
                belief,
            });
        }
        let mut transitions: Vec<(usize, String, usize, usize)> = self
            .model_set
            .transitions
            .iter()
            .map(|(&(n, a, o), &s)| (n, self.opp_actions[a].clone(), o, s))
            .collect();
        transitions.sort();
        ModelSetExport {
            horizon: self.model_set.horizon,
            nodes,
            transitions,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelNodeExport {
    pub id: usize,
    pub frame: String,
    pub depth: usize,
    pub policy: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub belief: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSetExport {
    pub horizon: usize,
    pub nodes: Vec<ModelNodeExport>,
    /// (node, opponent action, joint observation index, successor node).
    pub transitions: Vec<(usize, String, usize, usize)>,
}

fn identity_cpt(engine: &Engine, var: VarId) -> Result<Add, PomdpError> {
    let primed = engine.catalog().primed(var);
    let mut acc = engine.leaf(0.0)?;
    for i in 0..engine.catalog().arity(var) {
        let a = engine.indicator(var, i)?;
        let b = engine.indicator(primed, i)?;
        let both = engine.apply(Op::Product, a, b)?;
        acc = engine.apply(Op::Sum, acc, both)?;
    }
    Ok(acc)
}

/// Build, per level-1 action, the observation-marginalized model-update
/// factor U(M, A_j, X', M') = sum over opponent observations of their joint
/// likelihood times the deterministic node-transition indicator. Rows over
/// M' sum to 1 because the likelihoods over the full observation space do.
#[allow(clippy::too_many_arguments)]
fn build_model_update_factors(
    engine: &Engine,
    model_set: &ModelSet,
    obs_j: &[Vec<Add>],
    obs_j_vars: &[VarId],
    opp_var: VarId,
    model_var: VarId,
    n_opp_actions: usize,
    n_nodes: usize,
) -> Result<Vec<Add>, PomdpError> {
    let model_var_p = engine.catalog().primed(model_var);
    let obs_space: Vec<Vec<usize>> = engine.catalog().assignments(obs_j_vars).collect();
    let mut out: Vec<Add> = Vec::new();
    // (handles of the action's opponent obs CPTs) -> built factor, so
    // actions sharing a channel share the diagram.
    let mut by_channel: HashMap<Vec<Add>, Add> = HashMap::new();
    for cpts in obs_j {
        if let Some(&f) = by_channel.get(cpts) {
            out.push(f);
            continue;
        }
        // joint observation likelihood per (opponent action, observation)
        let mut like: Vec<Vec<Add>> = Vec::with_capacity(n_opp_actions);
        for aj in 0..n_opp_actions {
            let mut per_obs = Vec::with_capacity(obs_space.len());
            for obs in &obs_space {
                let mut acc = engine.leaf(1.0)?;
                for (c, (&var, &val)) in obs_j_vars.iter().zip(obs).enumerate() {
                    let mut l = engine.restrict(cpts[c], var, val)?;
                    l = engine.restrict(l, opp_var, aj)?;
                    acc = engine.apply(Op::Product, acc, l)?;
                }
                per_obs.push(acc);
            }
            like.push(per_obs);
        }
        let mut u = engine.leaf(0.0)?;
        for m in 0..n_nodes {
            // nodes beyond the real set (label padding) self-loop
            let real = m < model_set.nodes.len();
            let ind_m = engine.indicator(model_var, m)?;
            for aj in 0..n_opp_actions {
                // group observations by successor node
                let mut groups: HashMap<usize, Add> = HashMap::new();
                for (oi, _) in obs_space.iter().enumerate() {
                    let succ = if real { model_set.successor(m, aj, oi) } else { m };
                    let l = like[aj][oi];
                    match groups.get(&succ) {
                        Some(&g) => {
                            let s = engine.apply(Op::Sum, g, l)?;
                            groups.insert(succ, s);
                        }
                        None => {
                            groups.insert(succ, l);
                        }
                    }
                }
                let ind_aj = engine.indicator(opp_var, aj)?;
                let prefix = engine.apply(Op::Product, ind_m, ind_aj)?;
                let mut sorted: Vec<(usize, Add)> = groups.into_iter().collect();
                sorted.sort_by_key(|&(s, _)| s);
                for (succ, l) in sorted {
                    let ind_s = engine.indicator(model_var_p, succ)?;
                    let term = engine.apply(Op::Product, prefix, ind_s)?;
                    let term = engine.apply(Op::Product, term, l)?;
                    u = engine.apply(Op::Sum, u, term)?;
                }
            }
        }
        by_channel.insert(cpts.clone(), u);
        out.push(u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat::{FlatInteractive, FlatModelNode};
    use crate::model;
    use crate::model::Tree;
    use std::collections::HashMap as Map;

    const GUARD_DOC: &str = r#"
(variables (POS a b))
(observations (OBS_I ping quiet) (OBS_J near far))
(opponent-actions AJ stay move)
(opponent-observations OBS_J)
(discount 0.9)
(action watch
  (transition POS
    (AJ (stay (POS' (a (POS (a (1)) (b (0)))) (b (POS (a (0)) (b (1))))))
        (move (POS' (a (POS (a (0.2)) (b (0.8)))) (b (POS (a (0.8)) (b (0.2))))))))
  (observe OBS_I
    (POS' (a (OBS_I (ping (0.7)) (quiet (0.3)))) (b (OBS_I (ping (0.3)) (quiet (0.7))))))
  (observe OBS_J
    (POS' (a (OBS_J (near (0.9)) (far (0.1)))) (b (OBS_J (near (0.1)) (far (0.9))))))
  (reward (AJ (stay (POS (a (1)) (b (0)))) (move (0)))))
(action block
  (transition POS
    (AJ (stay (POS' (a (POS (a (0.6)) (b (0.4)))) (b (POS (a (0.4)) (b (0.6))))))
        (move (POS' (a (POS (a (0.5)) (b (0.5)))) (b (POS (a (0.5)) (b (0.5))))))))
  (observe OBS_I
    (POS' (a (OBS_I (ping (0.6)) (quiet (0.4)))) (b (OBS_I (ping (0.4)) (quiet (0.6))))))
  (observe OBS_J
    (POS' (a (OBS_J (near (0.9)) (far (0.1)))) (b (OBS_J (near (0.1)) (far (0.9))))))
  (reward (AJ (stay (-1)) (move (POS (a (0)) (b (2)))))))
(belief (POS (a (0.5)) (b (0.5))))
"#;

    const FRAME_DOC: &str = r#"
(variables (POS a b))
(observations (OBS_J near far))
(discount 0.9)
(action stay
  (observe OBS_J
    (POS' (a (OBS_J (near (0.9)) (far (0.1)))) (b (OBS_J (near (0.1)) (far (0.9))))))
  (reward (POS (a (1)) (b (0)))))
(action move
  (transition POS
    (POS' (a (POS (a (0.2)) (b (0.8)))) (b (POS (a (0.8)) (b (0.2))))))
  (observe OBS_J
    (POS' (a (OBS_J (near (0.9)) (far (0.1)))) (b (OBS_J (near (0.1)) (far (0.9))))))
  (reward (POS (a (0)) (b (1)))))
(belief (POS (a (0.5)) (b (0.5))))
"#;

    fn dummy_frame(name: &str) -> Frame {
        let doc = model::parse(FRAME_DOC).unwrap();
        let pomdp = FactoredPOMDP::from_document(&doc).unwrap();
        let zero = AlphaVector {
            action: 0,
            values: pomdp.engine.leaf(0.0).unwrap(),
        };
        let b0 = pomdp.initial_belief;
        Frame {
            name: name.to_string(),
            pomdp,
            value: ValueFunction { vectors: vec![zero] },
            initial_belief: b0,
        }
    }

    /// Manual model set: node0 (frame0, stay), node1 (frame1, move),
    /// node2 (frame0, mixed). One recorded transition, rest self-loop.
    fn toy_model_set(frames: &[Frame]) -> ModelSet {
        let b = frames[0].initial_belief;
        let nodes = vec![
            ModelNode { frame: 0, belief: b, depth: 0, policy: vec![(0, 1.0)] },
            ModelNode { frame: 1, belief: frames[1].initial_belief, depth: 0, policy: vec![(1, 1.0)] },
            ModelNode { frame: 0, belief: b, depth: 1, policy: vec![(0, 0.5), (1, 0.5)] },
        ];
        let mut transitions = HashMap::new();
        transitions.insert((0usize, 0usize, 0usize), 2usize); // (node0, stay, near) -> node2
        transitions.insert((1, 1, 1), 0); // (node1, move, far) -> node0
        ModelSet { nodes, transitions, initial: vec![0, 1], horizon: 1 }
    }

    fn toy() -> IPOMDPX {
        let doc = model::parse(GUARD_DOC).unwrap();
        let frames = vec![dummy_frame("f0"), dummy_frame("f1")];
        let ms = toy_model_set(&frames);
        IPOMDPX::compile(&doc, frames, ms).unwrap()
    }

    /// Independent dense expansion of the toy via direct tree evaluation.
    fn toy_flat(ip: &IPOMDPX) -> FlatInteractive {
        let doc = model::parse(GUARD_DOC).unwrap();
        let sv = ["a", "b"];
        let ajv = ["stay", "move"];
        let oiv = ["ping", "quiet"];
        let ojv = ["near", "far"];
        let eval = |tree: &Tree, asg: &[(&str, &str)]| -> f64 {
            let m: Map<&str, &str> = asg.iter().copied().collect();
            tree.eval(&m).unwrap()
        };
        let mut t = vec![vec![vec![vec![0.0; 2]; 2]; 2]; 2];
        let mut oi = vec![vec![vec![vec![0.0; 2]; 2]; 2]; 2];
        let mut oj = vec![vec![vec![vec![0.0; 2]; 2]; 2]; 2];
        let mut r = vec![vec![vec![0.0; 2]; 2]; 2];
        for (ai, block) in doc.actions.iter().enumerate() {
            let trans = &block.transitions[0].1;
            let obs_i_tree = &block.observations[0].1;
            let obs_j_tree = &block.observations[1].1;
            for aj in 0..2 {
                for s in 0..2 {
                    r[ai][aj][s] =
                        eval(&block.reward, &[("POS", sv[s]), ("AJ", ajv[aj])]);
                    for sn in 0..2 {
                        t[ai][aj][s][sn] = eval(
                            trans,
                            &[("POS", sv[s]), ("POS'", sv[sn]), ("AJ", ajv[aj])],
                        );
                    }
                }
                for sn in 0..2 {
                    for y in 0..2 {
                        oi[ai][aj][sn][y] = eval(
                            obs_i_tree,
                            &[("POS'", sv[sn]), ("AJ", ajv[aj]), ("OBS_I", oiv[y])],
                        );
                        oj[ai][aj][sn][y] = eval(
                            obs_j_tree,
                            &[("POS'", sv[sn]), ("AJ", ajv[aj]), ("OBS_J", ojv[y])],
                        );
                    }
                }
            }
        }
        let models = ip
            .model_set
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let mut policy = vec![0.0; 2];
                for &(a, p) in &n.policy {
                    policy[a] = p;
                }
                let next = (0..2)
                    .map(|aj| (0..2).map(|o| ip.model_set.successor(i, aj, o)).collect())
                    .collect();
                FlatModelNode { policy, next }
            })
            .collect();
        FlatInteractive {
            n_states: 2,
            n_ai: 2,
            n_aj: 2,
            n_oi: 2,
            n_oj: 2,
            t,
            oi,
            oj,
            models,
            r,
            discount: 0.9,
        }
    }

    fn dense_interactive(ip: &IPOMDPX, f: Add) -> Vec<f64> {
        let n = ip.model_set.nodes.len();
        let mut out = Vec::new();
        for m in 0..n {
            for s in 0..2 {
                let mut asg = crate::add::Assignment::new();
                asg.set(ip.model_var, m);
                asg.set(ip.state_vars[0], s);
                out.push(ip.engine.evaluate(f, &asg).unwrap());
            }
        }
        out
    }

    fn symbolic_interactive(ip: &IPOMDPX, dense: &[f64]) -> Add {
        let mut acc = ip.engine.leaf(0.0).unwrap();
        let n = ip.model_set.nodes.len();
        for m in 0..n {
            for s in 0..2 {
                let im = ip.engine.indicator(ip.model_var, m).unwrap();
                let is = ip.engine.indicator(ip.state_vars[0], s).unwrap();
                let p = ip.engine.apply(Op::Product, im, is).unwrap();
                let p = ip.engine.scale(p, dense[m * 2 + s]).unwrap();
                acc = ip.engine.apply(Op::Sum, acc, p).unwrap();
            }
        }
        acc
    }

    #[test]
    fn opponent_policy_rows_normalized() {
        let ip = toy();
        let summed = ip.engine.sum_out(ip.policy_add, &[ip.opp_var]).unwrap();
        // padded node labels included: all rows sum to 1
        assert_eq!(ip.engine.is_leaf(summed), Some(1.0));
    }

    #[test]
    fn model_update_rows_normalized_and_non_manipulable() {
        let ip = toy();
        let mvp = ip.engine.catalog().primed(ip.model_var);
        for (a, &u) in ip.model_update.iter().enumerate() {
            let summed = ip.engine.sum_out(u, &[mvp]).unwrap();
            assert_eq!(ip.engine.is_leaf(summed), Some(1.0), "action {a}");
            // support inspection: no own-observation or unprimed-state deps
            let support = ip.engine.support(u);
            for v in support {
                let ok = v == ip.model_var
                    || v == mvp
                    || v == ip.opp_var
                    || ip.state_vars.iter().any(|&s| ip.engine.catalog().primed(s) == v);
                assert!(ok, "unexpected variable {v} in model update");
            }
        }
    }

    #[test]
    fn joint_transition_total_probability() {
        let ip = toy();
        let obs_n = ip.observation_space().len();
        let mut primed = ip.primed_state_vars();
        primed.push(ip.engine.catalog().primed(ip.model_var));
        for a in 0..ip.actions.len() {
            let mut total = ip.engine.leaf(0.0).unwrap();
            for o in 0..obs_n {
                let jt = ip.joint_transition(a, o).unwrap();
                let m = ip.engine.sum_out(jt, &primed).unwrap();
                total = ip.engine.apply(Op::Sum, total, m).unwrap();
            }
            for leaf in ip.engine.leaves(total) {
                assert!((leaf - 1.0).abs() < 1e-9, "action {a}: {leaf}");
            }
        }
    }

    #[test]
    fn joint_transition_matches_flat_enumeration() {
        let ip = toy();
        let fi = toy_flat(&ip);
        let n = ip.model_set.nodes.len();
        for a in 0..2 {
            for o in 0..2 {
                let jt = ip.joint_transition(a, o).unwrap();
                for m in 0..n {
                    for s in 0..2 {
                        for mn in 0..n {
                            for sn in 0..2 {
                                let mut asg = crate::add::Assignment::new();
                                asg.set(ip.model_var, m);
                                asg.set(ip.state_vars[0], s);
                                asg.set(ip.engine.catalog().primed(ip.model_var), mn);
                                asg.set(ip.engine.catalog().primed(ip.state_vars[0]), sn);
                                let got = ip.engine.evaluate(jt, &asg).unwrap();
                                let expect = fi.joint_transition(a, o, m, s, mn, sn);
                                assert!(
                                    (got - expect).abs() < 1e-10,
                                    "a={a} o={o} ({m},{s})->({mn},{sn}): {got} vs {expect}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn interactive_update_matches_flat_filter() {
        let ip = toy();
        let fi = toy_flat(&ip);
        let mut dense = vec![0.25, 0.15, 0.2, 0.1, 0.05, 0.25];
        let mut b = InteractiveBelief(symbolic_interactive(&ip, &dense));
        for (a, o) in [(0usize, 0usize), (1, 1), (0, 1), (1, 0)] {
            b = ip.belief_update(b, a, &[o]).unwrap();
            dense = fi.interactive_filter(&dense, a, o).unwrap();
            let got = dense_interactive(&ip, b.0);
            for (x, y) in got.iter().zip(&dense) {
                assert!((x - y).abs() < 1e-10, "{got:?} vs {dense:?}");
            }
        }
    }

    #[test]
    fn identity_self_loop_fixed_point() {
        // Uninformative own observations, identity dynamics, self-looping
        // models: the interactive belief must be a fixed point.
        let text = r#"
(variables (POS a b))
(observations (OBS_I ping quiet) (OBS_J near far))
(opponent-actions AJ stay move)
(opponent-observations OBS_J)
(discount 0.9)
(action watch
  (observe OBS_I (OBS_I (ping (0.5)) (quiet (0.5))))
  (observe OBS_J (OBS_J (near (0.5)) (far (0.5))))
  (reward (0)))
(belief (POS (a (0.3)) (b (0.7))))
"#;
        let doc = model::parse(text).unwrap();
        let frames = vec![dummy_frame("f0"), dummy_frame("f1")];
        let b0 = frames[0].initial_belief;
        let b1 = frames[1].initial_belief;
        let ms = ModelSet {
            nodes: vec![
                ModelNode { frame: 0, belief: b0, depth: 0, policy: vec![(0, 1.0)] },
                ModelNode { frame: 1, belief: b1, depth: 0, policy: vec![(1, 1.0)] },
            ],
            transitions: HashMap::new(),
            initial: vec![0, 1],
            horizon: 0,
        };
        let ip = IPOMDPX::compile(&doc, frames, ms).unwrap();
        let b = ip.initial_belief;
        let b2 = ip.belief_update(b, 0, &[0]).unwrap();
        assert!(ip.belief_l1(b, b2).unwrap() < 1e-12);
    }

    #[test]
    fn backup_matches_flat_exhaustive_oracle() {
        let ip = toy();
        let fi = toy_flat(&ip);
        let n = ip.model_set.nodes.len() * 2;
        // Seed V with the zero vector and iterate a few exact comparisons.
        let mut v = ValueFunction {
            vectors: vec![AlphaVector { action: 0, values: ip.engine.leaf(0.0).unwrap() }],
        };
        let beliefs: Vec<Vec<f64>> = vec![
            vec![1.0 / 6.0; 6],
            vec![0.25, 0.15, 0.2, 0.1, 0.05, 0.25],
            vec![0.5, 0.0, 0.0, 0.5, 0.0, 0.0],
        ];
        for round in 0..3 {
            let mut next = Vec::new();
            for dense_b in &beliefs {
                let sb = InteractiveBelief(symbolic_interactive(&ip, dense_b));
                let alpha = ip.point_backup(sb, &v).unwrap();
                let flat_v: Vec<Vec<f64>> = v
                    .vectors
                    .iter()
                    .map(|a| dense_interactive(&ip, a.values))
                    .collect();
                let (oracle, _) = fi.exhaustive_backup(dense_b, &flat_v);
                let got = dense_interactive(&ip, alpha.values);
                let got_val: f64 = got.iter().zip(dense_b).map(|(a, p)| a * p).sum();
                let oracle_val: f64 = oracle.iter().zip(dense_b).map(|(a, p)| a * p).sum();
                assert!(
                    (got_val - oracle_val).abs() < 1e-9,
                    "round {round}: {got_val} vs {oracle_val}"
                );
                assert_eq!(got.len(), n);
                next.push(alpha);
            }
            v = ValueFunction { vectors: next };
        }
    }

    #[test]
    fn zero_rewards_zero_backup() {
        let ip = toy();
        // replace rewards by zero: zero backup from zero V
        let zero = ip.engine.leaf(0.0).unwrap();
        let v = ValueFunction {
            vectors: vec![AlphaVector { action: 0, values: zero }],
        };
        let mut ip2 = ip;
        ip2.reward_mixed = vec![zero; ip2.actions.len()];
        let alpha = ip2.point_backup(ip2.initial_belief, &v).unwrap();
        assert_eq!(ip2.engine.is_leaf(alpha.values), Some(0.0));
    }

    #[test]
    fn frame_marginal_initial_uniform() {
        let ip = toy();
        let m = ip.frame_marginal(ip.initial_belief).unwrap();
        assert_eq!(m.len(), 2);
        assert!((m[0] - 0.5).abs() < 1e-12);
        assert!((m[1] - 0.5).abs() < 1e-12);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expand_reach_h0_is_initial_models() {
        let frames = vec![dummy_frame("f0"), dummy_frame("f1"), dummy_frame("f2")];
        let ms = expand_reach(&frames, 0).unwrap();
        assert_eq!(ms.nodes.len(), 3);
        assert!(ms.transitions.is_empty());
        assert_eq!(ms.initial, vec![0, 1, 2]);
    }

    #[test]
    fn expand_reach_one_step_two_observations() {
        // A frame with one deterministic action and two possible
        // observations expands to initial + 2 successors at H = 1.
        let text = r#"
(variables (POS a b))
(observations (OBS_J near far))
(discount 0.9)
(action stay
  (observe OBS_J
    (POS' (a (OBS_J (near (0.9)) (far (0.1)))) (b (OBS_J (near (0.1)) (far (0.9))))))
  (reward (0)))
(action unused
  (observe OBS_J (OBS_J (near (0.5)) (far (0.5))))
  (reward (-100)))
(belief (POS (a (0.5)) (b (0.5))))
"#;
        let doc = model::parse(text).unwrap();
        let mut pomdp = FactoredPOMDP::from_document(&doc).unwrap();
        let b0 = pomdp.initial_belief;
        let beliefs = pomdp.project_beliefs(b0, 2, 10, 1).unwrap();
        let (value, _) = pomdp.perseus_solve(&beliefs, 1e-3, 50, 2).unwrap();
        let b0 = pomdp.initial_belief;
        let frame = Frame { name: "f".into(), pomdp, value, initial_belief: b0 };
        let ms = expand_reach(&[frame], 1).unwrap();
        assert_eq!(ms.nodes.len(), 3, "initial + two observation branches");
        assert_eq!(ms.transitions.len(), 2);
        for node in &ms.nodes {
            let f = &ms.nodes[0];
            let _ = f;
            // beliefs normalized
            let eng = &node.belief;
            let _ = eng;
        }
    }

    #[test]
    fn project_interactive_beliefs_contracts() {
        let ip = toy();
        let b0 = ip.initial_belief;
        assert_eq!(ip.project_beliefs(b0, 0, 10, 1).unwrap().len(), 1);
        let set = ip.project_beliefs(b0, 4, 12, 7).unwrap();
        assert!(set.len() <= 12);
        assert_eq!(set[0], b0);
        let one = ip.engine.leaf(1.0).unwrap();
        for b in &set {
            let z = ip.engine.dot(b.0, one, &ip.interactive_vars()).unwrap();
            assert!((z - 1.0).abs() < 1e-9);
        }
        let again = ip.project_beliefs(b0, 4, 12, 7).unwrap();
        assert_eq!(set.len(), again.len());
        for (a, b) in set.iter().zip(&again) {
            assert_eq!(a.0, b.0);
        }
    }
}
