//! Level-0 factored POMDP machinery: belief updates, belief-point projection,
//! point-based alpha-vector backups, a Perseus-style solver, and policy
//! queries. Used both for the attacker frames and as the base case of the
//! interactive solver.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::add::{Add, AddError, Assignment, Engine, Op, TreeSpec, VarId, VariableCatalog};
use crate::model::{ModelDocument, Tree};

#[derive(Debug, thiserror::Error)]
pub enum PomdpError {
    #[error(transparent)]
    Add(#[from] AddError),
    #[error("impossible observation (zero normalizer)")]
    ImpossibleObservation,
    #[error("model compile error: {0}")]
    Compile(String),
}

/// Stored-node count above which the Perseus loops garbage-collect the
/// engine store before the next sweep.
pub const GC_NODE_BUDGET: usize = 1_000_000;

/// A normalized distribution over the unprimed state variables, as an ADD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Belief(pub Add);

#[derive(Debug, Clone, Copy)]
pub struct AlphaVector {
    /// Index into the model's action list.
    pub action: usize,
    /// ADD over the unprimed state variables.
    pub values: Add,
}

#[derive(Debug, Clone, Default)]
pub struct ValueFunction {
    pub vectors: Vec<AlphaVector>,
}

/// A level-0 factored POMDP: per-action transition CPTs over
/// (unprimed parents, primed child), per-action observation CPTs over
/// (primed state, observation variable), a reward ADD per action, and a
/// discount. This is also the frame tuple of an opponent type.
pub struct FactoredPOMDP {
    pub engine: Arc<Engine>,
    pub state_vars: Vec<VarId>,
    pub obs_vars: Vec<VarId>,
    pub actions: Vec<String>,
    /// `transitions[a][k]` is the CPT for `state_vars[k]`.
    pub transitions: Vec<Vec<Add>>,
    /// `observations[a][m]` is the CPT for `obs_vars[m]`.
    pub observations: Vec<Vec<Add>>,
    pub rewards: Vec<Add>,
    pub discount: f64,
    pub initial_belief: Belief,
}

pub const BELIEF_DEDUP_L1: f64 = 1e-6;
pub const PERSEUS_EPSILON: f64 = 1e-3;
pub const PERSEUS_MAX_ITER: usize = 200;
const ZERO_NORMALIZER: f64 = 1e-250;

pub fn tree_to_spec(t: &Tree) -> TreeSpec {
    match t {
        Tree::Leaf(v) => TreeSpec::Leaf(*v),
        Tree::Node { var, branches, .. } => TreeSpec::Node {
            var: var.clone(),
            branches: branches
                .iter()
                .map(|(l, sub)| (l.clone(), tree_to_spec(sub)))
                .collect(),
        },
    }
}

/// Multiply a factor list while summing out `elim` (in the given order).
/// Classic variable elimination: factors not mentioning the variable are
/// left untouched until the end.
pub fn eliminate(engine: &Engine, factors: Vec<Add>, elim: &[VarId]) -> Result<Add, AddError> {
    let mut factors = factors;
    for &v in elim {
        let mut mentioning = Vec::new();
        let mut rest = Vec::new();
        for f in factors {
            if engine.support(f).contains(&v) {
                mentioning.push(f);
            } else {
                rest.push(f);
            }
        }
        let combined = if mentioning.is_empty() {
            engine.leaf(engine.catalog().arity(v) as f64)?
        } else {
            let prod = engine.apply_all(Op::Product, &mentioning)?;
            engine.sum_out(prod, &[v])?
        };
        rest.push(combined);
        factors = rest;
    }
    engine.apply_all(Op::Product, &factors)
}

impl FactoredPOMDP {
    /// Compile a level-0 document into ADD factors. The catalog ordering is
    /// the document's declaration order with primed twins interleaved and
    /// observation variables after the state variables.
    pub fn from_document(doc: &ModelDocument) -> Result<Self, PomdpError> {
        if doc.is_interactive() || doc.opponent_actions.is_some() {
            return Err(PomdpError::Compile(
                "expected a level-0 document without frames".into(),
            ));
        }
        let mut decls: Vec<(String, Vec<String>)> = doc.variables.clone();
        decls.extend(doc.observations.iter().cloned());
        let catalog = VariableCatalog::new(&decls).map_err(PomdpError::Add)?;
        let engine = Arc::new(Engine::new(catalog));

        let state_vars: Vec<VarId> = doc
            .variables
            .iter()
            .map(|(n, _)| engine.catalog().var(n))
            .collect::<Result<_, AddError>>()?;
        let obs_vars: Vec<VarId> = doc
            .observations
            .iter()
            .map(|(n, _)| engine.catalog().var(n))
            .collect::<Result<_, AddError>>()?;

        let mut actions = Vec::new();
        let mut transitions = Vec::new();
        let mut observations = Vec::new();
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
            let mut per_obs = Vec::new();
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
                per_obs.push(engine.build_tree(&tree_to_spec(tree))?);
            }
            observations.push(per_obs);
            rewards.push(engine.build_tree(&tree_to_spec(&block.reward))?);
        }

        let belief_factors: Vec<Add> = doc
            .belief
            .iter()
            .map(|t| engine.build_tree(&tree_to_spec(t)))
            .collect::<Result<_, _>>()?;
        let initial = engine.apply_all(Op::Product, &belief_factors)?;

        Ok(FactoredPOMDP {
            engine,
            state_vars,
            obs_vars,
            actions,
            transitions,
            observations,
            rewards,
            discount: doc.discount,
            initial_belief: Belief(initial),
        })
    }

    pub fn primed_state_vars(&self) -> Vec<VarId> {
        self.state_vars
            .iter()
            .map(|&v| self.engine.catalog().primed(v))
            .collect()
    }

    /// Build a belief as the product of factor trees over the state
    /// variables (the same form the document `belief` section uses).
    pub fn belief_from_trees(&self, trees: &[Tree]) -> Result<Belief, PomdpError> {
        let factors: Vec<Add> = trees
            .iter()
            .map(|t| self.engine.build_tree(&tree_to_spec(t)))
            .collect::<Result<_, _>>()?;
        Ok(Belief(self.engine.apply_all(Op::Product, &factors)?))
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    /// All joint value-index assignments of the observation variables.
    pub fn observation_space(&self) -> Vec<Vec<usize>> {
        self.engine.catalog().assignments(&self.obs_vars).collect()
    }

    /// Unnormalized predicted next-state distribution over primed variables.
    pub fn predict(&self, b: Belief, action: usize) -> Result<Add, PomdpError> {
        let mut factors = vec![b.0];
        factors.extend(self.transitions[action].iter().copied());
        let mut elim = self.state_vars.clone();
        elim.reverse();
        Ok(eliminate(&self.engine, factors, &elim)?)
    }

    /// Joint likelihood ADD over primed state for one full observation.
    pub fn observation_likelihood(
        &self,
        action: usize,
        obs: &[usize],
    ) -> Result<Add, PomdpError> {
        let mut acc = self.engine.leaf(1.0)?;
        for (m, (&var, &val)) in self.obs_vars.iter().zip(obs).enumerate() {
            let l = self.engine.restrict(self.observations[action][m], var, val)?;
            acc = self.engine.apply(Op::Product, acc, l)?;
        }
        Ok(acc)
    }

    /// Bayes filter step. `obs` assigns a value index to every observation
    /// variable (in `obs_vars` order).
    pub fn belief_update(
        &self,
        b: Belief,
        action: usize,
        obs: &[usize],
    ) -> Result<Belief, PomdpError> {
        let predicted = self.predict(b, action)?;
        self.filter_predicted(predicted, action, obs)
    }

    /// Finish a belief update from an already-predicted distribution.
    pub fn filter_predicted(
        &self,
        predicted: Add,
        action: usize,
        obs: &[usize],
    ) -> Result<Belief, PomdpError> {
        let like = self.observation_likelihood(action, obs)?;
        let unnorm = self.engine.apply(Op::Product, predicted, like)?;
        let primed = self.primed_state_vars();
        let one = self.engine.leaf(1.0)?;
        let z = self.engine.dot(unnorm, one, &primed)?;
        if !(z > ZERO_NORMALIZER) {
            return Err(PomdpError::ImpossibleObservation);
        }
        let normalized = self.engine.scale(unnorm, 1.0 / z)?;
        Ok(Belief(self.engine.unprime(normalized)?))
    }

    pub fn belief_l1(&self, a: Belief, b: Belief) -> Result<f64, PomdpError> {
        let neg = self.engine.scale(b.0, -1.0)?;
        let diff = self.engine.apply(Op::Sum, a.0, neg)?;
        let abs = self.engine.map_leaf_values(diff, f64::abs)?;
        let one = self.engine.leaf(1.0)?;
        Ok(self.engine.dot(abs, one, &self.state_vars)?)
    }

    /// Sample up to `N` distinct beliefs reachable from `b0` within `H`
    /// steps by uniformly random actions and sampled observations. Always
    /// contains `b0`; deterministic given `seed`.
    pub fn project_beliefs(
        &self,
        b0: Belief,
        horizon: usize,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Belief>, PomdpError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![b0];
        if horizon == 0 || count <= 1 {
            return Ok(out);
        }
        let obs_space = self.observation_space();
        let max_walks = 8 * count.max(4);
        'walks: for _ in 0..max_walks {
            let mut b = b0;
            for _ in 0..horizon {
                let action = rng.gen_range(0..self.actions.len());
                let predicted = self.predict(b, action)?;
                let primed = self.primed_state_vars();
                let mut weights = Vec::with_capacity(obs_space.len());
                for obs in &obs_space {
                    let like = self.observation_likelihood(action, obs)?;
                    let w = self.engine.dot(predicted, like, &primed)?;
                    weights.push(w.max(0.0));
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
                b = match self.filter_predicted(predicted, action, &obs_space[chosen]) {
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

    pub fn value_of(&self, alpha: &AlphaVector, b: Belief) -> Result<f64, PomdpError> {
        Ok(self.engine.dot(alpha.values, b.0, &self.state_vars)?)
    }

    pub fn value_at(&self, v: &ValueFunction, b: Belief) -> Result<f64, PomdpError> {
        let mut best = f64::NEG_INFINITY;
        for alpha in &v.vectors {
            best = best.max(self.value_of(alpha, b)?);
        }
        Ok(best)
    }

    /// Action of the maximizing alpha-vector at `b`; ties broken by the
    /// smallest action index.
    pub fn best_action(&self, v: &ValueFunction, b: Belief) -> Result<usize, PomdpError> {
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

    /// Regress `alpha` through `action`, keeping the observation variables
    /// symbolic: returns `gamma * sum_{x'} P(x'|x) P(y|x') alpha(x')` as an
    /// ADD over (unprimed state, observation variables).
    pub fn regress(&self, alpha: Add, action: usize) -> Result<Add, PomdpError> {
        let primed_alpha = self.engine.prime(alpha)?;
        let mut factors = vec![primed_alpha];
        factors.extend(self.transitions[action].iter().copied());
        factors.extend(self.observations[action].iter().copied());
        let mut elim = self.primed_state_vars();
        elim.reverse();
        let g = eliminate(&self.engine, factors, &elim)?;
        Ok(self.engine.scale(g, self.discount)?)
    }

    pub fn point_backup(&self, b: Belief, v_next: &ValueFunction) -> Result<AlphaVector, PomdpError> {
        let mut cache = BackupCache::default();
        self.point_backup_cached(b, v_next, &mut cache)
    }

    /// Eq.-3 style point backup specialized to level 0. The cache may be
    /// shared across backups within one sweep (while `v_next` is fixed).
    pub fn point_backup_cached(
        &self,
        b: Belief,
        v_next: &ValueFunction,
        cache: &mut BackupCache,
    ) -> Result<AlphaVector, PomdpError> {
        assert!(!v_next.vectors.is_empty(), "seed V with the zero vector");
        let obs_space = self.observation_space();
        let mut best: Option<(f64, AlphaVector)> = None;
        for action in 0..self.actions.len() {
            let mut acc = self.rewards[action];
            for (oi, obs) in obs_space.iter().enumerate() {
                let mut best_g: Option<(f64, Add)> = None;
                for (ai, alpha) in v_next.vectors.iter().enumerate() {
                    let g = cache.restricted(self, ai, alpha.values, action, oi, obs)?;
                    let val = self.engine.dot(g, b.0, &self.state_vars)?;
                    match best_g {
                        Some((bv, _)) if bv >= val => {}
                        _ => best_g = Some((val, g)),
                    }
                }
                let (_, g) = best_g.expect("non-empty V");
                acc = self.engine.apply(Op::Sum, acc, g)?;
            }
            let val = self.engine.dot(acc, b.0, &self.state_vars)?;
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

    /// Randomized point-based value iteration (Perseus). Each sweep improves
    /// or maintains the value at every belief in `B`; stops when the largest
    /// improvement over `B` drops below `epsilon` or after `max_iter` sweeps.
    pub fn perseus_solve(
        &mut self,
        beliefs: &[Belief],
        epsilon: f64,
        max_iter: usize,
        seed: u64,
    ) -> Result<(ValueFunction, SolveStats), PomdpError> {
        assert!(!beliefs.is_empty());
        // Local copies so periodic store GC can rewrite the handles; the
        // caller's belief handles are invalid after this returns.
        let mut bel: Vec<Belief> = beliefs.to_vec();
        // Lower-bound seed: collecting the worst immediate reward forever.
        let r_min = self
            .rewards
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
                    // keep the previous best vector at this point
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
            // improvement bookkeeping across the whole belief set
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
                    "perseus[0] iter {}: |V|={}, improvement={:.4}, backups={}, {:.1}s backing up",
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

    /// Garbage-collect the engine store, keeping this model's factors and
    /// the handles in `extra` (rewritten in place) live. Every other handle
    /// into this engine is invalidated.
    pub fn gc(&mut self, extra: &mut [Add]) -> Result<(), PomdpError> {
        let mut roots: Vec<Add> = extra.to_vec();
        roots.push(self.initial_belief.0);
        for group in self.transitions.iter().chain(self.observations.iter()) {
            roots.extend(group.iter().copied());
        }
        roots.extend(self.rewards.iter().copied());
        let map = self.engine.gc(&roots)?;
        for group in self.transitions.iter_mut().chain(self.observations.iter_mut()) {
            for f in group.iter_mut() {
                *f = map[f];
            }
        }
        for f in self.rewards.iter_mut() {
            *f = map[f];
        }
        self.initial_belief.0 = map[&self.initial_belief.0];
        for f in extra.iter_mut() {
            *f = map[f];
        }
        Ok(())
    }

    /// Enumerated per-state values of an ADD over the state variables.
    pub fn enumerate_values(&self, f: Add) -> Result<Vec<f64>, PomdpError> {
        let mut out = Vec::new();
        for vals in self.engine.catalog().assignments(&self.state_vars) {
            let asg = Assignment::from_pairs(&self.state_vars, &vals);
            out.push(self.engine.evaluate(f, &asg)?);
        }
        Ok(out)
    }

    pub fn state_count(&self) -> usize {
        self.state_vars
            .iter()
            .map(|&v| self.engine.catalog().arity(v))
            .product()
    }

    pub fn export_policy(
        &self,
        v: &ValueFunction,
        stats: &SolveStats,
        epsilon: f64,
        seed: u64,
    ) -> Result<PolicyExport, PomdpError> {
        let state_count = self.state_count();
        let enumerate = state_count.saturating_mul(v.vectors.len()) <= 200_000;
        let mut vectors = Vec::new();
        for alpha in &v.vectors {
            vectors.push(PolicyVector {
                action: self.actions[alpha.action].clone(),
                values: if enumerate {
                    Some(self.enumerate_values(alpha.values)?)
                } else {
                    None
                },
                node_count: self.engine.node_count(alpha.values),
            });
        }
        Ok(PolicyExport {
            actions: self.actions.clone(),
            state_variables: self
                .state_vars
                .iter()
                .map(|&v| {
                    let info = self.engine.catalog().info(v);
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
}

fn identity_cpt(engine: &Engine, var: VarId) -> Result<Add, AddError> {
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

/// Per-sweep cache of regressed alpha-vectors: `(alpha, action)` keeps the
/// observation variables symbolic, `(alpha, action, obs)` restricts them.
#[derive(Default)]
pub struct BackupCache {
    regressed: HashMap<(usize, usize), Add>,
    restricted: HashMap<(usize, usize, usize), Add>,
}

impl BackupCache {
    /// Generic memoized lookup: `regress` produces the observation-symbolic
    /// regression for (alpha, action); `restrict` specializes it to one
    /// observation. Used by both the level-0 and level-1 backup loops.
    pub fn restricted_with<E>(
        &mut self,
        alpha_index: usize,
        action: usize,
        obs_index: usize,
        regress: impl FnOnce() -> Result<Add, E>,
        restrict: impl FnOnce(Add) -> Result<Add, E>,
    ) -> Result<Add, E> {
        if let Some(&g) = self.restricted.get(&(alpha_index, action, obs_index)) {
            return Ok(g);
        }
        let full = match self.regressed.get(&(alpha_index, action)) {
            Some(&g) => g,
            None => {
                let g = regress()?;
                self.regressed.insert((alpha_index, action), g);
                g
            }
        };
        let r = restrict(full)?;
        self.restricted.insert((alpha_index, action, obs_index), r);
        Ok(r)
    }

    fn restricted(
        &mut self,
        model: &FactoredPOMDP,
        alpha_index: usize,
        alpha: Add,
        action: usize,
        obs_index: usize,
        obs: &[usize],
    ) -> Result<Add, PomdpError> {
        if let Some(&g) = self.restricted.get(&(alpha_index, action, obs_index)) {
            return Ok(g);
        }
        let g = match self.regressed.get(&(alpha_index, action)) {
            Some(&g) => g,
            None => {
                let g = model.regress(alpha, action)?;
                self.regressed.insert((alpha_index, action), g);
                g
            }
        };
        let mut r = g;
        for (&var, &val) in model.obs_vars.iter().zip(obs) {
            r = model.engine.restrict(r, var, val)?;
        }
        self.restricted.insert((alpha_index, action, obs_index), r);
        Ok(r)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub backups: usize,
    /// Wall-clock bookkeeping; reported on stderr only, never serialized
    /// into output files.
    #[serde(skip)]
    pub backup_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyVector {
    pub action: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    pub node_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyExport {
    pub actions: Vec<String>,
    pub state_variables: Vec<(String, Vec<String>)>,
    pub vectors: Vec<PolicyVector>,
    pub iterations: usize,
    pub backups: usize,
    pub epsilon: f64,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat;
    use crate::model;

    fn toy_two_state() -> FactoredPOMDP {
        // Classic tiger-style 2-state / 2-action(+listen) / 2-observation toy.
        let text = r#"
(variables (LOC left right))
(observations (HEAR left right))
(discount 0.9)
(action listen
  (observe HEAR
    (HEAR (left  (LOC' (left (0.85)) (right (0.15))))
          (right (LOC' (left (0.15)) (right (0.85))))))
  (reward (-1)))
(action open-left
  (transition LOC
    (LOC' (left (0.5)) (right (0.5))))
  (observe HEAR (HEAR (left (0.5)) (right (0.5))))
  (reward (LOC (left (-20)) (right (8)))))
(action open-right
  (transition LOC
    (LOC' (left (0.5)) (right (0.5))))
  (observe HEAR (HEAR (left (0.5)) (right (0.5))))
  (reward (LOC (left (8)) (right (-20)))))
(belief (LOC (left (0.5)) (right (0.5))))
"#;
        let doc = model::parse(text).unwrap();
        FactoredPOMDP::from_document(&doc).unwrap()
    }

    #[test]
    fn identity_dynamics_uniform_obs_is_fixed_point() {
        let text = r#"
(variables (X yes no))
(observations (O a b))
(discount 0.9)
(action wait
  (observe O (O (a (0.5)) (b (0.5))))
  (reward (0)))
(belief (X (yes (0.3)) (no (0.7))))
"#;
        let doc = model::parse(text).unwrap();
        let m = FactoredPOMDP::from_document(&doc).unwrap();
        let b = m.initial_belief;
        let b2 = m.belief_update(b, 0, &[0]).unwrap();
        assert!(m.belief_l1(b, b2).unwrap() < 1e-12);
    }

    #[test]
    fn impossible_observation_signaled() {
        let text = r#"
(variables (X yes no))
(observations (O a b))
(discount 0.9)
(action wait
  (observe O (O (a (1.0)) (b (0.0))))
  (reward (0)))
(belief (X (yes (0.3)) (no (0.7))))
"#;
        let doc = model::parse(text).unwrap();
        let m = FactoredPOMDP::from_document(&doc).unwrap();
        let err = m.belief_update(m.initial_belief, 0, &[1]).unwrap_err();
        assert!(matches!(err, PomdpError::ImpossibleObservation));
    }

    #[test]
    fn belief_update_matches_flat_filter() {
        let m = toy_two_state();
        let fm = flat::FlatPOMDP::from_factored(&m).unwrap();
        let mut b = m.initial_belief;
        let mut fb = fm.initial_belief.clone();
        // A fixed action/observation trajectory.
        for (a, o) in [(0usize, 0usize), (0, 0), (0, 1), (1, 0), (0, 1)] {
            b = m.belief_update(b, a, &[o]).unwrap();
            fb = fm.belief_update(&fb, a, o).unwrap();
            let got = fm.belief_from_add(&m, b).unwrap();
            for (x, y) in got.iter().zip(&fb) {
                assert!((x - y).abs() < 1e-12, "{got:?} vs {fb:?}");
            }
        }
    }

    #[test]
    fn project_beliefs_contracts() {
        let m = toy_two_state();
        let b0 = m.initial_belief;
        assert_eq!(m.project_beliefs(b0, 0, 50, 1).unwrap().len(), 1);
        assert_eq!(m.project_beliefs(b0, 5, 1, 1).unwrap().len(), 1);
        let set = m.project_beliefs(b0, 5, 30, 7).unwrap();
        assert!(set.len() <= 30);
        assert_eq!(set[0], b0);
        let one = m.engine.leaf(1.0).unwrap();
        for b in &set {
            let z = m.engine.dot(b.0, one, &m.state_vars).unwrap();
            assert!((z - 1.0).abs() < 1e-9);
            assert!(m.engine.min_leaf(b.0) >= -1e-15);
        }
        // determinism
        let again = m.project_beliefs(b0, 5, 30, 7).unwrap();
        assert_eq!(set.len(), again.len());
        for (a, b) in set.iter().zip(&again) {
            assert_eq!(a.0, b.0);
        }
    }

    #[test]
    fn zero_reward_backup_is_zero() {
        let text = r#"
(variables (X yes no))
(observations (O a b))
(discount 0.9)
(action wait
  (observe O (O (a (0.5)) (b (0.5))))
  (reward (0)))
(belief (X (yes (0.5)) (no (0.5))))
"#;
        let doc = model::parse(text).unwrap();
        let m = FactoredPOMDP::from_document(&doc).unwrap();
        let zero = ValueFunction {
            vectors: vec![AlphaVector { action: 0, values: m.engine.leaf(0.0).unwrap() }],
        };
        let alpha = m.point_backup(m.initial_belief, &zero).unwrap();
        assert_eq!(m.engine.is_leaf(alpha.values), Some(0.0));
    }

    #[test]
    fn backup_matches_exhaustive_oracle() {
        let m = toy_two_state();
        let fm = flat::FlatPOMDP::from_factored(&m).unwrap();
        // Build a small V by a couple of exact flat backups from zero.
        let mut v = ValueFunction {
            vectors: vec![AlphaVector { action: 0, values: m.engine.leaf(0.0).unwrap() }],
        };
        let beliefs: Vec<Belief> = m.project_beliefs(m.initial_belief, 4, 10, 3).unwrap();
        for round in 0..3 {
            let mut next = Vec::new();
            for &b in &beliefs {
                let alpha = m.point_backup(b, &v).unwrap();
                let flat_v: Vec<Vec<f64>> = v
                    .vectors
                    .iter()
                    .map(|a| m.enumerate_values(a.values).unwrap())
                    .collect();
                let fb = fm.belief_from_add(&m, b).unwrap();
                let (oracle_vals, _oracle_action) = fm.exhaustive_backup(&fb, &flat_v);
                let got = m.enumerate_values(alpha.values).unwrap();
                let got_val: f64 = got.iter().zip(&fb).map(|(a, p)| a * p).sum();
                let oracle_val: f64 =
                    oracle_vals.iter().zip(&fb).map(|(a, p)| a * p).sum();
                assert!(
                    (got_val - oracle_val).abs() < 1e-9,
                    "round {round}: {got_val} vs {oracle_val}"
                );
                next.push(alpha);
            }
            v = ValueFunction { vectors: next };
        }
    }

    #[test]
    fn perseus_close_to_flat_value_iteration() {
        let mut m = toy_two_state();
        let fm = flat::FlatPOMDP::from_factored(&m).unwrap();
        // Belief grid as the Perseus point set so test beliefs are covered.
        let mut beliefs = Vec::new();
        for i in 0..=40 {
            let p = i as f64 / 40.0;
            let t = crate::model::Tree::node(
                "LOC",
                vec![("left", Tree::Leaf(p)), ("right", Tree::Leaf(1.0 - p))],
            );
            beliefs.push(Belief(m.engine.build_tree(&tree_to_spec(&t)).unwrap()));
        }
        let (v, _) = m.perseus_solve(&beliefs, 1e-4, 500, 9).unwrap();
        let exact = fm.exact_alpha_value_iteration(1e-5);
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            let fb = vec![p, 1.0 - p];
            let idx = (i * 2) as usize;
            let got = m.value_at(&v, beliefs[idx]).unwrap();
            let expect = flat::value_at(&exact, &fb);
            assert!((got - expect).abs() < 1e-2, "p={p}: {got} vs {expect}");
        }
    }

    #[test]
    fn perseus_monotone_and_scaling_invariance() {
        let mut m = toy_two_state();
        let beliefs = m.project_beliefs(m.initial_belief, 6, 20, 5).unwrap();
        let (v, _) = m.perseus_solve(&beliefs, 1e-3, 100, 11).unwrap();
        let a0 = m.best_action(&v, m.initial_belief).unwrap();
        // scale all rewards by 3: same argmax policy at the initial belief
        let mut scaled = FactoredPOMDP {
            engine: m.engine.clone(),
            state_vars: m.state_vars.clone(),
            obs_vars: m.obs_vars.clone(),
            actions: m.actions.clone(),
            transitions: m.transitions.clone(),
            observations: m.observations.clone(),
            rewards: m
                .rewards
                .iter()
                .map(|&r| m.engine.scale(r, 3.0).unwrap())
                .collect(),
            discount: m.discount,
            initial_belief: m.initial_belief,
        };
        let (v2, _) = scaled.perseus_solve(&beliefs, 1e-3, 100, 11).unwrap();
        let a1 = scaled.best_action(&v2, m.initial_belief).unwrap();
        assert_eq!(a0, a1);
    }

    #[test]
    fn best_action_single_vector() {
        let m = toy_two_state();
        let v = ValueFunction {
            vectors: vec![AlphaVector { action: 2, values: m.engine.leaf(1.0).unwrap() }],
        };
        assert_eq!(m.best_action(&v, m.initial_belief).unwrap(), 2);
    }
}
