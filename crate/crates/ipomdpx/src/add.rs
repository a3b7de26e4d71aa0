//! Canonical algebraic decision diagram store and operations.
//!
//! Every probability table, reward, belief, and alpha-vector in this crate is
//! an [`Add`]: a reduced, ordered, hash-consed decision diagram over
//! finite-valued variables with real-valued leaves. Structural equality is
//! handle equality within one [`Engine`].

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU32, Ordering as AtomicOrdering};
use std::sync::Arc;

use parking_lot::Mutex;

pub type VarId = u16;

#[derive(Debug, thiserror::Error)]
pub enum AddError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown value `{value}` for variable `{var}`")]
    UnknownValue { var: String, value: String },
    #[error("decision node on `{var}` is missing a branch for value `{value}`")]
    MissingBranch { var: String, value: String },
    #[error("decision node on `{var}` has a duplicate branch for value `{value}`")]
    DuplicateBranch { var: String, value: String },
    #[error("non-finite leaf value {0}")]
    NonFiniteLeaf(f64),
    #[error("ADD handles belong to different engines")]
    CatalogMismatch,
    #[error("no assignment for variable `{0}`")]
    MissingAssignment(String),
    #[error("negative epsilon {0}")]
    NegativeEpsilon(f64),
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("variable `{0}` needs at least two values")]
    TooFewValues(String),
}

#[derive(Debug, Clone)]
pub struct VarInfo {
    pub name: String,
    pub values: Vec<String>,
    /// Index of the primed/unprimed twin of this variable.
    pub twin: VarId,
    pub primed: bool,
}

/// Ordered set of variables. Each declared variable `X` gets a post-action
/// twin `X'` placed immediately after it in the global ordering. The ordering
/// is total and immutable after construction.
#[derive(Debug, Clone)]
pub struct VariableCatalog {
    vars: Vec<VarInfo>,
    by_name: HashMap<String, VarId>,
}

impl VariableCatalog {
    pub fn new<S: AsRef<str>, V: AsRef<str>>(decls: &[(S, Vec<V>)]) -> Result<Self, AddError> {
        let mut vars = Vec::with_capacity(decls.len() * 2);
        let mut by_name = HashMap::new();
        for (name, values) in decls {
            let name = name.as_ref().to_string();
            if values.len() < 2 {
                return Err(AddError::TooFewValues(name));
            }
            let values: Vec<String> = values.iter().map(|v| v.as_ref().to_string()).collect();
            let primed_name = format!("{name}'");
            let base = vars.len() as VarId;
            for (n, primed) in [(name, false), (primed_name, true)] {
                if by_name.contains_key(&n) {
                    return Err(AddError::DuplicateVariable(n));
                }
                let id = vars.len() as VarId;
                by_name.insert(n.clone(), id);
                vars.push(VarInfo {
                    name: n,
                    values: values.clone(),
                    twin: base + (1 - (id - base)),
                    primed,
                });
            }
        }
        Ok(VariableCatalog { vars, by_name })
    }

    pub fn var(&self, name: &str) -> Result<VarId, AddError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| AddError::UnknownVariable(name.to_string()))
    }

    pub fn value_index(&self, var: VarId, label: &str) -> Result<usize, AddError> {
        let info = &self.vars[var as usize];
        info.values
            .iter()
            .position(|v| v == label)
            .ok_or_else(|| AddError::UnknownValue {
                var: info.name.clone(),
                value: label.to_string(),
            })
    }

    pub fn info(&self, var: VarId) -> &VarInfo {
        &self.vars[var as usize]
    }

    pub fn arity(&self, var: VarId) -> usize {
        self.vars[var as usize].values.len()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn primed(&self, var: VarId) -> VarId {
        let info = &self.vars[var as usize];
        if info.primed {
            var
        } else {
            info.twin
        }
    }

    pub fn unprimed(&self, var: VarId) -> VarId {
        let info = &self.vars[var as usize];
        if info.primed {
            info.twin
        } else {
            var
        }
    }

    /// Iterate all joint value-index assignments of `vars` (in the given order).
    pub fn assignments(&self, vars: &[VarId]) -> AssignmentIter<'_> {
        AssignmentIter {
            catalog: self,
            vars: vars.to_vec(),
            current: vec![0; vars.len()],
            done: vars.iter().any(|&v| self.arity(v) == 0),
            started: false,
        }
    }
}

pub struct AssignmentIter<'a> {
    catalog: &'a VariableCatalog,
    vars: Vec<VarId>,
    current: Vec<usize>,
    done: bool,
    started: bool,
}

impl<'a> Iterator for AssignmentIter<'a> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.current.clone());
        }
        for i in (0..self.vars.len()).rev() {
            self.current[i] += 1;
            if self.current[i] < self.catalog.arity(self.vars[i]) {
                return Some(self.current.clone());
            }
            self.current[i] = 0;
        }
        self.done = true;
        None
    }
}

/// A (possibly partial) mapping from variables to value indices.
#[derive(Debug, Clone, Default)]
pub struct Assignment {
    values: HashMap<VarId, usize>,
}

impl Assignment {
    pub fn new() -> Self {
        Assignment::default()
    }

    pub fn set(&mut self, var: VarId, value: usize) {
        self.values.insert(var, value);
    }

    pub fn set_named(
        &mut self,
        catalog: &VariableCatalog,
        var: &str,
        value: &str,
    ) -> Result<(), AddError> {
        let v = catalog.var(var)?;
        let idx = catalog.value_index(v, value)?;
        self.values.insert(v, idx);
        Ok(())
    }

    pub fn get(&self, var: VarId) -> Option<usize> {
        self.values.get(&var).copied()
    }

    pub fn from_pairs(vars: &[VarId], values: &[usize]) -> Self {
        let mut a = Assignment::new();
        for (&v, &x) in vars.iter().zip(values) {
            a.set(v, x);
        }
        a
    }
}

/// Handle into an [`Engine`]'s node store. Copyable; equality is structural
/// equality of the underlying diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Add {
    engine: u32,
    id: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Op {
    Sum,
    Product,
    Max,
}

impl Op {
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Sum => a + b,
            Op::Product => a * b,
            Op::Max => a.max(b),
        }
    }
}

/// Explicit decision-tree description used to build ADDs. Branch order is
/// free; the built diagram always respects the catalog's global ordering.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeSpec {
    Leaf(f64),
    Node {
        var: String,
        branches: Vec<(String, TreeSpec)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(u64), // f64 bits, -0.0 normalized to 0.0
    Dec { var: VarId, children: Box<[u32]> },
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum NodeKey {
    Leaf(u64),
    Dec(VarId, Box<[u32]>),
}

struct Store {
    nodes: Vec<Node>,
    unique: HashMap<NodeKey, u32>,
    apply_memo: HashMap<(Op, u32, u32), u32>,
}

impl Store {
    fn leaf(&mut self, v: f64) -> u32 {
        let v = if v == 0.0 { 0.0 } else { v };
        let bits = v.to_bits();
        if let Some(&id) = self.unique.get(&NodeKey::Leaf(bits)) {
            return id;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf(bits));
        self.unique.insert(NodeKey::Leaf(bits), id);
        id
    }

    fn mk(&mut self, var: VarId, children: Box<[u32]>) -> u32 {
        if children.iter().all(|&c| c == children[0]) {
            return children[0];
        }
        let key = NodeKey::Dec(var, children.clone());
        if let Some(&id) = self.unique.get(&key) {
            return id;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Dec { var, children });
        self.unique.insert(key, id);
        id
    }

    fn top_var(&self, f: u32) -> VarId {
        match &self.nodes[f as usize] {
            Node::Leaf(_) => VarId::MAX,
            Node::Dec { var, .. } => *var,
        }
    }

    fn leaf_value(&self, f: u32) -> Option<f64> {
        match &self.nodes[f as usize] {
            Node::Leaf(bits) => Some(f64::from_bits(*bits)),
            _ => None,
        }
    }

    fn cofactor(&self, f: u32, var: VarId, i: usize) -> u32 {
        match &self.nodes[f as usize] {
            Node::Dec { var: v, children } if *v == var => children[i],
            _ => f,
        }
    }

    fn apply(&mut self, cat: &VariableCatalog, op: Op, f: u32, g: u32) -> u32 {
        // Identity shortcuts keep handles stable (e.g. product with Leaf(1)).
        match op {
            Op::Sum => {
                if self.leaf_value(f) == Some(0.0) {
                    return g;
                }
                if self.leaf_value(g) == Some(0.0) {
                    return f;
                }
            }
            Op::Product => {
                if self.leaf_value(f) == Some(1.0) {
                    return g;
                }
                if self.leaf_value(g) == Some(1.0) {
                    return f;
                }
                if self.leaf_value(f) == Some(0.0) || self.leaf_value(g) == Some(0.0) {
                    return self.leaf(0.0);
                }
            }
            Op::Max => {
                if f == g {
                    return f;
                }
            }
        }
        if let (Some(a), Some(b)) = (self.leaf_value(f), self.leaf_value(g)) {
            return self.leaf(op.eval(a, b));
        }
        // sum/product/max are commutative: normalize the memo key.
        let key = if f <= g { (op, f, g) } else { (op, g, f) };
        if let Some(&r) = self.apply_memo.get(&key) {
            return r;
        }
        let var = self.top_var(f).min(self.top_var(g));
        let arity = cat.arity(var);
        let mut children = Vec::with_capacity(arity);
        for i in 0..arity {
            let fc = self.cofactor(f, var, i);
            let gc = self.cofactor(g, var, i);
            children.push(self.apply(cat, op, fc, gc));
        }
        let r = self.mk(var, children.into_boxed_slice());
        self.apply_memo.insert(key, r);
        r
    }

    fn restrict(&mut self, f: u32, var: VarId, val: usize, memo: &mut HashMap<u32, u32>) -> u32 {
        let node = self.nodes[f as usize].clone();
        let (v, children) = match node {
            Node::Leaf(_) => return f,
            Node::Dec { var: v, children } => (v, children),
        };
        if v > var {
            return f;
        }
        if v == var {
            return children[val];
        }
        if let Some(&r) = memo.get(&f) {
            return r;
        }
        let new: Vec<u32> = children
            .iter()
            .map(|&c| self.restrict(c, var, val, memo))
            .collect();
        let r = self.mk(v, new.into_boxed_slice());
        memo.insert(f, r);
        r
    }

    fn scale(&mut self, cat: &VariableCatalog, f: u32, c: f64) -> u32 {
        let l = self.leaf(c);
        self.apply(cat, Op::Product, f, l)
    }

    fn sum_out_var(
        &mut self,
        cat: &VariableCatalog,
        f: u32,
        var: VarId,
        memo: &mut HashMap<u32, u32>,
    ) -> u32 {
        let arity = cat.arity(var);
        let node = self.nodes[f as usize].clone();
        let (v, children) = match node {
            Node::Leaf(_) => return self.scale(cat, f, arity as f64),
            Node::Dec { var: v, children } => (v, children),
        };
        if v > var {
            return self.scale(cat, f, arity as f64);
        }
        if let Some(&r) = memo.get(&f) {
            return r;
        }
        let r = if v == var {
            let mut acc = children[0];
            for &c in &children[1..] {
                acc = self.apply(cat, Op::Sum, acc, c);
            }
            acc
        } else {
            let new: Vec<u32> = children
                .iter()
                .map(|&c| self.sum_out_var(cat, c, var, memo))
                .collect();
            self.mk(v, new.into_boxed_slice())
        };
        memo.insert(f, r);
        r
    }

    fn rename(
        &mut self,
        map: &dyn Fn(VarId) -> VarId,
        f: u32,
        memo: &mut HashMap<u32, u32>,
    ) -> u32 {
        let node = self.nodes[f as usize].clone();
        let (v, children) = match node {
            Node::Leaf(_) => return f,
            Node::Dec { var: v, children } => (v, children),
        };
        if let Some(&r) = memo.get(&f) {
            return r;
        }
        let new: Vec<u32> = children.iter().map(|&c| self.rename(map, c, memo)).collect();
        let nv = map(v);
        debug_assert!(new
            .iter()
            .all(|&c| self.top_var(c) == VarId::MAX || self.top_var(c) > nv));
        let r = self.mk(nv, new.into_boxed_slice());
        memo.insert(f, r);
        r
    }

    fn collect_leaves(&self, f: u32, seen: &mut BTreeSet<u64>, visited: &mut BTreeSet<u32>) {
        if !visited.insert(f) {
            return;
        }
        match &self.nodes[f as usize] {
            Node::Leaf(bits) => {
                seen.insert(*bits);
            }
            Node::Dec { children, .. } => {
                for &c in children.iter() {
                    self.collect_leaves(c, seen, visited);
                }
            }
        }
    }

    fn map_leaves(
        &mut self,
        f: u32,
        map: &HashMap<u64, f64>,
        memo: &mut HashMap<u32, u32>,
    ) -> u32 {
        if let Some(&r) = memo.get(&f) {
            return r;
        }
        let node = self.nodes[f as usize].clone();
        let r = match node {
            Node::Leaf(bits) => {
                let v = map
                    .get(&bits)
                    .copied()
                    .unwrap_or_else(|| f64::from_bits(bits));
                self.leaf(v)
            }
            Node::Dec { var, children } => {
                let new: Vec<u32> = children
                    .iter()
                    .map(|&c| self.map_leaves(c, map, memo))
                    .collect();
                self.mk(var, new.into_boxed_slice())
            }
        };
        memo.insert(f, r);
        r
    }

    #[allow(clippy::too_many_arguments)]
    fn dot(
        &self,
        cat: &VariableCatalog,
        f: u32,
        g: u32,
        vars: &[VarId],
        k: usize,
        memo: &mut HashMap<(u32, u32, usize), f64>,
    ) -> f64 {
        let top = self.top_var(f).min(self.top_var(g));
        let mut k = k;
        let mut factor = 1.0;
        while k < vars.len() && vars[k] < top {
            factor *= cat.arity(vars[k]) as f64;
            k += 1;
        }
        if top == VarId::MAX {
            let a = self.leaf_value(f).unwrap();
            let b = self.leaf_value(g).unwrap();
            return factor * a * b;
        }
        debug_assert!(k < vars.len() && vars[k] == top, "dot: support outside var set");
        let key = (f, g, k);
        if let Some(&r) = memo.get(&key) {
            return factor * r;
        }
        let mut acc = 0.0;
        for i in 0..cat.arity(top) {
            let fc = self.cofactor(f, top, i);
            let gc = self.cofactor(g, top, i);
            acc += self.dot(cat, fc, gc, vars, k + 1, memo);
        }
        memo.insert(key, acc);
        factor * acc
    }

    fn node_count(&self, f: u32, visited: &mut BTreeSet<u32>) -> usize {
        if !visited.insert(f) {
            return 0;
        }
        match &self.nodes[f as usize] {
            Node::Leaf(_) => 1,
            Node::Dec { children, .. } => {
                1 + children
                    .iter()
                    .map(|&c| self.node_count(c, visited))
                    .sum::<usize>()
            }
        }
    }

    fn support(&self, f: u32, out: &mut BTreeSet<VarId>, visited: &mut BTreeSet<u32>) {
        if !visited.insert(f) {
            return;
        }
        if let Node::Dec { var, children } = &self.nodes[f as usize] {
            out.insert(*var);
            for &c in children.iter() {
                self.support(c, out, visited);
            }
        }
    }
}

static ENGINE_COUNTER: AtomicU32 = AtomicU32::new(0);

/// Hash-consed ADD node store over a fixed [`VariableCatalog`]. ADDs are
/// immutable after creation; the store serializes node creation internally,
/// so an `Engine` can be shared across threads.
pub struct Engine {
    id: u32,
    catalog: Arc<VariableCatalog>,
    store: Mutex<Store>,
}

impl Engine {
    pub fn new(catalog: VariableCatalog) -> Self {
        Engine {
            id: ENGINE_COUNTER.fetch_add(1, AtomicOrdering::Relaxed),
            catalog: Arc::new(catalog),
            store: Mutex::new(Store {
                nodes: Vec::new(),
                unique: HashMap::new(),
                apply_memo: HashMap::new(),
            }),
        }
    }

    pub fn catalog(&self) -> &VariableCatalog {
        &self.catalog
    }

    fn wrap(&self, id: u32) -> Add {
        Add { engine: self.id, id }
    }

    fn unwrap(&self, f: Add) -> Result<u32, AddError> {
        if f.engine != self.id {
            return Err(AddError::CatalogMismatch);
        }
        Ok(f.id)
    }

    pub fn leaf(&self, v: f64) -> Result<Add, AddError> {
        if !v.is_finite() {
            return Err(AddError::NonFiniteLeaf(v));
        }
        Ok(self.wrap(self.store.lock().leaf(v)))
    }

    /// Leaf for a value already known to be finite.
    pub fn constant(&self, v: f64) -> Add {
        assert!(v.is_finite());
        self.wrap(self.store.lock().leaf(v))
    }

    pub fn apply(&self, op: Op, f: Add, g: Add) -> Result<Add, AddError> {
        let (f, g) = (self.unwrap(f)?, self.unwrap(g)?);
        let mut st = self.store.lock();
        let r = st.apply(&self.catalog, op, f, g);
        Ok(self.wrap(r))
    }

    /// Fold `apply(op, ...)` over a sequence; identity for an empty sequence
    /// is 0 for sum/max seeds the first element, 1 for product.
    pub fn apply_all(&self, op: Op, fs: &[Add]) -> Result<Add, AddError> {
        match fs.split_first() {
            None => match op {
                Op::Product => self.leaf(1.0),
                _ => self.leaf(0.0),
            },
            Some((&first, rest)) => {
                let mut acc = first;
                for &f in rest {
                    acc = self.apply(op, acc, f)?;
                }
                Ok(acc)
            }
        }
    }

    pub fn restrict(&self, f: Add, var: VarId, val: usize) -> Result<Add, AddError> {
        let f = self.unwrap(f)?;
        if var as usize >= self.catalog.len() {
            return Err(AddError::UnknownVariable(format!("#{var}")));
        }
        if val >= self.catalog.arity(var) {
            return Err(AddError::UnknownValue {
                var: self.catalog.info(var).name.clone(),
                value: format!("#{val}"),
            });
        }
        let mut st = self.store.lock();
        let mut memo = HashMap::new();
        let r = st.restrict(f, var, val, &mut memo);
        Ok(self.wrap(r))
    }

    /// Restrict every (var, value) pair of a partial assignment.
    pub fn restrict_all(&self, f: Add, asg: &Assignment) -> Result<Add, AddError> {
        let mut vars: Vec<(VarId, usize)> = asg.values.iter().map(|(&v, &x)| (v, x)).collect();
        vars.sort_unstable();
        let mut acc = f;
        for (v, x) in vars {
            acc = self.restrict(acc, v, x)?;
        }
        Ok(acc)
    }

    pub fn sum_out(&self, f: Add, vars: &[VarId]) -> Result<Add, AddError> {
        let mut f = self.unwrap(f)?;
        let mut vars: Vec<VarId> = vars.to_vec();
        vars.sort_unstable();
        vars.dedup();
        for &v in &vars {
            if v as usize >= self.catalog.len() {
                return Err(AddError::UnknownVariable(format!("#{v}")));
            }
        }
        let mut st = self.store.lock();
        // Deepest first: cheaper intermediate diagrams.
        for &v in vars.iter().rev() {
            let mut memo = HashMap::new();
            f = st.sum_out_var(&self.catalog, f, v, &mut memo);
        }
        Ok(self.wrap(f))
    }

    pub fn scale(&self, f: Add, c: f64) -> Result<Add, AddError> {
        if !c.is_finite() {
            return Err(AddError::NonFiniteLeaf(c));
        }
        let f = self.unwrap(f)?;
        let mut st = self.store.lock();
        let r = st.scale(&self.catalog, f, c);
        Ok(self.wrap(r))
    }

    /// Merge leaves lying within a common interval of width <= epsilon to the
    /// interval midpoint. `epsilon = 0` returns `f` unchanged (same handle).
    pub fn approximate(&self, f: Add, epsilon: f64) -> Result<Add, AddError> {
        if epsilon < 0.0 || !epsilon.is_finite() {
            return Err(AddError::NegativeEpsilon(epsilon));
        }
        if epsilon == 0.0 {
            self.unwrap(f)?;
            return Ok(f);
        }
        let f = self.unwrap(f)?;
        let mut st = self.store.lock();
        let mut seen = BTreeSet::new();
        st.collect_leaves(f, &mut seen, &mut BTreeSet::new());
        let mut values: Vec<f64> = seen.iter().map(|&b| f64::from_bits(b)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut map: HashMap<u64, f64> = HashMap::new();
        let mut i = 0;
        while i < values.len() {
            let start = values[i];
            let mut j = i;
            while j + 1 < values.len() && values[j + 1] - start <= epsilon {
                j += 1;
            }
            let mid = (start + values[j]) / 2.0;
            for &v in &values[i..=j] {
                map.insert(v.to_bits(), mid);
            }
            i = j + 1;
        }
        let mut memo = HashMap::new();
        let r = st.map_leaves(f, &map, &mut memo);
        Ok(self.wrap(r))
    }

    /// Apply a pointwise function to every leaf value.
    pub fn map_leaf_values(&self, f: Add, func: impl Fn(f64) -> f64) -> Result<Add, AddError> {
        let f = self.unwrap(f)?;
        let mut st = self.store.lock();
        let mut seen = BTreeSet::new();
        st.collect_leaves(f, &mut seen, &mut BTreeSet::new());
        let mut map = HashMap::new();
        for &bits in &seen {
            let v = func(f64::from_bits(bits));
            if !v.is_finite() {
                return Err(AddError::NonFiniteLeaf(v));
            }
            map.insert(bits, v);
        }
        let mut memo = HashMap::new();
        let r = st.map_leaves(f, &map, &mut memo);
        Ok(self.wrap(r))
    }

    pub fn evaluate(&self, f: Add, asg: &Assignment) -> Result<f64, AddError> {
        let mut id = self.unwrap(f)?;
        let st = self.store.lock();
        loop {
            match &st.nodes[id as usize] {
                Node::Leaf(bits) => return Ok(f64::from_bits(*bits)),
                Node::Dec { var, children } => match asg.get(*var) {
                    Some(i) => id = children[i],
                    None => {
                        return Err(AddError::MissingAssignment(
                            self.catalog.info(*var).name.clone(),
                        ))
                    }
                },
            }
        }
    }

    /// Rename every primed variable occurring in `f` to its unprimed twin.
    /// The unprimed twin must not occur in `f`.
    pub fn unprime(&self, f: Add) -> Result<Add, AddError> {
        let f = self.unwrap(f)?;
        let cat = self.catalog.clone();
        let mut st = self.store.lock();
        let mut memo = HashMap::new();
        let map = move |v: VarId| cat.unprimed(v);
        let r = st.rename(&map, f, &mut memo);
        Ok(self.wrap(r))
    }

    /// Rename every unprimed variable occurring in `f` to its primed twin.
    pub fn prime(&self, f: Add) -> Result<Add, AddError> {
        let f = self.unwrap(f)?;
        let cat = self.catalog.clone();
        let mut st = self.store.lock();
        let mut memo = HashMap::new();
        let map = move |v: VarId| cat.primed(v);
        let r = st.rename(&map, f, &mut memo);
        Ok(self.wrap(r))
    }

    /// Sum of `f(x) * g(x)` over all joint assignments of `vars`. The support
    /// of both operands must lie within `vars`.
    pub fn dot(&self, f: Add, g: Add, vars: &[VarId]) -> Result<f64, AddError> {
        let (f, g) = (self.unwrap(f)?, self.unwrap(g)?);
        let mut vars: Vec<VarId> = vars.to_vec();
        vars.sort_unstable();
        vars.dedup();
        let st = self.store.lock();
        let mut memo = HashMap::new();
        Ok(st.dot(&self.catalog, f, g, &vars, 0, &mut memo))
    }

    pub fn build_tree(&self, spec: &TreeSpec) -> Result<Add, AddError> {
        match spec {
            TreeSpec::Leaf(v) => self.leaf(*v),
            TreeSpec::Node { var, branches } => {
                let vid = self.catalog.var(var)?;
                let arity = self.catalog.arity(vid);
                let mut per_value: Vec<Option<Add>> = vec![None; arity];
                for (label, sub) in branches {
                    let idx = self.catalog.value_index(vid, label)?;
                    if per_value[idx].is_some() {
                        return Err(AddError::DuplicateBranch {
                            var: var.clone(),
                            value: label.clone(),
                        });
                    }
                    per_value[idx] = Some(self.build_tree(sub)?);
                }
                let mut acc = self.leaf(0.0)?;
                for (idx, child) in per_value.into_iter().enumerate() {
                    let child = child.ok_or_else(|| AddError::MissingBranch {
                        var: var.clone(),
                        value: self.catalog.info(vid).values[idx].clone(),
                    })?;
                    let ind = self.indicator(vid, idx)?;
                    let term = self.apply(Op::Product, ind, child)?;
                    acc = self.apply(Op::Sum, acc, term)?;
                }
                Ok(acc)
            }
        }
    }

    /// ADD that is 1 when `var = val` and 0 otherwise.
    pub fn indicator(&self, var: VarId, val: usize) -> Result<Add, AddError> {
        let arity = self.catalog.arity(var);
        if val >= arity {
            return Err(AddError::UnknownValue {
                var: self.catalog.info(var).name.clone(),
                value: format!("#{val}"),
            });
        }
        let mut st = self.store.lock();
        let zero = st.leaf(0.0);
        let one = st.leaf(1.0);
        let children: Vec<u32> = (0..arity).map(|i| if i == val { one } else { zero }).collect();
        let r = st.mk(var, children.into_boxed_slice());
        Ok(self.wrap(r))
    }

    pub fn node_count(&self, f: Add) -> usize {
        let f = f.id;
        let st = self.store.lock();
        st.node_count(f, &mut BTreeSet::new())
    }

    pub fn support(&self, f: Add) -> BTreeSet<VarId> {
        let st = self.store.lock();
        let mut out = BTreeSet::new();
        st.support(f.id, &mut out, &mut BTreeSet::new());
        out
    }

    pub fn leaves(&self, f: Add) -> Vec<f64> {
        let st = self.store.lock();
        let mut seen = BTreeSet::new();
        st.collect_leaves(f.id, &mut seen, &mut BTreeSet::new());
        let mut v: Vec<f64> = seen.iter().map(|&b| f64::from_bits(b)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    pub fn min_leaf(&self, f: Add) -> f64 {
        self.leaves(f).first().copied().unwrap_or(0.0)
    }

    pub fn max_leaf(&self, f: Add) -> f64 {
        self.leaves(f).last().copied().unwrap_or(0.0)
    }

    pub fn is_leaf(&self, f: Add) -> Option<f64> {
        let st = self.store.lock();
        st.leaf_value(f.id)
    }

    /// Drop the apply memo. Node storage (hash-consing) is retained.
    pub fn flush_caches(&self) {
        self.store.lock().apply_memo.clear();
    }

    pub fn stored_nodes(&self) -> usize {
        self.store.lock().nodes.len()
    }

    /// Rebuild the store keeping only the nodes reachable from `roots`,
    /// dropping all memoized apply results. Returns the old-to-new handle
    /// mapping; every handle not re-derived from it is invalidated.
    pub fn gc(&self, roots: &[Add]) -> Result<HashMap<Add, Add>, AddError> {
        let mut store = self.store.lock();
        let mut fresh = Store {
            nodes: Vec::new(),
            unique: HashMap::new(),
            apply_memo: HashMap::new(),
        };
        // Recursion depth is bounded by the variable-order length.
        fn copy(old: &Store, fresh: &mut Store, remap: &mut HashMap<u32, u32>, id: u32) -> u32 {
            if let Some(&n) = remap.get(&id) {
                return n;
            }
            let nid = match &old.nodes[id as usize] {
                Node::Leaf(bits) => fresh.leaf(f64::from_bits(*bits)),
                Node::Dec { var, children } => {
                    let ch: Vec<u32> = children
                        .iter()
                        .map(|&c| copy(old, fresh, remap, c))
                        .collect();
                    fresh.mk(*var, ch.into_boxed_slice())
                }
            };
            remap.insert(id, nid);
            nid
        }
        let mut remap = HashMap::new();
        let mut out = HashMap::new();
        for &root in roots {
            let id = self.unwrap(root)?;
            let nid = copy(&store, &mut fresh, &mut remap, id);
            out.insert(root, self.wrap(nid));
        }
        *store = fresh;
        Ok(out)
    }
}
