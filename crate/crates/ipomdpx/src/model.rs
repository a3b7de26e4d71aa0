//! The `.ipx` textual model format.
//!
//! Parenthesized s-expression documents describing factored (PO)MDPs and
//! level-1 interactive problems. `#` starts a line comment. Decision trees
//! are written `(VAR (value <tree>) ...)` with numeric leaves `(0.7)`; a CPT
//! tree branches explicitly on its child (primed) variable, e.g.
//!
//! ```text
//! (transition DATA_FOUND
//!   (DATA_FOUND' (yes (DATA_FOUND (yes (1.0)) (no (0.7))))
//!                (no  (DATA_FOUND (yes (0.0)) (no (0.3))))))
//! ```
//!
//! Omitting the transition for a variable inside an action block means
//! identity persistence. This is the one bit-exact interchange format of the
//! repo: `parse(serialize(doc))` is structurally identical to `doc`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl std::fmt::Display for Pos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("invalid model at {pos}: {msg}")]
    Validation { pos: Pos, msg: String },
    #[error("invalid model: {0}")]
    Global(String),
}

fn syntax(pos: Pos, msg: impl Into<String>) -> ModelError {
    ModelError::Syntax { pos, msg: msg.into() }
}

fn invalid(pos: Pos, msg: impl Into<String>) -> ModelError {
    ModelError::Validation { pos, msg: msg.into() }
}

/// Decision tree AST. Positions are carried for diagnostics and ignored by
/// structural equality.
#[derive(Debug, Clone)]
pub enum Tree {
    Leaf(f64),
    Node {
        var: String,
        branches: Vec<(String, Tree)>,
        pos: Pos,
    },
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Tree::Leaf(a), Tree::Leaf(b)) => a.to_bits() == b.to_bits(),
            (
                Tree::Node { var: v1, branches: b1, .. },
                Tree::Node { var: v2, branches: b2, .. },
            ) => v1 == v2 && b1 == b2,
            _ => false,
        }
    }
}

impl Tree {
    pub fn leaf(v: f64) -> Tree {
        Tree::Leaf(v)
    }

    pub fn node(var: impl Into<String>, branches: Vec<(&str, Tree)>) -> Tree {
        Tree::Node {
            var: var.into(),
            branches: branches
                .into_iter()
                .map(|(l, t)| (l.to_string(), t))
                .collect(),
            pos: Pos { line: 0, col: 0 },
        }
    }

    pub fn pos(&self) -> Pos {
        match self {
            Tree::Leaf(_) => Pos { line: 0, col: 0 },
            Tree::Node { pos, .. } => *pos,
        }
    }

    /// Walk the tree under a name -> value-label mapping. Variables the tree
    /// does not branch on are ignored.
    pub fn eval(&self, asg: &HashMap<&str, &str>) -> Result<f64, ModelError> {
        match self {
            Tree::Leaf(v) => Ok(*v),
            Tree::Node { var, branches, pos } => {
                let val = asg.get(var.as_str()).ok_or_else(|| {
                    invalid(*pos, format!("no assignment for variable `{var}`"))
                })?;
                let (_, sub) = branches
                    .iter()
                    .find(|(l, _)| l == val)
                    .ok_or_else(|| {
                        invalid(*pos, format!("decision node on `{var}` is missing branch `{val}`"))
                    })?;
                sub.eval(asg)
            }
        }
    }

    pub fn support<'a>(&'a self, out: &mut HashSet<&'a str>) {
        if let Tree::Node { var, branches, .. } = self {
            out.insert(var.as_str());
            for (_, t) in branches {
                t.support(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionBlock {
    pub name: String,
    /// (state variable, CPT tree); variables absent here persist identically.
    pub transitions: Vec<(String, Tree)>,
    pub observations: Vec<(String, Tree)>,
    pub reward: Tree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecl {
    pub name: String,
    pub path: String,
    /// Initial belief override; defaults to the referenced document's belief.
    pub belief: Option<Vec<Tree>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDocument {
    pub variables: Vec<(String, Vec<String>)>,
    pub observations: Vec<(String, Vec<String>)>,
    /// Level-1 documents: the opponent action variable and its value labels.
    pub opponent_actions: Option<(String, Vec<String>)>,
    /// Level-1 documents: the subset of `observations` received by the
    /// opponent rather than by this agent.
    pub opponent_observations: Vec<String>,
    pub actions: Vec<ActionBlock>,
    pub discount: f64,
    /// Initial belief as a product of factors over unprimed state variables.
    pub belief: Vec<Tree>,
    pub frames: Vec<FrameDecl>,
}

impl ModelDocument {
    pub fn is_interactive(&self) -> bool {
        !self.frames.is_empty()
    }

    pub fn joint_state_count(&self) -> usize {
        self.variables.iter().map(|(_, v)| v.len()).product()
    }

    pub fn joint_observation_count(&self) -> usize {
        self.observations.iter().map(|(_, v)| v.len()).product()
    }
}

// ---------------------------------------------------------------------------
// Lexer / reader
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    LParen,
    RParen,
    Atom(String),
    Str(String),
}

fn lex(text: &str) -> Result<Vec<(Token, Pos)>, ModelError> {
    let mut out = Vec::new();
    let mut line = 1u32;
    let mut col = 1u32;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let pos = Pos { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '(' => {
                chars.next();
                col += 1;
                out.push((Token::LParen, pos));
            }
            ')' => {
                chars.next();
                col += 1;
                out.push((Token::RParen, pos));
            }
            '"' => {
                chars.next();
                col += 1;
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => {
                            col += 1;
                            break;
                        }
                        Some('\n') => return Err(syntax(pos, "unterminated string")),
                        Some(c) => {
                            s.push(c);
                            col += 1;
                        }
                        None => return Err(syntax(pos, "unterminated string")),
                    }
                }
                out.push((Token::Str(s), pos));
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '#' || c == '"' {
                        break;
                    }
                    s.push(c);
                    chars.next();
                    col += 1;
                }
                out.push((Token::Atom(s), pos));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Sexpr {
    Atom(String, Pos),
    Str(String, Pos),
    List(Vec<Sexpr>, Pos),
}

impl Sexpr {
    fn pos(&self) -> Pos {
        match self {
            Sexpr::Atom(_, p) | Sexpr::Str(_, p) | Sexpr::List(_, p) => *p,
        }
    }

    fn atom(&self) -> Result<&str, ModelError> {
        match self {
            Sexpr::Atom(s, _) => Ok(s),
            other => Err(syntax(other.pos(), "expected a symbol")),
        }
    }
}

fn read_all(tokens: &[(Token, Pos)]) -> Result<Vec<Sexpr>, ModelError> {
    let mut i = 0;
    let mut out = Vec::new();
    while i < tokens.len() {
        let (expr, next) = read_one(tokens, i)?;
        out.push(expr);
        i = next;
    }
    Ok(out)
}

fn read_one(tokens: &[(Token, Pos)], i: usize) -> Result<(Sexpr, usize), ModelError> {
    match &tokens[i] {
        (Token::Atom(s), p) => Ok((Sexpr::Atom(s.clone(), *p), i + 1)),
        (Token::Str(s), p) => Ok((Sexpr::Str(s.clone(), *p), i + 1)),
        (Token::RParen, p) => Err(syntax(*p, "unexpected `)`")),
        (Token::LParen, p) => {
            let mut items = Vec::new();
            let mut j = i + 1;
            loop {
                match tokens.get(j) {
                    None => return Err(syntax(*p, "unclosed `(`")),
                    Some((Token::RParen, _)) => return Ok((Sexpr::List(items, *p), j + 1)),
                    Some(_) => {
                        let (e, next) = read_one(tokens, j)?;
                        items.push(e);
                        j = next;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

fn parse_tree(e: &Sexpr) -> Result<Tree, ModelError> {
    let items = match e {
        Sexpr::List(items, p) => {
            if items.is_empty() {
                return Err(syntax(*p, "empty tree"));
            }
            items
        }
        other => return Err(syntax(other.pos(), "expected a tree `( ... )`")),
    };
    // `(NUMBER)` is a leaf; `(VAR (value tree)+)` is a decision node.
    if items.len() == 1 {
        if let Sexpr::Atom(s, p) = &items[0] {
            let v: f64 = s
                .parse()
                .map_err(|_| syntax(*p, format!("expected a number, got `{s}`")))?;
            if !v.is_finite() {
                return Err(syntax(*p, format!("non-finite leaf `{s}`")));
            }
            return Ok(Tree::Leaf(v));
        }
    }
    let var = items[0].atom()?.to_string();
    let pos = items[0].pos();
    let mut branches = Vec::new();
    for b in &items[1..] {
        match b {
            Sexpr::List(parts, p) if parts.len() == 2 => {
                let label = parts[0].atom()?.to_string();
                let sub = parse_tree(&parts[1])?;
                if branches.iter().any(|(l, _)| *l == label) {
                    return Err(syntax(*p, format!("duplicate branch `{label}` on `{var}`")));
                }
                branches.push((label, sub));
            }
            other => {
                return Err(syntax(
                    other.pos(),
                    format!("expected a `(value tree)` branch under `{var}`"),
                ))
            }
        }
    }
    if branches.is_empty() {
        return Err(syntax(pos, format!("decision node `{var}` has no branches")));
    }
    Ok(Tree::Node { var, branches, pos })
}

fn parse_var_decls(items: &[Sexpr]) -> Result<Vec<(String, Vec<String>)>, ModelError> {
    let mut out = Vec::new();
    for d in items {
        match d {
            Sexpr::List(parts, p) => {
                if parts.len() < 2 {
                    return Err(syntax(*p, "variable declaration needs a name and values"));
                }
                let name = parts[0].atom()?.to_string();
                let values: Result<Vec<String>, _> =
                    parts[1..].iter().map(|v| v.atom().map(str::to_string)).collect();
                out.push((name, values?));
            }
            other => return Err(syntax(other.pos(), "expected `(NAME value ...)`")),
        }
    }
    Ok(out)
}

/// Parse and validate an `.ipx` document.
pub fn parse(text: &str) -> Result<ModelDocument, ModelError> {
    let tokens = lex(text)?;
    let forms = read_all(&tokens)?;
    let mut doc = ModelDocument {
        variables: Vec::new(),
        observations: Vec::new(),
        opponent_actions: None,
        opponent_observations: Vec::new(),
        actions: Vec::new(),
        discount: f64::NAN,
        belief: Vec::new(),
        frames: Vec::new(),
    };
    let mut saw_discount = false;
    for form in &forms {
        let items = match form {
            Sexpr::List(items, p) => {
                if items.is_empty() {
                    return Err(syntax(*p, "empty form"));
                }
                items
            }
            other => return Err(syntax(other.pos(), "expected a top-level `( ... )` form")),
        };
        let head = items[0].atom()?;
        let pos = items[0].pos();
        match head {
            "variables" => doc.variables = parse_var_decls(&items[1..])?,
            "observations" => doc.observations = parse_var_decls(&items[1..])?,
            "opponent-actions" => {
                if items.len() < 3 {
                    return Err(syntax(pos, "opponent-actions needs a variable name and labels"));
                }
                let name = items[1].atom()?.to_string();
                let labels: Result<Vec<String>, _> =
                    items[2..].iter().map(|v| v.atom().map(str::to_string)).collect();
                doc.opponent_actions = Some((name, labels?));
            }
            "opponent-observations" => {
                if items.len() < 2 {
                    return Err(syntax(pos, "opponent-observations needs variable names"));
                }
                let names: Result<Vec<String>, _> =
                    items[1..].iter().map(|v| v.atom().map(str::to_string)).collect();
                doc.opponent_observations = names?;
            }
            "action" => {
                if items.len() < 2 {
                    return Err(syntax(pos, "action needs a name"));
                }
                let name = items[1].atom()?.to_string();
                let mut block = ActionBlock {
                    name,
                    transitions: Vec::new(),
                    observations: Vec::new(),
                    reward: Tree::Leaf(0.0),
                };
                let mut saw_reward = false;
                for part in &items[2..] {
                    let sub = match part {
                        Sexpr::List(sub, p) => {
                            if sub.is_empty() {
                                return Err(syntax(*p, "empty action clause"));
                            }
                            sub
                        }
                        other => return Err(syntax(other.pos(), "expected an action clause")),
                    };
                    match sub[0].atom()? {
                        "transition" => {
                            if sub.len() != 3 {
                                return Err(syntax(sub[0].pos(), "transition needs `VAR tree`"));
                            }
                            let var = sub[1].atom()?.to_string();
                            block.transitions.push((var, parse_tree(&sub[2])?));
                        }
                        "observe" => {
                            if sub.len() != 3 {
                                return Err(syntax(sub[0].pos(), "observe needs `VAR tree`"));
                            }
                            let var = sub[1].atom()?.to_string();
                            block.observations.push((var, parse_tree(&sub[2])?));
                        }
                        "reward" => {
                            if sub.len() != 2 {
                                return Err(syntax(sub[0].pos(), "reward needs a tree"));
                            }
                            block.reward = parse_tree(&sub[1])?;
                            saw_reward = true;
                        }
                        other => {
                            return Err(syntax(
                                sub[0].pos(),
                                format!("unknown action clause `{other}`"),
                            ))
                        }
                    }
                }
                if !saw_reward {
                    return Err(syntax(pos, format!("action `{}` has no reward", block.name)));
                }
                doc.actions.push(block);
            }
            "discount" => {
                if items.len() != 2 {
                    return Err(syntax(pos, "discount needs a number"));
                }
                let s = items[1].atom()?;
                doc.discount = s
                    .parse()
                    .map_err(|_| syntax(items[1].pos(), format!("bad discount `{s}`")))?;
                saw_discount = true;
            }
            "belief" => {
                for t in &items[1..] {
                    doc.belief.push(parse_tree(t)?);
                }
            }
            "frame" => {
                if items.len() < 3 {
                    return Err(syntax(pos, "frame needs a name and a model path"));
                }
                let name = items[1].atom()?.to_string();
                let path = match &items[2] {
                    Sexpr::Str(s, _) => s.clone(),
                    other => return Err(syntax(other.pos(), "frame path must be a string")),
                };
                let mut belief = None;
                for part in &items[3..] {
                    match part {
                        Sexpr::List(sub, p) if !sub.is_empty() && sub[0].atom()? == "belief" => {
                            let trees: Result<Vec<Tree>, _> =
                                sub[1..].iter().map(parse_tree).collect();
                            let trees = trees?;
                            if trees.is_empty() {
                                return Err(syntax(*p, "empty frame belief"));
                            }
                            belief = Some(trees);
                        }
                        other => return Err(syntax(other.pos(), "expected `(belief tree ...)`")),
                    }
                }
                doc.frames.push(FrameDecl { name, path, belief });
            }
            other => return Err(syntax(pos, format!("unknown form `{other}`"))),
        }
    }
    if !saw_discount {
        return Err(ModelError::Global("document has no discount".into()));
    }
    validate(&doc)?;
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

pub const CPT_TOLERANCE: f64 = 1e-9;

struct Decls<'a> {
    values: HashMap<&'a str, &'a [String]>,
}

impl<'a> Decls<'a> {
    fn check_tree(
        &self,
        tree: &Tree,
        allowed: &HashSet<&str>,
        ctx: &str,
    ) -> Result<(), ModelError> {
        match tree {
            Tree::Leaf(v) => {
                if !v.is_finite() {
                    return Err(ModelError::Global(format!("non-finite leaf in {ctx}")));
                }
                Ok(())
            }
            Tree::Node { var, branches, pos } => {
                let values = self.values.get(var.as_str()).ok_or_else(|| {
                    invalid(*pos, format!("undeclared variable `{var}` in {ctx}"))
                })?;
                if !allowed.contains(var.as_str()) {
                    return Err(invalid(
                        *pos,
                        format!("variable `{var}` may not appear in {ctx}"),
                    ));
                }
                for value in values.iter() {
                    if !branches.iter().any(|(l, _)| l == value) {
                        return Err(invalid(
                            *pos,
                            format!("decision node on `{var}` is missing branch `{value}` in {ctx}"),
                        ));
                    }
                }
                for (label, sub) in branches {
                    if !values.iter().any(|v| v == label) {
                        return Err(invalid(
                            sub.pos(),
                            format!("unknown value `{label}` for `{var}` in {ctx}"),
                        ));
                    }
                    self.check_tree(sub, allowed, ctx)?;
                }
                Ok(())
            }
        }
    }

    /// Check sum over the child variable's values is 1 for every assignment of
    /// the tree's parent support.
    fn check_normalized(
        &self,
        tree: &Tree,
        child: &str,
        ctx: &str,
    ) -> Result<(), ModelError> {
        let mut support = HashSet::new();
        tree.support(&mut support);
        support.remove(child);
        let parents: Vec<&str> = {
            let mut p: Vec<&str> = support.into_iter().collect();
            p.sort_unstable();
            p
        };
        let child_values = self.values[child];
        let mut idx = vec![0usize; parents.len()];
        loop {
            let mut asg: HashMap<&str, &str> = HashMap::new();
            for (k, &i) in idx.iter().enumerate() {
                asg.insert(parents[k], &self.values[parents[k]][i]);
            }
            let mut total = 0.0;
            for cv in child_values {
                asg.insert(child, cv);
                let p = tree.eval(&asg)?;
                if p < 0.0 {
                    return Err(ModelError::Global(format!(
                        "negative probability {p} in {ctx}"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > CPT_TOLERANCE {
                return Err(ModelError::Global(format!(
                    "CPT for `{child}` in {ctx} sums to {total}, expected 1"
                )));
            }
            // next parent assignment
            let mut k = parents.len();
            loop {
                if k == 0 {
                    return Ok(());
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.values[parents[k]].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

pub fn validate(doc: &ModelDocument) -> Result<(), ModelError> {
    let mut values: HashMap<&str, &[String]> = HashMap::new();
    let mut primed_names: Vec<(String, &str)> = Vec::new();
    fn declare<'a>(
        decls: &mut HashMap<&'a str, &'a [String]>,
        name: &'a str,
        vals: &'a [String],
    ) -> Result<(), ModelError> {
        if vals.len() < 2 {
            return Err(ModelError::Global(format!(
                "variable `{name}` needs at least two values"
            )));
        }
        let mut seen = HashSet::new();
        for v in vals {
            if !seen.insert(v.as_str()) {
                return Err(ModelError::Global(format!(
                    "variable `{name}` has duplicate value `{v}`"
                )));
            }
        }
        if decls.insert(name, vals).is_some() {
            return Err(ModelError::Global(format!("duplicate variable `{name}`")));
        }
        Ok(())
    }
    for (name, vals) in &doc.variables {
        declare(&mut values, name, vals)?;
        primed_names.push((format!("{name}'"), name));
    }
    for (name, vals) in &doc.observations {
        declare(&mut values, name, vals)?;
    }
    if let Some((name, labels)) = &doc.opponent_actions {
        declare(&mut values, name, labels)?;
    }
    // Primed state variables share their twin's values.
    let state_vars: Vec<&str> = doc.variables.iter().map(|(n, _)| n.as_str()).collect();
    for (primed, base) in &primed_names {
        let vals = values[base as &str];
        if values.insert(primed.as_str(), vals).is_some() {
            return Err(ModelError::Global(format!("duplicate variable `{primed}`")));
        }
    }
    let decls = Decls { values };

    if !(doc.discount > 0.0 && doc.discount < 1.0) {
        return Err(ModelError::Global(format!(
            "discount {} out of range (0, 1)",
            doc.discount
        )));
    }
    if doc.actions.is_empty() {
        return Err(ModelError::Global("document has no actions".into()));
    }
    let opp_var = doc.opponent_actions.as_ref().map(|(n, _)| n.as_str());

    let mut action_names = HashSet::new();
    for block in &doc.actions {
        if !action_names.insert(block.name.as_str()) {
            return Err(ModelError::Global(format!(
                "duplicate action `{}`",
                block.name
            )));
        }
        // Transition trees: unprimed parents + the child's primed variable
        // (+ the opponent action variable in level-1 documents).
        let mut seen_vars = HashSet::new();
        for (var, tree) in &block.transitions {
            if !state_vars.contains(&var.as_str()) {
                return Err(invalid(
                    tree.pos(),
                    format!("transition for undeclared state variable `{var}`"),
                ));
            }
            if !seen_vars.insert(var.as_str()) {
                return Err(ModelError::Global(format!(
                    "action `{}` has two transitions for `{var}`",
                    block.name
                )));
            }
            let primed = format!("{var}'");
            let mut allowed: HashSet<&str> = state_vars.iter().copied().collect();
            allowed.insert(primed.as_str());
            if let Some(ov) = opp_var {
                allowed.insert(ov);
            }
            let ctx = format!("transition for `{var}` of action `{}`", block.name);
            decls.check_tree(tree, &allowed, &ctx)?;
            decls.check_normalized(tree, &primed, &ctx)?;
        }
        // Observation trees: primed state parents + the observation variable.
        let declared_obs: Vec<&str> = doc.observations.iter().map(|(n, _)| n.as_str()).collect();
        let mut seen_obs = HashSet::new();
        for (var, tree) in &block.observations {
            if !declared_obs.contains(&var.as_str()) {
                return Err(invalid(
                    tree.pos(),
                    format!("observation tree for undeclared variable `{var}`"),
                ));
            }
            if !seen_obs.insert(var.as_str()) {
                return Err(ModelError::Global(format!(
                    "action `{}` has two observation trees for `{var}`",
                    block.name
                )));
            }
            let primed_state: Vec<String> =
                state_vars.iter().map(|v| format!("{v}'")).collect();
            let mut allowed: HashSet<&str> =
                primed_state.iter().map(String::as_str).collect();
            allowed.insert(var.as_str());
            if let Some(ov) = opp_var {
                allowed.insert(ov);
            }
            let ctx = format!("observation `{var}` of action `{}`", block.name);
            decls.check_tree(tree, &allowed, &ctx)?;
            decls.check_normalized(tree, var, &ctx)?;
        }
        for obs in &declared_obs {
            if !seen_obs.contains(obs) {
                return Err(ModelError::Global(format!(
                    "action `{}` is missing an observation tree for `{obs}`",
                    block.name
                )));
            }
        }
        // Reward over unprimed state (+ opponent action).
        let mut allowed: HashSet<&str> = state_vars.iter().copied().collect();
        if let Some(ov) = opp_var {
            allowed.insert(ov);
        }
        decls.check_tree(
            &block.reward,
            &allowed,
            &format!("reward of action `{}`", block.name),
        )?;
    }

    // Belief: product of factors over unprimed state variables, summing to 1.
    if doc.belief.is_empty() {
        return Err(ModelError::Global("document has no initial belief".into()));
    }
    let allowed: HashSet<&str> = state_vars.iter().copied().collect();
    for t in &doc.belief {
        decls.check_tree(t, &allowed, "initial belief")?;
    }
    check_belief_normalized(doc, &doc.belief)?;

    let declared_obs_names: HashSet<&str> =
        doc.observations.iter().map(|(n, _)| n.as_str()).collect();
    let mut seen_opp_obs = HashSet::new();
    for name in &doc.opponent_observations {
        if !declared_obs_names.contains(name.as_str()) {
            return Err(ModelError::Global(format!(
                "opponent observation `{name}` is not a declared observation variable"
            )));
        }
        if !seen_opp_obs.insert(name.as_str()) {
            return Err(ModelError::Global(format!(
                "duplicate opponent observation `{name}`"
            )));
        }
    }

    let mut frame_names = HashSet::new();
    for f in &doc.frames {
        if !frame_names.insert(f.name.as_str()) {
            return Err(ModelError::Global(format!("duplicate frame `{}`", f.name)));
        }
    }
    if doc.is_interactive() && doc.opponent_actions.is_none() {
        return Err(ModelError::Global(
            "level-1 document declares frames but no opponent-actions".into(),
        ));
    }
    Ok(())
}

pub fn check_belief_normalized(doc: &ModelDocument, belief: &[Tree]) -> Result<(), ModelError> {
    let vars = &doc.variables;
    let mut idx = vec![0usize; vars.len()];
    let mut total = 0.0;
    loop {
        let mut asg: HashMap<&str, &str> = HashMap::new();
        for (k, &i) in idx.iter().enumerate() {
            asg.insert(vars[k].0.as_str(), &vars[k].1[i]);
        }
        let mut p = 1.0;
        for t in belief {
            p *= t.eval(&asg)?;
        }
        if p < 0.0 {
            return Err(ModelError::Global(format!("negative belief mass {p}")));
        }
        total += p;
        let mut k = vars.len();
        loop {
            if k == 0 {
                if (total - 1.0).abs() > CPT_TOLERANCE {
                    return Err(ModelError::Global(format!(
                        "initial belief sums to {total}, expected 1"
                    )));
                }
                return Ok(());
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < vars[k].1.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// Serializer
// ---------------------------------------------------------------------------

fn write_tree(out: &mut String, tree: &Tree, indent: usize) {
    match tree {
        Tree::Leaf(v) => {
            let _ = write!(out, "({v})");
        }
        Tree::Node { var, branches, .. } => {
            let _ = write!(out, "({var}");
            for (label, sub) in branches {
                let _ = write!(out, "\n{:indent$}({label} ", "", indent = indent + 2);
                write_tree(out, sub, indent + 2);
                out.push(')');
            }
            out.push(')');
        }
    }
}

/// Serialize a document. `parse(serialize(doc))` is structurally identical to
/// `doc` for any valid document; leaf values round-trip bit-exactly.
pub fn serialize(doc: &ModelDocument) -> String {
    let mut out = String::new();
    out.push_str("(variables");
    for (name, vals) in &doc.variables {
        let _ = write!(out, "\n  ({name} {})", vals.join(" "));
    }
    out.push_str(")\n\n");
    if !doc.observations.is_empty() {
        out.push_str("(observations");
        for (name, vals) in &doc.observations {
            let _ = write!(out, "\n  ({name} {})", vals.join(" "));
        }
        out.push_str(")\n\n");
    }
    if let Some((name, labels)) = &doc.opponent_actions {
        let _ = write!(out, "(opponent-actions {name} {})\n\n", labels.join(" "));
    }
    if !doc.opponent_observations.is_empty() {
        let _ = write!(
            out,
            "(opponent-observations {})\n\n",
            doc.opponent_observations.join(" ")
        );
    }
    let _ = write!(out, "(discount {})\n\n", doc.discount);
    for block in &doc.actions {
        let _ = write!(out, "(action {}", block.name);
        for (var, tree) in &block.transitions {
            let _ = write!(out, "\n  (transition {var}\n    ");
            write_tree(&mut out, tree, 4);
            out.push(')');
        }
        for (var, tree) in &block.observations {
            let _ = write!(out, "\n  (observe {var}\n    ");
            write_tree(&mut out, tree, 4);
            out.push(')');
        }
        out.push_str("\n  (reward\n    ");
        write_tree(&mut out, &block.reward, 4);
        out.push_str("))\n\n");
    }
    out.push_str("(belief");
    for t in &doc.belief {
        out.push_str("\n  ");
        write_tree(&mut out, t, 2);
    }
    out.push_str(")\n");
    for f in &doc.frames {
        let _ = write!(out, "\n(frame {} \"{}\"", f.name, f.path);
        if let Some(belief) = &f.belief {
            out.push_str("\n  (belief");
            for t in belief {
                out.push_str("\n    ");
                write_tree(&mut out, t, 4);
            }
            out.push(')');
        }
        out.push_str(")\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    const MINIMAL: &str = r#"
# minimal one-variable document
(variables (X yes no))
(observations (OBS_X yes no))
(discount 0.9)
(action wait
  (observe OBS_X
    (OBS_X (yes (0.5)) (no (0.5))))
  (reward (0)))
(belief (X (yes (0.5)) (no (0.5))))
"#;

    #[test]
    fn minimal_parses() {
        let doc = parse(MINIMAL).unwrap();
        assert_eq!(doc.joint_state_count(), 2);
        assert_eq!(doc.actions.len(), 1);
        // identity-by-omission: no transitions declared
        assert!(doc.actions[0].transitions.is_empty());
    }

    #[test]
    fn missing_branch_is_an_error_with_location() {
        let text = r#"
(variables (X yes no))
(observations (OBS_X yes no))
(discount 0.9)
(action wait
  (transition X
    (X' (yes (X (yes (1.0))))
        (no  (X (yes (0.0)) (no (1.0))))))
  (observe OBS_X (OBS_X (yes (0.5)) (no (0.5))))
  (reward (0)))
(belief (X (yes (0.5)) (no (0.5))))
"#;
        let err = parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing branch"), "{msg}");
        assert!(msg.contains('X'), "{msg}");
        assert!(matches!(err, ModelError::Validation { .. }));
    }

    #[test]
    fn non_normalized_cpt_rejected() {
        let text = r#"
(variables (X yes no))
(observations (OBS_X yes no))
(discount 0.9)
(action wait
  (transition X
    (X' (yes (0.6)) (no (0.6))))
  (observe OBS_X (OBS_X (yes (0.5)) (no (0.5))))
  (reward (0)))
(belief (X (yes (0.5)) (no (0.5))))
"#;
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("sums to"), "{err}");
    }

    #[test]
    fn discount_out_of_range_rejected() {
        let text = MINIMAL.replace("0.9", "1.5");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("discount"), "{err}");
    }

    #[test]
    fn minimal_round_trip() {
        let doc = parse(MINIMAL).unwrap();
        let text = serialize(&doc);
        let doc2 = parse(&text).unwrap();
        assert_eq!(doc, doc2);
    }

    fn random_document(rng: &mut impl Rng) -> ModelDocument {
        let n_vars = rng.gen_range(1..=3);
        let variables: Vec<(String, Vec<String>)> = (0..n_vars)
            .map(|i| {
                let arity = rng.gen_range(2..=3);
                (
                    format!("V{i}"),
                    (0..arity).map(|j| format!("v{j}")).collect(),
                )
            })
            .collect();
        let observations = vec![("OBS".to_string(), vec!["o0".into(), "o1".into()])];
        fn rand_prob_row(rng: &mut impl Rng, arity: usize) -> Vec<f64> {
            let mut raw: Vec<f64> = (0..arity).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            for r in raw.iter_mut() {
                *r /= total;
            }
            let head: f64 = raw[..arity - 1].iter().sum();
            raw[arity - 1] = 1.0 - head;
            raw
        }
        fn cpt(
            rng: &mut impl Rng,
            child: &str,
            values: &[String],
            parent: Option<(&str, &[String])>,
        ) -> Tree {
            let make_row = |row: &[f64], values: &[String]| -> Vec<(String, Tree)> {
                values
                    .iter()
                    .zip(row)
                    .map(|(v, &p)| (v.clone(), Tree::Leaf(p)))
                    .collect()
            };
            match parent {
                None => {
                    let row = rand_prob_row(rng, values.len());
                    Tree::Node {
                        var: child.to_string(),
                        branches: make_row(&row, values),
                        pos: Pos { line: 0, col: 0 },
                    }
                }
                Some((pname, pvals)) => {
                    let mut branches = Vec::new();
                    for pv in pvals {
                        let row = rand_prob_row(rng, values.len());
                        branches.push((
                            pv.clone(),
                            Tree::Node {
                                var: child.to_string(),
                                branches: make_row(&row, values),
                                pos: Pos { line: 0, col: 0 },
                            },
                        ));
                    }
                    Tree::Node {
                        var: pname.to_string(),
                        branches,
                        pos: Pos { line: 0, col: 0 },
                    }
                }
            }
        }
        let n_actions = rng.gen_range(1..=2);
        let mut actions = Vec::new();
        for a in 0..n_actions {
            let mut transitions = Vec::new();
            for (name, vals) in &variables {
                let primed = format!("{name}'");
                transitions.push((name.clone(), cpt(rng, &primed, vals, Some((name, vals)))));
            }
            let obs_parent = format!("{}'", variables[0].0);
            let observe = vec![(
                "OBS".to_string(),
                cpt(
                    rng,
                    "OBS",
                    &observations[0].1,
                    Some((&obs_parent, &variables[0].1)),
                ),
            )];
            actions.push(ActionBlock {
                name: format!("act{a}"),
                transitions,
                observations: observe,
                reward: Tree::Leaf(rng.gen_range(-5.0..5.0)),
            });
        }
        let mut belief = Vec::new();
        for (name, vals) in &variables {
            belief.push(cpt(rng, name, vals, None));
        }
        ModelDocument {
            variables,
            observations,
            opponent_actions: None,
            opponent_observations: Vec::new(),
            actions,
            discount: 0.9,
            belief,
            frames: Vec::new(),
        }
    }

    #[test]
    fn random_documents_round_trip_bit_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..100 {
            let doc = random_document(&mut rng);
            validate(&doc).unwrap();
            let text = serialize(&doc);
            let doc2 = parse(&text).unwrap();
            assert_eq!(doc, doc2);
            // serialize is a fixed point
            assert_eq!(text, serialize(&doc2));
        }
    }
}
