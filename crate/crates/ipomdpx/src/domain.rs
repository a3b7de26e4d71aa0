//! The bundled cyber-deception domain: a single honeypot host, three
//! attacker types planning with level-0 POMDPs, and a level-1 defender
//! planning over the attackers' possible models.
//!
//! The builders produce [`crate::model::ModelDocument`]s so the shipped
//! `.ipx` files are exactly the output of [`attacker_document`] /
//! [`defender_document`]. Every numeric parameter lives in
//! [`DomainParams`] and can be overridden from a TOML file.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ipomdp::{expand_reach, Frame, IPOMDPX};
use crate::model::{FrameDecl, ActionBlock, ModelDocument, Tree};
use crate::pomdp::{FactoredPOMDP, PomdpError, SolveStats, ValueFunction};

/// Environment variable naming an alternative parameter TOML file.
pub const PARAMS_ENV: &str = "IPOMDPX_PARAMS";

// ---------------------------------------------------------------------------
// Shapes: state variables, observation variables, actions
// ---------------------------------------------------------------------------

pub const YN: [&str; 2] = ["yes", "no"];

/// The 11 state variables and their value sets (4,608 joint states).
pub const STATE_VARS: &[(&str, &[&str])] = &[
    ("PRIVS_DECEPTION", &["user", "root", "none"]),
    ("S_DATA_DECOYS", &YN),
    ("C_DATA_DECOYS", &YN),
    ("HOST_HAS_DATA", &["sensitive_data", "critical_data", "none"]),
    ("DATA_ACCESS_PRIVS", &["user", "root"]),
    ("ATTACKER_PRIVS", &["user", "root"]),
    ("DATA_FOUND", &YN),
    ("VULN_FOUND", &YN),
    ("IMPACT_CAUSED", &YN),
    ("ATTACKER_STATUS", &["active", "inactive"]),
    ("HOST_HAS_VULN", &YN),
];

/// The attacker's 5 observation variables (48 joint observations).
pub const ATTACKER_OBS_VARS: &[(&str, &[&str])] = &[
    ("DATA", &YN),
    ("DISCREPANCY", &YN),
    ("PRIVS", &["user", "root", "none"]),
    ("VULN", &YN),
    ("IMPACT", &YN),
];

/// The attacker's 9 actions.
pub const ATTACKER_ACTIONS: [&str; 9] = [
    "FILE_RECON_SDATA",
    "FILE_RECON_CDATA",
    "VULN_RECON",
    "PRIV_ESC",
    "CHECK_ROOT",
    "START_EXFIL",
    "MANIPULATE_DATA",
    "PERSIST",
    "EXIT",
];

/// The defender's 9 actions.
pub const DEFENDER_ACTIONS: [&str; 9] = [
    "NOP",
    "DEPLOY_SDATA_DECOYS",
    "REMOVE_SDATA_DECOYS",
    "DEPLOY_CDATA_DECOYS",
    "REMOVE_CDATA_DECOYS",
    "DEPLOY_VULN",
    "SHOW_PRIVS_USER",
    "SHOW_PRIVS_ROOT",
    "CLEAR_PRIVS_DECEPTION",
];

/// Opponent action variable name in the defender document.
pub const OPP_ACTION_VAR: &str = "A_J";

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("cannot read parameter file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse parameter file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

/// Every tunable number in the domain. Probabilities must lie in [0, 1];
/// `validate` additionally checks the derived rows stay normalized.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DomainParams {
    pub attacker_discount: f64,
    pub defender_discount: f64,
    /// Success probability of FILE_RECON_CDATA per step when critical data
    /// or critical-data decoys are present.
    pub p_find_cdata: f64,
    /// Success probability of FILE_RECON_SDATA (slightly lower: sensitive
    /// data hides in arbitrary user directories).
    pub p_find_sdata: f64,
    /// Success probability of VULN_RECON when a vulnerability is present.
    pub p_find_vuln: f64,
    /// In the attacker's own model: probability that a file recon turns up
    /// host data of the *other* type (stumbling on files it was not looking
    /// for). Zero in the defender's true model, where off-target finds are
    /// represented by decoys plus the DISCREPANCY channel.
    pub p_find_wrong: f64,
    /// Probability of a DISCREPANCY observation during file reconnaissance
    /// when data of the unexpected type is present.
    pub p_discrepancy: f64,
    /// False-positive DISCREPANCY probability (no unexpected data present).
    pub p_discrepancy_fp: f64,
    /// Probability that a decoy interaction raises a dedicated defender
    /// observation (per-decoy alert channels). At 0 the channels are omitted
    /// and the defender relies on LOG_INFERENCE alone, which keeps the
    /// passive all-decoys baseline from identifying the attacker type
    /// instantly.
    pub p_decoy_intr_obs: f64,
    /// Error probability of the attacker's subjective privilege readout.
    pub privs_report_noise: f64,
    /// LOG_INFERENCE: probability of the correct attacker-action label.
    pub log_correct: f64,
    /// LOG_INFERENCE: probability of each of the two other recon labels
    /// when the attacker performs a reconnaissance action.
    pub log_recon_confusion: f64,
    /// LOG_INFERENCE: null probability for reconnaissance actions.
    pub log_recon_null: f64,
    /// LOG_INFERENCE: null probability for non-reconnaissance actions (the
    /// remaining mass spreads uniformly over the other action labels).
    pub log_other_null: f64,
    /// LOG_INFERENCE: probability of the correct label for the three impact
    /// actions (exfiltration, manipulation, and persistence installs leave
    /// similar syscall traces, unlike the distinct recon scans).
    pub log_impact_correct: f64,
    /// LOG_INFERENCE: probability of each of the two other impact labels
    /// when the attacker performs an impact action; the remainder is null.
    pub log_impact_confusion: f64,
    /// Attacker reward for EXIT after a successful impact.
    pub attacker_impact_reward: f64,
    /// Attacker cost per step while active (subtracted).
    pub attacker_step_cost: f64,
    /// Defender reward per step with the attacker active.
    pub defender_engage_reward: f64,
    /// Defender cost for decoy/vulnerability deploy and remove actions.
    pub defender_decoy_cost: f64,
    /// Defender cost for privilege-deception switches.
    pub defender_privs_cost: f64,
    /// Attacker prior that data of its target type is on the host.
    pub belief_target_data: f64,
    /// Attacker prior that data of the other type is on the host.
    pub belief_other_data: f64,
    /// Attacker prior that a privilege-escalation vulnerability exists.
    pub belief_vuln: f64,
    /// Attacker prior on already holding root privileges.
    pub belief_root: f64,
}

impl Default for DomainParams {
    fn default() -> Self {
        DomainParams {
            attacker_discount: 0.95,
            defender_discount: 0.95,
            p_find_cdata: 0.85,
            p_find_sdata: 0.7,
            p_find_vuln: 0.8,
            p_find_wrong: 0.3,
            p_discrepancy: 0.9,
            p_discrepancy_fp: 0.005,
            p_decoy_intr_obs: 0.0,
            privs_report_noise: 0.1,
            log_correct: 0.6,
            log_recon_confusion: 0.15,
            log_recon_null: 0.1,
            log_other_null: 0.3,
            log_impact_correct: 0.25,
            log_impact_confusion: 0.15,
            attacker_impact_reward: 15.0,
            attacker_step_cost: 1.0,
            defender_engage_reward: 1.0,
            defender_decoy_cost: 0.2,
            defender_privs_cost: 0.5,
            belief_target_data: 0.6,
            belief_other_data: 0.15,
            belief_vuln: 0.5,
            belief_root: 0.1,
        }
    }
}

impl DomainParams {
    pub fn from_path(path: &std::path::Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path)?;
        let params: DomainParams = toml::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }

    /// Defaults, unless the `IPOMDPX_PARAMS` environment variable points at
    /// a TOML file.
    pub fn load() -> Result<Self, DomainError> {
        match std::env::var_os(PARAMS_ENV) {
            Some(path) => Self::from_path(std::path::Path::new(&path)),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let probs = [
            ("p_find_cdata", self.p_find_cdata),
            ("p_find_sdata", self.p_find_sdata),
            ("p_find_vuln", self.p_find_vuln),
            ("p_find_wrong", self.p_find_wrong),
            ("p_discrepancy", self.p_discrepancy),
            ("p_discrepancy_fp", self.p_discrepancy_fp),
            ("p_decoy_intr_obs", self.p_decoy_intr_obs),
            ("privs_report_noise", self.privs_report_noise),
            ("log_correct", self.log_correct),
            ("log_recon_confusion", self.log_recon_confusion),
            ("log_recon_null", self.log_recon_null),
            ("log_other_null", self.log_other_null),
            ("log_impact_correct", self.log_impact_correct),
            ("log_impact_confusion", self.log_impact_confusion),
            ("belief_target_data", self.belief_target_data),
            ("belief_other_data", self.belief_other_data),
            ("belief_vuln", self.belief_vuln),
            ("belief_root", self.belief_root),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(DomainError::Invalid(format!("{name} = {p} not in [0, 1]")));
            }
        }
        for (name, d) in [
            ("attacker_discount", self.attacker_discount),
            ("defender_discount", self.defender_discount),
        ] {
            if !(d > 0.0 && d < 1.0) {
                return Err(DomainError::Invalid(format!("{name} = {d} not in (0, 1)")));
            }
        }
        let recon_row = self.log_correct + 2.0 * self.log_recon_confusion + self.log_recon_null;
        if (recon_row - 1.0).abs() > 1e-9 {
            return Err(DomainError::Invalid(format!(
                "LOG_INFERENCE recon row sums to {recon_row}, expected 1"
            )));
        }
        if self.log_correct + self.log_other_null > 1.0 + 1e-9 {
            return Err(DomainError::Invalid(
                "log_correct + log_other_null exceeds 1".into(),
            ));
        }
        if self.log_impact_correct + 2.0 * self.log_impact_confusion > 1.0 + 1e-9 {
            return Err(DomainError::Invalid(
                "log_impact_correct + 2*log_impact_confusion exceeds 1".into(),
            ));
        }
        if self.belief_target_data + self.belief_other_data > 1.0 + 1e-9 {
            return Err(DomainError::Invalid(
                "belief_target_data + belief_other_data exceeds 1".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Attacker types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerType {
    DataExfil,
    DataManipulator,
    PersistentThreat,
}

impl AttackerType {
    pub const ALL: [AttackerType; 3] = [
        AttackerType::DataExfil,
        AttackerType::DataManipulator,
        AttackerType::PersistentThreat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackerType::DataExfil => "data_exfil",
            AttackerType::DataManipulator => "data_manipulator",
            AttackerType::PersistentThreat => "persistent_threat",
        }
    }

    /// The HOST_HAS_DATA value this type is after, if any.
    pub fn target_data(self) -> Option<&'static str> {
        match self {
            AttackerType::DataExfil => Some("sensitive_data"),
            AttackerType::DataManipulator => Some("critical_data"),
            AttackerType::PersistentThreat => None,
        }
    }

    pub fn impact_action(self) -> &'static str {
        match self {
            AttackerType::DataExfil => "START_EXFIL",
            AttackerType::DataManipulator => "MANIPULATE_DATA",
            AttackerType::PersistentThreat => "PERSIST",
        }
    }
}

// ---------------------------------------------------------------------------
// Tree-building helpers
// ---------------------------------------------------------------------------

fn prime(name: &str) -> String {
    format!("{name}'")
}

/// Distribution over `var` with the given probabilities per label.
fn dist(var: &str, pairs: &[(&str, f64)]) -> Tree {
    Tree::node(var, pairs.iter().map(|&(l, p)| (l, Tree::leaf(p))).collect())
}

/// Point distribution on `chosen`.
fn point(var: &str, labels: &[&str], chosen: &str) -> Tree {
    dist(
        var,
        &labels
            .iter()
            .map(|&l| (l, if l == chosen { 1.0 } else { 0.0 }))
            .collect::<Vec<_>>(),
    )
}

/// {yes, no} distribution with P(yes) = p.
fn bern(var: &str, p: f64) -> Tree {
    dist(var, &[("yes", p), ("no", 1.0 - p)])
}

/// Identity CPT: the primed variable copies the unprimed one.
fn identity_tree(name: &str, labels: &[&str]) -> Tree {
    Tree::node(
        name,
        labels
            .iter()
            .map(|&l| (l, point(&prime(name), labels, l)))
            .collect(),
    )
}

fn labels_of(var: &str) -> &'static [&'static str] {
    STATE_VARS
        .iter()
        .find(|(n, _)| *n == var)
        .map(|(_, v)| *v)
        .expect("known state variable")
}

/// Deterministic observation reflecting a {yes, no} primed state variable.
fn reflect_yn(src: &str, obs: &str) -> Tree {
    Tree::node(
        prime(src),
        vec![
            ("yes", point(obs, &YN, "yes")),
            ("no", point(obs, &YN, "no")),
        ],
    )
}

// ---------------------------------------------------------------------------
// Shared attacker-effect CPTs and observation channels
// ---------------------------------------------------------------------------

/// DATA_FOUND' CPT for a file-reconnaissance action searching for
/// `data_label`, with matching decoys in `decoy_var`. Already-found data
/// stays found; real data requires the access privileges; decoys are
/// planted to be findable at any privilege level.
///
/// With `p_wrong > 0` (the attacker's own model) the recon can also turn up
/// host data of the *other* type — that, together with the DISCREPANCY
/// channel, is how the attacker accounts for "found data, but not what I
/// was after" without any concept of decoys.
fn data_found_cpt(decoy_var: &str, data_label: &str, p_succ: f64, p_wrong: f64) -> Tree {
    let dfp = "DATA_FOUND'";
    let stay = point(dfp, &YN, "yes");
    let fail = point(dfp, &YN, "no");
    let gate = |attempt: Tree| {
        Tree::node(
            "DATA_ACCESS_PRIVS",
            vec![
                ("user", attempt.clone()),
                (
                    "root",
                    Tree::node(
                        "ATTACKER_PRIVS",
                        vec![("user", point(dfp, &YN, "no")), ("root", attempt)],
                    ),
                ),
            ],
        )
    };
    let gated = gate(bern(dfp, p_succ));
    let wrong = if p_wrong > 0.0 { gate(bern(dfp, p_wrong)) } else { fail.clone() };
    let via_host = Tree::node(
        "HOST_HAS_DATA",
        vec![
            (
                "sensitive_data",
                if data_label == "sensitive_data" { gated.clone() } else { wrong.clone() },
            ),
            (
                "critical_data",
                if data_label == "critical_data" { gated.clone() } else { wrong.clone() },
            ),
            ("none", fail.clone()),
        ],
    );
    let search = Tree::node(decoy_var, vec![("yes", bern(dfp, p_succ)), ("no", via_host)]);
    Tree::node(
        "ATTACKER_STATUS",
        vec![
            (
                "active",
                Tree::node("DATA_FOUND", vec![("yes", stay), ("no", search)]),
            ),
            ("inactive", identity_tree("DATA_FOUND", &YN)),
        ],
    )
}

fn vuln_found_cpt(p_succ: f64) -> Tree {
    let vfp = "VULN_FOUND'";
    Tree::node(
        "ATTACKER_STATUS",
        vec![
            (
                "active",
                Tree::node(
                    "VULN_FOUND",
                    vec![
                        ("yes", point(vfp, &YN, "yes")),
                        (
                            "no",
                            Tree::node(
                                "HOST_HAS_VULN",
                                vec![("yes", bern(vfp, p_succ)), ("no", point(vfp, &YN, "no"))],
                            ),
                        ),
                    ],
                ),
            ),
            ("inactive", identity_tree("VULN_FOUND", &YN)),
        ],
    )
}

fn priv_esc_cpt() -> Tree {
    let app = "ATTACKER_PRIVS'";
    let labels = labels_of("ATTACKER_PRIVS");
    Tree::node(
        "ATTACKER_STATUS",
        vec![
            (
                "active",
                Tree::node(
                    "VULN_FOUND",
                    vec![
                        ("yes", point(app, labels, "root")),
                        ("no", identity_tree("ATTACKER_PRIVS", labels)),
                    ],
                ),
            ),
            ("inactive", identity_tree("ATTACKER_PRIVS", labels)),
        ],
    )
}

/// IMPACT_CAUSED' CPT: impact happens when the gating state holds.
fn impact_cpt(gate_var: &str, gate_label: &str) -> Tree {
    let icp = "IMPACT_CAUSED'";
    let gate_labels = labels_of(gate_var);
    let succeed = point(icp, &YN, "yes");
    let attempt = Tree::node(
        gate_var,
        gate_labels
            .iter()
            .map(|&l| {
                (
                    l,
                    if l == gate_label { succeed.clone() } else { point(icp, &YN, "no") },
                )
            })
            .collect(),
    );
    Tree::node(
        "ATTACKER_STATUS",
        vec![
            (
                "active",
                Tree::node(
                    "IMPACT_CAUSED",
                    vec![("yes", point(icp, &YN, "yes")), ("no", attempt)],
                ),
            ),
            ("inactive", identity_tree("IMPACT_CAUSED", &YN)),
        ],
    )
}

fn exit_cpt() -> Tree {
    point("ATTACKER_STATUS'", labels_of("ATTACKER_STATUS"), "inactive")
}

/// The state variables an attacker action affects, with their CPTs.
/// `subjective` selects the attacker's own view of the file recons (see
/// [`data_found_cpt`]); everything else is identical in both models.
fn attacker_effects(action: &str, p: &DomainParams, subjective: bool) -> Vec<(String, Tree)> {
    let one = |var: &str, t: Tree| vec![(var.to_string(), t)];
    match action {
        "FILE_RECON_SDATA" => one(
            "DATA_FOUND",
            data_found_cpt(
                "S_DATA_DECOYS",
                "sensitive_data",
                p.p_find_sdata,
                if subjective { p.p_find_wrong } else { 0.0 },
            ),
        ),
        "FILE_RECON_CDATA" => one(
            "DATA_FOUND",
            data_found_cpt(
                "C_DATA_DECOYS",
                "critical_data",
                p.p_find_cdata,
                if subjective { p.p_find_wrong } else { 0.0 },
            ),
        ),
        "VULN_RECON" => one("VULN_FOUND", vuln_found_cpt(p.p_find_vuln)),
        "PRIV_ESC" => one("ATTACKER_PRIVS", priv_esc_cpt()),
        "CHECK_ROOT" => Vec::new(),
        "START_EXFIL" | "MANIPULATE_DATA" => one("IMPACT_CAUSED", impact_cpt("DATA_FOUND", "yes")),
        "PERSIST" => one("IMPACT_CAUSED", impact_cpt("ATTACKER_PRIVS", "root")),
        "EXIT" => one("ATTACKER_STATUS", exit_cpt()),
        other => panic!("unknown attacker action {other}"),
    }
}

/// DISCREPANCY channel during file recon for `expected` data: triggered by
/// the opposite decoy type or data type, with a small false-positive rate.
/// Shared by the attacker's subjective model and the defender's true model.
fn discrepancy_channel(expected: &str, p: &DomainParams) -> Tree {
    let (other_decoys, other_data) = if expected == "sensitive_data" {
        ("C_DATA_DECOYS'", "critical_data")
    } else {
        ("S_DATA_DECOYS'", "sensitive_data")
    };
    let hit = bern("DISCREPANCY", p.p_discrepancy);
    let fp = bern("DISCREPANCY", p.p_discrepancy_fp);
    let via_data = Tree::node(
        "HOST_HAS_DATA'",
        vec![
            (
                "sensitive_data",
                if other_data == "sensitive_data" { hit.clone() } else { fp.clone() },
            ),
            (
                "critical_data",
                if other_data == "critical_data" { hit.clone() } else { fp.clone() },
            ),
            ("none", fp),
        ],
    );
    Tree::node(other_decoys, vec![("yes", hit), ("no", via_data)])
}

/// The five attacker observation channels for one attacker action.
/// `subjective_privs`: the attacker's own noisy privilege readout; the
/// defender's true model instead routes CHECK_ROOT through PRIVS_DECEPTION.
fn attacker_obs_channels(action: &str, p: &DomainParams, subjective: bool) -> Vec<(String, Tree)> {
    let privs_labels = labels_of("ATTACKER_PRIVS");
    let data = reflect_yn("DATA_FOUND", "DATA");
    let discrepancy = match action {
        "FILE_RECON_SDATA" => discrepancy_channel("sensitive_data", p),
        "FILE_RECON_CDATA" => discrepancy_channel("critical_data", p),
        _ => point("DISCREPANCY", &YN, "no"),
    };
    let privs = if action == "CHECK_ROOT" {
        let obs_labels = ["user", "root", "none"];
        let readout = |true_privs: &str| -> Tree {
            if subjective {
                let e = p.privs_report_noise;
                let (pu, pr) = if true_privs == "user" { (1.0 - e, e) } else { (e, 1.0 - e) };
                dist("PRIVS", &[("user", pu), ("root", pr), ("none", 0.0)])
            } else {
                point("PRIVS", &obs_labels, true_privs)
            }
        };
        let true_readout = Tree::node(
            "ATTACKER_PRIVS'",
            privs_labels.iter().map(|&l| (l, readout(l))).collect(),
        );
        if subjective {
            true_readout
        } else {
            Tree::node(
                "PRIVS_DECEPTION'",
                vec![
                    ("user", point("PRIVS", &obs_labels, "user")),
                    ("root", point("PRIVS", &obs_labels, "root")),
                    ("none", true_readout),
                ],
            )
        }
    } else {
        point("PRIVS", &["user", "root", "none"], "none")
    };
    vec![
        ("DATA".to_string(), data),
        ("DISCREPANCY".to_string(), discrepancy),
        ("PRIVS".to_string(), privs),
        ("VULN".to_string(), reflect_yn("VULN_FOUND", "VULN")),
        ("IMPACT".to_string(), reflect_yn("IMPACT_CAUSED", "IMPACT")),
    ]
}

// ---------------------------------------------------------------------------
// Attacker document
// ---------------------------------------------------------------------------

fn attacker_reward(action: &str, ty: AttackerType, p: &DomainParams) -> Tree {
    let active = if action == "EXIT" {
        // Impact on the wrong kind of data is worthless to a data-targeting
        // type, so the payout is gated on the host actually carrying the
        // target data. (A deception-aware attacker therefore values decoy
        // "impact" — host data `none` — at zero.)
        let payout = match ty.target_data() {
            Some(target) => Tree::node(
                "HOST_HAS_DATA",
                labels_of("HOST_HAS_DATA")
                    .iter()
                    .map(|&l| {
                        (
                            l,
                            if l == target {
                                Tree::leaf(p.attacker_impact_reward)
                            } else {
                                Tree::leaf(0.0)
                            },
                        )
                    })
                    .collect(),
            ),
            None => Tree::leaf(p.attacker_impact_reward),
        };
        Tree::node(
            "IMPACT_CAUSED",
            vec![("yes", payout), ("no", Tree::leaf(0.0))],
        )
    } else {
        Tree::leaf(-p.attacker_step_cost)
    };
    Tree::node(
        "ATTACKER_STATUS",
        vec![("active", active), ("inactive", Tree::leaf(0.0))],
    )
}

fn attacker_belief(ty: AttackerType, p: &DomainParams, aware_prior: f64) -> Vec<Tree> {
    let (p_s, p_c) = match ty.target_data() {
        Some("sensitive_data") => (p.belief_target_data, p.belief_other_data),
        Some("critical_data") => (p.belief_other_data, p.belief_target_data),
        _ => (p.belief_other_data, p.belief_other_data),
    };
    vec![
        point("PRIVS_DECEPTION", labels_of("PRIVS_DECEPTION"), "none"),
        bern("S_DATA_DECOYS", aware_prior),
        bern("C_DATA_DECOYS", aware_prior),
        dist(
            "HOST_HAS_DATA",
            &[
                ("sensitive_data", p_s),
                ("critical_data", p_c),
                ("none", 1.0 - p_s - p_c),
            ],
        ),
        dist("DATA_ACCESS_PRIVS", &[("user", 0.5), ("root", 0.5)]),
        dist(
            "ATTACKER_PRIVS",
            &[("user", 1.0 - p.belief_root), ("root", p.belief_root)],
        ),
        point("DATA_FOUND", &YN, "no"),
        point("VULN_FOUND", &YN, "no"),
        point("IMPACT_CAUSED", &YN, "no"),
        point("ATTACKER_STATUS", labels_of("ATTACKER_STATUS"), "active"),
        bern("HOST_HAS_VULN", p.belief_vuln),
    ]
}

fn owned_decls(decls: &[(&str, &[&str])]) -> Vec<(String, Vec<String>)> {
    decls
        .iter()
        .map(|(n, vs)| (n.to_string(), vs.iter().map(|v| v.to_string()).collect()))
        .collect()
}

/// The level-0 POMDP document of one attacker type. `aware_prior` is the
/// attacker's prior that decoys are deployed (0 = fully unaware).
pub fn attacker_document(ty: AttackerType, p: &DomainParams, aware_prior: f64) -> ModelDocument {
    let impact_actions = ["START_EXFIL", "MANIPULATE_DATA", "PERSIST"];
    let actions = ATTACKER_ACTIONS
        .iter()
        .map(|&a| ActionBlock {
            name: a.to_string(),
            // In its own model, only the type's objective action causes
            // impact; the other impact actions are inert probes.
            transitions: if impact_actions.contains(&a) && a != ty.impact_action() {
                Vec::new()
            } else {
                attacker_effects(a, p, true)
            },
            observations: attacker_obs_channels(a, p, true),
            reward: attacker_reward(a, ty, p),
        })
        .collect();
    ModelDocument {
        variables: owned_decls(STATE_VARS),
        observations: owned_decls(ATTACKER_OBS_VARS),
        opponent_actions: None,
        opponent_observations: Vec::new(),
        actions,
        discount: p.attacker_discount,
        belief: attacker_belief(ty, p, aware_prior),
        frames: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Defender document
// ---------------------------------------------------------------------------

fn log_inference_values() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = ATTACKER_ACTIONS.to_vec();
    v.push("null");
    v
}

const RECON_ACTIONS: [&str; 3] = ["FILE_RECON_SDATA", "FILE_RECON_CDATA", "VULN_RECON"];
const IMPACT_ACTIONS: [&str; 3] = ["START_EXFIL", "MANIPULATE_DATA", "PERSIST"];

/// LOG_INFERENCE row for one true attacker action.
fn log_row(action: &str, p: &DomainParams) -> Vec<(&'static str, f64)> {
    let values = log_inference_values();
    let mut row: Vec<(&'static str, f64)> = values.iter().map(|&v| (v, 0.0)).collect();
    let mut set = |label: &str, prob: f64| {
        let slot = row.iter_mut().find(|(l, _)| *l == label).expect("label");
        slot.1 = prob;
    };
    if RECON_ACTIONS.contains(&action) {
        set(action, p.log_correct);
        for other in RECON_ACTIONS {
            if other != action {
                set(other, p.log_recon_confusion);
            }
        }
        set("null", p.log_recon_null);
    } else if IMPACT_ACTIONS.contains(&action) {
        set(action, p.log_impact_correct);
        for other in IMPACT_ACTIONS {
            if other != action {
                set(other, p.log_impact_confusion);
            }
        }
        set(
            "null",
            1.0 - p.log_impact_correct - 2.0 * p.log_impact_confusion,
        );
    } else {
        set(action, p.log_correct);
        set("null", p.log_other_null);
        let rest = 1.0 - p.log_correct - p.log_other_null;
        let share = rest / (ATTACKER_ACTIONS.len() - 1) as f64;
        for other in ATTACKER_ACTIONS {
            if other != action {
                set(other, share);
            }
        }
    }
    row
}

/// Decoy-interaction alert channel: fires with probability `p_fire` when the
/// attacker runs the matching file recon while that decoy type is present.
fn decoy_intr_channel(obs_var: &str, decoy_var: &str, recon: &str, p_fire: f64) -> Tree {
    let labels = ["yes", "none"];
    let fire = if p_fire >= 1.0 {
        point(obs_var, &labels, "yes")
    } else {
        dist(obs_var, &[("yes", p_fire), ("none", 1.0 - p_fire)])
    };
    Tree::node(
        OPP_ACTION_VAR,
        ATTACKER_ACTIONS
            .iter()
            .map(|&a| {
                (
                    a,
                    if a == recon {
                        Tree::node(
                            prime(decoy_var),
                            vec![
                                ("yes", fire.clone()),
                                ("no", point(obs_var, &labels, "none")),
                            ],
                        )
                    } else {
                        point(obs_var, &labels, "none")
                    },
                )
            })
            .collect(),
    )
}

/// Branch a per-attacker-action builder over the opponent action variable.
fn over_opp_actions(build: impl Fn(&str) -> Tree) -> Tree {
    Tree::node(
        OPP_ACTION_VAR,
        ATTACKER_ACTIONS.iter().map(|&a| (a, build(a))).collect(),
    )
}

fn defender_reward(action: &str, p: &DomainParams) -> Tree {
    let cost = match action {
        "NOP" => 0.0,
        "DEPLOY_SDATA_DECOYS" | "REMOVE_SDATA_DECOYS" | "DEPLOY_CDATA_DECOYS"
        | "REMOVE_CDATA_DECOYS" | "DEPLOY_VULN" => p.defender_decoy_cost,
        "SHOW_PRIVS_USER" | "SHOW_PRIVS_ROOT" | "CLEAR_PRIVS_DECEPTION" => p.defender_privs_cost,
        other => panic!("unknown defender action {other}"),
    };
    Tree::node(
        "ATTACKER_STATUS",
        vec![
            ("active", Tree::leaf(p.defender_engage_reward - cost)),
            ("inactive", Tree::leaf(-cost)),
        ],
    )
}

fn defender_belief() -> Vec<Tree> {
    vec![
        point("PRIVS_DECEPTION", labels_of("PRIVS_DECEPTION"), "none"),
        point("S_DATA_DECOYS", &YN, "no"),
        point("C_DATA_DECOYS", &YN, "no"),
        point("HOST_HAS_DATA", labels_of("HOST_HAS_DATA"), "none"),
        point("DATA_ACCESS_PRIVS", labels_of("DATA_ACCESS_PRIVS"), "user"),
        dist("ATTACKER_PRIVS", &[("user", 0.5), ("root", 0.5)]),
        point("DATA_FOUND", &YN, "no"),
        point("VULN_FOUND", &YN, "no"),
        point("IMPACT_CAUSED", &YN, "no"),
        point("ATTACKER_STATUS", labels_of("ATTACKER_STATUS"), "active"),
        point("HOST_HAS_VULN", &YN, "no"),
    ]
}

/// The level-1 defender document. Transitions combine the attacker's true
/// effects (branching on the opponent action) with the defender's own
/// deterministic state edits; observations are LOG_INFERENCE plus the two
/// perfect decoy-interaction channels; the opponent observation channels
/// are the true versions of the attacker's five variables.
pub fn defender_document(p: &DomainParams) -> ModelDocument {
    // Per-variable CPTs driven by the attacker, shared by every defender
    // action block.
    let attacker_driven: Vec<(String, Tree)> = ["DATA_FOUND", "VULN_FOUND", "ATTACKER_PRIVS", "IMPACT_CAUSED", "ATTACKER_STATUS"]
        .iter()
        .map(|&var| {
            let tree = over_opp_actions(|a| {
                attacker_effects(a, p, false)
                    .into_iter()
                    .find(|(v, _)| v == var)
                    .map(|(_, t)| t)
                    .unwrap_or_else(|| identity_tree(var, labels_of(var)))
            });
            (var.to_string(), tree)
        })
        .collect();

    let mut observations = vec![(
        "LOG_INFERENCE".to_string(),
        over_opp_actions(|a| dist("LOG_INFERENCE", &log_row(a, p))),
    )];
    if p.p_decoy_intr_obs > 0.0 {
        observations.push((
            "S_DATA_DECOY_INTR".to_string(),
            decoy_intr_channel(
                "S_DATA_DECOY_INTR",
                "S_DATA_DECOYS",
                "FILE_RECON_SDATA",
                p.p_decoy_intr_obs,
            ),
        ));
        observations.push((
            "C_DATA_DECOY_INTR".to_string(),
            decoy_intr_channel(
                "C_DATA_DECOY_INTR",
                "C_DATA_DECOYS",
                "FILE_RECON_CDATA",
                p.p_decoy_intr_obs,
            ),
        ));
    }
    for (name, _) in ATTACKER_OBS_VARS {
        observations.push((
            name.to_string(),
            over_opp_actions(|a| {
                attacker_obs_channels(a, p, false)
                    .into_iter()
                    .find(|(v, _)| v == name)
                    .map(|(_, t)| t)
                    .expect("channel per observation variable")
            }),
        ));
    }

    let actions = DEFENDER_ACTIONS
        .iter()
        .map(|&a| {
            let mut transitions = attacker_driven.clone();
            let own: Option<(&str, Tree)> = match a {
                "NOP" => None,
                "DEPLOY_SDATA_DECOYS" => Some(("S_DATA_DECOYS", point("S_DATA_DECOYS'", &YN, "yes"))),
                "REMOVE_SDATA_DECOYS" => Some(("S_DATA_DECOYS", point("S_DATA_DECOYS'", &YN, "no"))),
                "DEPLOY_CDATA_DECOYS" => Some(("C_DATA_DECOYS", point("C_DATA_DECOYS'", &YN, "yes"))),
                "REMOVE_CDATA_DECOYS" => Some(("C_DATA_DECOYS", point("C_DATA_DECOYS'", &YN, "no"))),
                "DEPLOY_VULN" => Some(("HOST_HAS_VULN", point("HOST_HAS_VULN'", &YN, "yes"))),
                "SHOW_PRIVS_USER" => Some((
                    "PRIVS_DECEPTION",
                    point("PRIVS_DECEPTION'", labels_of("PRIVS_DECEPTION"), "user"),
                )),
                "SHOW_PRIVS_ROOT" => Some((
                    "PRIVS_DECEPTION",
                    point("PRIVS_DECEPTION'", labels_of("PRIVS_DECEPTION"), "root"),
                )),
                "CLEAR_PRIVS_DECEPTION" => Some((
                    "PRIVS_DECEPTION",
                    point("PRIVS_DECEPTION'", labels_of("PRIVS_DECEPTION"), "none"),
                )),
                other => panic!("unknown defender action {other}"),
            };
            if let Some((var, tree)) = own {
                transitions.push((var.to_string(), tree));
            }
            ActionBlock {
                name: a.to_string(),
                transitions,
                observations: observations.clone(),
                reward: defender_reward(a, p),
            }
        })
        .collect();

    let mut obs_decls = vec![(
        "LOG_INFERENCE".to_string(),
        log_inference_values().iter().map(|v| v.to_string()).collect(),
    )];
    if p.p_decoy_intr_obs > 0.0 {
        obs_decls.push(("S_DATA_DECOY_INTR".to_string(), vec!["yes".into(), "none".into()]));
        obs_decls.push(("C_DATA_DECOY_INTR".to_string(), vec!["yes".into(), "none".into()]));
    }
    obs_decls.extend(owned_decls(ATTACKER_OBS_VARS));

    ModelDocument {
        variables: owned_decls(STATE_VARS),
        observations: obs_decls,
        opponent_actions: Some((
            OPP_ACTION_VAR.to_string(),
            ATTACKER_ACTIONS.iter().map(|a| a.to_string()).collect(),
        )),
        opponent_observations: ATTACKER_OBS_VARS.iter().map(|(n, _)| n.to_string()).collect(),
        actions,
        discount: p.defender_discount,
        belief: defender_belief(),
        frames: AttackerType::ALL
            .iter()
            .map(|ty| FrameDecl {
                name: ty.name().to_string(),
                path: format!("{}.ipx", ty.name()),
                belief: None,
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Solving helpers
// ---------------------------------------------------------------------------

/// Knobs for level-0 / level-1 Perseus runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Number of projected belief points.
    pub points: usize,
    /// Projection depth for belief sampling.
    pub depth: usize,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            points: 200,
            depth: 10,
            epsilon: 1e-2,
            max_iterations: 150,
            seed: 0,
        }
    }
}

/// Default Reach-expansion horizon for the defender model.
pub const DEFAULT_REACH_H: usize = 5;

impl SolveConfig {
    /// Defaults for the level-1 defender solve. The epsilon is looser than
    /// the frame default: the lower-bound seed decays by the discount each
    /// sweep, so very small epsilons mostly measure seed decay.
    pub fn defender_default() -> Self {
        SolveConfig {
            epsilon: 0.05,
            ..SolveConfig::default()
        }
    }
}

pub fn build_attacker_pomdp(
    ty: AttackerType,
    p: &DomainParams,
    aware_prior: f64,
) -> Result<FactoredPOMDP, PomdpError> {
    FactoredPOMDP::from_document(&attacker_document(ty, p, aware_prior))
}

/// Build and solve one attacker frame.
pub fn solve_attacker_frame(
    ty: AttackerType,
    p: &DomainParams,
    aware_prior: f64,
    cfg: &SolveConfig,
) -> Result<(Frame, SolveStats), PomdpError> {
    let mut pomdp = build_attacker_pomdp(ty, p, aware_prior)?;
    let beliefs =
        pomdp.project_beliefs(pomdp.initial_belief, cfg.depth, cfg.points, cfg.seed)?;
    let (value, stats) = pomdp.perseus_solve(&beliefs, cfg.epsilon, cfg.max_iterations, cfg.seed)?;
    // Read the belief handle only after solving: the solver may have
    // garbage-collected the store and rewritten it.
    let initial_belief = pomdp.initial_belief;
    Ok((
        Frame {
            name: ty.name().to_string(),
            pomdp,
            value,
            initial_belief,
        },
        stats,
    ))
}

/// Build and solve all three attacker frames (in `AttackerType::ALL` order).
pub fn build_frames(
    p: &DomainParams,
    aware_prior: f64,
    cfg: &SolveConfig,
) -> Result<Vec<Frame>, PomdpError> {
    AttackerType::ALL
        .iter()
        .map(|&ty| solve_attacker_frame(ty, p, aware_prior, cfg).map(|(f, _)| f))
        .collect()
}

/// Expand the opponent model space to `reach_h` and compile the level-1
/// defender model.
pub fn build_defender_ipomdpx(
    p: &DomainParams,
    frames: Vec<Frame>,
    reach_h: usize,
) -> Result<IPOMDPX, PomdpError> {
    let model_set = expand_reach(&frames, reach_h)?;
    IPOMDPX::compile(&defender_document(p), frames, model_set)
}

/// Solve the compiled defender model with generalized Perseus.
pub fn solve_defender(
    ip: &mut IPOMDPX,
    cfg: &SolveConfig,
) -> Result<(ValueFunction, SolveStats), PomdpError> {
    let beliefs = ip.project_beliefs(ip.initial_belief, cfg.depth, cfg.points, cfg.seed)?;
    ip.perseus_solve(&beliefs, cfg.epsilon, cfg.max_iterations, cfg.seed)
}

// ---------------------------------------------------------------------------
// Scenario sampling
// ---------------------------------------------------------------------------

/// A sampled ground-truth trial setup: the true attacker type and the true
/// initial host state (a full assignment of the 11 state variables).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub attacker: AttackerType,
    pub state: Vec<(String, String)>,
}

impl Scenario {
    pub fn value(&self, var: &str) -> &str {
        self.state
            .iter()
            .find(|(n, _)| n == var)
            .map(|(_, v)| v.as_str())
            .expect("known state variable")
    }

    pub fn set(&mut self, var: &str, value: &str) {
        let slot = self
            .state
            .iter_mut()
            .find(|(n, _)| n == var)
            .expect("known state variable");
        slot.1 = value.to_string();
    }
}

/// Uniform attacker type and starting privileges; the host is a honeypot
/// (no real data, no decoys or vulnerability yet). Deterministic per seed.
pub fn sample_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attacker = AttackerType::ALL[rng.gen_range(0..3)];
    let privs = if rng.gen_bool(0.5) { "user" } else { "root" };
    let state = vec![
        ("PRIVS_DECEPTION".to_string(), "none".to_string()),
        ("S_DATA_DECOYS".to_string(), "no".to_string()),
        ("C_DATA_DECOYS".to_string(), "no".to_string()),
        ("HOST_HAS_DATA".to_string(), "none".to_string()),
        ("DATA_ACCESS_PRIVS".to_string(), "user".to_string()),
        ("ATTACKER_PRIVS".to_string(), privs.to_string()),
        ("DATA_FOUND".to_string(), "no".to_string()),
        ("VULN_FOUND".to_string(), "no".to_string()),
        ("IMPACT_CAUSED".to_string(), "no".to_string()),
        ("ATTACKER_STATUS".to_string(), "active".to_string()),
        ("HOST_HAS_VULN".to_string(), "no".to_string()),
    ];
    Scenario { attacker, state }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;
    use crate::pomdp::Belief;
    use std::collections::HashMap;

    fn marginal(pomdp: &FactoredPOMDP, b: Belief, var: &str, label: &str) -> f64 {
        let v = pomdp.engine.catalog().var(var).unwrap();
        let idx = pomdp
            .engine
            .catalog()
            .info(v)
            .values
            .iter()
            .position(|l| l == label)
            .unwrap();
        let ind = pomdp.engine.indicator(v, idx).unwrap();
        pomdp.engine.dot(b.0, ind, &pomdp.state_vars).unwrap()
    }

    fn obs_index_map(pomdp: &FactoredPOMDP, pairs: &[(&str, &str)]) -> Vec<usize> {
        pomdp
            .obs_vars
            .iter()
            .map(|&v| {
                let info = pomdp.engine.catalog().info(v);
                let val = pairs
                    .iter()
                    .find(|(n, _)| *n == info.name)
                    .map(|(_, l)| *l)
                    .expect("observation assignment");
                info.values.iter().position(|l| l == val).unwrap()
            })
            .collect()
    }

    #[test]
    fn params_default_valid_and_toml_round_trip() {
        let p = DomainParams::default();
        p.validate().unwrap();
        let text = toml::to_string(&p).unwrap();
        let back: DomainParams = toml::from_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn params_reject_bad_values() {
        let mut p = DomainParams::default();
        p.p_find_cdata = 1.4;
        assert!(p.validate().is_err());
        let mut p = DomainParams::default();
        p.log_recon_null = 0.3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn attacker_documents_validate_with_expected_shape() {
        let p = DomainParams::default();
        for ty in AttackerType::ALL {
            let doc = attacker_document(ty, &p, 0.0);
            model::validate(&doc).unwrap();
            assert_eq!(doc.joint_state_count(), 4608);
            assert_eq!(doc.joint_observation_count(), 48);
            assert_eq!(doc.actions.len(), 9);
            // round-trips through the textual format bit-exactly
            let text = model::serialize(&doc);
            let back = model::parse(&text).unwrap();
            assert_eq!(doc, back);
        }
    }

    #[test]
    fn defender_document_validates_with_expected_shape() {
        let p = DomainParams::default();
        let doc = defender_document(&p);
        model::validate(&doc).unwrap();
        assert_eq!(doc.joint_state_count(), 4608);
        assert_eq!(doc.actions.len(), 9);
        assert_eq!(doc.opponent_observations.len(), 5);
        let own_space = |doc: &model::ModelDocument| -> usize {
            doc.observations
                .iter()
                .filter(|(n, _)| !doc.opponent_observations.contains(n))
                .map(|(_, v)| v.len())
                .product()
        };
        let opp: usize = doc
            .observations
            .iter()
            .filter(|(n, _)| doc.opponent_observations.contains(n))
            .map(|(_, v)| v.len())
            .product();
        // At defaults the defender sees LOG_INFERENCE only (10 values); the
        // decoy-interaction channels add a factor of 2 each when enabled.
        assert_eq!(own_space(&doc), 10);
        assert_eq!(opp, 48);
        let text = model::serialize(&doc);
        let back = model::parse(&text).unwrap();
        assert_eq!(doc, back);

        let with_alerts = defender_document(&DomainParams {
            p_decoy_intr_obs: 1.0,
            ..DomainParams::default()
        });
        model::validate(&with_alerts).unwrap();
        assert_eq!(own_space(&with_alerts), 40);
    }

    #[test]
    fn attacker_pomdp_builds_with_counts() {
        let p = DomainParams::default();
        let pomdp = build_attacker_pomdp(AttackerType::DataManipulator, &p, 0.0).unwrap();
        assert_eq!(pomdp.state_count(), 4608);
        assert_eq!(pomdp.actions.len(), 9);
        assert_eq!(pomdp.observation_space().len(), 48);
    }

    #[test]
    fn deception_effect_on_data_belief() {
        // A positive DATA observation after critical-data recon raises the
        // attacker's belief that critical data is present; a negative one
        // lowers it.
        let p = DomainParams::default();
        let pomdp = build_attacker_pomdp(AttackerType::DataManipulator, &p, 0.0).unwrap();
        let b0 = pomdp.initial_belief;
        let a = pomdp.action_index("FILE_RECON_CDATA").unwrap();
        let before = marginal(&pomdp, b0, "HOST_HAS_DATA", "critical_data");
        let hit = obs_index_map(
            &pomdp,
            &[
                ("DATA", "yes"),
                ("DISCREPANCY", "no"),
                ("PRIVS", "none"),
                ("VULN", "no"),
                ("IMPACT", "no"),
            ],
        );
        let b_hit = pomdp.belief_update(b0, a, &hit).unwrap();
        assert!(marginal(&pomdp, b_hit, "HOST_HAS_DATA", "critical_data") > before);
        let miss = obs_index_map(
            &pomdp,
            &[
                ("DATA", "no"),
                ("DISCREPANCY", "no"),
                ("PRIVS", "none"),
                ("VULN", "no"),
                ("IMPACT", "no"),
            ],
        );
        let b_miss = pomdp.belief_update(b0, a, &miss).unwrap();
        assert!(marginal(&pomdp, b_miss, "HOST_HAS_DATA", "critical_data") < before);
    }

    #[test]
    fn discrepancy_shifts_belief_to_other_type() {
        let p = DomainParams::default();
        let pomdp = build_attacker_pomdp(AttackerType::DataExfil, &p, 0.0).unwrap();
        let b0 = pomdp.initial_belief;
        let a = pomdp.action_index("FILE_RECON_SDATA").unwrap();
        let obs = obs_index_map(
            &pomdp,
            &[
                ("DATA", "no"),
                ("DISCREPANCY", "yes"),
                ("PRIVS", "none"),
                ("VULN", "no"),
                ("IMPACT", "no"),
            ],
        );
        let b1 = pomdp.belief_update(b0, a, &obs).unwrap();
        assert!(
            marginal(&pomdp, b1, "HOST_HAS_DATA", "critical_data")
                > marginal(&pomdp, b0, "HOST_HAS_DATA", "critical_data")
        );
        assert!(
            marginal(&pomdp, b1, "HOST_HAS_DATA", "sensitive_data")
                < marginal(&pomdp, b0, "HOST_HAS_DATA", "sensitive_data")
        );
    }

    #[test]
    fn sample_scenario_contract() {
        assert_eq!(sample_scenario(7), sample_scenario(7));
        let mut counts = HashMap::new();
        for seed in 0..3000 {
            let s = sample_scenario(seed);
            assert_eq!(s.value("HOST_HAS_DATA"), "none");
            assert_eq!(s.value("ATTACKER_STATUS"), "active");
            assert_eq!(s.value("S_DATA_DECOYS"), "no");
            *counts.entry(s.attacker).or_insert(0usize) += 1;
        }
        // each type frequency within 3 sigma of 1/3
        let sigma = (3000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for ty in AttackerType::ALL {
            let c = counts[&ty] as f64;
            assert!((c - 1000.0).abs() < 3.0 * sigma, "{ty:?}: {c}");
        }
    }

    #[test]
    fn defender_ipomdpx_compiles_at_h0() {
        // Frames with trivial value functions keep this test fast: Reach(0)
        // only needs each frame's initial node.
        let p = DomainParams::default();
        let frames: Vec<Frame> = AttackerType::ALL
            .iter()
            .map(|&ty| {
                let pomdp = build_attacker_pomdp(ty, &p, 0.0).unwrap();
                let zero = crate::pomdp::AlphaVector {
                    action: 0,
                    values: pomdp.engine.leaf(0.0).unwrap(),
                };
                let b0 = pomdp.initial_belief;
                Frame {
                    name: ty.name().to_string(),
                    pomdp,
                    value: ValueFunction { vectors: vec![zero] },
                    initial_belief: b0,
                }
            })
            .collect();
        let ip = build_defender_ipomdpx(&p, frames, 0).unwrap();
        assert_eq!(ip.actions.len(), 9);
        assert_eq!(ip.model_set.nodes.len(), 3);
        let m = ip.frame_marginal(ip.initial_belief).unwrap();
        for v in &m {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        // interactive belief update on a NOP step with a null log line
        let obs_space = ip.observation_space();
        let nop = ip.action_index("NOP").unwrap();
        let null_obs = obs_space
            .iter()
            .position(|o| {
                // LOG_INFERENCE = null (the only defender channel at default
                // parameters)
                o[0] == 9
            })
            .unwrap();
        let obs = &obs_space[null_obs];
        let b1 = ip.belief_update(ip.initial_belief, nop, obs).unwrap();
        let m1 = ip.frame_marginal(b1).unwrap();
        assert!((m1.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
