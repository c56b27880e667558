//! Run reports and the invariant checks behind them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{Block, BlockId, BlockTree, Checkpoint};
use crate::finality::{FinalityState, SupermajorityLink};
use crate::fork_choice::ForkChoiceRule;
use crate::slashing::{safety_audit, scan, Violation, ViolationKind};
use crate::validators::{ValidatorId, ValidatorRecord};
use crate::votes::Vote;
use crate::{one_third, Fraction};

use super::config::{ScenarioConfig, SCHEMA_VERSION};
use super::World;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client: usize,
    pub group: usize,
    pub head: BlockId,
    pub head_height: u64,
    pub justified: Vec<Checkpoint>,
    /// First-seen finalized checkpoints, by height.
    pub finalized: Vec<Checkpoint>,
    /// Finalized checkpoints on the head chain.
    pub finalized_on_head: Vec<Checkpoint>,
    pub rejected_blocks: usize,
    /// Registry at the head, after leaks, slashings and payouts.
    pub head_registry: Vec<ValidatorRecord>,
    pub burned: u64,
    pub escrowed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashRecord {
    pub validator: ValidatorId,
    pub kind: ViolationKind,
    /// Earliest time any client heard the violation.
    pub heard_at: Option<u64>,
    /// Blocks whose evidence transaction slashed the validator.
    pub evidence_blocks: Vec<BlockId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub a: Checkpoint,
    pub b: Checkpoint,
    pub violators: Vec<ValidatorId>,
    pub violator_weight: u64,
    pub reference_total: u64,
    pub meets_bound: bool,
    /// Every audited violator also shows up in a full pairwise scan.
    pub matches_scan: bool,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub enabled: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongRangeClient {
    pub client: usize,
    pub heard_at: Option<u64>,
    /// Accepted a block paying out an attacker's withdrawal.
    pub accepted_payout: bool,
    /// Every accepted chain reaching the unlock epoch has the attackers slashed.
    pub slashed_on_all_accepted: bool,
    /// Head lies on the revision chain.
    pub follows_revision: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ScenarioOutcome {
    DynamicAttack {
        x: Checkpoint,
        y: Checkpoint,
        x_finalized: bool,
        y_finalized: bool,
    },
    LongRange {
        delta: u64,
        withdrawal_delay_ticks: u64,
        unlock_epoch: u64,
        clients: Vec<LongRangeClient>,
    },
    SplitFinality {
        /// First finalized checkpoint on each group's chain.
        first_finalized: Vec<Option<Checkpoint>>,
        /// Leak applications before each chain justified past the root.
        leak_epochs: Vec<Option<u64>>,
    },
    Stuck {
        rule: ForkChoiceRule,
        start_epoch: u64,
        finalized_height_before: u64,
        finalized_height_after: u64,
        /// Epochs from the start until a new checkpoint was finalized on the
        /// head chain of every client.
        epochs_to_finalize: Option<u64>,
    },
}

/// Blocks and votes of the run, enough to rebuild the world offline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub blocks: Vec<Block>,
    pub votes: Vec<Vote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ScenarioConfig,
    pub clients: Vec<ClientReport>,
    /// Justified and finalized checkpoints over every published block and vote.
    pub justified: Vec<Checkpoint>,
    pub finalized: Vec<Checkpoint>,
    /// Conflicting pairs among checkpoints some client saw finalized.
    pub conflicts: Vec<(Checkpoint, Checkpoint)>,
    pub audits: Vec<AuditSummary>,
    pub violations: Vec<Violation>,
    pub slashings: Vec<SlashRecord>,
    pub invariants: Vec<InvariantCheck>,
    /// Interpretive heuristics that influenced this run.
    pub heuristics: Vec<String>,
    pub outcome: Option<ScenarioOutcome>,
    pub trace: Trace,
    pub trace_digest: String,
    /// SHA-256 of this report's JSON with this field empty.
    pub digest: String,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|c| !c.enabled || c.passed)
    }

    pub fn failed_checks(&self) -> Vec<&InvariantCheck> {
        self.invariants.iter().filter(|c| c.enabled && !c.passed).collect()
    }

    pub fn check(&self, name: &str) -> Option<&InvariantCheck> {
        self.invariants.iter().find(|c| c.name == name)
    }

    pub fn compute_digest(&self) -> String {
        let mut copy = self.clone();
        copy.digest.clear();
        let bytes = serde_json::to_vec(&copy).expect("reports serialize");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> Result<RunReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "scenario {} (seed {}): {}\n",
            if self.config.name.is_empty() { "-" } else { &self.config.name },
            self.config.seed,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        for c in &self.clients {
            let top = c.finalized.last().map_or(0, |f| f.height);
            out += &format!(
                "  client {} head {}.. height {} finalized up to {}\n",
                c.client,
                &c.head.to_hex()[..8],
                c.head_height,
                top
            );
        }
        out += &format!(
            "  conflicts {} violations {} slashings {}\n",
            self.conflicts.len(),
            self.violations.len(),
            self.slashings.len()
        );
        for check in &self.invariants {
            let status = match (check.enabled, check.passed) {
                (false, _) => "skip",
                (true, true) => "ok",
                (true, false) => "FAIL",
            };
            out += &format!("  [{status}] {} {}\n", check.name, check.detail);
        }
        for h in &self.heuristics {
            out += &format!("  heuristic: {h}\n");
        }
        out += &format!("  digest {}\n", self.digest);
        out
    }
}

pub fn check(name: &str, enabled: bool, passed: bool, detail: impl Into<String>) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        enabled,
        passed,
        detail: detail.into(),
    }
}

fn sorted_links(state: &FinalityState) -> Vec<&SupermajorityLink> {
    let mut links: Vec<&SupermajorityLink> = state.established_links().collect();
    links.sort_by_key(|l| (l.target, l.source));
    links
}

/// Properties (i)-(iv) over the established links of `state`; returns the
/// first failure found.
pub fn link_properties(state: &FinalityState) -> Result<(), String> {
    let links = sorted_links(state);
    for (i, a) in links.iter().enumerate() {
        for b in &links[i + 1..] {
            let same = a.source == b.source && a.target == b.target;
            if same {
                continue;
            }
            if a.target.height == b.target.height {
                return Err(format!(
                    "links into {} and {} share target height {}",
                    a.target.block, b.target.block, a.target.height
                ));
            }
            let nested = |o: &SupermajorityLink, n: &SupermajorityLink| {
                o.source.height < n.source.height && n.target.height < o.target.height
            };
            if nested(a, b) || nested(b, a) {
                return Err(format!(
                    "nested links {}->{} and {}->{}",
                    a.source.height, a.target.height, b.source.height, b.target.height
                ));
            }
        }
    }
    let mut per_height: BTreeMap<u64, BlockId> = BTreeMap::new();
    for c in state.justified() {
        if let Some(prev) = per_height.insert(c.height, c.block) {
            if prev != c.block {
                return Err(format!("two justified checkpoints at height {}", c.height));
            }
        }
    }
    Ok(())
}

/// Conflicting pairs among `cps`.
pub fn conflicting_pairs(tree: &BlockTree, cps: &BTreeSet<Checkpoint>) -> Vec<(Checkpoint, Checkpoint)> {
    let list: Vec<&Checkpoint> = cps.iter().collect();
    let mut out = Vec::new();
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            if tree.conflicting(a, b).unwrap_or(false) {
                out.push((**a, **b));
            }
        }
    }
    out
}

const MAX_AUDITS: usize = 4;

/// Builds the report for a finished world.
pub fn assemble(
    world: &mut World,
    outcome: Option<ScenarioOutcome>,
    mut heuristics: BTreeSet<String>,
    extra: Vec<InvariantCheck>,
) -> RunReport {
    for c in 0..world.clients.len() {
        world.refresh(c);
    }
    let global = FinalityState::evaluate(&world.tree, &world.pool, &world.keyring, &world.genesis, &world.finality);
    let cfg = world.cfg.clone();

    let mut clients = Vec::new();
    let mut seen_finalized = BTreeSet::new();
    let mut heard: BTreeMap<ValidatorId, u64> = BTreeMap::new();
    for c in &world.clients {
        let view = &c.view;
        let state = view.state().expect("refreshed above");
        let head = view.head();
        let reg = state.registry_at_leaf(&head).cloned().unwrap_or_else(|| world.genesis.clone());
        let mut justified: Vec<Checkpoint> = state.justified().to_vec();
        justified.sort();
        seen_finalized.extend(view.finalized_checkpoints().iter().copied());
        if view.ignored_conflicts() > 0 {
            heuristics.insert("first_seen_preference_ignored_a_conflicting_finalization".into());
        }
        for (viol, t) in view.heard_violations() {
            let e = heard.entry(viol.validator).or_insert(*t);
            *e = (*e).min(*t);
        }
        let mut finalized_on_head = state.finalized_on_chain(view.tree(), &head);
        finalized_on_head.retain(|f| view.finalized_checkpoints().contains(f) || f.height == 0);
        clients.push(ClientReport {
            client: view.id,
            group: c.group,
            head,
            head_height: view.tree().block_height(&head).unwrap_or(0),
            justified,
            finalized: view.first_seen_finalized().map(|(f, _)| f).collect(),
            finalized_on_head,
            rejected_blocks: view.rejected().len(),
            head_registry: reg.records().cloned().collect(),
            burned: reg.burned,
            escrowed: reg.escrowed,
        });
    }

    let conflicts = conflicting_pairs(&world.tree, &seen_finalized);
    let violations = scan(&world.pool);
    let scan_violators: BTreeSet<ValidatorId> = violations.iter().map(|v| v.validator).collect();

    let mut audits = Vec::new();
    for (a, b) in conflicts.iter().take(MAX_AUDITS) {
        let summary = match safety_audit(&world.tree, &world.pool, &global, *a, *b, &world.genesis) {
            Ok(r) => AuditSummary {
                a: *a,
                b: *b,
                violators: r.violators.keys().copied().collect(),
                violator_weight: r.violator_weight,
                reference_total: r.reference_total,
                meets_bound: r.meets_bound(),
                matches_scan: r.violators.keys().all(|v| scan_violators.contains(v))
                    && r.violators.values().all(Violation::holds),
                error: None,
            },
            Err(e) => AuditSummary {
                a: *a,
                b: *b,
                violators: vec![],
                violator_weight: 0,
                reference_total: 0,
                meets_bound: false,
                matches_scan: false,
                error: Some(e.to_string()),
            },
        };
        audits.push(summary);
    }

    let mut slashings = Vec::new();
    let mut first_kind: BTreeMap<ValidatorId, ViolationKind> = BTreeMap::new();
    for v in &violations {
        first_kind.entry(v.validator).or_insert(v.kind);
    }
    for (v, kind) in &first_kind {
        let mut evidence_blocks: Vec<BlockId> = world
            .blocks
            .iter()
            .filter(|b| global.block_info(&b.id).is_some_and(|i| i.slashed.contains(v)))
            .map(|b| b.id)
            .collect();
        evidence_blocks.sort();
        slashings.push(SlashRecord {
            validator: *v,
            kind: *kind,
            heard_at: heard.get(v).copied(),
            evidence_blocks,
        });
    }

    // Invariants.
    let total = cfg.genesis_weight();
    let adversary = cfg.adversary_weight();
    let static_set = cfg.schedule.is_empty() && cfg.validators.iter().all(|v| v.genesis);
    let slashable: u64 = scan_violators.iter().map(|v| world.genesis.weight_of(*v)).sum();
    let mut invariants = Vec::new();
    invariants.push(check(
        "safety",
        !one_third(adversary, total),
        conflicts.is_empty(),
        format!(
            "{} conflicting finalized pairs; adversary weight {}",
            conflicts.len(),
            Fraction::new(adversary, total)
        ),
    ));
    invariants.push(check(
        "accountable_safety",
        !conflicts.is_empty(),
        audits.iter().all(|a| a.meets_bound && a.matches_scan),
        match audits.first() {
            Some(a) if a.violators.is_empty() => {
                "conflicting finalization with no slashable validator".to_string()
            }
            Some(a) => format!(
                "violator weight {}/{}",
                a.violator_weight, a.reference_total
            ),
            None => "no conflict".into(),
        },
    ));
    let props = link_properties(&global);
    invariants.push(check(
        "link_properties",
        static_set && !one_third(slashable, total),
        props.is_ok(),
        props.err().unwrap_or_else(|| format!("slashable weight {}", Fraction::new(slashable, total))),
    ));
    let bad_compliant: Vec<ValidatorId> = scan_violators
        .iter()
        .copied()
        .filter(|v| cfg.behavior_of(*v).is_compliant())
        .collect();
    invariants.push(check(
        "compliant_never_slashable",
        true,
        bad_compliant.is_empty(),
        format!("{bad_compliant:?}"),
    ));
    invariants.push(check("monotone_views", true, world.monotone, ""));
    invariants.push(check(
        "delivery_bound",
        cfg.partition.is_none(),
        world.max_delay <= cfg.delta,
        format!("max delay {} ticks", world.max_delay),
    ));

    invariants.extend(extra);

    let established_from_unjustified = world
        .tree
        .blocks()
        .filter_map(|b| global.checkpoint_info(&b.id))
        .flat_map(|i| i.links_in.iter())
        .any(|l| l.established && !global.is_justified(&l.source.block));
    if established_from_unjustified {
        heuristics.insert("supermajority_link_from_unjustified_source".into());
    }

    let mut justified = global.justified().to_vec();
    justified.sort();
    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        clients,
        justified,
        finalized: global.finalized().into_iter().collect(),
        conflicts,
        audits,
        violations,
        slashings,
        invariants,
        heuristics: heuristics.into_iter().collect(),
        outcome,
        trace: Trace {
            blocks: world.blocks.clone(),
            votes: world.pool.votes().to_vec(),
        },
        trace_digest: world.trace_digest(),
        digest: String::new(),
    };
    report.digest = report.compute_digest();
    report
}
