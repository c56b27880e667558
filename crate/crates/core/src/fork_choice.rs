//! Client-side chain selection.
//!
//! A [`ClientView`] filters incoming blocks by timestamp and by slashing
//! evidence it has heard of, remembers the first finalized checkpoint it saw
//! at every height, and follows the chain containing the justified
//! checkpoint of greatest height among chains that revert nothing it has
//! seen finalized.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::chain::{Block, BlockId, BlockTree, ChainError, Checkpoint, Transaction};
use crate::finality::{FinalityConfig, FinalityState};
use crate::slashing::{check_pair, Violation};
use crate::validators::{Registry, ValidatorId};
use crate::votes::{Keyring, Vote, VotePool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForkChoiceRule {
    /// Follow the chain containing the justified checkpoint of greatest height.
    #[default]
    JustifiedHeight,
    /// Plain longest chain, ignoring finality; kept as a baseline.
    LongestChain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admissibility {
    Accept,
    /// Part of the chain, but never treated as finalizing anything.
    AcceptNotFinalizable,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    FutureTimestamp,
    MissingEvidence(ValidatorId),
    RejectedAncestor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiveOutcome {
    Inserted(Admissibility),
    Buffered,
    Duplicate,
    Rejected(RejectReason),
}

#[derive(Debug, Clone)]
pub struct ClientView {
    pub id: usize,
    pub rule: ForkChoiceRule,
    /// Maximum communication delay δ, in ticks.
    pub delta: u64,
    clock: u64,
    tree: BlockTree,
    pool: VotePool,
    receipt: HashMap<BlockId, u64>,
    orphans: HashMap<BlockId, Vec<Block>>,
    rejected: HashMap<BlockId, RejectReason>,
    not_finalizable: HashSet<BlockId>,
    first_seen_finalized: BTreeMap<u64, (Checkpoint, u64)>,
    finalized: BTreeSet<Checkpoint>,
    ignored_conflicts: u64,
    heard: BTreeMap<ValidatorId, (Violation, u64)>,
    state: Option<FinalityState>,
}

impl ClientView {
    pub fn new(id: usize, spacing: u64, delta: u64, rule: ForkChoiceRule) -> Result<ClientView, ChainError> {
        let mut receipt = HashMap::new();
        receipt.insert(BlockId::GENESIS, 0);
        Ok(ClientView {
            id,
            rule,
            delta,
            clock: 0,
            tree: BlockTree::new(spacing)?,
            pool: VotePool::new(),
            receipt,
            orphans: HashMap::new(),
            rejected: HashMap::new(),
            not_finalizable: HashSet::new(),
            first_seen_finalized: BTreeMap::new(),
            finalized: BTreeSet::new(),
            ignored_conflicts: 0,
            heard: BTreeMap::new(),
            state: None,
        })
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn set_clock(&mut self, now: u64) {
        debug_assert!(now >= self.clock, "receipt times must not decrease");
        self.clock = self.clock.max(now);
    }

    pub fn tree(&self) -> &BlockTree {
        &self.tree
    }

    pub fn pool(&self) -> &VotePool {
        &self.pool
    }

    pub fn receipt_time(&self, id: &BlockId) -> Option<u64> {
        self.receipt.get(id).copied()
    }

    pub fn rejected(&self) -> &HashMap<BlockId, RejectReason> {
        &self.rejected
    }

    pub fn heard_violations(&self) -> impl Iterator<Item = &(Violation, u64)> {
        self.heard.values()
    }

    pub fn first_heard(&self, v: ValidatorId) -> Option<u64> {
        self.heard.get(&v).map(|(_, t)| *t)
    }

    /// First finalized checkpoint seen at each height, with the time seen.
    pub fn first_seen_finalized(&self) -> impl Iterator<Item = (Checkpoint, u64)> + '_ {
        self.first_seen_finalized.values().copied()
    }

    /// Every checkpoint this view has seen finalized on a finalizable chain,
    /// including ones the first-seen rule ignores.
    pub fn finalized_checkpoints(&self) -> &BTreeSet<Checkpoint> {
        &self.finalized
    }

    /// Finalized checkpoints ignored because they conflict with an earlier one.
    pub fn ignored_conflicts(&self) -> u64 {
        self.ignored_conflicts
    }

    /// Whether the chain ending at `parent`, extended by `payload`, carries
    /// evidence against `v`.
    fn chain_has_evidence(&self, parent: &BlockId, payload: &[Transaction], v: ValidatorId) -> bool {
        let against = |tx: &Transaction| matches!(tx, Transaction::SlashEvidence(a, _) if a.validator == v);
        if payload.iter().any(against) {
            return true;
        }
        let Ok(path) = self.tree.path_to(parent) else {
            return false;
        };
        path.iter()
            .filter_map(|id| self.tree.get(id).ok())
            .any(|b| b.payload.iter().any(against))
    }

    /// Classifies `block` against the local clock and heard violations.
    /// The parent must already be in the view.
    pub fn admissible(&self, block: &Block) -> (Admissibility, Option<RejectReason>) {
        if block.timestamp > self.clock {
            return (Admissibility::Reject, Some(RejectReason::FutureTimestamp));
        }
        let parent = block.parent.unwrap_or(BlockId::GENESIS);
        if self.rejected.contains_key(&parent) {
            return (Admissibility::Reject, Some(RejectReason::RejectedAncestor));
        }
        for (v, (_, heard_at)) in &self.heard {
            if block.timestamp > heard_at + 2 * self.delta
                && !self.chain_has_evidence(&parent, &block.payload, *v)
            {
                return (Admissibility::Reject, Some(RejectReason::MissingEvidence(*v)));
            }
        }
        if block.timestamp + self.delta < self.clock {
            return (Admissibility::AcceptNotFinalizable, None);
        }
        (Admissibility::Accept, None)
    }

    pub fn receive_block(&mut self, block: Block, now: u64) -> ReceiveOutcome {
        self.set_clock(now);
        if self.tree.contains(&block.id) || self.rejected.contains_key(&block.id) {
            return ReceiveOutcome::Duplicate;
        }
        let parent = block.parent.unwrap_or(BlockId::GENESIS);
        if self.rejected.contains_key(&parent) {
            self.reject_subtree(block, RejectReason::RejectedAncestor);
            return ReceiveOutcome::Rejected(RejectReason::RejectedAncestor);
        }
        if !self.tree.contains(&parent) {
            self.orphans.entry(parent).or_default().push(block);
            return ReceiveOutcome::Buffered;
        }
        self.attach(block, now)
    }

    fn reject_subtree(&mut self, block: Block, reason: RejectReason) {
        let id = block.id;
        self.rejected.insert(id, reason);
        if let Some(children) = self.orphans.remove(&id) {
            for c in children {
                self.reject_subtree(c, RejectReason::RejectedAncestor);
            }
        }
    }

    fn attach(&mut self, block: Block, now: u64) -> ReceiveOutcome {
        let (class, reason) = self.admissible(&block);
        let id = block.id;
        if class == Admissibility::Reject {
            self.reject_subtree(block, reason.unwrap_or(RejectReason::RejectedAncestor));
            return ReceiveOutcome::Rejected(reason.unwrap_or(RejectReason::RejectedAncestor));
        }
        if self.tree.insert_block(block).is_err() {
            return ReceiveOutcome::Duplicate;
        }
        self.receipt.insert(id, now);
        if class == Admissibility::AcceptNotFinalizable {
            self.not_finalizable.insert(id);
        }
        self.state = None;
        if let Some(children) = self.orphans.remove(&id) {
            for c in children {
                self.attach(c, now);
            }
        }
        ReceiveOutcome::Inserted(class)
    }

    /// Adds a gossiped vote; returns a violation if this vote completes one
    /// for a validator not heard of before.
    pub fn receive_vote(&mut self, keyring: &Keyring, vote: Vote, now: u64) -> Option<Violation> {
        self.set_clock(now);
        let prior: Vec<Vote> = self.pool.by_validator(vote.validator).cloned().collect();
        match self.pool.add_vote(keyring, vote.clone()) {
            Ok(true) => {}
            _ => return None,
        }
        self.state = None;
        if self.heard.contains_key(&vote.validator) {
            return None;
        }
        let violation = prior
            .iter()
            .find_map(|p| check_pair(p, &vote).ok().flatten())?;
        self.heard.insert(vote.validator, (violation.clone(), now));
        Some(violation)
    }

    /// Records `c` as finalized unless a checkpoint at its height was seen
    /// first or it conflicts with one already recorded.
    pub fn on_finalized(&mut self, c: Checkpoint, now: u64) -> bool {
        if self.first_seen_finalized.contains_key(&c.height) {
            return false;
        }
        let conflicts = self
            .first_seen_finalized
            .values()
            .any(|(seen, _)| self.tree.conflicting(seen, &c).unwrap_or(true));
        if conflicts {
            return false;
        }
        self.first_seen_finalized.insert(c.height, (c, now));
        true
    }

    /// Re-evaluates finality if anything arrived since the last call and
    /// records newly finalized checkpoints in first-seen order.
    pub fn refresh(&mut self, keyring: &Keyring, genesis: &Registry, cfg: &FinalityConfig) -> &FinalityState {
        if self.state.is_none() {
            let state = FinalityState::evaluate(&self.tree, &self.pool, keyring, genesis, cfg);
            let mut fresh: Vec<(u64, u64, Checkpoint)> = state
                .finalizations()
                .iter()
                .filter(|f| {
                    !self.not_finalizable.contains(&f.at_block)
                        && !self.not_finalizable.contains(&f.child.block)
                })
                .map(|f| {
                    let t = self.receipt.get(&f.at_block).copied().unwrap_or(self.clock);
                    (t, f.checkpoint.height, f.checkpoint)
                })
                .collect();
            fresh.sort();
            let now = self.clock;
            for (_, _, c) in fresh {
                if self.finalized.insert(c) && !self.on_finalized(c, now) {
                    let same = self.first_seen_finalized.get(&c.height).is_some_and(|(s, _)| *s == c);
                    if !same {
                        self.ignored_conflicts += 1;
                    }
                }
            }
            self.state = Some(state);
        }
        self.state.as_ref().expect("just computed")
    }

    pub fn state(&self) -> Option<&FinalityState> {
        self.state.as_ref()
    }

    /// Chain head under this view's rule. Call [`ClientView::refresh`] first.
    pub fn head(&self) -> BlockId {
        match (self.rule, self.state.as_ref()) {
            (ForkChoiceRule::LongestChain, _) | (_, None) => longest_leaf(&self.tree, self.tree.leaves()),
            (ForkChoiceRule::JustifiedHeight, Some(state)) => self.justified_head(state),
        }
    }

    fn reverts_nothing(&self, leaf: &BlockId) -> bool {
        self.first_seen_finalized
            .values()
            .all(|(c, _)| self.tree.is_ancestor(&c.block, leaf).unwrap_or(false))
    }

    fn justified_head(&self, state: &FinalityState) -> BlockId {
        let leaves: Vec<BlockId> = self
            .tree
            .leaves()
            .into_iter()
            .filter(|l| self.reverts_nothing(l))
            .collect();
        if leaves.is_empty() {
            return self
                .first_seen_finalized
                .values()
                .last()
                .map_or(BlockId::GENESIS, |(c, _)| c.block);
        }
        // Best justified checkpoint: height desc, receipt asc, id asc.
        let best = leaves
            .iter()
            .map(|l| state.highest_justified_on_chain(&self.tree, l))
            .min_by_key(|j| {
                (
                    std::cmp::Reverse(j.height),
                    self.receipt.get(&j.block).copied().unwrap_or(u64::MAX),
                    j.block,
                )
            })
            .expect("non-empty");
        let under: Vec<BlockId> = leaves
            .into_iter()
            .filter(|l| self.tree.is_ancestor(&best.block, l).unwrap_or(false))
            .collect();
        longest_leaf(&self.tree, under)
    }
}

/// Leaf with the most blocks; ties go to the lowest id.
pub fn longest_leaf(tree: &BlockTree, leaves: Vec<BlockId>) -> BlockId {
    leaves
        .into_iter()
        .min_by_key(|l| (std::cmp::Reverse(tree.block_height(l).unwrap_or(0)), *l))
        .unwrap_or(BlockId::GENESIS)
}
