//! Supermajority links, justification and finalization for one client view.
//!
//! A view is a block tree plus the votes the client has received. Evaluation
//! walks the tree depth-first from the root, carrying the chain-local state
//! every block inherits from its ancestors:
//!
//! * the validator registry (deposits, withdrawals, slashing evidence and
//!   inactivity leak included on that chain),
//! * the dynasty, i.e. the number of checkpoints finalized on the chain up to
//!   the block's parent,
//! * which votes have been included on the chain.
//!
//! Justification is computed from the gossip pool: a checkpoint `t` is
//! justified when some justified ancestor `s` has a supermajority link
//! `s → t`. Weights come from the registry snapshot at `t`, and a link needs
//! two-thirds of the forward set of `t`'s dynasty and, with stitching
//! enabled, two-thirds of the rear set as well.
//!
//! Finalization is chain-local. A justified checkpoint `c` with direct child
//! checkpoint `c'` is finalized on a chain once the votes of the link
//! `c → c'` and of a link justifying `c` are included on that chain, counted
//! only from blocks up to the end of `c'`'s epoch (the last block before the
//! next checkpoint).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Block, BlockId, BlockTree, ChainError, Checkpoint, Proposer, Transaction};
use crate::leak::{apply_epoch_leak, LeakConfig};
use crate::slashing::{apply_slash, check_pair, DEFAULT_FINDER_FEE};
use crate::validators::{Registry, ValidatorId};
use crate::votes::{Keyring, Vote, VotePool};
use crate::{two_thirds, Fraction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FinalityError {
    #[error("{0} is not a known checkpoint of this view")]
    UnknownCheckpoint(BlockId),
    #[error("{from} is not an ancestor of {to}")]
    NotAncestor { from: Checkpoint, to: Checkpoint },
    #[error("no checkpoint chain extends to height {needed_height}; grow the tree first")]
    NoExtension { needed_height: u64 },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalityConfig {
    /// Require two-thirds of both the forward and the rear set.
    pub stitching: bool,
    pub leak: Option<LeakConfig>,
    pub finder_fee: Fraction,
}

impl Default for FinalityConfig {
    fn default() -> Self {
        FinalityConfig {
            stitching: true,
            leak: None,
            finder_fee: DEFAULT_FINDER_FEE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupermajorityLink {
    pub source: Checkpoint,
    pub target: Checkpoint,
    /// Dynasty of the target on its chain.
    pub dynasty: u64,
    pub forward_weight: u64,
    pub forward_total: u64,
    pub rear_weight: u64,
    pub rear_total: u64,
    /// Counted voters (members of the forward or rear set).
    pub voters: BTreeSet<ValidatorId>,
    pub established: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finalization {
    pub checkpoint: Checkpoint,
    pub child: Checkpoint,
    /// Block at which the inclusion requirement was first met.
    pub at_block: BlockId,
    /// Included-vote link justifying `checkpoint`.
    pub justifying: SupermajorityLink,
    /// Included-vote link `checkpoint → child`.
    pub finalizing: SupermajorityLink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointInfo {
    pub checkpoint: Checkpoint,
    pub dynasty: u64,
    /// Registry at the start of this checkpoint's epoch on its chain.
    pub registry: Registry,
    pub justified: bool,
    /// First established link from a justified source, in source order.
    pub justifying: Option<SupermajorityLink>,
    /// Every tallied link into this checkpoint from an ancestor.
    pub links_in: Vec<SupermajorityLink>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockInfo {
    pub dynasty: u64,
    /// Checkpoints finalized on this chain up to and including this block.
    pub finalized_count: u64,
    pub payouts: Vec<(ValidatorId, u64)>,
    pub slashed: Vec<ValidatorId>,
    pub leaked: u64,
}

#[derive(Debug, Clone)]
struct Walk {
    registry: Registry,
    dynasty: u64,
    path_cps: Vec<BlockId>,
    finalized: Vec<Checkpoint>,
    pending: Vec<(Checkpoint, Checkpoint)>,
    included: HashMap<(BlockId, BlockId), BTreeSet<ValidatorId>>,
    epoch_voters: BTreeMap<u64, BTreeSet<ValidatorId>>,
}

impl Walk {
    fn on_path(&self, id: &BlockId, cp_height: u64) -> bool {
        self.path_cps.get(cp_height as usize) == Some(id)
    }
}

/// Justified and finalized checkpoints of one view.
#[derive(Debug, Clone)]
pub struct FinalityState {
    config: FinalityConfig,
    spacing: u64,
    blocks: HashMap<BlockId, BlockInfo>,
    checkpoints: HashMap<BlockId, CheckpointInfo>,
    justified_order: Vec<Checkpoint>,
    finalizations: Vec<Finalization>,
    leaf_registries: HashMap<BlockId, Registry>,
}

fn tally_link(
    info: &CheckpointInfo,
    source: Checkpoint,
    voters: impl IntoIterator<Item = ValidatorId>,
    stitching: bool,
) -> SupermajorityLink {
    let d = info.dynasty;
    let reg = &info.registry;
    let mut link = SupermajorityLink {
        source,
        target: info.checkpoint,
        dynasty: d,
        forward_weight: 0,
        forward_total: 0,
        rear_weight: 0,
        rear_total: 0,
        voters: BTreeSet::new(),
        established: false,
    };
    for rec in reg.records() {
        if rec.in_forward_set(d) {
            link.forward_total += rec.weight();
        }
        if rec.in_rear_set(d) {
            link.rear_total += rec.weight();
        }
    }
    for v in voters {
        let Ok(rec) = reg.get(v) else { continue };
        let fwd = rec.in_forward_set(d);
        let rear = rec.in_rear_set(d);
        if !(fwd || rear) || !link.voters.insert(v) {
            continue;
        }
        if fwd {
            link.forward_weight += rec.weight();
        }
        if rear {
            link.rear_weight += rec.weight();
        }
    }
    let forward_ok = link.forward_total > 0 && two_thirds(link.forward_weight, link.forward_total);
    let rear_ok = !stitching || (link.rear_total > 0 && two_thirds(link.rear_weight, link.rear_total));
    link.established = forward_ok && rear_ok;
    link
}

impl FinalityState {
    /// Evaluates the whole view. Justified and finalized sets for a tree and
    /// pool only grow as either grows.
    pub fn evaluate(
        tree: &BlockTree,
        pool: &VotePool,
        keyring: &Keyring,
        genesis: &Registry,
        config: &FinalityConfig,
    ) -> FinalityState {
        let spacing = tree.spacing();
        let mut state = FinalityState {
            config: config.clone(),
            spacing,
            blocks: HashMap::with_capacity(tree.len()),
            checkpoints: HashMap::new(),
            justified_order: Vec::new(),
            finalizations: Vec::new(),
            leaf_registries: HashMap::new(),
        };

        // target -> sources, sorted by (height, id) for a stable evaluation order.
        let mut sources_by_target: HashMap<BlockId, Vec<(u64, BlockId)>> = HashMap::new();
        for (s, t) in pool.links() {
            if let Ok(Some(hs)) = tree.checkpoint_height(s) {
                sources_by_target.entry(*t).or_default().push((hs, *s));
            }
        }
        for v in sources_by_target.values_mut() {
            v.sort();
            v.dedup();
        }

        let root_walk = Walk {
            registry: genesis.clone(),
            dynasty: 0,
            path_cps: Vec::new(),
            finalized: Vec::new(),
            pending: Vec::new(),
            included: HashMap::new(),
            epoch_voters: BTreeMap::new(),
        };
        let mut stack: Vec<(BlockId, Walk)> = vec![(tree.root(), root_walk)];
        while let Some((id, mut walk)) = stack.pop() {
            let block = tree.get(&id).expect("walked blocks exist");
            state.visit(pool, keyring, &sources_by_target, block, &mut walk);
            let children = tree.children(&id);
            match children.len() {
                0 => {
                    state.leaf_registries.insert(id, walk.registry);
                }
                n => {
                    // Reverse push keeps children visited in insertion order.
                    for child in children[1..n].iter().rev() {
                        stack.push((*child, walk.clone()));
                    }
                    stack.push((children[0], walk));
                }
            }
        }
        state
    }

    fn visit(
        &mut self,
        pool: &VotePool,
        keyring: &Keyring,
        sources_by_target: &HashMap<BlockId, Vec<(u64, BlockId)>>,
        block: &Block,
        walk: &mut Walk,
    ) {
        let e = self.spacing;
        let height = block.block_height;
        let epoch = height / e;
        let mut info = BlockInfo::default();

        let dynasty = if block.is_genesis() {
            0
        } else {
            walk.finalized.len() as u64
        };
        if dynasty > walk.dynasty {
            walk.registry.anchor_withdrawals(dynasty, epoch);
        }
        walk.dynasty = dynasty;
        info.dynasty = dynasty;

        let is_checkpoint = height.is_multiple_of(e);
        if is_checkpoint {
            let k = epoch;
            walk.path_cps.push(block.id);
            debug_assert_eq!(walk.path_cps.len() as u64, k + 1);
            if let (Some(leak), true) = (self.config.leak.as_ref(), k >= 2) {
                info.leaked = self.leak_epoch(walk, leak, k - 1);
            }
            let cp = Checkpoint {
                block: block.id,
                height: k,
            };
            let mut cp_info = CheckpointInfo {
                checkpoint: cp,
                dynasty,
                registry: walk.registry.clone(),
                justified: block.is_genesis(),
                justifying: None,
                links_in: Vec::new(),
            };
            if let Some(sources) = sources_by_target.get(&block.id) {
                for &(hs, s) in sources {
                    if hs >= k || !walk.on_path(&s, hs) {
                        continue;
                    }
                    let voters = pool
                        .for_link(&s, &block.id)
                        .filter(|v| v.source_height == hs && v.target_height == k)
                        .map(|v| v.validator);
                    let source = Checkpoint { block: s, height: hs };
                    let link = tally_link(&cp_info, source, voters, self.config.stitching);
                    let source_justified = self.checkpoints.get(&s).is_some_and(|c| c.justified);
                    if link.established && source_justified && !cp_info.justified {
                        cp_info.justified = true;
                        cp_info.justifying = Some(link.clone());
                    }
                    cp_info.links_in.push(link);
                }
            }
            if cp_info.justified {
                self.justified_order.push(cp);
            }
            self.checkpoints.insert(block.id, cp_info);
        }

        // Release deposits whose withdrawal delay has passed.
        let due: Vec<ValidatorId> = walk
            .registry
            .records()
            .filter(|r| {
                !r.slashed && !r.withdrawn && r.withdrawal_unlock_epoch.is_some_and(|u| epoch >= u)
            })
            .map(|r| r.id)
            .collect();
        for v in due {
            if let Ok(amount) = walk.registry.complete_withdrawal(v, epoch) {
                info.payouts.push((v, amount));
            }
        }

        let mut saw_inclusion = false;
        for tx in &block.payload {
            match tx {
                Transaction::VoteInclusion(vote) => {
                    if self.include_vote(pool, keyring, walk, vote) {
                        saw_inclusion = true;
                    }
                }
                Transaction::Deposit(v, amount) => {
                    let _ = walk.registry.process_deposit(*v, *amount, dynasty);
                }
                Transaction::Withdraw(v) => {
                    let _ = walk.registry.process_withdraw(*v, dynasty);
                }
                Transaction::SlashEvidence(a, b) => {
                    let verified = |v: &Vote| pool.contains(v) || keyring.verify(v);
                    if !(verified(a) && verified(b)) {
                        continue;
                    }
                    if let Ok(Some(violation)) = check_pair(a, b) {
                        let finder = match block.proposer {
                            Proposer::Validator(p) => Some(p),
                            Proposer::External => None,
                        };
                        if apply_slash(&mut walk.registry, &violation, finder, self.config.finder_fee)
                            .is_ok()
                        {
                            info.slashed.push(violation.validator);
                        }
                    }
                }
            }
        }

        if block.is_genesis() {
            walk.finalized.push(Checkpoint::genesis());
        } else {
            if is_checkpoint {
                let k = epoch;
                let parent_cp = walk.path_cps[(k - 1) as usize];
                // The root is finalized from the start.
                if k >= 2 && self.checkpoints[&parent_cp].justified {
                    walk.pending.push((
                        Checkpoint {
                            block: parent_cp,
                            height: k - 1,
                        },
                        Checkpoint {
                            block: block.id,
                            height: k,
                        },
                    ));
                }
            }
            if is_checkpoint || saw_inclusion {
                self.try_finalize(walk, block.id);
            }
            // Inclusions after the end of the child's epoch do not count.
            walk.pending
                .retain(|(_, child)| height < (child.height + 1) * e - 1);
        }
        info.finalized_count = walk.finalized.len() as u64;
        self.blocks.insert(block.id, info);
    }

    fn leak_epoch(&self, walk: &mut Walk, leak: &LeakConfig, epoch: u64) -> u64 {
        let cp = walk.path_cps[epoch as usize];
        let d = self.checkpoints[&cp].dynasty;
        let active = walk.registry.forward_set(d);
        let voted = walk.epoch_voters.get(&epoch).cloned().unwrap_or_default();
        let last_final = walk.finalized.last().map_or(0, |c| c.height);
        let streak = epoch.saturating_sub(last_final + 1);
        apply_epoch_leak(&mut walk.registry, &active, &voted, leak, streak)
    }

    fn include_vote(&self, pool: &VotePool, keyring: &Keyring, walk: &mut Walk, vote: &Vote) -> bool {
        if vote.source_height >= vote.target_height
            || !walk.on_path(&vote.source, vote.source_height)
            || !walk.on_path(&vote.target, vote.target_height)
        {
            return false;
        }
        if !(pool.contains(vote) || keyring.verify(vote)) {
            return false;
        }
        walk.included
            .entry((vote.source, vote.target))
            .or_default()
            .insert(vote.validator);
        walk.epoch_voters
            .entry(vote.target_height)
            .or_default()
            .insert(vote.validator);
        true
    }

    fn included_link(&self, walk: &Walk, source: Checkpoint, target: Checkpoint) -> Option<SupermajorityLink> {
        let voters = walk.included.get(&(source.block, target.block))?;
        let info = self.checkpoints.get(&target.block)?;
        Some(tally_link(info, source, voters.iter().copied(), self.config.stitching))
    }

    fn try_finalize(&mut self, walk: &mut Walk, at: BlockId) {
        let mut done = Vec::new();
        for (idx, &(c, child)) in walk.pending.iter().enumerate() {
            let Some(finalizing) = self.included_link(walk, c, child).filter(|l| l.established) else {
                continue;
            };
            let justifying = (0..c.height).find_map(|hs| {
                let s = Checkpoint {
                    block: walk.path_cps[hs as usize],
                    height: hs,
                };
                if !self.checkpoints[&s.block].justified {
                    return None;
                }
                self.included_link(walk, s, c).filter(|l| l.established)
            });
            let Some(justifying) = justifying else {
                continue;
            };
            walk.finalized.push(c);
            self.finalizations.push(Finalization {
                checkpoint: c,
                child,
                at_block: at,
                justifying,
                finalizing,
            });
            done.push(idx);
        }
        for idx in done.into_iter().rev() {
            walk.pending.remove(idx);
        }
    }

    pub fn config(&self) -> &FinalityConfig {
        &self.config
    }

    pub fn block_info(&self, id: &BlockId) -> Option<&BlockInfo> {
        self.blocks.get(id)
    }

    pub fn dynasty_of(&self, id: &BlockId) -> Option<u64> {
        self.blocks.get(id).map(|b| b.dynasty)
    }

    pub fn checkpoint_info(&self, id: &BlockId) -> Option<&CheckpointInfo> {
        self.checkpoints.get(id)
    }

    pub fn checkpoint_infos(&self) -> impl Iterator<Item = &CheckpointInfo> {
        self.checkpoints.values()
    }

    pub fn is_justified(&self, id: &BlockId) -> bool {
        self.checkpoints.get(id).is_some_and(|c| c.justified)
    }

    /// Justified checkpoints in evaluation order (root first).
    pub fn justified(&self) -> &[Checkpoint] {
        &self.justified_order
    }

    /// Every finalization event, on every chain of the view.
    pub fn finalizations(&self) -> &[Finalization] {
        &self.finalizations
    }

    pub fn finalization_of(&self, c: &Checkpoint) -> Option<&Finalization> {
        self.finalizations.iter().find(|f| f.checkpoint == *c)
    }

    /// Checkpoints finalized on at least one chain, root included.
    pub fn finalized(&self) -> BTreeSet<Checkpoint> {
        std::iter::once(Checkpoint::genesis())
            .chain(self.finalizations.iter().map(|f| f.checkpoint))
            .collect()
    }

    pub fn is_finalized(&self, c: &Checkpoint) -> bool {
        c.height == 0 && c.block == BlockId::GENESIS || self.finalization_of(c).is_some()
    }

    /// Checkpoints finalized on the chain ending at `tip`, by height.
    pub fn finalized_on_chain(&self, tree: &BlockTree, tip: &BlockId) -> Vec<Checkpoint> {
        let mut out: Vec<Checkpoint> = self
            .finalizations
            .iter()
            .filter(|f| tree.is_ancestor(&f.at_block, tip).unwrap_or(false))
            .map(|f| f.checkpoint)
            .collect();
        out.push(Checkpoint::genesis());
        out.sort_by_key(|c| c.height);
        out.dedup();
        out
    }

    /// Justified checkpoint of greatest height; ties go to the lowest id.
    pub fn highest_justified(&self) -> Checkpoint {
        self.justified_order
            .iter()
            .copied()
            .max_by(|a, b| a.height.cmp(&b.height).then(b.block.cmp(&a.block)))
            .unwrap_or_else(Checkpoint::genesis)
    }

    /// Highest justified checkpoint that is an ancestor of (or equal to) `tip`.
    pub fn highest_justified_on_chain(&self, tree: &BlockTree, tip: &BlockId) -> Checkpoint {
        let Ok(chain) = tree.checkpoint_chain_through(tip) else {
            return Checkpoint::genesis();
        };
        chain
            .into_iter()
            .rev()
            .find(|c| self.is_justified(&c.block))
            .unwrap_or_else(Checkpoint::genesis)
    }

    /// Registry at the end of the chain ending in leaf `tip`.
    pub fn registry_at_leaf(&self, tip: &BlockId) -> Option<&Registry> {
        self.leaf_registries.get(tip)
    }

    pub fn leaf_registries(&self) -> impl Iterator<Item = (&BlockId, &Registry)> {
        self.leaf_registries.iter()
    }

    /// Established links tallied from the gossip pool.
    pub fn established_links(&self) -> impl Iterator<Item = &SupermajorityLink> {
        self.checkpoints
            .values()
            .flat_map(|c| c.links_in.iter())
            .filter(|l| l.established)
    }

    /// Gossip tally for `s → t`.
    pub fn tally(
        &self,
        tree: &BlockTree,
        pool: &VotePool,
        s: &BlockId,
        t: &BlockId,
    ) -> Result<SupermajorityLink, FinalityError> {
        let info = self
            .checkpoints
            .get(t)
            .ok_or(FinalityError::UnknownCheckpoint(*t))?;
        let source = self
            .checkpoints
            .get(s)
            .ok_or(FinalityError::UnknownCheckpoint(*s))?
            .checkpoint;
        if source.height >= info.checkpoint.height || !tree.is_ancestor(s, t)? {
            return Err(FinalityError::NotAncestor {
                from: source,
                to: info.checkpoint,
            });
        }
        let voters = pool
            .for_link(s, t)
            .filter(|v| v.source_height == source.height && v.target_height == info.checkpoint.height)
            .map(|v| v.validator);
        Ok(tally_link(info, source, voters, self.config.stitching))
    }

    /// Links from `c` back to the root, each justifying the previous one's source.
    pub fn justification_chain(&self, c: &Checkpoint) -> Vec<SupermajorityLink> {
        let mut out = Vec::new();
        let mut cur = c.block;
        while let Some(link) = self.checkpoints.get(&cur).and_then(|i| i.justifying.as_ref()) {
            out.push(link.clone());
            cur = link.source.block;
        }
        out
    }

    /// Votes that let compliant validators finalize a new checkpoint: justify
    /// a descendant `a'` of the highest justified checkpoint `a` at height
    /// `h(b) + 1`, where `b` is the highest target any unslashed validator has
    /// voted for, then link `a'` to its direct child.
    pub fn liveness_plan(&self, tree: &BlockTree, pool: &VotePool) -> Result<LivenessPlan, FinalityError> {
        let a = self.highest_justified();
        let slashed: BTreeSet<ValidatorId> = self
            .leaf_registries
            .values()
            .flat_map(|r| r.records().filter(|x| x.slashed).map(|x| x.id))
            .collect();
        let max_target = pool
            .votes()
            .iter()
            .filter(|v| !slashed.contains(&v.validator))
            .map(|v| v.target_height)
            .max()
            .unwrap_or(a.height)
            .max(a.height);
        let h1 = max_target + 1;
        let mut candidates: Vec<(BlockId, BlockId)> = Vec::new();
        for info in self.checkpoints.values() {
            if info.checkpoint.height != h1 + 1 {
                continue;
            }
            let child = info.checkpoint.block;
            let Some(mid) = tree.ancestor_at(&child, h1 * self.spacing)? else {
                continue;
            };
            if tree.is_ancestor(&a.block, &mid)? {
                candidates.push((mid, child));
            }
        }
        candidates.sort();
        let (mid, child) = candidates
            .first()
            .copied()
            .ok_or(FinalityError::NoExtension { needed_height: h1 + 1 })?;
        Ok(LivenessPlan {
            source: a,
            target: Checkpoint { block: mid, height: h1 },
            finalize_target: Checkpoint {
                block: child,
                height: h1 + 1,
            },
            max_voted_height: max_target,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessPlan {
    pub source: Checkpoint,
    pub target: Checkpoint,
    pub finalize_target: Checkpoint,
    pub max_voted_height: u64,
}

impl LivenessPlan {
    /// The two votes a validator casts to execute the plan.
    pub fn votes(&self, keyring: &Keyring, v: ValidatorId) -> Option<[Vote; 2]> {
        let justify = keyring.sign(
            v,
            self.source.block,
            self.target.block,
            self.source.height,
            self.target.height,
        )?;
        let finalize = keyring.sign(
            v,
            self.target.block,
            self.finalize_target.block,
            self.target.height,
            self.finalize_target.height,
        )?;
        Some([justify, finalize])
    }
}
