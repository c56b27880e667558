//! Scripted constructions and the configs that select them.

use std::collections::BTreeSet;

use crate::chain::{Block, BlockId, Checkpoint, Proposer, Transaction};
use crate::finality::FinalityState;
use crate::fork_choice::{ForkChoiceRule, ReceiveOutcome};
use crate::validators::ValidatorId;
use crate::votes::Vote;
use crate::Fraction;

use super::config::{Behavior, ConfigError, PartitionSpec, ScenarioConfig, ScenarioKind, ValidatorSpec};
use super::engine::{Engine, Message};
use super::report::{assemble, check, LongRangeClient, RunReport, ScenarioOutcome};
use super::World;

fn spec(id: u32, deposit: u64, behavior: Behavior, genesis: bool) -> ValidatorSpec {
    ValidatorSpec {
        id,
        deposit,
        behavior,
        genesis,
    }
}

/// Hand-timed deliveries into a [`World`].
struct Script {
    world: World,
    queue: Vec<(u64, u64, usize, u64, Message)>,
}

impl Script {
    fn new(cfg: &ScenarioConfig) -> Result<Script, ConfigError> {
        Ok(Script {
            world: World::new(cfg, 1)?,
            queue: Vec::new(),
        })
    }

    fn block(&mut self, parent: BlockId, ts: u64, proposer: Proposer, payload: Vec<Transaction>) -> Block {
        let height = self.world.tree.block_height(&parent).expect("parent published") + 1;
        let b = Block::new(parent, height, ts, proposer, payload);
        self.world.publish_block(b.clone());
        b
    }

    /// Empty blocks from `parent` up to `height`, one per `step` ticks.
    fn extend(&mut self, mut parent: BlockId, height: u64, step: u64) -> Vec<Block> {
        let mut out = Vec::new();
        while self.world.tree.block_height(&parent).unwrap() < height {
            let h = self.world.tree.block_height(&parent).unwrap() + 1;
            let b = self.block(parent, h * step, Proposer::External, vec![]);
            parent = b.id;
            out.push(b);
        }
        out
    }

    fn cp(&self, id: BlockId) -> Checkpoint {
        self.world.tree.checkpoint(&id).expect("checkpoint")
    }

    fn votes(&mut self, who: &[ValidatorId], s: BlockId, t: BlockId) -> Vec<Vote> {
        let (s, t) = (self.cp(s), self.cp(t));
        let votes: Vec<Vote> = who
            .iter()
            .filter_map(|v| self.world.keyring.sign(*v, s.block, t.block, s.height, t.height))
            .collect();
        for v in &votes {
            self.world.publish_vote(v.clone());
        }
        votes
    }

    /// Queues `msg`, sent at `sent`, for client `c` at `sent + delays[c]`.
    fn send(&mut self, msg: Message, sent: u64, delays: &[u64]) {
        for (c, d) in delays.iter().enumerate() {
            let seq = self.queue.len() as u64;
            self.queue.push((sent + d, seq, c, sent, msg.clone()));
        }
    }

    fn send_blocks(&mut self, blocks: &[Block], delays: &[u64]) {
        for b in blocks {
            self.send(Message::Block(b.clone()), b.timestamp, delays);
        }
    }

    fn send_votes(&mut self, votes: &[Vote], sent: u64, delays: &[u64]) {
        for v in votes {
            self.send(Message::Vote(v.clone()), sent, delays);
        }
    }

    fn flush(&mut self) {
        let mut queue = std::mem::take(&mut self.queue);
        queue.sort_by_key(|(t, seq, ..)| (*t, *seq));
        for (t, _, c, sent, msg) in queue {
            match msg {
                Message::Block(b) => {
                    if let ReceiveOutcome::Inserted(_) = self.world.deliver_block(c, b, sent, t) {
                        self.world.refresh(c);
                    }
                }
                Message::Vote(v) => {
                    self.world.deliver_vote(c, v, sent, t);
                }
            }
        }
    }
}

fn inclusions(votes: &[Vote]) -> Vec<Transaction> {
    votes.iter().cloned().map(Transaction::VoteInclusion).collect()
}

/// Validators that leave, and validators that join, around a fork.
pub fn dynamic_attack_config(seed: u64, stitching: bool) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::honest(0, seed);
    cfg.name = if stitching { "dyn_attack_stitch" } else { "dyn_attack_nostitch" }.into();
    cfg.kind = ScenarioKind::DynamicAttack;
    cfg.spacing = 4;
    cfg.stitching_enabled = stitching;
    cfg.duration = 6;
    cfg.validators = (0..3)
        .map(|i| spec(i, 100, Behavior::Honest, true))
        .chain((3..6).map(|i| spec(i, 100, Behavior::Honest, false)))
        .collect();
    cfg
}

/// The genesis validators announce their exit and the others their entry in
/// the first block, both taking effect in dynasty 3. The genesis validators
/// finalize `c1` and justify `c2` and `c3`. The chain then forks: on X the
/// votes finalizing `c2` are included in time, moving X into dynasty 3 where
/// only the newcomers form the forward set; on Y they are not, so Y stays in
/// dynasty 2 where only the leavers count. Each group then finalizes its own
/// height-4 checkpoint without any validator signing two conflicting votes.
/// The rear set of dynasty 3 is the leaving group, so stitching blocks X.
pub fn dynamic_attack(cfg: &ScenarioConfig) -> Result<RunReport, ConfigError> {
    let leavers: Vec<ValidatorId> = cfg.validators.iter().filter(|v| v.genesis).map(|v| ValidatorId(v.id)).collect();
    let joiners: Vec<(ValidatorId, u64)> = cfg
        .validators
        .iter()
        .filter(|v| !v.genesis)
        .map(|v| (ValidatorId(v.id), v.deposit))
        .collect();
    if joiners.is_empty() || cfg.spacing < 2 {
        return Err(ConfigError::Invalid(
            "dynamic attack needs non-genesis validators and spacing of at least 2".into(),
        ));
    }
    let e = cfg.spacing;
    let step = cfg.block_interval;
    let mut s = Script::new(cfg)?;
    let g = BlockId::GENESIS;

    let mut churn: Vec<Transaction> = joiners.iter().map(|(v, d)| Transaction::Deposit(*v, *d)).collect();
    churn.extend(leavers.iter().map(|v| Transaction::Withdraw(*v)));
    let b1 = s.block(g, step, Proposer::External, churn);
    let mut shared = vec![b1.clone()];
    shared.extend(s.extend(b1.id, e, step));
    let c1 = shared.last().unwrap().id;

    let mut tip = c1;
    let mut link_from = g;
    let mut votes_log = Vec::new();
    // Link into each shared checkpoint, included right after it.
    for k in 1..=2 {
        let target = tip;
        let votes = s.votes(&leavers, link_from, target);
        votes_log.push((votes.clone(), (k * e) * step));
        let inc = s.block(target, (k * e + 1) * step, Proposer::External, inclusions(&votes));
        shared.push(inc.clone());
        let more = s.extend(inc.id, (k + 1) * e, step);
        shared.extend(more.iter().cloned());
        link_from = target;
        tip = more.last().unwrap().id;
    }
    let c3 = tip;
    let finalize_c2 = s.votes(&leavers, link_from, c3);
    votes_log.push((finalize_c2.clone(), 3 * e * step));

    // X includes the votes finalizing c2; Y does not.
    let x_inc = s.block(c3, (3 * e + 1) * step, Proposer::External, inclusions(&finalize_c2));
    let mut x_chain = vec![x_inc.clone()];
    x_chain.extend(s.extend(x_inc.id, 4 * e, step));
    let x4 = x_chain.last().unwrap().id;
    let y_first = s.block(c3, (3 * e + 1) * step, Proposer::Validator(leavers[0]), vec![]);
    let mut y_chain = vec![y_first.clone()];
    y_chain.extend(s.extend(y_first.id, 4 * e, step));
    let y4 = y_chain.last().unwrap().id;

    let joining: Vec<ValidatorId> = joiners.iter().map(|(v, _)| *v).collect();
    let finish_branch = |s: &mut Script, chain: &mut Vec<Block>, who: &[ValidatorId], c4: BlockId| {
        let into = s.votes(who, c3, c4);
        let inc = s.block(c4, (4 * e + 1) * step, Proposer::External, inclusions(&into));
        chain.push(inc.clone());
        let more = s.extend(inc.id, 5 * e, step);
        let c5 = more.last().unwrap().id;
        chain.extend(more);
        let fin = s.votes(who, c4, c5);
        let inc = s.block(c5, (5 * e + 1) * step, Proposer::External, inclusions(&fin));
        chain.push(inc);
        vec![(into, 4 * e * step), (fin, 5 * e * step)]
    };
    votes_log.extend(finish_branch(&mut s, &mut x_chain, &joining, x4));
    votes_log.extend(finish_branch(&mut s, &mut y_chain, &leavers, y4));

    // Client 0 hears X promptly and Y late; client 1 the reverse.
    let n = s.world.clients.len();
    let late = cfg.delta;
    let delays = |first: usize| -> Vec<u64> { (0..n).map(|c| if c % 2 == first { 0 } else { late }).collect() };
    s.send_blocks(&shared, &vec![0; n]);
    s.send_blocks(&x_chain, &delays(0));
    s.send_blocks(&y_chain, &delays(1));
    for (votes, sent) in &votes_log {
        s.send_votes(votes, *sent, &vec![0; n]);
    }
    s.flush();

    let state = FinalityState::evaluate(&s.world.tree, &s.world.pool, &s.world.keyring, &s.world.genesis, &s.world.finality);
    let (x, y) = (s.cp(x4), s.cp(y4));
    let outcome = ScenarioOutcome::DynamicAttack {
        x,
        y,
        x_finalized: state.is_finalized(&x),
        y_finalized: state.is_finalized(&y),
    };
    Ok(assemble(&mut s.world, Some(outcome), BTreeSet::new(), vec![]))
}

/// Withdrawn validators revise history while their deposits are still locked.
/// `delta` is both the network bound and the epoch length in ticks, so the
/// withdrawal delay of `omega_deltas` epochs is `omega_deltas·δ` ticks.
pub fn long_range_config(seed: u64, omega_deltas: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::honest(0, seed);
    cfg.name = format!("long_range_omega_{omega_deltas}d");
    cfg.kind = ScenarioKind::LongRange { omega_deltas };
    cfg.delta = 4;
    cfg.spacing = 4;
    cfg.block_interval = 1;
    cfg.withdrawal_delay = omega_deltas;
    cfg.clients_per_group = 3;
    cfg.duration = 4 + omega_deltas + 2;
    cfg.validators = (0..3)
        .map(|i| spec(i, 100, Behavior::LongRangeReviser, true))
        .chain([spec(3, 100, Behavior::Honest, true)])
        .collect();
    cfg
}

/// Attackers finalize `c1`, `c2` on the main chain M while withdrawing, so
/// their end dynasty starts at block `4δ` (time T0) and their deposits
/// unlock at T0 + ωδ. One tick short of δ after T0 they publish a
/// backdated revision chain R with conflicting votes. Honest proposers put
/// the evidence into M as soon as they hear it; the attackers' own branch P
/// from T0 never does and pays them out at unlock. Client `c` hears
/// everything `c·δ/(n-1)` ticks after it is sent.
pub fn long_range(cfg: &ScenarioConfig, omega_deltas: u64) -> Result<RunReport, ConfigError> {
    let d = cfg.delta;
    if cfg.spacing != d || cfg.block_interval != 1 || d < 2 || cfg.withdrawal_delay != omega_deltas {
        return Err(ConfigError::Invalid(
            "long-range scenario needs spacing = delta >= 2, block_interval = 1 and withdrawal_delay = omega_deltas"
                .into(),
        ));
    }
    let attackers: Vec<ValidatorId> = cfg
        .validators
        .iter()
        .filter(|v| v.behavior == Behavior::LongRangeReviser)
        .map(|v| ValidatorId(v.id))
        .collect();
    let everyone = cfg.ids();
    let honest: Vec<ValidatorId> = everyone.iter().copied().filter(|v| !attackers.contains(v)).collect();
    let Some(&finder) = honest.first() else {
        return Err(ConfigError::Invalid("long-range scenario needs an honest validator".into()));
    };
    let mut s = Script::new(cfg)?;
    let n = s.world.clients.len();
    let delays: Vec<u64> = (0..n as u64).map(|c| if n > 1 { c * d / (n as u64 - 1) } else { 0 }).collect();
    let g = BlockId::GENESIS;
    let by_finder = Proposer::Validator(finder);

    // Main chain up to the anchor T0 = 4δ.
    let withdraw = attackers.iter().map(|v| Transaction::Withdraw(*v)).collect();
    let m1 = s.block(g, 1, by_finder, withdraw);
    let mut main = vec![m1.clone()];
    main.extend(s.extend_with(m1.id, d, by_finder));
    let mut votes_log = Vec::new();
    let mut link_from = g;
    let mut target = main.last().unwrap().id;
    for (k, include_at) in [(1, d + 1), (2, 2 * d + 1), (3, 4 * d - 1)] {
        let votes = s.votes(&everyone, link_from, target);
        votes_log.push((votes.clone(), k * d));
        let before = s.extend_with(target, include_at - 1, by_finder);
        main.extend(before.iter().cloned());
        let parent = before.last().map_or(target, |b| b.id);
        let inc = s.block(parent, include_at, by_finder, inclusions(&votes));
        main.push(inc.clone());
        let after = s.extend_with(inc.id, (k + 1) * d, by_finder);
        main.extend(after.iter().cloned());
        link_from = target;
        target = main.last().unwrap().id;
    }
    let anchor = target;
    let t0 = 4 * d;
    debug_assert_eq!(s.world.tree.block_height(&anchor).unwrap(), t0);

    // Backdated revision chain from the root, finalizing its own r1, r2.
    let t_rev = t0 + d - 1;
    let r1 = s.block(g, 1, Proposer::External, vec![]);
    let mut rev = vec![r1.clone()];
    rev.extend(s.extend_with(r1.id, d, Proposer::External));
    let mut rev_votes = Vec::new();
    let mut from = g;
    let mut to = rev.last().unwrap().id;
    for k in 1..=3u64 {
        let votes = s.votes(&attackers, from, to);
        rev_votes.extend(votes.iter().cloned());
        let inc = s.block(to, k * d + 1, Proposer::External, inclusions(&votes));
        rev.push(inc.clone());
        let after = s.extend_with(inc.id, (k + 1) * d, Proposer::External);
        rev.extend(after.iter().cloned());
        from = to;
        to = rev.last().unwrap().id;
    }

    // Attackers' branch: no evidence, runs past the unlock.
    let end = t0 + omega_deltas * d + 1;
    let payout_branch = s.extend_with(anchor, end, Proposer::Validator(attackers[0]));

    // Main chain past T0; evidence goes in once its proposer's client
    // (delay 0) has heard the revision votes.
    let heard0 = t_rev + delays[0];
    let before = s.extend_with(anchor, heard0, by_finder);
    main.extend(before.iter().cloned());
    let mut parent = before.last().map_or(anchor, |b| b.id);
    let mut evidence = Vec::new();
    for a in &attackers {
        let old = votes_log.iter().flat_map(|(v, _)| v).find(|v| v.validator == *a && v.target_height == 1);
        let new = rev_votes.iter().find(|v| v.validator == *a && v.target_height == 1);
        if let (Some(old), Some(new)) = (old, new) {
            evidence.push(Transaction::SlashEvidence(old.clone(), new.clone()));
        }
    }
    let ev_block = s.block(parent, heard0 + 1, by_finder, evidence);
    main.push(ev_block.clone());
    parent = ev_block.id;
    main.extend(s.extend_with(parent, end, by_finder));

    s.send_blocks(&main, &delays);
    for (votes, sent) in &votes_log {
        s.send_votes(votes, *sent, &delays);
    }
    s.send_blocks(&payout_branch, &delays);
    for b in &rev {
        s.send(Message::Block(b.clone()), t_rev, &delays);
    }
    s.send_votes(&rev_votes, t_rev, &delays);
    s.flush();

    let unlock_epoch = t0 / d + omega_deltas;
    let rev_root = r1.id;
    let mut clients = Vec::new();
    for c in 0..n {
        s.world.refresh(c);
        let view = &s.world.clients[c].view;
        let state = view.state().expect("refreshed");
        let tree = view.tree();
        let accepted_payout = tree.blocks().any(|b| {
            state
                .block_info(&b.id)
                .is_some_and(|i| i.payouts.iter().any(|(v, _)| attackers.contains(v)))
        });
        let slashed_on_all_accepted = tree
            .leaves()
            .iter()
            .filter(|l| tree.block_height(l).unwrap_or(0) / d >= unlock_epoch)
            .all(|l| {
                state
                    .registry_at_leaf(l)
                    .is_some_and(|r| attackers.iter().all(|a| r.get(*a).is_ok_and(|x| x.slashed)))
            });
        let head = view.head();
        clients.push(LongRangeClient {
            client: c,
            heard_at: view.first_heard(attackers[0]),
            accepted_payout,
            slashed_on_all_accepted,
            follows_revision: tree.is_ancestor(&rev_root, &head).unwrap_or(false),
        });
    }
    let defended = clients.iter().all(|c| !c.accepted_payout && c.slashed_on_all_accepted && !c.follows_revision);
    let checks = vec![check(
        "long_range_defense",
        true,
        defended,
        format!(
            "withdrawal delay {omega_deltas}δ; {} of {n} clients accepted a payout",
            clients.iter().filter(|c| c.accepted_payout).count()
        ),
    )];
    let outcome = ScenarioOutcome::LongRange {
        delta: d,
        withdrawal_delay_ticks: omega_deltas * d,
        unlock_epoch,
        clients,
    };
    Ok(assemble(&mut s.world, Some(outcome), BTreeSet::new(), checks))
}

impl Script {
    /// Like [`Script::extend`] with one block per tick and a fixed proposer.
    fn extend_with(&mut self, mut parent: BlockId, height: u64, proposer: Proposer) -> Vec<Block> {
        let mut out = Vec::new();
        loop {
            let h = self.world.tree.block_height(&parent).unwrap();
            if h >= height {
                return out;
            }
            let b = self.block(parent, h + 1, proposer, vec![]);
            parent = b.id;
            out.push(b);
        }
    }
}

/// Two halves of the validator set cut off from each other, with a leak.
pub fn split_finality_config(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::honest(6, seed);
    cfg.name = "split_finality".into();
    cfg.kind = ScenarioKind::SplitFinality;
    cfg.leak_rate = Some(Fraction::new(1, 10));
    cfg.duration = 11;
    cfg.clients_per_group = 1;
    cfg.partition = Some(PartitionSpec {
        groups: vec![vec![0, 1, 2], vec![3, 4, 5]],
        heal_epoch: Some(10),
    });
    cfg
}

/// Head-chain justified and finalized checkpoints for `client`.
fn head_chain(world: &mut World, client: usize) -> (Vec<Checkpoint>, Vec<Checkpoint>) {
    world.refresh(client);
    let view = &world.clients[client].view;
    let state = view.state().expect("refreshed");
    let head = view.head();
    let justified = view
        .tree()
        .checkpoint_chain_through(&head)
        .unwrap_or_default()
        .into_iter()
        .filter(|c| state.is_justified(&c.block))
        .collect();
    let finalized = state
        .finalized_on_chain(view.tree(), &head)
        .into_iter()
        .filter(|c| c.height == 0 || view.finalized_checkpoints().contains(c))
        .collect();
    (justified, finalized)
}

/// Each group's chain leaks the other group until its own voters are a
/// supermajority, then finalizes.
pub fn split_finality(cfg: &ScenarioConfig) -> Result<RunReport, ConfigError> {
    if cfg.partition.is_none() || cfg.leak_rate.is_none() {
        return Err(ConfigError::Invalid("split finality needs a partition and a leak rate".into()));
    }
    let mut engine = Engine::new(cfg)?;
    let groups = cfg.partition.as_ref().map_or(1, |p| p.groups.len());
    let heal_at = cfg
        .partition
        .as_ref()
        .and_then(|p| p.heal_epoch)
        .map_or(u64::MAX, |e| e * cfg.spacing * cfg.block_interval);
    // Per-group chains are measured just before the groups hear each other.
    engine.run_until(heal_at.saturating_sub(1));
    let mut first_finalized = Vec::new();
    let mut leak_epochs = Vec::new();
    for g in 0..groups {
        let client = engine.world.clients.iter().position(|c| c.group == g).expect("one client per group");
        let (justified, finalized) = head_chain(&mut engine.world, client);
        first_finalized.push(finalized.into_iter().find(|c| c.height > 0));
        leak_epochs.push(justified.iter().find(|c| c.height > 0).map(|c| c.height - 1));
    }
    engine.run_until(u64::MAX);
    let outcome = ScenarioOutcome::SplitFinality {
        first_finalized,
        leak_epochs,
    };
    Ok(engine.finish_with(Some(outcome), vec![]))
}

/// `online` validators keep voting and `offline` ones stop at `crash_epoch`,
/// all with a deposit of 100, under a leak of 1/10 per epoch.
pub fn inactivity_config(seed: u64, online: u32, offline: u32, crash_epoch: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::honest(online + offline, seed);
    cfg.name = format!("inactivity_{online}_{offline}");
    for v in cfg.validators.iter_mut().skip(online as usize) {
        v.behavior = Behavior::Offline { from_epoch: crash_epoch };
    }
    cfg.leak_rate = Some(Fraction::new(1, 10));
    cfg.duration = crash_epoch + 12;
    cfg
}

/// Honest validators that justified a shorter branch past a longer one.
pub fn stuck_config(seed: u64, rule: ForkChoiceRule) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::honest(4, seed);
    cfg.name = match rule {
        ForkChoiceRule::JustifiedHeight => "stuck_justified_height",
        ForkChoiceRule::LongestChain => "stuck_longest_chain",
    }
    .into();
    cfg.kind = ScenarioKind::Stuck;
    cfg.spacing = 4;
    cfg.fork_choice = rule;
    cfg.duration = 4;
    cfg
}

/// Shared checkpoints `c1..c3`; branch A carries `a4`, `a5`, justified by
/// everyone through `c3 → a4 → a5`; branch B is longer (up to `b7`) but its
/// highest justified checkpoint is `c3`. A validator on B would have to vote
/// `c3 → b_k` with `k > 5`, surrounding its own `a4 → a5` vote.
pub fn stuck(cfg: &ScenarioConfig) -> Result<RunReport, ConfigError> {
    let e = cfg.spacing;
    let step = cfg.block_interval;
    if e < 2 {
        return Err(ConfigError::Invalid("stuck scenario needs spacing of at least 2".into()));
    }
    let start = 7 * e * step;
    let mut engine = Engine::starting_at(cfg, start)?;
    let everyone = cfg.ids();
    let keyring_votes = |engine: &mut Engine, s: BlockId, t: BlockId| -> Vec<Transaction> {
        let s = engine.world.tree.checkpoint(&s).unwrap();
        let t = engine.world.tree.checkpoint(&t).unwrap();
        let mut txs = Vec::new();
        for v in &everyone {
            if let Some(vote) = engine.world.keyring.sign(*v, s.block, t.block, s.height, t.height) {
                engine.preload_vote(vote.clone(), start);
                txs.push(Transaction::VoteInclusion(vote));
            }
        }
        txs
    };
    let extend = |engine: &mut Engine, mut parent: BlockId, to: u64, first: Vec<Transaction>| -> BlockId {
        let mut payload = first;
        loop {
            let h = engine.world.tree.block_height(&parent).unwrap();
            if h >= to {
                return parent;
            }
            let b = Block::new(parent, h + 1, (h + 1) * step, Proposer::External, std::mem::take(&mut payload));
            parent = b.id;
            engine.preload_block(b, start);
        }
    };

    // Shared prefix: c1, c2 justified and c1 finalized.
    let c1 = extend(&mut engine, BlockId::GENESIS, e, vec![]);
    let inc = keyring_votes(&mut engine, BlockId::GENESIS, c1);
    let b = extend(&mut engine, c1, e + 1, inc);
    let c2 = extend(&mut engine, b, 2 * e, vec![]);
    let inc = keyring_votes(&mut engine, c1, c2);
    let b = extend(&mut engine, c2, 2 * e + 1, inc);
    let c3 = extend(&mut engine, b, 3 * e, vec![]);
    let to_c3 = keyring_votes(&mut engine, c2, c3);

    // Branch B first, so it is the older and the longer branch.
    let b_first = Block::new(c3, 3 * e + 1, (3 * e + 1) * step, Proposer::Validator(everyone[0]), to_c3.clone());
    let b_first_id = b_first.id;
    engine.preload_block(b_first, start);
    let b_tip = extend(&mut engine, b_first_id, 7 * e, vec![]);

    let a = extend(&mut engine, c3, 3 * e + 1, to_c3);
    let a4 = extend(&mut engine, a, 4 * e, vec![]);
    let inc = keyring_votes(&mut engine, c3, a4);
    let a = extend(&mut engine, a4, 4 * e + 1, inc);
    let a5 = extend(&mut engine, a, 5 * e, vec![]);
    let inc = keyring_votes(&mut engine, a4, a5);
    extend(&mut engine, a5, 5 * e + 1, inc);
    let _ = b_tip;

    let clients = engine.world.clients.len();
    let top = |engine: &mut Engine| -> u64 {
        (0..clients)
            .map(|c| head_chain(&mut engine.world, c).1.last().map_or(0, |f| f.height))
            .min()
            .unwrap_or(0)
    };
    let before = top(&mut engine);
    let epoch_ticks = e * step;
    let mut epochs_to_finalize = None;
    for k in 1..=cfg.duration {
        engine.run_until(start + k * epoch_ticks);
        if epochs_to_finalize.is_none() && top(&mut engine) > before {
            epochs_to_finalize = Some(k);
        }
    }
    engine.run_until(u64::MAX);
    let after = top(&mut engine);
    let checks = vec![check(
        "finalization_progress",
        true,
        epochs_to_finalize.is_some(),
        format!("finalized height on every head chain {before} -> {after}"),
    )];
    let outcome = ScenarioOutcome::Stuck {
        rule: cfg.fork_choice,
        start_epoch: start / epoch_ticks,
        finalized_height_before: before,
        finalized_height_after: after,
        epochs_to_finalize,
    };
    Ok(engine.finish_with(Some(outcome), checks))
}

/// Random static validator set with adversaries holding under a third of the
/// weight, an optional healing partition and random proposer forks.
pub fn safety_fuzz_config(seed: u64) -> ScenarioConfig {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5afe_f022);
    let n = rng.gen_range(7..=20u32);
    let deposits: Vec<u64> = (0..n).map(|_| rng.gen_range(50..=150)).collect();
    let total: u64 = deposits.iter().sum();
    let mut order: Vec<u32> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut adversaries = BTreeSet::new();
    let mut weight = 0;
    for v in order {
        let w = deposits[v as usize];
        if 3 * (weight + w) < total && rng.gen_bool(0.6) {
            adversaries.insert(v);
            weight += w;
        }
    }
    let mut cfg = ScenarioConfig::honest(0, seed);
    cfg.name = format!("safety_fuzz_{seed}");
    cfg.duration = rng.gen_range(4..=6);
    cfg.spacing = 5;
    cfg.proposer_fork_rate = Fraction::new(rng.gen_range(0..=3), 10);
    let adversarial = [Behavior::EquivocatorI, Behavior::SurroundVoterII, Behavior::CensoringProposer, Behavior::DisjointFinalizer];
    cfg.validators = (0..n)
        .map(|v| {
            let behavior = if adversaries.contains(&v) {
                *adversarial.choose(&mut rng).expect("non-empty")
            } else if rng.gen_bool(0.1) {
                Behavior::Offline { from_epoch: rng.gen_range(1..=cfg.duration) }
            } else {
                Behavior::Honest
            };
            spec(v, deposits[v as usize], behavior, true)
        })
        .collect();
    if rng.gen_bool(0.3) {
        let mut ids: Vec<u32> = (0..n).collect();
        ids.shuffle(&mut rng);
        let cut = rng.gen_range(1..n as usize);
        let (a, b) = ids.split_at(cut);
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort();
        b.sort();
        cfg.partition = Some(PartitionSpec {
            groups: vec![a, b],
            heal_epoch: Some(rng.gen_range(1..=cfg.duration)),
        });
        cfg.clients_per_group = 1;
    }
    cfg
}

/// Static set where validators holding at least a third of the weight
/// finalize on both sides of a partition that never heals.
pub fn accountability_config(seed: u64) -> ScenarioConfig {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x0acc_00e7);
    // Resample until each side plus the adversaries is a supermajority.
    let (n, deposits, adversaries, mut left, right) = loop {
        let n = rng.gen_range(5..=12u32);
        let deposits: Vec<u64> = (0..n).map(|_| rng.gen_range(80..=120)).collect();
        let total: u64 = deposits.iter().sum();
        // Adversaries take ids from the top until they hold between 2/5 and 1/2.
        let target = rng.gen_range(2 * total / 5..=total / 2);
        let mut adversaries = BTreeSet::new();
        let mut weight = 0;
        for v in (0..n).rev() {
            if weight >= target || adversaries.len() + 2 >= n as usize {
                break;
            }
            adversaries.insert(v);
            weight += deposits[v as usize];
        }
        let (mut left, mut right) = (Vec::new(), Vec::new());
        let (mut lw, mut rw) = (0, 0);
        for v in (0..n).filter(|v| !adversaries.contains(v)) {
            if lw <= rw {
                left.push(v);
                lw += deposits[v as usize];
            } else {
                right.push(v);
                rw += deposits[v as usize];
            }
        }
        if 3 * (weight + lw.min(rw)) >= 2 * total {
            break (n, deposits, adversaries, left, right);
        }
    };
    left.extend(adversaries.iter().copied());
    left.sort();
    let mut cfg = ScenarioConfig::honest(0, seed);
    cfg.name = format!("accountability_{seed}");
    cfg.duration = 6;
    cfg.clients_per_group = 1;
    cfg.validators = (0..n)
        .map(|v| {
            let behavior = if adversaries.contains(&v) { Behavior::DisjointFinalizer } else { Behavior::Honest };
            spec(v, deposits[v as usize], behavior, true)
        })
        .collect();
    cfg.partition = Some(PartitionSpec {
        groups: vec![left, right],
        heal_epoch: None,
    });
    cfg
}

/// Canonical scenarios by name.
pub const BUILTIN: &[&str] = &[
    "all_honest",
    "dyn_attack_nostitch",
    "dyn_attack_stitch",
    "long_range_omega_5d",
    "long_range_omega_3d",
    "stuck_justified_height",
    "stuck_longest_chain",
    "split_finality",
    "inactivity_60_40",
    "inactivity_50_50",
    "equivocation",
    "safety_fuzz",
];

pub fn builtin(name: &str, seed: u64) -> Option<ScenarioConfig> {
    let cfg = match name {
        "all_honest" => {
            let mut c = ScenarioConfig::honest(4, seed);
            c.duration = 8;
            c
        }
        "dyn_attack_nostitch" => dynamic_attack_config(seed, false),
        "dyn_attack_stitch" => dynamic_attack_config(seed, true),
        "long_range_omega_5d" => long_range_config(seed, 5),
        "long_range_omega_3d" => long_range_config(seed, 3),
        "stuck_justified_height" => stuck_config(seed, ForkChoiceRule::JustifiedHeight),
        "stuck_longest_chain" => stuck_config(seed, ForkChoiceRule::LongestChain),
        "split_finality" => split_finality_config(seed),
        "inactivity_60_40" => inactivity_config(seed, 6, 4, 2),
        "inactivity_50_50" => inactivity_config(seed, 5, 5, 2),
        "equivocation" => {
            let mut c = accountability_config(seed);
            c.name = "equivocation".into();
            c
        }
        "safety_fuzz" => safety_fuzz_config(seed),
        _ => return None,
    };
    Some(cfg)
}
