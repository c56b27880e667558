//! Event loop: proposers, a δ-bounded network, and voting agents.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{Block, BlockId, Checkpoint, Proposer, Transaction};
use crate::slashing::check_pair;
use crate::validators::ValidatorId;
use crate::votes::Vote;

use super::config::{Behavior, ConfigError, ScenarioConfig, ScheduledAction};
use super::report::{assemble, InvariantCheck, RunReport, ScenarioOutcome};
use super::World;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    Block(Block),
    Vote(Vote),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    ProposeBlock { group: usize, slot: u64 },
    Deliver { client: usize, sent: u64, message: Message },
    Heal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: u64,
    /// Insertion order; breaks ties between events at the same tick.
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: ValidatorId,
    pub behavior: Behavior,
    /// Groups this agent takes part in, each with its home client.
    pub homes: Vec<(usize, usize)>,
    /// Votes cast, with the group each was sent to.
    pub history: Vec<(usize, Vote)>,
    /// Highest target height voted for, per entry of `homes`.
    last_target: Vec<u64>,
    voted_targets: HashSet<BlockId>,
    rounds: u64,
}

pub struct Engine {
    pub world: World,
    pub agents: Vec<Agent>,
    queue: BinaryHeap<SimEvent>,
    seq: u64,
    rng: ChaCha8Rng,
    group_clients: Vec<Vec<usize>>,
    group_members: Vec<Vec<ValidatorId>>,
    healed: bool,
    log: Vec<(usize, u64, Message)>,
    slots: u64,
    heuristics: BTreeSet<String>,
}

impl Engine {
    pub fn new(cfg: &ScenarioConfig) -> Result<Engine, ConfigError> {
        Engine::starting_at(cfg, 0)
    }

    /// Engine whose proposers start after `start`, leaving earlier ticks to
    /// [`Engine::preload_block`] and [`Engine::preload_vote`].
    pub fn starting_at(cfg: &ScenarioConfig, start: u64) -> Result<Engine, ConfigError> {
        cfg.validate()?;
        let groups: Vec<Vec<u32>> = match &cfg.partition {
            Some(p) => p.groups.clone(),
            None => vec![cfg.validators.iter().map(|v| v.id).collect()],
        };
        let world = World::new(cfg, groups.len())?;
        let mut group_clients = vec![Vec::new(); groups.len()];
        for c in &world.clients {
            group_clients[c.group].push(c.view.id);
        }

        let mut group_members = vec![Vec::new(); groups.len()];
        let mut agents = Vec::new();
        for spec in &cfg.validators {
            let id = ValidatorId(spec.id);
            let member_of: Vec<usize> = if spec.behavior == Behavior::DisjointFinalizer {
                (0..groups.len()).collect()
            } else {
                let g = groups.iter().position(|g| g.contains(&spec.id)).unwrap_or(0);
                vec![g]
            };
            let homes = member_of
                .iter()
                .map(|&g| {
                    group_members[g].push(id);
                    let clients = &group_clients[g];
                    (g, clients[agents.len() % clients.len()])
                })
                .collect::<Vec<_>>();
            agents.push(Agent {
                id,
                behavior: spec.behavior,
                last_target: vec![0; homes.len()],
                homes,
                history: Vec::new(),
                voted_targets: HashSet::new(),
                rounds: 0,
            });
        }

        let mut engine = Engine {
            world,
            agents,
            queue: BinaryHeap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            group_clients,
            group_members,
            healed: false,
            log: Vec::new(),
            slots: cfg.duration * cfg.spacing,
            heuristics: BTreeSet::new(),
        };
        for g in 0..engine.group_clients.len() {
            engine.push(start + cfg.block_interval, EventKind::ProposeBlock { group: g, slot: 1 });
        }
        if let Some(heal) = cfg.partition.as_ref().and_then(|p| p.heal_epoch) {
            engine.push(heal * cfg.spacing * cfg.block_interval, EventKind::Heal);
        }
        Ok(engine)
    }

    fn push(&mut self, time: u64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(SimEvent {
            time,
            seq: self.seq,
            kind,
        });
    }

    pub fn run(mut self) -> Result<RunReport, ConfigError> {
        while let Some(ev) = self.queue.pop() {
            self.step(ev);
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunReport {
        self.finish_with(None, Vec::new())
    }

    pub fn finish_with(mut self, outcome: Option<ScenarioOutcome>, checks: Vec<InvariantCheck>) -> RunReport {
        assemble(&mut self.world, outcome, std::mem::take(&mut self.heuristics), checks)
    }

    /// Publishes a block and hands it to every client at `time`.
    pub fn preload_block(&mut self, block: Block, time: u64) {
        self.world.publish_block(block.clone());
        for c in 0..self.world.clients.len() {
            self.world.deliver_block(c, block.clone(), time, time);
        }
    }

    /// Publishes a vote, hands it to every client and records it as cast.
    pub fn preload_vote(&mut self, vote: Vote, time: u64) {
        self.world.publish_vote(vote.clone());
        for c in 0..self.world.clients.len() {
            self.world.deliver_vote(c, vote.clone(), time, time);
        }
        if let Some(agent) = self.agents.iter_mut().find(|a| a.id == vote.validator) {
            for t in agent.last_target.iter_mut() {
                *t = (*t).max(vote.target_height);
            }
            agent.voted_targets.insert(vote.target);
            agent.history.push((agent.homes[0].0, vote));
        }
    }

    /// Processes events up to and including `time`.
    pub fn run_until(&mut self, time: u64) {
        while self.queue.peek().is_some_and(|e| e.time <= time) {
            let ev = self.queue.pop().expect("peeked");
            self.step(ev);
        }
    }

    fn step(&mut self, ev: SimEvent) {
        match ev.kind {
            EventKind::ProposeBlock { group, slot } => {
                self.propose(group, slot, ev.time);
                if slot < self.slots {
                    let next = ev.time + self.world.cfg.block_interval;
                    self.push(next, EventKind::ProposeBlock { group, slot: slot + 1 });
                }
            }
            EventKind::Deliver { client, sent, message } => match message {
                Message::Block(b) => {
                    if let crate::fork_choice::ReceiveOutcome::Inserted(_) =
                        self.world.deliver_block(client, b, sent, ev.time)
                    {
                        self.react(client, ev.time);
                    }
                }
                Message::Vote(v) => {
                    self.world.deliver_vote(client, v, sent, ev.time);
                }
            },
            EventKind::Heal => {
                self.healed = true;
                let log = std::mem::take(&mut self.log);
                for (g, _, msg) in &log {
                    for c in 0..self.world.clients.len() {
                        if self.world.clients[c].group != *g {
                            let delay = self.rng.gen_range(0..=self.world.cfg.delta);
                            self.push(
                                ev.time + delay,
                                EventKind::Deliver {
                                    client: c,
                                    sent: ev.time,
                                    message: msg.clone(),
                                },
                            );
                        }
                    }
                }
            }
        }
    }

    fn broadcast(&mut self, group: usize, msg: Message, now: u64) {
        let targets: Vec<usize> = if self.healed {
            (0..self.world.clients.len()).collect()
        } else {
            self.group_clients[group].clone()
        };
        for c in targets {
            let delay = self.rng.gen_range(0..=self.world.cfg.delta);
            self.push(
                now + delay,
                EventKind::Deliver {
                    client: c,
                    sent: now,
                    message: msg.clone(),
                },
            );
        }
        if !self.healed {
            self.log.push((group, now, msg));
        }
    }

    fn propose(&mut self, group: usize, slot: u64, now: u64) {
        let clients = &self.group_clients[group];
        let client = clients[slot as usize % clients.len()];
        self.world.refresh(client);
        let view = &self.world.clients[client].view;
        let head = view.head();
        let fr = self.world.cfg.proposer_fork_rate;
        let mut parent = head;
        if fr.num > 0 && head != BlockId::GENESIS && self.rng.gen_range(0..fr.den) < fr.num {
            parent = view.tree().get(&head).ok().and_then(|b| b.parent).unwrap_or(head);
        }
        let members = &self.group_members[group];
        let proposer = if members.is_empty() {
            Proposer::External
        } else {
            Proposer::Validator(members[self.rng.gen_range(0..members.len())])
        };
        let censor = matches!(proposer, Proposer::Validator(v)
            if self.world.cfg.behavior_of(v) == Behavior::CensoringProposer);
        let height = view.tree().block_height(&parent).unwrap_or(0) + 1;
        let payload = build_payload(&self.world, client, &parent, height, censor);
        let block = Block::new(parent, height, now, proposer, payload);
        self.world.publish_block(block.clone());
        self.broadcast(group, Message::Block(block), now);
    }

    /// Lets agents homed at `client` (and equivocators watching it) respond
    /// to a new head.
    fn react(&mut self, client: usize, now: u64) {
        self.world.refresh(client);
        let view = &self.world.clients[client].view;
        let state = view.state().expect("refreshed");
        let head = view.head();
        let Ok(cps) = view.tree().checkpoint_chain_through(&head) else {
            return;
        };
        let latest = *cps.last().expect("root is a checkpoint");
        if latest.height == 0 {
            return;
        }
        let source = state.highest_justified_on_chain(view.tree(), &head);
        let group = self.world.clients[client].group;

        for i in 0..self.agents.len() {
            let agent = &self.agents[i];
            if agent.behavior == Behavior::EquivocatorI {
                let watches = agent.homes.iter().any(|(g, _)| *g == group);
                if watches && !agent.voted_targets.contains(&latest.block) && source.height < latest.height {
                    self.cast(i, group, source, latest, now);
                }
                continue;
            }
            for (slot, &(g, home)) in agent.homes.iter().enumerate() {
                if home == client && latest.height > agent.last_target[slot] {
                    self.agents[i].last_target[slot] = latest.height;
                    self.maybe_vote(i, g, source, latest, now);
                    break;
                }
            }
        }
    }

    fn maybe_vote(&mut self, i: usize, group: usize, source: Checkpoint, target: Checkpoint, now: u64) {
        let agent = &mut self.agents[i];
        let mut source = source;
        match agent.behavior {
            Behavior::Offline { from_epoch } if target.height >= from_epoch => return,
            Behavior::SurroundVoterII => {
                agent.rounds += 1;
                if agent.rounds.is_multiple_of(2) {
                    source = Checkpoint::genesis();
                }
            }
            _ => {}
        }
        if source.height >= target.height {
            return;
        }
        let Some(vote) = self
            .world
            .keyring
            .sign(agent.id, source.block, target.block, source.height, target.height)
        else {
            return;
        };
        let careful = agent.behavior != Behavior::SurroundVoterII;
        if careful {
            // Disjoint finalizers only keep each group's history clean.
            let per_group = agent.behavior == Behavior::DisjointFinalizer;
            let clash = agent
                .history
                .iter()
                .filter(|(g, _)| !per_group || *g == group)
                .any(|(_, p)| check_pair(p, &vote).ok().flatten().is_some());
            if clash {
                return;
            }
        }
        self.cast_vote(i, group, vote, now);
    }

    fn cast(&mut self, i: usize, group: usize, source: Checkpoint, target: Checkpoint, now: u64) {
        let id = self.agents[i].id;
        if let Some(vote) = self
            .world
            .keyring
            .sign(id, source.block, target.block, source.height, target.height)
        {
            self.cast_vote(i, group, vote, now);
        }
    }

    fn cast_vote(&mut self, i: usize, group: usize, vote: Vote, now: u64) {
        let agent = &mut self.agents[i];
        agent.voted_targets.insert(vote.target);
        agent.history.push((group, vote.clone()));
        self.world.publish_vote(vote.clone());
        self.broadcast(group, Message::Vote(vote), now);
    }
}

/// Transactions a proposer working from `client`'s view puts in a block at
/// `height` on top of `parent`.
pub fn build_payload(world: &World, client: usize, parent: &BlockId, height: u64, censor: bool) -> Vec<Transaction> {
    let view = &world.clients[client].view;
    let tree = view.tree();
    let spacing = world.cfg.spacing;
    let Ok(path) = tree.path_to(parent) else {
        return Vec::new();
    };
    let Ok(cps) = tree.checkpoint_chain_through(parent) else {
        return Vec::new();
    };
    let mut on_chain: HashSet<&Transaction> = HashSet::new();
    let mut evidence_against: HashSet<ValidatorId> = HashSet::new();
    for id in &path {
        if let Ok(b) = tree.get(id) {
            for tx in &b.payload {
                if let Transaction::SlashEvidence(a, _) = tx {
                    evidence_against.insert(a.validator);
                }
                on_chain.insert(tx);
            }
        }
    }
    let on_path = |id: &BlockId, h: u64| cps.get(h as usize).is_some_and(|c| c.block == *id);

    let mut payload = Vec::new();
    for vote in view.pool().votes() {
        if height > (vote.target_height + 1) * spacing - 1
            || !on_path(&vote.source, vote.source_height)
            || !on_path(&vote.target, vote.target_height)
        {
            continue;
        }
        let tx = Transaction::VoteInclusion(vote.clone());
        if !on_chain.contains(&tx) {
            payload.push(tx);
        }
    }
    if !censor {
        for (viol, _) in view.heard_violations() {
            if !evidence_against.contains(&viol.validator) {
                payload.push(Transaction::SlashEvidence(viol.vote_a.clone(), viol.vote_b.clone()));
            }
        }
    }
    let epoch = height / spacing;
    for s in &world.cfg.schedule {
        if epoch < s.epoch {
            continue;
        }
        let tx = match s.action {
            ScheduledAction::Deposit { validator, amount } => Transaction::Deposit(ValidatorId(validator), amount),
            ScheduledAction::Withdraw { validator } => Transaction::Withdraw(ValidatorId(validator)),
        };
        if !on_chain.contains(&tx) {
            payload.push(tx);
        }
    }
    payload
}
