//! Deterministic multi-client simulation.
//!
//! [`run`] dispatches on the scenario kind: event-driven runs go through
//! [`engine`], the scripted constructions live in [`scenarios`]. Both build
//! a [`World`] (the union of everything published plus one [`ClientView`]
//! per simulated client) and turn it into a [`RunReport`].

pub mod config;
pub mod engine;
pub mod report;
pub mod scenarios;

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use crate::chain::{Block, BlockTree, Checkpoint};
use crate::finality::{FinalityConfig, FinalityState};
use crate::fork_choice::{ClientView, ReceiveOutcome};
use crate::slashing::Violation;
use crate::validators::{Registry, ValidatorId};
use crate::votes::{Keyring, Vote, VotePool};

pub use config::{
    Behavior, ConfigError, PartitionSpec, ScenarioConfig, ScenarioKind, ScheduledAction, ScheduledTx,
    ValidatorSpec, SCHEMA_VERSION,
};
pub use report::{ClientReport, InvariantCheck, RunReport, ScenarioOutcome, SlashRecord};

/// Runs a scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport, ConfigError> {
    cfg.validate()?;
    match cfg.kind {
        ScenarioKind::Simulated => engine::Engine::new(cfg)?.run(),
        ScenarioKind::DynamicAttack => scenarios::dynamic_attack(cfg),
        ScenarioKind::LongRange { omega_deltas } => scenarios::long_range(cfg, omega_deltas),
        ScenarioKind::SplitFinality => scenarios::split_finality(cfg),
        ScenarioKind::Stuck => scenarios::stuck(cfg),
    }
}

#[derive(Debug, Clone)]
pub struct SimClient {
    pub view: ClientView,
    pub group: usize,
    justified: BTreeSet<Checkpoint>,
}

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: ScenarioConfig,
    pub keyring: Keyring,
    pub genesis: Registry,
    pub finality: FinalityConfig,
    /// Every block published, by anyone.
    pub tree: BlockTree,
    /// Every vote published, by anyone.
    pub pool: VotePool,
    pub clients: Vec<SimClient>,
    /// Publication order, kept for the report trace.
    pub blocks: Vec<Block>,
    trace: Sha256,
    pub max_delay: u64,
    pub monotone: bool,
}

impl World {
    pub fn new(cfg: &ScenarioConfig, groups: usize) -> Result<World, ConfigError> {
        let bad = |e: crate::chain::ChainError| ConfigError::Invalid(e.to_string());
        let keyring = Keyring::from_seed(cfg.seed, cfg.ids());
        let genesis = Registry::genesis(
            cfg.validators
                .iter()
                .filter(|v| v.genesis)
                .map(|v| (ValidatorId(v.id), v.deposit)),
            cfg.withdrawal_delay,
        );
        let finality = FinalityConfig {
            stitching: cfg.stitching_enabled,
            leak: cfg.leak(),
            finder_fee: cfg.finder_fee,
        };
        let mut clients = Vec::new();
        for group in 0..groups {
            for _ in 0..cfg.clients_per_group {
                let id = clients.len();
                clients.push(SimClient {
                    view: ClientView::new(id, cfg.spacing, cfg.delta, cfg.fork_choice).map_err(bad)?,
                    group,
                    justified: BTreeSet::new(),
                });
            }
        }
        Ok(World {
            cfg: cfg.clone(),
            keyring,
            genesis,
            finality,
            tree: BlockTree::new(cfg.spacing).map_err(bad)?,
            pool: VotePool::new(),
            clients,
            blocks: Vec::new(),
            trace: Sha256::new(),
            max_delay: 0,
            monotone: true,
        })
    }

    pub fn publish_block(&mut self, block: Block) {
        self.trace.update(b"P");
        self.trace.update(block.id.as_bytes());
        if self.tree.insert_block(block.clone()).is_ok() {
            self.blocks.push(block);
        }
    }

    pub fn publish_vote(&mut self, vote: Vote) {
        self.trace.update(b"Q");
        self.trace.update(vote.encode());
        self.pool.insert_unchecked(vote);
    }

    fn note(&mut self, tag: &[u8], client: usize, now: u64, body: &[u8]) {
        self.trace.update(tag);
        self.trace.update((client as u64).to_be_bytes());
        self.trace.update(now.to_be_bytes());
        self.trace.update(body);
    }

    /// Hands `block` to a client at `now`, sent at `sent`.
    pub fn deliver_block(&mut self, client: usize, block: Block, sent: u64, now: u64) -> ReceiveOutcome {
        self.note(b"B", client, now, block.id.as_bytes());
        self.max_delay = self.max_delay.max(now.saturating_sub(sent));
        self.clients[client].view.receive_block(block, now)
    }

    pub fn deliver_vote(&mut self, client: usize, vote: Vote, sent: u64, now: u64) -> Option<Violation> {
        self.note(b"V", client, now, &vote.encode());
        self.max_delay = self.max_delay.max(now.saturating_sub(sent));
        self.clients[client].view.receive_vote(&self.keyring, vote, now)
    }

    /// Brings a client's finality state up to date, checking that its
    /// justified and finalized sets only grow.
    pub fn refresh(&mut self, client: usize) {
        let c = &mut self.clients[client];
        let before = c.view.finalized_checkpoints().clone();
        let state = c.view.refresh(&self.keyring, &self.genesis, &self.finality);
        let justified: BTreeSet<Checkpoint> = state.justified().iter().copied().collect();
        if !c.justified.is_subset(&justified) || !before.is_subset(c.view.finalized_checkpoints()) {
            self.monotone = false;
        }
        c.justified = justified;
    }

    /// Rebuilds everything a run published from its report.
    pub fn replay(report: &RunReport) -> Result<World, ConfigError> {
        let mut world = World::new(&report.config, 1)?;
        for b in &report.trace.blocks {
            world.publish_block(b.clone());
        }
        for v in &report.trace.votes {
            world.publish_vote(v.clone());
        }
        Ok(world)
    }

    /// Finality over every published block and vote.
    pub fn global_state(&self) -> FinalityState {
        FinalityState::evaluate(&self.tree, &self.pool, &self.keyring, &self.genesis, &self.finality)
    }

    pub fn trace_digest(&self) -> String {
        hex::encode(self.trace.clone().finalize())
    }
}
