//! Scenario documents.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fork_choice::ForkChoiceRule;
use crate::leak::{LeakConfig, LeakDisposition};
use crate::slashing::DEFAULT_FINDER_FEE;
use crate::validators::ValidatorId;
use crate::Fraction;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Behavior {
    #[default]
    Honest,
    /// Stops voting for checkpoints at or above this height.
    Offline { from_epoch: u64 },
    /// Votes for every head checkpoint any client shows it.
    EquivocatorI,
    /// Alternates ordinary votes with votes sourced at the root.
    SurroundVoterII,
    /// Honest in simulated runs; scripted by the long-range scenario.
    LongRangeReviser,
    /// Votes independently in every partition group.
    DisjointFinalizer,
    /// Honest voter that leaves slashing evidence out of its blocks.
    CensoringProposer,
}

impl Behavior {
    /// Behaviors counted as adversarial weight.
    pub fn is_adversarial(&self) -> bool {
        matches!(
            self,
            Behavior::EquivocatorI
                | Behavior::SurroundVoterII
                | Behavior::LongRangeReviser
                | Behavior::DisjointFinalizer
                | Behavior::CensoringProposer
        )
    }

    /// Behaviors that must never be slashed.
    pub fn is_compliant(&self) -> bool {
        matches!(self, Behavior::Honest | Behavior::Offline { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorSpec {
    pub id: u32,
    pub deposit: u64,
    #[serde(default)]
    pub behavior: Behavior,
    /// Registered at genesis; otherwise it joins through a scheduled deposit.
    #[serde(default = "yes")]
    pub genesis: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ScheduledAction {
    Deposit { validator: u32, amount: u64 },
    Withdraw { validator: u32 },
}

/// A transaction proposers include from the given epoch onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledTx {
    pub epoch: u64,
    pub action: ScheduledAction,
}

/// Disjoint groups of validators, each with its own clients and proposer.
/// Disjoint finalizers take part in every group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub groups: Vec<Vec<u32>>,
    /// Epoch at which the groups start hearing each other.
    #[serde(default)]
    pub heal_epoch: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ScenarioKind {
    /// Event-driven run of the configured agents.
    #[default]
    Simulated,
    /// Validators leave and join around a fork; see `scenarios::dynamic_attack`.
    DynamicAttack,
    /// Withdrawn validators revise history; the withdrawal delay is
    /// `omega_deltas` multiples of δ.
    LongRange { omega_deltas: u64 },
    /// Two halves finalize on their own chains through the leak.
    SplitFinality,
    /// A shorter branch holds the highest justified checkpoint.
    Stuck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Blocks per checkpoint interval.
    #[serde(default = "default_spacing")]
    pub spacing: u64,
    /// Maximum message delay, in ticks.
    #[serde(default = "default_delta")]
    pub delta: u64,
    /// Ticks between consecutive blocks from one proposer.
    #[serde(default = "default_interval")]
    pub block_interval: u64,
    /// Withdrawal delay, in epochs.
    #[serde(default = "default_omega")]
    pub withdrawal_delay: u64,
    #[serde(default)]
    pub leak_rate: Option<Fraction>,
    #[serde(default)]
    pub leak_escalation: Option<Fraction>,
    #[serde(default)]
    pub leak_disposition: LeakDisposition,
    #[serde(default = "default_fee")]
    pub finder_fee: Fraction,
    pub validators: Vec<ValidatorSpec>,
    /// Length of the run, in epochs.
    pub duration: u64,
    #[serde(default = "yes")]
    pub stitching_enabled: bool,
    #[serde(default = "zero_fraction")]
    pub proposer_fork_rate: Fraction,
    /// Client views per partition group.
    #[serde(default = "default_clients")]
    pub clients_per_group: usize,
    #[serde(default)]
    pub partition: Option<PartitionSpec>,
    #[serde(default)]
    pub fork_choice: ForkChoiceRule,
    #[serde(default)]
    pub schedule: Vec<ScheduledTx>,
}

fn schema() -> u32 {
    SCHEMA_VERSION
}
fn yes() -> bool {
    true
}
fn default_spacing() -> u64 {
    5
}
fn default_delta() -> u64 {
    2
}
fn default_interval() -> u64 {
    2
}
fn default_omega() -> u64 {
    100
}
fn default_fee() -> Fraction {
    DEFAULT_FINDER_FEE
}
fn zero_fraction() -> Fraction {
    Fraction::new(0, 1)
}
fn default_clients() -> usize {
    2
}

impl ScenarioConfig {
    /// All-honest baseline with `n` validators of equal deposit.
    pub fn honest(n: u32, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            name: "all_honest".into(),
            kind: ScenarioKind::Simulated,
            seed,
            spacing: default_spacing(),
            delta: default_delta(),
            block_interval: default_interval(),
            withdrawal_delay: default_omega(),
            leak_rate: None,
            leak_escalation: None,
            leak_disposition: LeakDisposition::Burn,
            finder_fee: default_fee(),
            validators: (0..n)
                .map(|id| ValidatorSpec {
                    id,
                    deposit: 100,
                    behavior: Behavior::Honest,
                    genesis: true,
                })
                .collect(),
            duration: 10,
            stitching_enabled: true,
            proposer_fork_rate: zero_fraction(),
            clients_per_group: default_clients(),
            partition: None,
            fork_choice: ForkChoiceRule::JustifiedHeight,
            schedule: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn leak(&self) -> Option<LeakConfig> {
        self.leak_rate.map(|rate| LeakConfig {
            rate,
            escalation: self.leak_escalation,
            disposition: self.leak_disposition,
        })
    }

    pub fn ids(&self) -> Vec<ValidatorId> {
        self.validators.iter().map(|v| ValidatorId(v.id)).collect()
    }

    pub fn behavior_of(&self, v: ValidatorId) -> Behavior {
        self.validators
            .iter()
            .find(|s| s.id == v.0)
            .map_or(Behavior::Honest, |s| s.behavior)
    }

    pub fn genesis_weight(&self) -> u64 {
        self.validators.iter().filter(|v| v.genesis).map(|v| v.deposit).sum()
    }

    pub fn adversary_weight(&self) -> u64 {
        self.validators
            .iter()
            .filter(|v| v.genesis && v.behavior.is_adversarial())
            .map(|v| v.deposit)
            .sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.spacing == 0 || self.block_interval == 0 {
            return invalid("spacing and block_interval must be positive");
        }
        if self.duration == 0 {
            return invalid("duration must be at least 1 epoch");
        }
        if self.validators.is_empty() {
            return invalid("no validators");
        }
        if self.clients_per_group == 0 {
            return invalid("clients_per_group must be positive");
        }
        let mut seen = BTreeSet::new();
        for v in &self.validators {
            if v.deposit == 0 {
                return invalid(format!("validator {} has a zero deposit", v.id));
            }
            if !seen.insert(v.id) {
                return invalid(format!("validator {} listed twice", v.id));
            }
        }
        if !self.validators.iter().any(|v| v.genesis) {
            return invalid("no genesis validators");
        }
        if let Some(leak) = self.leak() {
            leak.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let fr = self.proposer_fork_rate;
        if fr.den == 0 || fr.num > fr.den {
            return invalid("proposer_fork_rate must lie in [0, 1]");
        }
        if self.finder_fee.den == 0 || self.finder_fee.num > self.finder_fee.den {
            return invalid("finder_fee must lie in [0, 1]");
        }
        for tx in &self.schedule {
            let id = match tx.action {
                ScheduledAction::Deposit { validator, amount } => {
                    if amount == 0 {
                        return invalid("scheduled deposit of zero");
                    }
                    validator
                }
                ScheduledAction::Withdraw { validator } => validator,
            };
            if !seen.contains(&id) {
                return invalid(format!("schedule names unknown validator {id}"));
            }
        }
        if let Some(p) = &self.partition {
            if p.groups.is_empty() {
                return invalid("partition with no groups");
            }
            let mut listed = BTreeSet::new();
            for id in p.groups.iter().flatten() {
                if !seen.contains(id) || !listed.insert(*id) {
                    return invalid(format!("partition lists validator {id} wrongly"));
                }
            }
        }
        Ok(())
    }
}
