//! Checkpoint finality overlay for a proposal-mechanism block tree.
//!
//! Validators cast a single kind of vote, `⟨ν, s, t, h(s), h(t)⟩`, linking a
//! source checkpoint to a descendant target. Two-thirds (by deposit) of both
//! the forward and rear validator sets voting the same pair forms a
//! supermajority link; links from justified sources justify their targets,
//! and a justified checkpoint with a link to its direct child is finalized.
//! Validators that cast two votes for the same target height, or a vote
//! strictly inside the span of another, lose their deposit.
//!
//! The [`sim`] module drives all of this with a deterministic discrete-event
//! network so that safety and liveness claims can be checked by running them.

pub mod chain;
pub mod finality;
pub mod fork_choice;
pub mod leak;
pub mod sim;
pub mod slashing;
pub mod validators;
pub mod votes;

use serde::{Deserialize, Serialize};

pub use chain::{Block, BlockId, BlockTree, ChainError, Checkpoint, Proposer, Transaction};
pub use finality::{FinalityConfig, FinalityError, FinalityState, LivenessPlan, SupermajorityLink};
pub use fork_choice::{Admissibility, ClientView, ForkChoiceRule};
pub use leak::{epochs_to_supermajority, LeakConfig, LeakDisposition, LeakError};
pub use slashing::{check_pair, safety_audit, scan, AuditReport, SlashingError, Violation, ViolationKind};
pub use validators::{Registry, ValidatorError, ValidatorId, ValidatorRecord};
pub use votes::{sign_vote, validate_vote, Keyring, Vote, VoteClass, VotePool};

/// Exact non-negative rational used for rates and fees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub const fn new(num: u64, den: u64) -> Fraction {
        Fraction { num, den }
    }

    /// `floor(x * num / den)`.
    pub fn floor_mul(&self, x: u64) -> u64 {
        ((x as u128 * self.num as u128) / self.den as u128) as u64
    }

    pub fn is_proper(&self) -> bool {
        self.den > 0 && self.num > 0 && self.num < self.den
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// `3·part ≥ 2·total`, the two-thirds test without division.
pub fn two_thirds(part: u64, total: u64) -> bool {
    3 * part as u128 >= 2 * total as u128
}

/// `3·part ≥ total`.
pub fn one_third(part: u64, total: u64) -> bool {
    3 * part as u128 >= total as u128
}
