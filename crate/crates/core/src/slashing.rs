//! Slashing conditions, evidence handling and the accountable-safety audit.
//!
//! A validator must not publish two distinct votes such that either
//!
//! * **I**: `h(t1) = h(t2)`, or
//! * **II**: `h(s1) < h(s2) < h(t2) < h(t1)`.
//!
//! Both checks look only at the votes themselves, never at chain state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{BlockTree, Checkpoint};
use crate::finality::{FinalityState, SupermajorityLink};
use crate::validators::{Registry, ValidatorError, ValidatorId};
use crate::votes::{Vote, VotePool};
use crate::{one_third, Fraction};

/// Default finder's fee: 1/100 of the slashed deposit.
pub const DEFAULT_FINDER_FEE: Fraction = Fraction::new(1, 100);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SlashingError {
    #[error("votes belong to different validators ({0} and {1})")]
    DifferentValidators(ValidatorId, ValidatorId),
    #[error("validator {0} is already slashed")]
    AlreadySlashed(ValidatorId),
    #[error("checkpoints {0} and {1} do not conflict")]
    NotConflicting(Checkpoint, Checkpoint),
    #[error("checkpoint {0} is not finalized in any chain of this view")]
    NotFinalized(Checkpoint),
    #[error(transparent)]
    Validator(#[from] ValidatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Two distinct votes for the same target height.
    I,
    /// One vote strictly within the span of another.
    II,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub validator: ValidatorId,
    /// For kind II, the surrounding vote.
    pub vote_a: Vote,
    /// For kind II, the surrounded vote.
    pub vote_b: Vote,
}

impl Violation {
    /// Re-evaluates the literal slashing predicate on the stored votes.
    pub fn holds(&self) -> bool {
        let (a, b) = (&self.vote_a, &self.vote_b);
        a.validator == b.validator
            && a.validator == self.validator
            && !a.same_message(b)
            && match self.kind {
                ViolationKind::I => a.target_height == b.target_height,
                ViolationKind::II => {
                    a.source_height < b.source_height
                        && b.source_height < b.target_height
                        && b.target_height < a.target_height
                }
            }
    }
}

fn surrounds(outer: &Vote, inner: &Vote) -> bool {
    outer.source_height < inner.source_height
        && inner.source_height < inner.target_height
        && inner.target_height < outer.target_height
}

pub fn check_pair(v1: &Vote, v2: &Vote) -> Result<Option<Violation>, SlashingError> {
    if v1.validator != v2.validator {
        return Err(SlashingError::DifferentValidators(v1.validator, v2.validator));
    }
    if v1.same_message(v2) {
        return Ok(None);
    }
    let violation = |kind, a: &Vote, b: &Vote| Violation {
        kind,
        validator: v1.validator,
        vote_a: a.clone(),
        vote_b: b.clone(),
    };
    if v1.target_height == v2.target_height {
        let (a, b) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        return Ok(Some(violation(ViolationKind::I, a, b)));
    }
    if surrounds(v1, v2) {
        return Ok(Some(violation(ViolationKind::II, v1, v2)));
    }
    if surrounds(v2, v1) {
        return Ok(Some(violation(ViolationKind::II, v2, v1)));
    }
    Ok(None)
}

/// Every violation among signature-valid votes in the pool, regardless of
/// which branch the votes point at.
pub fn scan(pool: &VotePool) -> Vec<Violation> {
    let mut out = Vec::new();
    for v in pool.validators() {
        let votes: Vec<&Vote> = pool.by_validator(v).collect();
        for (i, a) in votes.iter().enumerate() {
            for b in &votes[i + 1..] {
                if let Ok(Some(violation)) = check_pair(a, b) {
                    out.push(violation);
                }
            }
        }
    }
    out
}

/// Violations involving `vote` and earlier votes by the same validator.
pub fn violations_with<'a>(
    history: impl IntoIterator<Item = &'a Vote>,
    vote: &Vote,
) -> Vec<Violation> {
    history
        .into_iter()
        .filter_map(|prior| check_pair(prior, vote).ok().flatten())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashOutcome {
    pub seized: u64,
    pub finder_fee: u64,
    pub burned: u64,
}

/// Takes the offender's whole deposit, pays `floor(deposit · fee)` to the
/// finder and burns the rest. Without a finder the whole deposit burns.
pub fn apply_slash(
    reg: &mut Registry,
    violation: &Violation,
    finder: Option<ValidatorId>,
    fee: Fraction,
) -> Result<SlashOutcome, SlashingError> {
    let seized = reg.seize(violation.validator).map_err(|e| match e {
        ValidatorError::AlreadySlashed(v) => SlashingError::AlreadySlashed(v),
        other => SlashingError::Validator(other),
    })?;
    let finder_fee = if finder.is_some() { fee.floor_mul(seized) } else { 0 };
    if let Some(f) = finder {
        *reg.credits.entry(f).or_default() += finder_fee;
    }
    let burned = seized - finder_fee;
    reg.burned += burned;
    Ok(SlashOutcome {
        seized,
        finder_fee,
        burned,
    })
}

/// Result of extracting the slashable validators behind two conflicting
/// finalized checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub a: Checkpoint,
    pub b: Checkpoint,
    /// The two links whose common voters are provably slashable.
    pub link_a: Option<SupermajorityLink>,
    pub link_b: Option<SupermajorityLink>,
    pub violators: BTreeMap<ValidatorId, Violation>,
    /// Weight of `violators` under `reg`.
    pub violator_weight: u64,
    /// Smallest forward or rear set total among the implicated links.
    pub reference_total: u64,
    /// Total weight of the validators the caller's registry knows.
    pub registry_total: u64,
}

impl AuditReport {
    /// `3·w ≥ total` against the smallest implicated set.
    pub fn meets_bound(&self) -> bool {
        self.reference_total > 0 && one_third(self.violator_weight, self.reference_total)
    }

    pub fn fraction(&self) -> Fraction {
        Fraction::new(self.violator_weight, self.reference_total.max(1))
    }
}

/// Finds the validators that must have violated a slashing condition for
/// both `a_m` and `b_n` to be finalized.
///
/// Walks the justification chain behind `b_n` (or `a_m`, whichever is
/// higher) to the link that either shares a target height with one of the
/// lower checkpoint's finalizing links, or straddles the lower checkpoint and
/// its finalizing child. Validators that voted for both links of that pair are
/// returned together with the concrete violating votes.
pub fn safety_audit(
    tree: &BlockTree,
    pool: &VotePool,
    state: &FinalityState,
    a_m: Checkpoint,
    b_n: Checkpoint,
    reg: &Registry,
) -> Result<AuditReport, SlashingError> {
    let conflicting = tree
        .conflicting(&a_m, &b_n)
        .map_err(|_| SlashingError::NotConflicting(a_m, b_n))?;
    if !conflicting {
        return Err(SlashingError::NotConflicting(a_m, b_n));
    }
    let fin_a = state
        .finalization_of(&a_m)
        .ok_or(SlashingError::NotFinalized(a_m))?;
    let fin_b = state
        .finalization_of(&b_n)
        .ok_or(SlashingError::NotFinalized(b_n))?;

    let (_low, low_fin, high, high_fin) = if a_m.height <= b_n.height {
        (a_m, fin_a, b_n, fin_b)
    } else {
        (b_n, fin_b, a_m, fin_a)
    };

    // Links on the lower side: the one justifying it and the one finalizing it.
    let low_links: Vec<&SupermajorityLink> = vec![&low_fin.justifying, &low_fin.finalizing];

    // Justification chain of the higher side, from its finalizing link down.
    let mut high_chain = vec![high_fin.finalizing.clone()];
    high_chain.extend(state.justification_chain(&high));

    let mut pair: Option<(SupermajorityLink, SupermajorityLink)> = None;
    'outer: for hl in &high_chain {
        for ll in &low_links {
            if hl.target.height == ll.target.height && hl.target != ll.target {
                pair = Some(((*ll).clone(), hl.clone()));
                break 'outer;
            }
        }
    }
    if pair.is_none() {
        let fin_link = &low_fin.finalizing;
        pair = high_chain
            .iter()
            .find(|hl| {
                hl.source.height < fin_link.source.height
                    && fin_link.target.height < hl.target.height
            })
            .map(|hl| (fin_link.clone(), hl.clone()));
    }

    let mut violators = BTreeMap::new();
    let mut reference_total = 0;
    let (link_a, link_b) = match pair {
        Some((la, lb)) => {
            for v in la.voters.intersection(&lb.voters) {
                let va = pool
                    .for_link(&la.source.block, &la.target.block)
                    .find(|x| x.validator == *v);
                let vb = pool
                    .for_link(&lb.source.block, &lb.target.block)
                    .find(|x| x.validator == *v);
                if let (Some(va), Some(vb)) = (va, vb) {
                    if let Ok(Some(violation)) = check_pair(va, vb) {
                        violators.insert(*v, violation);
                    }
                }
            }
            reference_total = [la.forward_total, la.rear_total, lb.forward_total, lb.rear_total]
                .into_iter()
                .filter(|t| *t > 0)
                .min()
                .unwrap_or(0);
            (Some(la), Some(lb))
        }
        None => (None, None),
    };
    let violator_weight = violators.keys().map(|v| reg.weight_of(*v)).sum();
    let registry_total = reg.records().map(|r| r.weight()).sum();
    Ok(AuditReport {
        a: a_m,
        b: b_n,
        link_a,
        link_b,
        violators,
        violator_weight,
        reference_total,
        registry_total,
    })
}

/// All validators named in any violation of the pool.
pub fn violators(pool: &VotePool) -> BTreeSet<ValidatorId> {
    scan(pool).into_iter().map(|v| v.validator).collect()
}
