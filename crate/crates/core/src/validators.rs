//! Validator lifecycle: deposits, dynasties, withdrawal delay and the
//! forward/rear validator sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidatorError {
    #[error("validator {0} was already a member and may never rejoin")]
    Rejoin(ValidatorId),
    #[error("deposit must be positive")]
    ZeroDeposit,
    #[error("validator {0} is not active")]
    NotActive(ValidatorId),
    #[error("validator {0} already has an end dynasty")]
    AlreadyLeaving(ValidatorId),
    #[error("validator {0} has not withdrawn")]
    NotLeaving(ValidatorId),
    #[error("unknown validator {0}")]
    UnknownValidator(ValidatorId),
    #[error("validator {0} is already slashed")]
    AlreadySlashed(ValidatorId),
}

/// Validator index. The simulated public key lives in [`crate::votes::Keyring`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u32);

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Debug for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorRecord {
    pub id: ValidatorId,
    pub deposit: u64,
    pub start_dynasty: u64,
    /// `None` means the end dynasty is infinite.
    pub end_dynasty: Option<u64>,
    pub withdrawal_unlock_epoch: Option<u64>,
    pub slashed: bool,
    pub withdrawn: bool,
}

impl ValidatorRecord {
    pub fn in_forward_set(&self, d: u64) -> bool {
        self.start_dynasty <= d && self.end_dynasty.is_none_or(|de| d < de)
    }

    pub fn in_rear_set(&self, d: u64) -> bool {
        self.start_dynasty < d && self.end_dynasty.is_none_or(|de| d <= de)
    }

    /// Deposit counted toward thresholds; slashed validators weigh nothing.
    pub fn weight(&self) -> u64 {
        if self.slashed {
            0
        } else {
            self.deposit
        }
    }
}

/// Chain-local validator state. Cloned freely when evaluating forks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    records: BTreeMap<ValidatorId, ValidatorRecord>,
    /// Withdrawal delay in epochs.
    pub withdrawal_delay: u64,
    /// Finder's fees paid out to evidence submitters.
    pub credits: BTreeMap<ValidatorId, u64>,
    pub burned: u64,
    /// Leaked funds held for later release.
    pub escrowed: u64,
    pub withdrawn_total: u64,
}

impl Registry {
    pub fn new(withdrawal_delay: u64) -> Registry {
        Registry {
            records: BTreeMap::new(),
            withdrawal_delay,
            credits: BTreeMap::new(),
            burned: 0,
            escrowed: 0,
            withdrawn_total: 0,
        }
    }

    /// Registry whose members are active from dynasty 0 onward.
    pub fn genesis(
        members: impl IntoIterator<Item = (ValidatorId, u64)>,
        withdrawal_delay: u64,
    ) -> Registry {
        let mut reg = Registry::new(withdrawal_delay);
        for (id, deposit) in members {
            reg.records.insert(
                id,
                ValidatorRecord {
                    id,
                    deposit,
                    start_dynasty: 0,
                    end_dynasty: None,
                    withdrawal_unlock_epoch: None,
                    slashed: false,
                    withdrawn: false,
                },
            );
        }
        reg
    }

    pub fn get(&self, v: ValidatorId) -> Result<&ValidatorRecord, ValidatorError> {
        self.records.get(&v).ok_or(ValidatorError::UnknownValidator(v))
    }

    pub(crate) fn get_mut(&mut self, v: ValidatorId) -> Result<&mut ValidatorRecord, ValidatorError> {
        self.records
            .get_mut(&v)
            .ok_or(ValidatorError::UnknownValidator(v))
    }

    pub fn records(&self) -> impl Iterator<Item = &ValidatorRecord> {
        self.records.values()
    }

    pub fn contains(&self, v: ValidatorId) -> bool {
        self.records.contains_key(&v)
    }

    pub fn weight_of(&self, v: ValidatorId) -> u64 {
        self.records.get(&v).map_or(0, ValidatorRecord::weight)
    }

    /// Deposit included in a block of dynasty `d`; the validator joins at `d + 2`.
    pub fn process_deposit(
        &mut self,
        v: ValidatorId,
        amount: u64,
        d: u64,
    ) -> Result<(), ValidatorError> {
        if self.records.contains_key(&v) {
            return Err(ValidatorError::Rejoin(v));
        }
        if amount == 0 {
            return Err(ValidatorError::ZeroDeposit);
        }
        self.records.insert(
            v,
            ValidatorRecord {
                id: v,
                deposit: amount,
                start_dynasty: d + 2,
                end_dynasty: None,
                withdrawal_unlock_epoch: None,
                slashed: false,
                withdrawn: false,
            },
        );
        Ok(())
    }

    /// Withdraw included in a block of dynasty `d`; the validator leaves at `d + 2`.
    ///
    /// The withdrawal delay starts counting at the first block of the end
    /// dynasty, see [`Registry::anchor_withdrawals`].
    pub fn process_withdraw(&mut self, v: ValidatorId, d: u64) -> Result<(), ValidatorError> {
        let rec = self.get_mut(v).map_err(|_| ValidatorError::NotActive(v))?;
        if rec.end_dynasty.is_some() {
            return Err(ValidatorError::AlreadyLeaving(v));
        }
        if rec.slashed || rec.start_dynasty > d {
            return Err(ValidatorError::NotActive(v));
        }
        rec.end_dynasty = Some(d + 2);
        Ok(())
    }

    /// Starts the withdrawal delay for every validator whose end dynasty is
    /// `dynasty`, given the epoch of the first block in that dynasty.
    pub fn anchor_withdrawals(&mut self, dynasty: u64, epoch: u64) {
        let delay = self.withdrawal_delay;
        for rec in self.records.values_mut() {
            if rec.end_dynasty == Some(dynasty) && rec.withdrawal_unlock_epoch.is_none() {
                rec.withdrawal_unlock_epoch = Some(epoch + delay);
            }
        }
    }

    pub fn forward_set(&self, d: u64) -> BTreeSet<ValidatorId> {
        self.records
            .values()
            .filter(|r| r.in_forward_set(d))
            .map(|r| r.id)
            .collect()
    }

    pub fn rear_set(&self, d: u64) -> BTreeSet<ValidatorId> {
        self.records
            .values()
            .filter(|r| r.in_rear_set(d))
            .map(|r| r.id)
            .collect()
    }

    pub fn total_weight<'a>(
        &self,
        set: impl IntoIterator<Item = &'a ValidatorId>,
    ) -> Result<u64, ValidatorError> {
        set.into_iter()
            .map(|v| self.get(*v).map(ValidatorRecord::weight))
            .sum()
    }

    pub fn withdrawable(&self, v: ValidatorId, current_epoch: u64) -> Result<bool, ValidatorError> {
        let rec = self.get(v)?;
        if rec.end_dynasty.is_none() {
            return Err(ValidatorError::NotLeaving(v));
        }
        Ok(!rec.slashed
            && !rec.withdrawn
            && rec
                .withdrawal_unlock_epoch
                .is_some_and(|unlock| current_epoch >= unlock))
    }

    /// Pays out a withdrawable deposit; returns the amount released.
    pub fn complete_withdrawal(
        &mut self,
        v: ValidatorId,
        current_epoch: u64,
    ) -> Result<u64, ValidatorError> {
        if !self.withdrawable(v, current_epoch)? {
            return Err(ValidatorError::NotActive(v));
        }
        let rec = self.get_mut(v)?;
        let amount = rec.deposit;
        rec.deposit = 0;
        rec.withdrawn = true;
        self.withdrawn_total += amount;
        Ok(amount)
    }

    /// Takes the whole deposit; returns the amount seized.
    pub(crate) fn seize(&mut self, v: ValidatorId) -> Result<u64, ValidatorError> {
        let rec = self.get_mut(v)?;
        if rec.slashed {
            return Err(ValidatorError::AlreadySlashed(v));
        }
        rec.slashed = true;
        Ok(std::mem::take(&mut rec.deposit))
    }

    pub(crate) fn set_deposit(&mut self, v: ValidatorId, deposit: u64) {
        if let Some(rec) = self.records.get_mut(&v) {
            rec.deposit = deposit;
        }
    }

    pub fn total_deposits(&self) -> u64 {
        self.records.values().map(|r| r.deposit).sum()
    }
}
