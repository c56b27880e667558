//! Inactivity leak: validators that fail to vote lose a fraction of their
//! deposit every epoch until the ones still voting form a supermajority.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::validators::{Registry, ValidatorId};
use crate::{two_thirds, Fraction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LeakError {
    #[error("leak rate must lie strictly between 0 and 1, got {0}")]
    BadRate(Fraction),
    #[error("online weight is zero; no number of leak epochs reaches a supermajority")]
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LeakDisposition {
    #[default]
    Burn,
    /// Held back and released once the withdrawal delay passes.
    ReturnAfterDelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakConfig {
    pub rate: Fraction,
    /// Added to the rate for each consecutive epoch without finalization.
    #[serde(default)]
    pub escalation: Option<Fraction>,
    #[serde(default)]
    pub disposition: LeakDisposition,
}

impl LeakConfig {
    pub fn new(rate: Fraction) -> Result<LeakConfig, LeakError> {
        let cfg = LeakConfig {
            rate,
            escalation: None,
            disposition: LeakDisposition::Burn,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LeakError> {
        if !self.rate.is_proper() {
            return Err(LeakError::BadRate(self.rate));
        }
        Ok(())
    }

    /// Rate in force after `streak` epochs without finalization, capped below 1.
    pub fn effective_rate(&self, streak: u64) -> Fraction {
        let Some(step) = self.escalation else {
            return self.rate;
        };
        // Common denominator: rate + streak * step.
        let den = self.rate.den as u128 * step.den as u128;
        let num = self.rate.num as u128 * step.den as u128
            + streak as u128 * step.num as u128 * self.rate.den as u128;
        let num = num.min(den - 1);
        // Reduce back into u64 range if needed.
        let mut n = num;
        let mut d = den;
        while d > u64::MAX as u128 {
            n >>= 1;
            d >>= 1;
        }
        Fraction::new((n as u64).max(1), d as u64)
    }

    /// Deposit after one epoch of not voting.
    pub fn leaked_deposit(&self, deposit: u64, streak: u64) -> u64 {
        deposit - self.effective_rate(streak).floor_mul(deposit)
    }
}

/// Applies one epoch of leak to every member of `active` that is not in
/// `voted`. Returns the total amount removed from deposits.
pub fn apply_epoch_leak(
    reg: &mut Registry,
    active: &BTreeSet<ValidatorId>,
    voted: &BTreeSet<ValidatorId>,
    cfg: &LeakConfig,
    streak: u64,
) -> u64 {
    let mut leaked = 0;
    for v in active.difference(voted) {
        let Ok(rec) = reg.get(*v) else { continue };
        if rec.slashed || rec.withdrawn {
            continue;
        }
        let before = rec.deposit;
        let after = cfg.leaked_deposit(before, streak);
        reg.set_deposit(*v, after);
        leaked += before - after;
    }
    match cfg.disposition {
        LeakDisposition::Burn => reg.burned += leaked,
        LeakDisposition::ReturnAfterDelay => reg.escrowed += leaked,
    }
    leaked
}

/// Smallest number of leak epochs after which `w_on` alone passes the
/// two-thirds test against `w_on` plus the leaked offline weight.
pub fn epochs_to_supermajority(w_on: u64, w_off: u64, cfg: &LeakConfig) -> Result<u64, LeakError> {
    cfg.validate()?;
    let mut off = w_off;
    let mut k = 0;
    loop {
        if two_thirds(w_on, w_on + off) && (w_on > 0 || off == 0) {
            return Ok(k);
        }
        if w_on == 0 {
            return Err(LeakError::Unreachable);
        }
        off = cfg.leaked_deposit(off, k);
        k += 1;
    }
}
