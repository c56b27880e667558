//! Oracles written against the definitions, independent of the library code
//! they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ffg_core::{ValidatorId, Vote};

/// Two distinct votes by one validator that break a slashing condition.
pub fn slashable(a: &Vote, b: &Vote) -> bool {
    if a.validator != b.validator {
        return false;
    }
    let same = a.source == b.source
        && a.target == b.target
        && a.source_height == b.source_height
        && a.target_height == b.target_height;
    if same {
        return false;
    }
    let double = a.target_height == b.target_height;
    let inside = |x: &Vote, y: &Vote| x.source_height < y.source_height && y.target_height < x.target_height;
    double || inside(a, b) || inside(b, a)
}

/// Every validator with at least one slashable pair, by brute force.
pub fn pair_scan(votes: &[Vote]) -> BTreeSet<ValidatorId> {
    let mut out = BTreeSet::new();
    for (i, a) in votes.iter().enumerate() {
        for b in &votes[i + 1..] {
            if slashable(a, b) {
                out.insert(a.validator);
            }
        }
    }
    out
}

/// Leak epochs until the online weight is two thirds of the total, leaking
/// each offline deposit separately and rounding the loss down.
pub fn leak_epochs(online: &[u64], offline: &[u64], num: u64, den: u64) -> u64 {
    let on: u64 = online.iter().sum();
    let mut off = offline.to_vec();
    let mut k = 0;
    while 3 * on < 2 * (on + off.iter().sum::<u64>()) {
        for d in off.iter_mut() {
            *d -= *d * num / den;
        }
        k += 1;
        assert!(k < 10_000, "leak never reaches a supermajority");
    }
    k
}

/// Justified and finalized checkpoint heights on a single chain, given the
/// voting weight behind each `(source, target)` height pair.
pub fn chain_finality(links: &BTreeMap<(u64, u64), u64>, total: u64) -> (BTreeSet<u64>, BTreeSet<u64>) {
    let supermajority = |w: u64| w > 0 && 3 * w >= 2 * total;
    let mut justified = BTreeSet::from([0]);
    loop {
        let before = justified.len();
        for (&(s, t), &w) in links {
            if justified.contains(&s) && supermajority(w) {
                justified.insert(t);
            }
        }
        if justified.len() == before {
            break;
        }
    }
    let mut finalized = BTreeSet::from([0]);
    for &c in &justified {
        if links.get(&(c, c + 1)).is_some_and(|w| supermajority(*w)) {
            finalized.insert(c);
        }
    }
    (justified, finalized)
}
