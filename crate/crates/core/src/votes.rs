//! The vote message, simulated signatures and the vote pool.
//!
//! # Canonical vote encoding
//!
//! ```text
//! validator index   u32 big-endian
//! source id         32 bytes
//! target id         32 bytes
//! source height     u64 big-endian
//! target height     u64 big-endian
//! signature         32 bytes
//! ```
//!
//! The signature covers `"ffg/vote/v1" || source || target || h(s) || h(t)`
//! and is the SHA-256 digest of the validator secret followed by that
//! message. It is a keyed digest, not a public-key signature: verifying it
//! needs the [`Keyring`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{BlockId, BlockTree};
use crate::validators::{Registry, ValidatorId};

pub const VOTE_ENCODING_LEN: usize = 116;

const VOTE_DOMAIN: &[u8] = b"ffg/vote/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VoteError {
    #[error("signature of vote by {0} does not verify")]
    BadSignature(ValidatorId),
    #[error("malformed vote encoding")]
    Malformed,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Signature(pub [u8; 32]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig({})", &hex::encode(self.0)[..12])
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32-byte signature"))?;
        Ok(Signature(arr))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    pub fn from_bytes(bytes: [u8; 32]) -> SecretKey {
        SecretKey(bytes)
    }

    /// Simulated public key: digest of the secret.
    pub fn public_key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"ffg/pub");
        h.update(self.0);
        h.finalize().into()
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vote {
    pub validator: ValidatorId,
    pub source: BlockId,
    pub target: BlockId,
    pub source_height: u64,
    pub target_height: u64,
    pub signature: Signature,
}

fn signing_message(source: &BlockId, target: &BlockId, h_s: u64, h_t: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(VOTE_DOMAIN.len() + 80);
    out.extend_from_slice(VOTE_DOMAIN);
    out.extend_from_slice(&source.0);
    out.extend_from_slice(&target.0);
    out.extend_from_slice(&h_s.to_be_bytes());
    out.extend_from_slice(&h_t.to_be_bytes());
    out
}

fn keyed_digest(secret: &SecretKey, msg: &[u8]) -> Signature {
    let mut h = Sha256::new();
    h.update(secret.0);
    h.update(msg);
    Signature(h.finalize().into())
}

pub fn sign_vote(
    secret: &SecretKey,
    validator: ValidatorId,
    source: BlockId,
    target: BlockId,
    source_height: u64,
    target_height: u64,
) -> Vote {
    let signature = keyed_digest(
        secret,
        &signing_message(&source, &target, source_height, target_height),
    );
    Vote {
        validator,
        source,
        target,
        source_height,
        target_height,
        signature,
    }
}

impl Vote {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VOTE_ENCODING_LEN);
        out.extend_from_slice(&self.validator.0.to_be_bytes());
        out.extend_from_slice(&self.source.0);
        out.extend_from_slice(&self.target.0);
        out.extend_from_slice(&self.source_height.to_be_bytes());
        out.extend_from_slice(&self.target_height.to_be_bytes());
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Vote, VoteError> {
        if bytes.len() != VOTE_ENCODING_LEN {
            return Err(VoteError::Malformed);
        }
        let arr32 = |r: std::ops::Range<usize>| -> [u8; 32] { bytes[r].try_into().unwrap() };
        let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().unwrap());
        Ok(Vote {
            validator: ValidatorId(u32::from_be_bytes(bytes[0..4].try_into().unwrap())),
            source: BlockId(arr32(4..36)),
            target: BlockId(arr32(36..68)),
            source_height: u64_at(68),
            target_height: u64_at(76),
            signature: Signature(arr32(84..116)),
        })
    }

    /// Whether the two votes carry the same five message fields.
    pub fn same_message(&self, other: &Vote) -> bool {
        self.validator == other.validator
            && self.source == other.source
            && self.target == other.target
            && self.source_height == other.source_height
            && self.target_height == other.target_height
    }
}

/// Per-validator secrets derived from the run seed.
#[derive(Debug, Clone, Default)]
pub struct Keyring {
    secrets: BTreeMap<ValidatorId, SecretKey>,
}

impl Keyring {
    pub fn from_seed(seed: u64, ids: impl IntoIterator<Item = ValidatorId>) -> Keyring {
        let secrets = ids
            .into_iter()
            .map(|id| {
                let mut h = Sha256::new();
                h.update(b"ffg/secret");
                h.update(seed.to_be_bytes());
                h.update(id.0.to_be_bytes());
                (id, SecretKey(h.finalize().into()))
            })
            .collect();
        Keyring { secrets }
    }

    pub fn secret(&self, id: ValidatorId) -> Option<&SecretKey> {
        self.secrets.get(&id)
    }

    pub fn public_key(&self, id: ValidatorId) -> Option<[u8; 32]> {
        self.secrets.get(&id).map(SecretKey::public_key)
    }

    pub fn sign(
        &self,
        id: ValidatorId,
        source: BlockId,
        target: BlockId,
        source_height: u64,
        target_height: u64,
    ) -> Option<Vote> {
        let secret = self.secrets.get(&id)?;
        Some(sign_vote(secret, id, source, target, source_height, target_height))
    }

    pub fn verify(&self, vote: &Vote) -> bool {
        self.secrets.get(&vote.validator).is_some_and(|secret| {
            let msg = signing_message(
                &vote.source,
                &vote.target,
                vote.source_height,
                vote.target_height,
            );
            keyed_digest(secret, &msg) == vote.signature
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoteClass {
    CountableForLink,
    SignatureOnlyValid,
    Invalid,
}

/// Classifies `vote` against the tree and the registry snapshot of the
/// target's chain, where `target_dynasty` is the target's dynasty there.
pub fn validate_vote(
    tree: &BlockTree,
    reg: &Registry,
    keyring: &Keyring,
    vote: &Vote,
    target_dynasty: u64,
) -> VoteClass {
    if !keyring.verify(vote) {
        return VoteClass::Invalid;
    }
    let heights_ok = matches!(
        (
            tree.checkpoint_height(&vote.source),
            tree.checkpoint_height(&vote.target),
        ),
        (Ok(Some(hs)), Ok(Some(ht))) if hs == vote.source_height && ht == vote.target_height
    );
    if !heights_ok || vote.source_height >= vote.target_height {
        return VoteClass::SignatureOnlyValid;
    }
    if !tree.is_ancestor(&vote.source, &vote.target).unwrap_or(false) {
        return VoteClass::SignatureOnlyValid;
    }
    let member = reg.get(vote.validator).is_ok_and(|r| {
        r.in_forward_set(target_dynasty) || r.in_rear_set(target_dynasty)
    });
    if member {
        VoteClass::CountableForLink
    } else {
        VoteClass::SignatureOnlyValid
    }
}

/// Signature-checked votes, indexed for link tallies and slashing scans.
#[derive(Debug, Clone, Default)]
pub struct VotePool {
    votes: Vec<Vote>,
    seen: HashSet<Vote>,
    by_link: HashMap<(BlockId, BlockId), Vec<usize>>,
    by_validator: BTreeMap<ValidatorId, Vec<usize>>,
}

impl VotePool {
    pub fn new() -> VotePool {
        VotePool::default()
    }

    /// Adds a vote after checking its signature; returns false for duplicates.
    pub fn add_vote(&mut self, keyring: &Keyring, vote: Vote) -> Result<bool, VoteError> {
        if !keyring.verify(&vote) {
            return Err(VoteError::BadSignature(vote.validator));
        }
        Ok(self.insert_unchecked(vote))
    }

    /// Adds a vote whose signature the caller already verified.
    pub fn insert_unchecked(&mut self, vote: Vote) -> bool {
        if self.seen.contains(&vote) {
            return false;
        }
        let idx = self.votes.len();
        self.by_link
            .entry((vote.source, vote.target))
            .or_default()
            .push(idx);
        self.by_validator.entry(vote.validator).or_default().push(idx);
        self.seen.insert(vote.clone());
        self.votes.push(vote);
        true
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    pub fn contains(&self, vote: &Vote) -> bool {
        self.seen.contains(vote)
    }

    /// All votes in arrival order.
    pub fn votes(&self) -> &[Vote] {
        &self.votes
    }

    pub fn for_link(&self, source: &BlockId, target: &BlockId) -> impl Iterator<Item = &Vote> {
        self.by_link
            .get(&(*source, *target))
            .into_iter()
            .flatten()
            .map(move |&i| &self.votes[i])
    }

    /// Distinct `(source, target)` pairs that have at least one vote.
    pub fn links(&self) -> impl Iterator<Item = &(BlockId, BlockId)> {
        self.by_link.keys()
    }

    pub fn by_validator(&self, v: ValidatorId) -> impl Iterator<Item = &Vote> {
        self.by_validator
            .get(&v)
            .into_iter()
            .flatten()
            .map(move |&i| &self.votes[i])
    }

    pub fn validators(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        self.by_validator.keys().copied()
    }

    pub fn at_target_height(
        &self,
        v: ValidatorId,
        target_height: u64,
    ) -> impl Iterator<Item = &Vote> {
        self.by_validator(v)
            .filter(move |vote| vote.target_height == target_height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{Block, Proposer};
    use proptest::prelude::*;

    fn keyring() -> Keyring {
        Keyring::from_seed(7, (0..4).map(ValidatorId))
    }

    #[test]
    fn signing_is_deterministic_and_verifies() {
        let kr = keyring();
        let a = kr.sign(ValidatorId(1), BlockId([1; 32]), BlockId([2; 32]), 0, 1).unwrap();
        let b = kr.sign(ValidatorId(1), BlockId([1; 32]), BlockId([2; 32]), 0, 1).unwrap();
        assert_eq!(a, b);
        let c = kr.sign(ValidatorId(1), BlockId([1; 32]), BlockId([3; 32]), 0, 1).unwrap();
        assert_ne!(a.signature, c.signature);
        assert!(kr.verify(&a));

        let mut forged = a.clone();
        forged.target_height = 2;
        assert!(!kr.verify(&forged));
        let mut stolen = a.clone();
        stolen.validator = ValidatorId(2);
        assert!(!kr.verify(&stolen));
        assert_eq!(Vote::decode(&a.encode()).unwrap(), a);
        assert_eq!(Vote::decode(&[0u8; 3]), Err(VoteError::Malformed));
    }

    #[test]
    fn pool_dedups_and_keeps_equivocations() {
        let kr = keyring();
        let mut pool = VotePool::new();
        let v1 = kr.sign(ValidatorId(0), BlockId([0; 32]), BlockId([2; 32]), 0, 4).unwrap();
        let v2 = kr.sign(ValidatorId(0), BlockId([1; 32]), BlockId([3; 32]), 1, 4).unwrap();
        assert!(pool.add_vote(&kr, v1.clone()).unwrap());
        assert!(!pool.add_vote(&kr, v1.clone()).unwrap());
        assert_eq!(pool.len(), 1);
        assert!(pool.add_vote(&kr, v2).unwrap());
        assert_eq!(pool.at_target_height(ValidatorId(0), 4).count(), 2);
        assert_eq!(pool.for_link(&v1.source, &v1.target).count(), 1);

        let mut bad = v1;
        bad.signature = Signature([9; 32]);
        assert_eq!(
            pool.add_vote(&kr, bad),
            Err(VoteError::BadSignature(ValidatorId(0)))
        );
    }

    #[test]
    fn classification() {
        let kr = keyring();
        let reg = Registry::genesis((0..4).map(|i| (ValidatorId(i), 10)), 10);
        let mut tree = BlockTree::new(1).unwrap();
        let a = Block::new(tree.root(), 1, 1, Proposer::External, vec![]);
        let b = Block::new(tree.root(), 1, 2, Proposer::External, vec![]);
        let c = Block::new(a.id, 2, 3, Proposer::External, vec![]);
        for blk in [a.clone(), b.clone(), c.clone()] {
            tree.insert_block(blk).unwrap();
        }
        let good = kr.sign(ValidatorId(0), a.id, c.id, 1, 2).unwrap();
        assert_eq!(validate_vote(&tree, &reg, &kr, &good, 1), VoteClass::CountableForLink);

        let off_branch = kr.sign(ValidatorId(0), b.id, c.id, 1, 2).unwrap();
        assert_eq!(
            validate_vote(&tree, &reg, &kr, &off_branch, 1),
            VoteClass::SignatureOnlyValid
        );
        let wrong_height = kr.sign(ValidatorId(0), a.id, c.id, 0, 2).unwrap();
        assert_eq!(
            validate_vote(&tree, &reg, &kr, &wrong_height, 1),
            VoteClass::SignatureOnlyValid
        );
        let mut forged = good.clone();
        forged.signature = Signature([1; 32]);
        assert_eq!(validate_vote(&tree, &reg, &kr, &forged, 1), VoteClass::Invalid);

        let outsider_kr = Keyring::from_seed(7, (0..6).map(ValidatorId));
        let outsider = outsider_kr.sign(ValidatorId(5), a.id, c.id, 1, 2).unwrap();
        assert_eq!(
            validate_vote(&tree, &reg, &outsider_kr, &outsider, 1),
            VoteClass::SignatureOnlyValid
        );
    }

    proptest! {
        #[test]
        fn encoding_is_injective(
            a in (0u32..4, any::<[u8; 32]>(), any::<[u8; 32]>(), 0u64..8, 0u64..8),
            b in (0u32..4, any::<[u8; 32]>(), any::<[u8; 32]>(), 0u64..8, 0u64..8),
        ) {
            let kr = keyring();
            let va = kr.sign(ValidatorId(a.0), BlockId(a.1), BlockId(a.2), a.3, a.4).unwrap();
            let vb = kr.sign(ValidatorId(b.0), BlockId(b.1), BlockId(b.2), b.3, b.4).unwrap();
            prop_assert_eq!(va == vb, va.encode() == vb.encode());
        }
    }
}
