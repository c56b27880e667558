//! Block tree and the checkpoint tree derived from it.
//!
//! Every block whose height is a multiple of the checkpoint spacing `E` is a
//! checkpoint; the checkpoint height of such a block is `block_height / E`.
//!
//! # Canonical block encoding
//!
//! Block ids are SHA-256 digests of the following byte layout (all integers
//! big-endian):
//!
//! ```text
//! "ffg/block/v1"          12 bytes domain tag
//! parent id               32 bytes
//! block_height            u64
//! timestamp               u64
//! proposer                u8 tag (0 = external, 1 = validator) + u32 index
//! payload length          u32
//! per transaction         u32 byte length + transaction encoding
//! ```
//!
//! Transactions encode as a one-byte kind tag followed by the kind's fields:
//!
//! ```text
//! 0x01 VoteInclusion      vote encoding (116 bytes, see `votes`)
//! 0x02 SlashEvidence      u32 len + vote, u32 len + vote
//! 0x03 Deposit            u32 validator index, u64 amount
//! 0x04 Withdraw           u32 validator index
//! ```

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::validators::ValidatorId;
use crate::votes::Vote;

/// Default distance between checkpoints, in blocks.
pub const DEFAULT_CHECKPOINT_SPACING: u64 = 100;

const BLOCK_DOMAIN: &[u8; 12] = b"ffg/block/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("unknown parent block {0}")]
    UnknownParent(BlockId),
    #[error("block {0} already present")]
    DuplicateId(BlockId),
    #[error("block id {claimed} does not match canonical digest {computed}")]
    DigestMismatch { claimed: BlockId, computed: BlockId },
    #[error("block height {got} is not parent height + 1 (expected {expected})")]
    BadHeight { expected: u64, got: u64 },
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block {0} is not a checkpoint")]
    NotACheckpoint(BlockId),
    #[error("checkpoint spacing must be at least 1")]
    ZeroSpacing,
}

/// 32-byte block digest. The genesis block has the all-zero id.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BlockId(pub [u8; 32]);

impl BlockId {
    pub const GENESIS: BlockId = BlockId([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<BlockId> {
        let bytes = hex::decode(s).ok()?;
        Some(BlockId(bytes.try_into().ok()?))
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockId({self})")
    }
}

impl Serialize for BlockId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        BlockId::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposer {
    External,
    Validator(ValidatorId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transaction {
    VoteInclusion(Vote),
    SlashEvidence(Vote, Vote),
    Deposit(ValidatorId, u64),
    Withdraw(ValidatorId),
}

impl Transaction {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Transaction::VoteInclusion(v) => {
                out.push(0x01);
                out.extend_from_slice(&v.encode());
            }
            Transaction::SlashEvidence(a, b) => {
                out.push(0x02);
                for v in [a, b] {
                    let enc = v.encode();
                    out.extend_from_slice(&(enc.len() as u32).to_be_bytes());
                    out.extend_from_slice(&enc);
                }
            }
            Transaction::Deposit(v, amount) => {
                out.push(0x03);
                out.extend_from_slice(&v.0.to_be_bytes());
                out.extend_from_slice(&amount.to_be_bytes());
            }
            Transaction::Withdraw(v) => {
                out.push(0x04);
                out.extend_from_slice(&v.0.to_be_bytes());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub parent: Option<BlockId>,
    pub block_height: u64,
    pub timestamp: u64,
    pub proposer: Proposer,
    pub payload: Vec<Transaction>,
}

impl Block {
    /// The genesis block: all-zero id, height 0, timestamp 0.
    pub fn genesis() -> Block {
        Block {
            id: BlockId::GENESIS,
            parent: None,
            block_height: 0,
            timestamp: 0,
            proposer: Proposer::External,
            payload: Vec::new(),
        }
    }

    /// Builds a child block with its canonical id.
    pub fn new(
        parent: BlockId,
        block_height: u64,
        timestamp: u64,
        proposer: Proposer,
        payload: Vec<Transaction>,
    ) -> Block {
        let mut block = Block {
            id: BlockId::GENESIS,
            parent: Some(parent),
            block_height,
            timestamp,
            proposer,
            payload,
        };
        block.id = block.canonical_id();
        block
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(96);
        out.extend_from_slice(BLOCK_DOMAIN);
        out.extend_from_slice(&self.parent.unwrap_or(BlockId::GENESIS).0);
        out.extend_from_slice(&self.block_height.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        match self.proposer {
            Proposer::External => {
                out.push(0);
                out.extend_from_slice(&0u32.to_be_bytes());
            }
            Proposer::Validator(v) => {
                out.push(1);
                out.extend_from_slice(&v.0.to_be_bytes());
            }
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        for tx in &self.payload {
            let enc = tx.encode();
            out.extend_from_slice(&(enc.len() as u32).to_be_bytes());
            out.extend_from_slice(&enc);
        }
        out
    }

    pub fn canonical_id(&self) -> BlockId {
        if self.parent.is_none() {
            return BlockId::GENESIS;
        }
        BlockId(Sha256::digest(self.encode()).into())
    }

    pub fn is_genesis(&self) -> bool {
        self.parent.is_none()
    }
}

/// A checkpoint: a block whose height is `cp_height * E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Checkpoint {
    pub block: BlockId,
    pub height: u64,
}

impl Checkpoint {
    pub fn genesis() -> Checkpoint {
        Checkpoint {
            block: BlockId::GENESIS,
            height: 0,
        }
    }
}

impl fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.block, self.height)
    }
}

#[derive(Debug, Clone)]
pub struct BlockTree {
    spacing: u64,
    blocks: HashMap<BlockId, Block>,
    children: HashMap<BlockId, Vec<BlockId>>,
    order: Vec<BlockId>,
}

impl BlockTree {
    /// Creates a tree holding only the genesis block.
    pub fn new(spacing: u64) -> Result<BlockTree, ChainError> {
        if spacing == 0 {
            return Err(ChainError::ZeroSpacing);
        }
        let genesis = Block::genesis();
        let mut blocks = HashMap::new();
        blocks.insert(genesis.id, genesis);
        Ok(BlockTree {
            spacing,
            blocks,
            children: HashMap::new(),
            order: vec![BlockId::GENESIS],
        })
    }

    pub fn spacing(&self) -> u64 {
        self.spacing
    }

    pub fn root(&self) -> BlockId {
        BlockId::GENESIS
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.blocks.contains_key(id)
    }

    pub fn get(&self, id: &BlockId) -> Result<&Block, ChainError> {
        self.blocks.get(id).ok_or(ChainError::UnknownBlock(*id))
    }

    pub fn children(&self, id: &BlockId) -> &[BlockId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Blocks in insertion order; parents always precede children.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.order.iter().map(move |id| &self.blocks[id])
    }

    pub fn leaves(&self) -> Vec<BlockId> {
        self.order
            .iter()
            .copied()
            .filter(|id| self.children(id).is_empty())
            .collect()
    }

    pub fn insert_block(&mut self, block: Block) -> Result<(), ChainError> {
        let parent_id = match block.parent {
            Some(p) => p,
            None => return Err(ChainError::DuplicateId(block.id)),
        };
        if self.blocks.contains_key(&block.id) {
            return Err(ChainError::DuplicateId(block.id));
        }
        let parent = self
            .blocks
            .get(&parent_id)
            .ok_or(ChainError::UnknownParent(parent_id))?;
        if block.block_height != parent.block_height + 1 {
            return Err(ChainError::BadHeight {
                expected: parent.block_height + 1,
                got: block.block_height,
            });
        }
        let computed = block.canonical_id();
        if computed != block.id {
            return Err(ChainError::DigestMismatch {
                claimed: block.id,
                computed,
            });
        }
        self.children.entry(parent_id).or_default().push(block.id);
        self.order.push(block.id);
        self.blocks.insert(block.id, block);
        Ok(())
    }

    pub fn block_height(&self, id: &BlockId) -> Result<u64, ChainError> {
        Ok(self.get(id)?.block_height)
    }

    /// `Some(block_height / E)` for checkpoints, `None` otherwise.
    pub fn checkpoint_height(&self, id: &BlockId) -> Result<Option<u64>, ChainError> {
        let h = self.block_height(id)?;
        Ok((h % self.spacing == 0).then_some(h / self.spacing))
    }

    pub fn checkpoint(&self, id: &BlockId) -> Result<Checkpoint, ChainError> {
        match self.checkpoint_height(id)? {
            Some(height) => Ok(Checkpoint { block: *id, height }),
            None => Err(ChainError::NotACheckpoint(*id)),
        }
    }

    /// The ancestor of `id` (or `id` itself) at `height`, if `height` is not above it.
    pub fn ancestor_at(&self, id: &BlockId, height: u64) -> Result<Option<BlockId>, ChainError> {
        let mut cur = self.get(id)?;
        if height > cur.block_height {
            return Ok(None);
        }
        while cur.block_height > height {
            // Parents are always present for non-genesis blocks.
            cur = &self.blocks[&cur.parent.expect("non-genesis block has a parent")];
        }
        Ok(Some(cur.id))
    }

    /// True iff `a` lies on the parent path from `b` to the root; reflexive.
    pub fn is_ancestor(&self, a: &BlockId, b: &BlockId) -> Result<bool, ChainError> {
        let ha = self.block_height(a)?;
        Ok(self.ancestor_at(b, ha)? == Some(*a))
    }

    pub fn conflicting(&self, a: &Checkpoint, b: &Checkpoint) -> Result<bool, ChainError> {
        self.checkpoint(&a.block)?;
        self.checkpoint(&b.block)?;
        Ok(!self.is_ancestor(&a.block, &b.block)? && !self.is_ancestor(&b.block, &a.block)?)
    }

    /// Checkpoints from the root to `c`, inclusive at both ends.
    pub fn checkpoint_chain(&self, c: &BlockId) -> Result<Vec<Checkpoint>, ChainError> {
        let top = self.checkpoint(c)?;
        let mut out = Vec::with_capacity(top.height as usize + 1);
        let mut cur = self.get(c)?;
        loop {
            if cur.block_height % self.spacing == 0 {
                out.push(Checkpoint {
                    block: cur.id,
                    height: cur.block_height / self.spacing,
                });
            }
            match cur.parent {
                Some(p) => cur = &self.blocks[&p],
                None => break,
            }
        }
        out.reverse();
        Ok(out)
    }

    /// Checkpoint ancestors of any block, root first, `id` last if it is one.
    pub fn checkpoint_chain_through(&self, id: &BlockId) -> Result<Vec<Checkpoint>, ChainError> {
        let h = self.block_height(id)?;
        let top = self
            .ancestor_at(id, h - h % self.spacing)?
            .expect("checkpoint ancestor is not above the block");
        self.checkpoint_chain(&top)
    }

    /// Path of block ids from the root to `id`, inclusive.
    pub fn path_to(&self, id: &BlockId) -> Result<Vec<BlockId>, ChainError> {
        let mut cur = self.get(id)?;
        let mut out = vec![cur.id];
        while let Some(p) = cur.parent {
            cur = &self.blocks[&p];
            out.push(cur.id);
        }
        out.reverse();
        Ok(out)
    }
}
