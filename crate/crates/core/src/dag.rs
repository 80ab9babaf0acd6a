//! Local DAG store.
//!
//! Blocks whose causal history is complete are *stored* and addressed by a
//! dense index ([`BlockIdx`]); blocks with missing ancestors wait in a bounded
//! pending buffer and are promoted as soon as their last missing parent is
//! stored. Equivocating blocks are all kept.

use std::collections::BTreeSet;
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use crate::crypto::Digest;
use crate::types::{is_canonical_order, Block, BlockRef, Committee, Round, ValidatorId};

pub type BlockIdx = u32;

pub const DEFAULT_PENDING_BOUND: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("signature does not verify")]
    BadSignature,
    #[error("author {0} is not in the committee")]
    UnknownAuthor(ValidatorId),
    #[error("only {got} distinct previous-round parents, need {needed}")]
    InsufficientParents { got: usize, needed: usize },
    #[error("two parents for the same author and round")]
    DuplicateParent,
    #[error("coin share does not verify")]
    BadCoinShare,
    #[error("parents are not in canonical order")]
    NonCanonicalParents,
    #[error("parent round is not below the block round")]
    ParentRoundTooHigh,
    #[error("parent reference does not match the stored block")]
    MislabeledParent,
    #[error("round-0 block that is not the committee genesis")]
    BadGenesis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Valid,
    Invalid(ValidationError),
    MissingAncestors(Vec<BlockRef>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    /// The block and every pending block it completed, in storage order.
    Stored(Vec<BlockRef>),
    /// Waiting for these parents.
    Buffered(Vec<BlockRef>),
    Duplicate,
    Invalid(ValidationError),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("block {0:?} is not stored")]
pub struct UnknownBlock(pub BlockRef);

#[derive(Clone)]
struct Pending {
    block: Arc<Block>,
    missing: FxHashSet<BlockRef>,
}

#[derive(Clone, Default)]
struct RoundIndex {
    by_author: Vec<Vec<BlockIdx>>,
    authors: usize,
    blocks: usize,
}

#[derive(Clone)]
pub struct DagStore {
    committee: Arc<Committee>,
    blocks: Vec<Arc<Block>>,
    parents: Vec<Vec<BlockIdx>>,
    referenced: Vec<bool>,
    by_digest: FxHashMap<Digest, BlockIdx>,
    rounds: Vec<RoundIndex>,
    highest_round: Round,
    highest_quorum_round: Round,
    equivocations: BTreeSet<(Round, ValidatorId)>,
    pending: FxHashMap<Digest, Pending>,
    pending_order: BTreeSet<(Round, Digest)>,
    waiting: FxHashMap<BlockRef, Vec<Digest>>,
    pending_bound: usize,
    tips: BTreeSet<(Round, ValidatorId, Digest)>,
}

impl DagStore {
    pub fn new(committee: Arc<Committee>) -> Self {
        Self::with_pending_bound(committee, DEFAULT_PENDING_BOUND)
    }

    pub fn with_pending_bound(committee: Arc<Committee>, pending_bound: usize) -> Self {
        let mut store = Self {
            blocks: Vec::new(),
            parents: Vec::new(),
            referenced: Vec::new(),
            by_digest: FxHashMap::default(),
            rounds: Vec::new(),
            highest_round: Round::GENESIS,
            highest_quorum_round: Round::GENESIS,
            equivocations: BTreeSet::new(),
            pending: FxHashMap::default(),
            pending_order: BTreeSet::new(),
            waiting: FxHashMap::default(),
            pending_bound,
            tips: BTreeSet::new(),
            committee,
        };
        for block in store.committee.genesis() {
            store.store(Arc::new(block));
        }
        store
    }

    pub fn committee(&self) -> &Arc<Committee> {
        &self.committee
    }

    /// Checks a block against the committee and the current store contents.
    pub fn validate(&self, block: &Block) -> Validation {
        if let Err(e) = self.check_structure(block) {
            return Validation::Invalid(e);
        }
        let mut missing = Vec::new();
        for parent in block.parents() {
            match self.by_digest.get(&parent.digest) {
                Some(&idx) if self.blocks[idx as usize].reference() == *parent => {}
                Some(_) => return Validation::Invalid(ValidationError::MislabeledParent),
                None => missing.push(*parent),
            }
        }
        if missing.is_empty() {
            Validation::Valid
        } else {
            Validation::MissingAncestors(missing)
        }
    }

    fn check_structure(&self, block: &Block) -> Result<(), ValidationError> {
        let committee = &self.committee;
        let author = block.author();
        let key = committee
            .key(author)
            .ok_or(ValidationError::UnknownAuthor(author))?;
        if block.is_genesis() {
            return if *block == Block::genesis(author) {
                Ok(())
            } else {
                Err(ValidationError::BadGenesis)
            };
        }
        if !key.verify(&block.digest(), block.signature()) {
            return Err(ValidationError::BadSignature);
        }
        let round = block.round();
        let mut seen = FxHashSet::default();
        let mut previous_round_authors = 0;
        for parent in block.parents() {
            if parent.round >= round {
                return Err(ValidationError::ParentRoundTooHigh);
            }
            if !committee.contains(parent.author) {
                return Err(ValidationError::UnknownAuthor(parent.author));
            }
            if !seen.insert((parent.author, parent.round)) {
                return Err(ValidationError::DuplicateParent);
            }
            if parent.round == round.prev() {
                previous_round_authors += 1;
            }
        }
        if previous_round_authors < committee.quorum() {
            return Err(ValidationError::InsufficientParents {
                got: previous_round_authors,
                needed: committee.quorum(),
            });
        }
        if !is_canonical_order(author, block.parents()) {
            return Err(ValidationError::NonCanonicalParents);
        }
        let share = block.coin_share();
        if share.author != author
            || share.round != round
            || !committee.coin_setup().verify_share(share)
        {
            return Err(ValidationError::BadCoinShare);
        }
        Ok(())
    }

    /// Validates and inserts. Idempotent by digest.
    pub fn insert(&mut self, block: Arc<Block>) -> InsertOutcome {
        let digest = block.digest();
        if self.by_digest.contains_key(&digest) || self.pending.contains_key(&digest) {
            return InsertOutcome::Duplicate;
        }
        match self.validate(&block) {
            Validation::Invalid(e) => InsertOutcome::Invalid(e),
            Validation::Valid => InsertOutcome::Stored(self.store_and_promote(block)),
            Validation::MissingAncestors(missing) => {
                self.buffer(block, &missing);
                InsertOutcome::Buffered(missing)
            }
        }
    }

    fn buffer(&mut self, block: Arc<Block>, missing: &[BlockRef]) {
        let digest = block.digest();
        for parent in missing {
            self.waiting.entry(*parent).or_default().push(digest);
        }
        self.pending_order.insert((block.round(), digest));
        self.pending.insert(
            digest,
            Pending {
                block,
                missing: missing.iter().copied().collect(),
            },
        );
        while self.pending.len() > self.pending_bound {
            let &(round, oldest) = self.pending_order.iter().next().expect("non-empty");
            self.pending_order.remove(&(round, oldest));
            self.evict(oldest);
        }
    }

    fn evict(&mut self, digest: Digest) {
        let Some(pending) = self.pending.remove(&digest) else {
            return;
        };
        for parent in &pending.missing {
            if let Some(children) = self.waiting.get_mut(parent) {
                children.retain(|d| *d != digest);
                if children.is_empty() {
                    self.waiting.remove(parent);
                }
            }
        }
    }

    fn store_and_promote(&mut self, block: Arc<Block>) -> Vec<BlockRef> {
        let mut stored = Vec::new();
        let mut queue = vec![block];
        while let Some(block) = queue.pop() {
            let reference = block.reference();
            self.store(block);
            stored.push(reference);
            let Some(children) = self.waiting.remove(&reference) else {
                continue;
            };
            for child in children {
                let ready = self.pending.get_mut(&child).is_some_and(|pending| {
                    pending.missing.remove(&reference);
                    pending.missing.is_empty()
                });
                if ready {
                    let pending = self.pending.remove(&child).expect("pending entry");
                    self.pending_order.remove(&(pending.block.round(), child));
                    queue.push(pending.block);
                }
            }
        }
        stored
    }

    fn store(&mut self, block: Arc<Block>) {
        let idx = self.blocks.len() as BlockIdx;
        let round = block.round();
        let author = block.author();
        let parents: Vec<BlockIdx> = block
            .parents()
            .iter()
            .map(|p| self.by_digest[&p.digest])
            .collect();
        for &p in &parents {
            if !self.referenced[p as usize] {
                self.referenced[p as usize] = true;
                let b = &self.blocks[p as usize];
                self.tips.remove(&(b.round(), b.author(), b.digest()));
            }
        }
        self.tips.insert((round, author, block.digest()));
        self.by_digest.insert(block.digest(), idx);
        let r = round.as_usize();
        if self.rounds.len() <= r {
            self.rounds.resize_with(r + 1, || RoundIndex {
                by_author: vec![Vec::new(); self.committee.size()],
                authors: 0,
                blocks: 0,
            });
        }
        self.rounds[r].blocks += 1;
        let slot = &mut self.rounds[r].by_author[author.index()];
        slot.push(idx);
        if slot.len() == 1 {
            self.rounds[r].authors += 1;
            if self.rounds[r].authors >= self.committee.quorum()
                && round > self.highest_quorum_round
            {
                self.highest_quorum_round = round;
            }
        } else {
            self.equivocations.insert((round, author));
        }
        self.highest_round = self.highest_round.max(round);
        self.blocks.push(block);
        self.parents.push(parents);
        self.referenced.push(false);
    }

    /// Parents needed to promote every pending block, excluding parents that
    /// are themselves pending.
    pub fn missing_ancestors(&self) -> Vec<BlockRef> {
        let mut out: Vec<BlockRef> = self
            .waiting
            .keys()
            .filter(|r| !self.pending.contains_key(&r.digest))
            .copied()
            .collect();
        out.sort();
        out
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_pending(&self, digest: &Digest) -> bool {
        self.pending.contains_key(digest)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn highest_round(&self) -> Round {
        self.highest_round
    }

    /// Highest round with blocks from at least 2f+1 distinct authors.
    pub fn highest_quorum_round(&self) -> Round {
        self.highest_quorum_round
    }

    pub fn index_of(&self, reference: &BlockRef) -> Option<BlockIdx> {
        self.by_digest
            .get(&reference.digest)
            .copied()
            .filter(|&i| self.blocks[i as usize].reference() == *reference)
    }

    pub fn index_of_digest(&self, digest: &Digest) -> Option<BlockIdx> {
        self.by_digest.get(digest).copied()
    }

    pub fn contains(&self, reference: &BlockRef) -> bool {
        self.index_of(reference).is_some()
    }

    pub fn get(&self, reference: &BlockRef) -> Option<&Arc<Block>> {
        self.index_of(reference).map(|i| &self.blocks[i as usize])
    }

    pub fn block(&self, idx: BlockIdx) -> &Arc<Block> {
        &self.blocks[idx as usize]
    }

    /// Resolved parents of a stored block, in the block's parent order.
    pub fn parent_indices(&self, idx: BlockIdx) -> &[BlockIdx] {
        &self.parents[idx as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockIdx, &Arc<Block>)> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (i as BlockIdx, b))
    }

    /// `DAG[round, author]`: more than one block only for equivocators.
    pub fn blocks_at(&self, round: Round, author: ValidatorId) -> &[BlockIdx] {
        self.rounds
            .get(round.as_usize())
            .and_then(|r| r.by_author.get(author.index()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// `DAG[round, *]`, grouped by author.
    pub fn round_blocks(&self, round: Round) -> impl Iterator<Item = BlockIdx> + '_ {
        self.rounds
            .get(round.as_usize())
            .into_iter()
            .flat_map(|r| r.by_author.iter().flatten().copied())
    }

    /// Number of distinct authors with a stored block at `round`.
    pub fn authors_at(&self, round: Round) -> usize {
        self.rounds.get(round.as_usize()).map_or(0, |r| r.authors)
    }

    /// Number of stored blocks at `round`, equivocations included.
    pub fn round_len(&self, round: Round) -> usize {
        self.rounds.get(round.as_usize()).map_or(0, |r| r.blocks)
    }

    pub fn is_equivocator(&self, round: Round, author: ValidatorId) -> bool {
        self.equivocations.contains(&(round, author))
    }

    pub fn equivocations(&self) -> impl Iterator<Item = (Round, ValidatorId)> + '_ {
        self.equivocations.iter().copied()
    }

    /// Stored blocks not referenced by any other stored block, ascending by
    /// `(round, author, digest)`.
    pub fn tips(&self) -> impl Iterator<Item = BlockRef> + '_ {
        self.tips
            .iter()
            .map(|&(round, author, digest)| BlockRef::new(author, round, digest))
    }

    /// Whether `to` is in the causal history of `from` (reflexive).
    pub fn exists_path(&self, from: &BlockRef, to: &BlockRef) -> Result<bool, UnknownBlock> {
        let a = self.index_of(from).ok_or(UnknownBlock(*from))?;
        let b = self.index_of(to).ok_or(UnknownBlock(*to))?;
        Ok(self.reaches(a, b))
    }

    /// Iterative DFS from `from`, pruned below the round of `to`.
    pub fn reaches(&self, from: BlockIdx, to: BlockIdx) -> bool {
        if from == to {
            return true;
        }
        let target_round = self.blocks[to as usize].round();
        if self.blocks[from as usize].round() <= target_round {
            return false;
        }
        let mut visited = FxHashSet::default();
        let mut stack = vec![from];
        while let Some(idx) = stack.pop() {
            for &p in &self.parents[idx as usize] {
                if p == to {
                    return true;
                }
                if self.blocks[p as usize].round() > target_round && visited.insert(p) {
                    stack.push(p);
                }
            }
        }
        false
    }

    /// Causal history of `idx` (itself included), skipping genesis blocks and
    /// stopping at blocks for which `stop` returns true.
    pub fn history_until(
        &self,
        idx: BlockIdx,
        mut stop: impl FnMut(BlockIdx) -> bool,
    ) -> Vec<BlockIdx> {
        let mut out = Vec::new();
        let mut visited = FxHashSet::default();
        let mut stack = vec![idx];
        visited.insert(idx);
        while let Some(i) = stack.pop() {
            if self.blocks[i as usize].is_genesis() || stop(i) {
                continue;
            }
            out.push(i);
            for &p in &self.parents[i as usize] {
                if visited.insert(p) {
                    stack.push(p);
                }
            }
        }
        out
    }
}

impl std::fmt::Debug for DagStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DagStore")
            .field("stored", &self.blocks.len())
            .field("pending", &self.pending.len())
            .field("highest_round", &self.highest_round)
            .finish()
    }
}
