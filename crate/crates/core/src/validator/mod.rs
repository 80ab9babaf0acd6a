//! Per-validator state machine.
//!
//! The validator is driven by its host (simulator or network node): blocks and
//! fetch requests go in, blocks to broadcast, fetch requests and committed
//! sub-DAGs come out. It never touches a clock; the host passes `now` in
//! whatever unit its backoff is configured in.
//!
//! Durability: every accepted block is logged before it can influence a
//! proposal, own proposals are logged before they are released, and a commit
//! checkpoint is logged before committed blocks are handed to the host. Any
//! log failure is fatal to the instance.

pub mod synchronizer;

use std::collections::VecDeque;
use std::sync::Arc;

use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::committer::{Committer, LeaderSchedule, SequencedSlot};
use crate::crypto::Digest;
use crate::dag::{DagStore, InsertOutcome, ValidationError, DEFAULT_PENDING_BOUND};
use crate::types::{
    canonical_parents, Block, BlockRef, Committee, Round, Transaction, ValidatorId, ValidatorKeys,
    WaveConfig,
};
use crate::wire::{Limits, Wal, WalError, WalRecord};

pub use synchronizer::{Backoff, Synchronizer};

pub const DEFAULT_POOL_BOUND: usize = 1_000_000;

/// When a validator moves to the next round.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AdvancePolicy {
    /// As soon as 2f+1 blocks of the current round are stored.
    Quorum,
    /// Once all n blocks are stored, or 2f+1 after the host reports a timeout.
    WaitForAll,
}

#[derive(Clone, Debug)]
pub struct ValidatorConfig {
    pub wave: WaveConfig,
    pub limits: Limits,
    pub pool_bound: usize,
    pub max_block_transactions: usize,
    pub pending_bound: usize,
    pub advance: AdvancePolicy,
    pub fetch_backoff: Backoff,
}

impl ValidatorConfig {
    pub fn new(wave: WaveConfig) -> Self {
        Self {
            wave,
            limits: Limits::default(),
            pool_bound: DEFAULT_POOL_BOUND,
            max_block_transactions: Limits::default().max_transactions,
            pending_bound: DEFAULT_PENDING_BOUND,
            advance: AdvancePolicy::Quorum,
            fetch_backoff: Backoff { base: 1, cap: 64 },
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubmitError {
    #[error("transaction pool is full")]
    PoolFull,
    #[error("transaction of {0} bytes exceeds the size limit")]
    TooLarge(usize),
}

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("log record {index} holds an invalid block: {reason}")]
    InvalidRecord {
        index: usize,
        reason: ValidationError,
    },
    #[error("log record {index} holds an own proposal of another author")]
    ForeignProposal { index: usize },
    #[error(transparent)]
    Wal(#[from] WalError),
}

/// A fresh own block, ready to broadcast, and the slots it sequenced.
pub type Proposal = (Arc<Block>, Vec<SequencedSlot>);

/// What handling a batch of input produced.
#[derive(Debug, Default)]
pub struct Effects {
    pub stored: Vec<BlockRef>,
    pub buffered: Vec<BlockRef>,
    pub rejected: Vec<(BlockRef, ValidationError)>,
    /// Fetch requests to send, grouped by peer.
    pub fetches: Vec<(ValidatorId, Vec<BlockRef>)>,
    /// Newly sequenced slots, in order.
    pub committed: Vec<SequencedSlot>,
}

pub struct Validator {
    id: ValidatorId,
    keys: ValidatorKeys,
    committee: Arc<Committee>,
    config: ValidatorConfig,
    store: DagStore,
    committer: Committer,
    synchronizer: Synchronizer,
    wal: Box<dyn Wal>,
    last_proposal: Option<Arc<Block>>,
    pool: VecDeque<Transaction>,
    pooled: FxHashSet<Digest>,
    included: FxHashSet<Digest>,
    /// Delivered-block count covered by the last checkpoint.
    checkpoint: u64,
    /// Blocks already handed to the host before a crash; suppressed on replay.
    emitted_before_recovery: u64,
}

impl Validator {
    pub fn new(
        keys: ValidatorKeys,
        committee: Arc<Committee>,
        config: ValidatorConfig,
        schedule: Arc<dyn LeaderSchedule>,
        wal: Box<dyn Wal>,
    ) -> Self {
        let store = DagStore::with_pending_bound(Arc::clone(&committee), config.pending_bound);
        Self {
            id: keys.id,
            committer: Committer::new(config.wave, schedule),
            synchronizer: Synchronizer::new(keys.id, committee.size(), config.fetch_backoff),
            keys,
            committee,
            config,
            store,
            wal,
            last_proposal: None,
            pool: VecDeque::new(),
            pooled: FxHashSet::default(),
            included: FxHashSet::default(),
            checkpoint: 0,
            emitted_before_recovery: 0,
        }
    }

    /// Rebuilds a validator from its log. Every block is re-validated, own
    /// proposals included. Returns the validator and the committed slots whose
    /// blocks had not been handed out before the crash.
    pub fn recover(
        keys: ValidatorKeys,
        committee: Arc<Committee>,
        config: ValidatorConfig,
        schedule: Arc<dyn LeaderSchedule>,
        wal: Box<dyn Wal>,
        records: Vec<WalRecord>,
    ) -> Result<(Self, Vec<SequencedSlot>), RecoveryError> {
        let mut v = Self::new(keys, committee, config, schedule, wal);
        for (index, record) in records.into_iter().enumerate() {
            let block = match record {
                WalRecord::Checkpoint(count) => {
                    v.checkpoint = v.checkpoint.max(count);
                    continue;
                }
                WalRecord::ReceivedBlock(block) => block,
                WalRecord::OwnProposal(block) => {
                    if block.author() != v.id {
                        return Err(RecoveryError::ForeignProposal { index });
                    }
                    if v.last_proposal
                        .as_ref()
                        .is_none_or(|p| p.round() < block.round())
                    {
                        v.last_proposal = Some(Arc::clone(&block));
                    }
                    block
                }
            };
            match v.store.insert(Arc::clone(&block)) {
                InsertOutcome::Invalid(reason) => {
                    return Err(RecoveryError::InvalidRecord { index, reason })
                }
                InsertOutcome::Stored(refs) => v.note_stored(&refs),
                InsertOutcome::Buffered(_) | InsertOutcome::Duplicate => {}
            }
        }
        v.emitted_before_recovery = v.checkpoint;
        let committed = v.sequence()?;
        Ok((v, committed))
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn committee(&self) -> &Arc<Committee> {
        &self.committee
    }

    pub fn config(&self) -> &ValidatorConfig {
        &self.config
    }

    pub fn store(&self) -> &DagStore {
        &self.store
    }

    pub fn committer(&self) -> &Committer {
        &self.committer
    }

    /// Round of the last own proposal (genesis before the first one).
    pub fn round(&self) -> Round {
        self.last_proposal
            .as_ref()
            .map_or(Round::GENESIS, |b| b.round())
    }

    pub fn last_proposal(&self) -> Option<&Arc<Block>> {
        self.last_proposal.as_ref()
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn submit_transaction(&mut self, tx: Transaction) -> Result<(), SubmitError> {
        if tx.len() > self.config.limits.max_transaction_bytes {
            return Err(SubmitError::TooLarge(tx.len()));
        }
        let key = Digest::of(tx.payload());
        if self.included.contains(&key) || self.pooled.contains(&key) {
            return Ok(());
        }
        if self.pool.len() >= self.config.pool_bound {
            return Err(SubmitError::PoolFull);
        }
        self.pooled.insert(key);
        self.pool.push_back(tx);
        Ok(())
    }

    fn note_stored(&mut self, refs: &[BlockRef]) {
        for r in refs {
            let block = self.store.get(r).expect("just stored");
            for tx in block.transactions() {
                self.included.insert(Digest::of(tx.payload()));
            }
        }
    }

    pub fn on_block_received(
        &mut self,
        from: ValidatorId,
        block: Arc<Block>,
        now: u64,
    ) -> Result<Effects, WalError> {
        self.on_blocks_received(std::iter::once((from, block)), now)
    }

    /// Handles several blocks and runs the committer once at the end.
    pub fn on_blocks_received(
        &mut self,
        blocks: impl IntoIterator<Item = (ValidatorId, Arc<Block>)>,
        now: u64,
    ) -> Result<Effects, WalError> {
        let mut effects = Effects::default();
        let mut changed = false;
        for (from, block) in blocks {
            let reference = block.reference();
            match self.store.insert(Arc::clone(&block)) {
                InsertOutcome::Duplicate => {}
                InsertOutcome::Invalid(reason) => effects.rejected.push((reference, reason)),
                InsertOutcome::Stored(refs) => {
                    self.wal.append(&WalRecord::ReceivedBlock(block))?;
                    self.note_stored(&refs);
                    effects.stored.extend(refs);
                    changed = true;
                }
                InsertOutcome::Buffered(missing) => {
                    self.wal.append(&WalRecord::ReceivedBlock(block))?;
                    self.synchronizer.note_missing(&missing, from, now);
                    effects.buffered.push(reference);
                }
            }
        }
        if changed {
            effects.committed = self.sequence()?;
        }
        effects.fetches = self.poll_fetches(now);
        Ok(effects)
    }

    /// Requests due at `now` for ancestors still missing.
    pub fn poll_fetches(&mut self, now: u64) -> Vec<(ValidatorId, Vec<BlockRef>)> {
        if self.store.pending_len() == 0 && self.synchronizer.outstanding() == 0 {
            return Vec::new();
        }
        let missing = self.store.missing_ancestors();
        self.synchronizer.poll(&missing, now)
    }

    pub fn next_fetch_due(&self) -> Option<u64> {
        self.synchronizer.next_due()
    }

    /// Stored blocks among `refs`; unknown ones are omitted.
    pub fn on_fetch_request(&self, refs: &[BlockRef]) -> Vec<Arc<Block>> {
        refs.iter()
            .filter_map(|r| self.store.get(r).cloned())
            .collect()
    }

    /// Round the next proposal would have, if one is possible now.
    pub fn next_proposal_round(&self, timed_out: bool) -> Option<Round> {
        let quorum_round = self.store.highest_quorum_round();
        let next = quorum_round.next();
        if next <= self.round() {
            return None;
        }
        if self.config.advance == AdvancePolicy::WaitForAll
            && !timed_out
            && self.store.authors_at(quorum_round) < self.committee.size()
        {
            return None;
        }
        Some(next)
    }

    /// Builds, logs and stores the next block if a quorum of the previous
    /// round is available. The returned block is ready to broadcast.
    pub fn try_advance_round(&mut self, timed_out: bool) -> Result<Option<Proposal>, WalError> {
        let Some(round) = self.next_proposal_round(timed_out) else {
            return Ok(None);
        };
        let parents = self.select_parents(round);
        let transactions = self.take_transactions();
        let block = Arc::new(Block::new_signed(
            self.id,
            round,
            parents,
            transactions,
            &self.keys.coin,
            &self.keys.signing,
        ));
        self.wal
            .append(&WalRecord::OwnProposal(Arc::clone(&block)))?;
        match self.store.insert(Arc::clone(&block)) {
            InsertOutcome::Stored(refs) => self.note_stored(&refs),
            other => panic!("own proposal not stored: {other:?}"),
        }
        self.last_proposal = Some(Arc::clone(&block));
        let committed = self.sequence()?;
        Ok(Some((block, committed)))
    }

    fn select_parents(&self, round: Round) -> Vec<BlockRef> {
        let store = &self.store;
        let previous = round.prev();
        let mut parents = Vec::new();
        let mut taken = FxHashSet::default();
        for author in self.committee.ids() {
            let candidates = store.blocks_at(previous, author);
            let chosen = candidates
                .iter()
                .map(|&i| store.block(i))
                .min_by_key(|b| b.digest());
            if let Some(b) = chosen {
                parents.push(b.reference());
                taken.insert((b.author(), b.round()));
            }
        }
        if let Some(own) = &self.last_proposal {
            if taken.insert((own.author(), own.round())) {
                parents.push(own.reference());
            }
        }
        let mut extra = 0;
        for tip in store.tips() {
            if tip.round >= previous || extra >= self.committee.size() {
                break;
            }
            if tip.round > Round::GENESIS && taken.insert((tip.author, tip.round)) {
                parents.push(tip);
                extra += 1;
            }
        }
        canonical_parents(self.id, parents)
    }

    fn take_transactions(&mut self) -> Vec<Transaction> {
        let mut out = Vec::new();
        while out.len() < self.config.max_block_transactions {
            let Some(tx) = self.pool.pop_front() else {
                break;
            };
            let key = Digest::of(tx.payload());
            self.pooled.remove(&key);
            if !self.included.contains(&key) {
                out.push(tx);
            }
        }
        out
    }

    /// Runs the committer, checkpoints, and drops blocks handed out before a
    /// crash.
    fn sequence(&mut self) -> Result<Vec<SequencedSlot>, WalError> {
        let before = self.committer.delivered_count();
        let mut sequenced = self.committer.extend_commit_sequence(&self.store);
        let after = self.committer.delivered_count();
        if after > self.checkpoint {
            self.wal.append(&WalRecord::Checkpoint(after))?;
            self.checkpoint = after;
        }
        if before < self.emitted_before_recovery {
            let mut position = before;
            for slot in &mut sequenced {
                let len = slot.blocks.len() as u64;
                let skip = self
                    .emitted_before_recovery
                    .saturating_sub(position)
                    .min(len) as usize;
                slot.blocks.drain(..skip);
                position += len;
            }
        }
        Ok(sequenced)
    }
}

impl std::fmt::Debug for Validator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Validator")
            .field("id", &self.id)
            .field("round", &self.round())
            .field("store", &self.store)
            .finish()
    }
}
