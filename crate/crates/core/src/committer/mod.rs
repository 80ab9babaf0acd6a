//! Leader-slot decisions and the commit sequence.
//!
//! Every round `r >= 1` is the propose round of a wave with `leaders_per_round`
//! slots. A slot is decided by the direct rule once its certify round is
//! stored, or else through the indirect rule via the first later slot (past
//! the certify round) that is not skipped. Decided slots are sequenced in
//! ascending `(round, offset)` order up to the first undecided one; each
//! committed leader contributes its not-yet-delivered causal history.

pub mod bounds;
pub mod votes;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::coin;
use crate::dag::{BlockIdx, DagStore};
use crate::types::{Block, Round, Slot, SlotStatus, ValidatorId, WaveConfig};

pub use bounds::{direct_commit_lower_bound, BoundError};
pub use votes::{is_cert, is_vote, VoteIndex};

/// Round arithmetic of one decider instance (`round mod w`, leader offset).
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Decider {
    pub wave_length: u64,
    pub wave_offset: u64,
    pub leader_offset: usize,
}

impl Decider {
    pub fn new(wave_length: u64, wave_offset: u64, leader_offset: usize) -> Self {
        assert!(wave_offset < wave_length);
        Self {
            wave_length,
            wave_offset,
            leader_offset,
        }
    }

    pub fn for_slot(config: &WaveConfig, slot: Slot) -> Self {
        let w = config.wave_length();
        Self::new(w, slot.round.0 % w, usize::from(slot.offset))
    }

    pub fn wave_number(&self, round: Round) -> u64 {
        (round.0 - self.wave_offset) / self.wave_length
    }

    pub fn propose_round(&self, wave: u64) -> Round {
        Round(wave * self.wave_length + self.wave_offset)
    }

    pub fn certify_round(&self, wave: u64) -> Round {
        Round(wave * self.wave_length + self.wave_length - 1 + self.wave_offset)
    }

    pub fn vote_round(&self, wave: u64) -> Round {
        self.certify_round(wave) - 1
    }
}

/// Maps leader slots to elected validators.
pub trait LeaderSchedule: Send + Sync + fmt::Debug {
    /// `None` while the election for `slot` cannot be computed from `store`.
    fn leader(&self, store: &DagStore, config: &WaveConfig, slot: Slot) -> Option<ValidatorId>;
}

/// Elects leaders from the coin shares of the wave's certify round.
#[derive(Copy, Clone, Debug, Default)]
pub struct CoinSchedule;

impl LeaderSchedule for CoinSchedule {
    fn leader(&self, store: &DagStore, config: &WaveConfig, slot: Slot) -> Option<ValidatorId> {
        let certify = config.certify_round(slot.round);
        if store.authors_at(certify) < store.committee().quorum() {
            return None;
        }
        let shares = store
            .round_blocks(certify)
            .map(|i| store.block(i).coin_share());
        let value = coin::combine(shares, store.committee()).ok()?;
        Some(coin::elect(
            value,
            usize::from(slot.offset),
            store.committee(),
        ))
    }
}

/// Fixed table of leaders, for hand-built scenarios.
#[derive(Clone, Debug, Default)]
pub struct TableSchedule {
    table: BTreeMap<Slot, ValidatorId>,
}

impl TableSchedule {
    pub fn new(entries: impl IntoIterator<Item = (Slot, ValidatorId)>) -> Self {
        Self {
            table: entries.into_iter().collect(),
        }
    }
}

impl LeaderSchedule for TableSchedule {
    fn leader(&self, _: &DagStore, _: &WaveConfig, slot: Slot) -> Option<ValidatorId> {
        self.table.get(&slot).copied()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionRule {
    Direct,
    Indirect { anchor: Slot },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub slot: Slot,
    pub leader: Option<ValidatorId>,
    pub status: SlotStatus,
    /// `None` while undecided.
    pub rule: Option<DecisionRule>,
    /// Highest stored round when the decision was first reached.
    pub decided_at: Option<Round>,
}

/// A slot leaving the decision pipeline in sequence order. Committed slots
/// carry the newly delivered blocks, leader last.
#[derive(Clone, Debug)]
pub struct SequencedSlot {
    pub decision: SlotDecision,
    pub blocks: Vec<Arc<Block>>,
}

/// Fingerprint of the inputs of the direct rule for one slot.
type DirectInputs = (usize, usize, usize);

#[derive(Clone, Debug)]
pub struct Committer {
    config: WaveConfig,
    schedule: Arc<dyn LeaderSchedule>,
    leaders: FxHashMap<Slot, ValidatorId>,
    decided: BTreeMap<Slot, SlotDecision>,
    undecided_inputs: FxHashMap<Slot, DirectInputs>,
    next_slot: Slot,
    delivered: Vec<bool>,
    delivered_count: u64,
    votes: VoteIndex,
}

impl Committer {
    pub fn new(config: WaveConfig, schedule: Arc<dyn LeaderSchedule>) -> Self {
        Self {
            config,
            schedule,
            leaders: FxHashMap::default(),
            decided: BTreeMap::new(),
            undecided_inputs: FxHashMap::default(),
            next_slot: Slot::new(Round(1), 0),
            delivered: Vec::new(),
            delivered_count: 0,
            votes: VoteIndex::new(),
        }
    }

    pub fn with_coin(config: WaveConfig) -> Self {
        Self::new(config, Arc::new(CoinSchedule))
    }

    pub fn config(&self) -> &WaveConfig {
        &self.config
    }

    /// First slot not yet sequenced.
    pub fn next_slot(&self) -> Slot {
        self.next_slot
    }

    /// Number of blocks delivered so far.
    pub fn delivered_count(&self) -> u64 {
        self.delivered_count
    }

    pub fn is_delivered(&self, idx: BlockIdx) -> bool {
        self.delivered.get(idx as usize).copied().unwrap_or(false)
    }

    fn leader(&mut self, store: &DagStore, slot: Slot) -> Option<ValidatorId> {
        if let Some(&v) = self.leaders.get(&slot) {
            return Some(v);
        }
        let v = self.schedule.leader(store, &self.config, slot)?;
        self.leaders.insert(slot, v);
        Some(v)
    }

    fn leader_blocks(store: &DagStore, slot: Slot, leader: ValidatorId) -> Vec<BlockIdx> {
        let mut blocks = store.blocks_at(slot.round, leader).to_vec();
        blocks.sort_by_key(|&i| store.block(i).digest());
        blocks
    }

    fn try_direct(&mut self, store: &DagStore, slot: Slot) -> SlotStatus {
        let Some(leader) = self.leader(store, slot) else {
            return SlotStatus::Undecided;
        };
        let vote_round = self.config.vote_round(slot.round);
        let certify_round = self.config.certify_round(slot.round);
        let inputs = (
            store.round_len(vote_round),
            store.round_len(certify_round),
            store.blocks_at(slot.round, leader).len(),
        );
        if self.undecided_inputs.get(&slot) == Some(&inputs) {
            return SlotStatus::Undecided;
        }
        let quorum = store.committee().quorum();
        let leader_blocks = Self::leader_blocks(store, slot, leader);

        for &candidate in &leader_blocks {
            let mut certifiers = vec![false; store.committee().size()];
            for c in store.round_blocks(certify_round) {
                let author = store.block(c).author().index();
                if !certifiers[author] && self.votes.is_cert(store, c, candidate, vote_round) {
                    certifiers[author] = true;
                }
            }
            if certifiers.iter().filter(|&&x| x).count() >= quorum {
                self.undecided_inputs.remove(&slot);
                return SlotStatus::Commit(store.block(candidate).reference());
            }
        }

        let skipped = if leader_blocks.is_empty() {
            store.authors_at(vote_round) >= quorum
        } else {
            leader_blocks.iter().all(|&candidate| {
                let mut non_voters = vec![false; store.committee().size()];
                for v in store.round_blocks(vote_round) {
                    let author = store.block(v).author().index();
                    if !non_voters[author] && !self.votes.is_vote(store, v, candidate) {
                        non_voters[author] = true;
                    }
                }
                non_voters.iter().filter(|&&x| x).count() >= quorum
            })
        };
        if skipped {
            self.undecided_inputs.remove(&slot);
            SlotStatus::Skip
        } else {
            self.undecided_inputs.insert(slot, inputs);
            SlotStatus::Undecided
        }
    }

    fn try_indirect(&mut self, store: &DagStore, slot: Slot, anchor: BlockIdx) -> SlotStatus {
        let Some(leader) = self.leader(store, slot) else {
            return SlotStatus::Undecided;
        };
        let vote_round = self.config.vote_round(slot.round);
        let certify_round = self.config.certify_round(slot.round);
        let certificates: Vec<BlockIdx> = store.round_blocks(certify_round).collect();
        for candidate in Self::leader_blocks(store, slot, leader) {
            for &c in &certificates {
                if self.votes.is_cert(store, c, candidate, vote_round) && store.reaches(anchor, c) {
                    return SlotStatus::Commit(store.block(candidate).reference());
                }
            }
        }
        SlotStatus::Skip
    }

    /// Classifies every slot from the sequencing frontier up to the highest
    /// slot whose certify round is stored. Returns decisions in ascending slot
    /// order. Decided slots are cached; undecided ones are re-examined on the
    /// next call.
    pub fn try_decide(&mut self, store: &DagStore) -> Vec<SlotDecision> {
        let w = self.config.wave_length();
        let highest = store.highest_round();
        if highest.0 < w {
            return Vec::new();
        }
        let top = highest - (w - 1);
        let mut descending: Vec<SlotDecision> = Vec::new();
        let mut round = top;
        while round >= self.next_slot.round {
            for offset in (0..self.config.leaders_per_round()).rev() {
                let slot = Slot::new(round, offset);
                if slot < self.next_slot {
                    continue;
                }
                if let Some(decision) = self.decided.get(&slot) {
                    descending.push(*decision);
                    continue;
                }
                let mut status = self.try_direct(store, slot);
                let mut rule = status.is_decided().then_some(DecisionRule::Direct);
                if !status.is_decided() {
                    let certify = self.config.certify_round(slot.round);
                    // `descending` holds every higher slot; scan it upwards.
                    let anchor = descending
                        .iter()
                        .rev()
                        .find(|d| d.slot.round > certify && d.status != SlotStatus::Skip);
                    if let Some(SlotDecision {
                        slot: anchor_slot,
                        status: SlotStatus::Commit(anchor_ref),
                        ..
                    }) = anchor
                    {
                        let anchor_slot = *anchor_slot;
                        let anchor_idx = store
                            .index_of(anchor_ref)
                            .expect("committed anchor is stored");
                        status = self.try_indirect(store, slot, anchor_idx);
                        rule = status.is_decided().then_some(DecisionRule::Indirect {
                            anchor: anchor_slot,
                        });
                    }
                }
                let decision = SlotDecision {
                    slot,
                    leader: self.leaders.get(&slot).copied(),
                    status,
                    rule,
                    decided_at: status.is_decided().then_some(highest),
                };
                if status.is_decided() {
                    self.decided.insert(slot, decision);
                }
                descending.push(decision);
            }
            if round.0 == 0 {
                break;
            }
            round = round.prev();
        }
        descending.reverse();
        descending
    }

    /// Runs the decision pass and sequences every newly decided slot up to
    /// the first undecided one. Calling it again without new blocks returns
    /// nothing.
    pub fn extend_commit_sequence(&mut self, store: &DagStore) -> Vec<SequencedSlot> {
        self.try_decide(store);
        let mut out = Vec::new();
        while let Some(decision) = self.decided.remove(&self.next_slot) {
            let blocks = match decision.status {
                SlotStatus::Commit(leader) => {
                    let idx = store.index_of(&leader).expect("committed leader is stored");
                    self.linearize(store, idx)
                }
                _ => Vec::new(),
            };
            self.leaders.remove(&decision.slot);
            self.undecided_inputs.remove(&decision.slot);
            out.push(SequencedSlot { decision, blocks });
            self.next_slot = self.successor(self.next_slot);
        }
        if !out.is_empty() {
            self.votes.prune_below(self.next_slot.round);
        }
        out
    }

    fn successor(&self, slot: Slot) -> Slot {
        if usize::from(slot.offset) + 1 < self.config.leaders_per_round() {
            Slot::new(slot.round, usize::from(slot.offset) + 1)
        } else {
            Slot::new(slot.round.next(), 0)
        }
    }

    /// Not-yet-delivered causal history of `leader`, ascending by
    /// `(round, author, digest)`. Marks it delivered.
    fn linearize(&mut self, store: &DagStore, leader: BlockIdx) -> Vec<Arc<Block>> {
        if self.delivered.len() < store.len() {
            self.delivered.resize(store.len(), false);
        }
        let delivered = &self.delivered;
        let mut history = store.history_until(leader, |i| delivered[i as usize]);
        history.sort_by_key(|&i| {
            let b = store.block(i);
            (b.round(), b.author(), b.digest())
        });
        for &i in &history {
            self.delivered[i as usize] = true;
        }
        self.delivered_count += history.len() as u64;
        history
            .into_iter()
            .map(|i| Arc::clone(store.block(i)))
            .collect()
    }
}

/// Decisions a fresh committer reaches on `store`, without caching effects.
pub fn decide_snapshot(
    store: &DagStore,
    config: WaveConfig,
    schedule: Arc<dyn LeaderSchedule>,
) -> Vec<SlotDecision> {
    Committer::new(config, schedule).try_decide(store)
}

/// `LinearizeSubDags` over an explicit leader list, starting from nothing
/// delivered.
pub fn linearize_sub_dags(store: &DagStore, leaders: &[BlockIdx]) -> Vec<Arc<Block>> {
    let mut committer = Committer::new(
        WaveConfig::new(5, 1, store.committee().size()).expect("valid config"),
        Arc::new(CoinSchedule),
    );
    leaders
        .iter()
        .flat_map(|&l| committer.linearize(store, l))
        .collect()
}
