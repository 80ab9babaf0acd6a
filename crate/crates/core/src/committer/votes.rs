//! Vote and certificate predicates.

use rustc_hash::FxHashMap;

use crate::dag::{BlockIdx, DagStore};
use crate::types::{Round, ValidatorId};

/// Memoized `VotedBlock`: the first block of `(author, round)` met by a
/// depth-first walk over parents in their stored order, skipping subtrees at
/// or below `round`.
///
/// The answer for a block depends only on the block and its (immutable)
/// history, so entries never go stale while the store only grows.
#[derive(Clone, Default, Debug)]
pub struct VoteIndex {
    memo: FxHashMap<(BlockIdx, ValidatorId, Round), Option<BlockIdx>>,
}

impl VoteIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }

    /// Drops entries about target rounds below `round`.
    pub fn prune_below(&mut self, round: Round) {
        self.memo.retain(|&(_, _, r), _| r >= round);
    }

    pub fn voted_block(
        &mut self,
        store: &DagStore,
        from: BlockIdx,
        author: ValidatorId,
        round: Round,
    ) -> Option<BlockIdx> {
        if store.block(from).round() <= round {
            return None;
        }
        if let Some(&hit) = self.memo.get(&(from, author, round)) {
            return hit;
        }
        let mut result = None;
        for &parent in store.parent_indices(from) {
            let block = store.block(parent);
            if block.author() == author && block.round() == round {
                result = Some(parent);
                break;
            }
            if let Some(found) = self.voted_block(store, parent, author, round) {
                result = Some(found);
                break;
            }
        }
        self.memo.insert((from, author, round), result);
        result
    }

    pub fn is_vote(&mut self, store: &DagStore, candidate: BlockIdx, leader: BlockIdx) -> bool {
        let target = store.block(leader);
        self.voted_block(store, candidate, target.author(), target.round()) == Some(leader)
    }

    /// Parents of `candidate` voting for `leader`, restricted to parents at
    /// `vote_round` when given.
    pub fn voting_parents(
        &mut self,
        store: &DagStore,
        candidate: BlockIdx,
        leader: BlockIdx,
        vote_round: Option<Round>,
    ) -> usize {
        store
            .parent_indices(candidate)
            .iter()
            .filter(|&&p| vote_round.is_none_or(|r| store.block(p).round() == r))
            .filter(|&&p| self.is_vote(store, p, leader))
            .count()
    }

    /// Whether `candidate` certifies `leader`: 2f+1 of its vote-round parents
    /// vote for it. Parents hold at most one block per author and round, so
    /// the count is over distinct authors.
    pub fn is_cert(
        &mut self,
        store: &DagStore,
        candidate: BlockIdx,
        leader: BlockIdx,
        vote_round: Round,
    ) -> bool {
        self.voting_parents(store, candidate, leader, Some(vote_round))
            >= store.committee().quorum()
    }
}

/// Un-memoized `IsVote` on stored blocks.
pub fn is_vote(store: &DagStore, candidate: BlockIdx, leader: BlockIdx) -> bool {
    VoteIndex::new().is_vote(store, candidate, leader)
}

/// `IsCert` counting every parent of `candidate`, whatever its round.
pub fn is_cert(store: &DagStore, candidate: BlockIdx, leader: BlockIdx) -> bool {
    VoteIndex::new().voting_parents(store, candidate, leader, None) >= store.committee().quorum()
}
