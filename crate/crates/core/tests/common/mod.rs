//! Shared helpers for the core integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavedag_core::{
    canonical_parents, Block, BlockRef, Committee, DagStore, InsertOutcome, Round, Transaction,
    ValidatorId, ValidatorKeys,
};

/// A committee with its secrets and a store to build blocks into.
pub struct Builder {
    pub committee: Arc<Committee>,
    pub keys: Vec<ValidatorKeys>,
    pub store: DagStore,
}

impl Builder {
    pub fn new(n: usize, seed: u64) -> Self {
        let (committee, keys) = Committee::generate(n, seed).unwrap();
        let committee = Arc::new(committee);
        let store = DagStore::new(Arc::clone(&committee));
        Self {
            committee,
            keys,
            store,
        }
    }

    pub fn genesis(&self) -> Vec<BlockRef> {
        self.committee
            .genesis()
            .iter()
            .map(Block::reference)
            .collect()
    }

    /// Signs a block without inserting it.
    pub fn make(&self, author: u16, round: u64, parents: &[BlockRef], tag: &str) -> Arc<Block> {
        let id = ValidatorId(author);
        let k = &self.keys[id.index()];
        Arc::new(Block::new_signed(
            id,
            Round(round),
            canonical_parents(id, parents.to_vec()),
            vec![Transaction::new(tag.as_bytes().to_vec())],
            &k.coin,
            &k.signing,
        ))
    }

    /// Signs and inserts; panics unless the block is stored.
    pub fn add(&mut self, author: u16, round: u64, parents: &[BlockRef], tag: &str) -> BlockRef {
        let block = self.make(author, round, parents, tag);
        let r = block.reference();
        match self.store.insert(block) {
            InsertOutcome::Stored(_) => r,
            other => panic!("{tag}: {other:?}"),
        }
    }

    /// One block per listed author at `round`, each referencing all of
    /// `parents`.
    pub fn layer(&mut self, round: u64, authors: &[u16], parents: &[BlockRef]) -> Vec<BlockRef> {
        authors
            .iter()
            .map(|&a| self.add(a, round, parents, &format!("{a}@{round}")))
            .collect()
    }
}

/// Blocks of a random valid DAG in creation order (parents before children).
/// Each round has at least a quorum of authors, any author may equivocate,
/// and blocks sometimes reference an extra block from further back.
pub fn random_blocks(n: usize, rounds: u64, seed: u64) -> (Arc<Committee>, Vec<Arc<Block>>) {
    random_dag(n, rounds, seed, n)
}

/// Like [`random_blocks`], but only validators below `equivocators`
/// equivocate.
pub fn random_dag(
    n: usize,
    rounds: u64,
    seed: u64,
    equivocators: usize,
) -> (Arc<Committee>, Vec<Arc<Block>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = Builder::new(n, seed);
    let quorum = b.committee.quorum();
    let mut layers = vec![b.genesis()];
    let mut out = Vec::new();
    for r in 1..=rounds {
        let below = layers.last().unwrap().clone();
        let mut by_author: Vec<Vec<BlockRef>> = vec![Vec::new(); n];
        for p in &below {
            by_author[p.author.index()].push(*p);
        }
        let present: Vec<usize> = (0..n).filter(|&a| !by_author[a].is_empty()).collect();
        let count = rng.random_range(quorum..=n);
        let authors = sample(&mut rng, n, count).into_vec();
        let mut layer = Vec::new();
        for a in authors {
            let copies = if a < equivocators && rng.random_bool(0.15) {
                2
            } else {
                1
            };
            for copy in 0..copies {
                let take = rng.random_range(quorum..=present.len());
                let mut parents: Vec<BlockRef> = sample(&mut rng, present.len(), take)
                    .into_iter()
                    .map(|i| {
                        let options = &by_author[present[i]];
                        options[rng.random_range(0..options.len())]
                    })
                    .collect();
                if layers.len() >= 2 && rng.random_bool(0.2) {
                    let back = &layers[rng.random_range(0..layers.len() - 1)];
                    let extra = back[rng.random_range(0..back.len())];
                    if !parents
                        .iter()
                        .any(|p| p.author == extra.author && p.round == extra.round)
                    {
                        parents.push(extra);
                    }
                }
                let block = b.make(a as u16, r, &parents, &format!("{r}/{a}/{copy}"));
                layer.push(block.reference());
                out.push(block);
            }
        }
        layers.push(layer);
    }
    (b.committee, out)
}

/// Stores every block of `blocks` (in the given order) into a fresh store.
pub fn store_of(committee: &Arc<Committee>, blocks: &[Arc<Block>]) -> DagStore {
    let mut store = DagStore::new(Arc::clone(committee));
    for block in blocks {
        store.insert(Arc::clone(block));
    }
    assert_eq!(store.pending_len(), 0);
    store
}
