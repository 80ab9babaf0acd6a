//! Random DAG generation for property tests and oracle comparisons.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavedag_core::{
    canonical_parents, Block, BlockRef, Committee, DagStore, InsertOutcome, Round, Transaction,
    ValidatorId,
};

#[derive(Clone, Debug)]
pub struct DagSpec {
    pub n: usize,
    pub rounds: u64,
    /// Chance that an author issues a second block in a round.
    pub equivocation: f64,
    /// Chance that an author skips a round (never below a quorum of authors).
    pub absence: f64,
    /// Chance of referencing an extra block from two or more rounds back.
    pub old_parent: f64,
}

impl DagSpec {
    pub fn new(n: usize, rounds: u64) -> Self {
        Self {
            n,
            rounds,
            equivocation: 0.1,
            absence: 0.1,
            old_parent: 0.2,
        }
    }
}

/// A valid random DAG: every block references blocks of 2f+1 distinct
/// authors from the round below, picking one block per author when there
/// are several.
pub fn random_dag(spec: &DagSpec, seed: u64) -> DagStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (committee, keys) = Committee::generate(spec.n, seed).expect("committee size");
    let committee = Arc::new(committee);
    let quorum = committee.quorum();
    let mut store = DagStore::new(Arc::clone(&committee));
    let mut layers: Vec<Vec<BlockRef>> =
        vec![committee.genesis().iter().map(Block::reference).collect()];
    for r in 1..=spec.rounds {
        let below = layers.last().expect("genesis layer");
        let mut by_author: Vec<Vec<BlockRef>> = vec![Vec::new(); spec.n];
        for b in below {
            by_author[b.author.index()].push(*b);
        }
        let present: Vec<usize> = (0..spec.n).filter(|&a| !by_author[a].is_empty()).collect();
        let mut authors: Vec<usize> = (0..spec.n).collect();
        let absent = (0..spec.n - quorum)
            .filter(|_| rng.random_bool(spec.absence))
            .count();
        for _ in 0..absent {
            let i = rng.random_range(0..authors.len());
            authors.remove(i);
        }
        let mut layer = Vec::new();
        for &a in &authors {
            let author = ValidatorId::from(a);
            let copies = if rng.random_bool(spec.equivocation) {
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
                if layers.len() >= 2 && rng.random_bool(spec.old_parent) {
                    let back = rng.random_range(0..layers.len() - 1);
                    let layer = &layers[back];
                    let extra = layer[rng.random_range(0..layer.len())];
                    if !parents
                        .iter()
                        .any(|p| p.author == extra.author && p.round == extra.round)
                    {
                        parents.push(extra);
                    }
                }
                let block = Block::new_signed(
                    author,
                    Round(r),
                    canonical_parents(author, parents),
                    vec![Transaction::new(format!("{r}/{a}/{copy}").into_bytes())],
                    &keys[a].coin,
                    &keys[a].signing,
                );
                let reference = block.reference();
                match store.insert(Arc::new(block)) {
                    InsertOutcome::Stored(_) => layer.push(reference),
                    other => panic!("generated block rejected: {other:?}"),
                }
            }
        }
        layers.push(layer);
    }
    store
}
