//! Safety and structure checks over run reports and DAGs.

// Violations are rare and carry their evidence inline.
#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;
use wavedag_core::committer::VoteIndex;
use wavedag_core::{BlockRef, DagStore, Round, Slot, SlotStatus, ValidatorId, WaveConfig};

use crate::report::RunReport;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("{a} and {b} committed different blocks at position {position}")]
    Diverged {
        a: ValidatorId,
        b: ValidatorId,
        position: usize,
    },
    #[error("{validator} committed {block:?} twice")]
    Duplicate {
        validator: ValidatorId,
        block: BlockRef,
    },
    #[error("slot {slot:?}: {a} decided {status_a:?}, {b} decided {status_b:?}")]
    ConflictingDecision {
        slot: Slot,
        a: ValidatorId,
        status_a: SlotStatus,
        b: ValidatorId,
        status_b: SlotStatus,
    },
    #[error("{author} has {count} certified blocks in round {round}")]
    MultipleCertified {
        author: ValidatorId,
        round: Round,
        count: usize,
    },
    #[error("no round-{0} block is reachable from every block two rounds up")]
    NoCommonCore(Round),
    #[error("{validator} released two blocks for round {round}")]
    Equivocated {
        validator: ValidatorId,
        round: Round,
    },
}

/// Honest commit sequences are pairwise prefix-comparable, free of
/// duplicates, and honest validators never decide a slot differently.
pub fn check_prefix_consistency(report: &RunReport) -> Result<(), Violation> {
    let honest: Vec<_> = report.honest().collect();
    let Some(longest) = honest.iter().max_by_key(|v| v.commit_sequence.len()) else {
        return Ok(());
    };
    // Everyone a prefix of the longest implies pairwise comparability.
    for v in &honest {
        if let Some(position) = v
            .commit_sequence
            .iter()
            .zip(&longest.commit_sequence)
            .position(|(x, y)| x != y)
        {
            return Err(Violation::Diverged {
                a: v.id,
                b: longest.id,
                position,
            });
        }
        let mut seen = FxHashSet::default();
        for block in &v.commit_sequence {
            if !seen.insert(block.digest) {
                return Err(Violation::Duplicate {
                    validator: v.id,
                    block: *block,
                });
            }
        }
    }
    let mut decided: BTreeMap<Slot, (ValidatorId, SlotStatus)> = BTreeMap::new();
    for v in &honest {
        for record in &v.slots {
            if !record.status.is_decided() {
                continue;
            }
            match decided.get(&record.slot) {
                Some(&(a, status_a)) if status_a != record.status => {
                    return Err(Violation::ConflictingDecision {
                        slot: record.slot,
                        a,
                        status_a,
                        b: v.id,
                        status_b: record.status,
                    });
                }
                Some(_) => {}
                None => {
                    decided.insert(record.slot, (v.id, record.status));
                }
            }
        }
    }
    Ok(())
}

/// No honest validator released two different blocks for one round, across
/// restarts included.
pub fn check_no_equivocation(report: &RunReport) -> Result<(), Violation> {
    for v in report.honest() {
        let mut by_round: FxHashMap<Round, BlockRef> = FxHashMap::default();
        for block in &v.released {
            if let Some(previous) = by_round.insert(block.round, *block) {
                if previous != *block {
                    return Err(Violation::Equivocated {
                        validator: v.id,
                        round: block.round,
                    });
                }
            }
        }
    }
    Ok(())
}

/// For every equivocation in `store`, at most one of the blocks has a
/// certificate (2f+1 votes from the vote round inside one certify-round
/// block).
pub fn check_single_certificate(store: &DagStore, wave: &WaveConfig) -> Result<(), Violation> {
    let mut votes = VoteIndex::new();
    let equivocations: Vec<(Round, ValidatorId)> = store.equivocations().collect();
    for (round, author) in equivocations {
        let vote_round = wave.vote_round(round);
        let certify_round = wave.certify_round(round);
        let certify: Vec<_> = store.round_blocks(certify_round).collect();
        let count = store
            .blocks_at(round, author)
            .iter()
            .filter(|&&leader| {
                certify
                    .iter()
                    .any(|&c| votes.is_cert(store, c, leader, vote_round))
            })
            .count();
        if count > 1 {
            return Err(Violation::MultipleCertified {
                author,
                round,
                count,
            });
        }
    }
    Ok(())
}

/// Index of a bottom-layer block reachable from every top-layer block, given
/// the parent lists of a three-layer DAG (`middle[i]` indexes the bottom
/// layer, `top[j]` the middle one).
pub fn layered_common_core(
    bottom: usize,
    middle: &[Vec<usize>],
    top: &[Vec<usize>],
) -> Option<usize> {
    let mut common = vec![true; bottom];
    for parents in top {
        let mut reached = vec![false; bottom];
        for &m in parents {
            for &b in &middle[m] {
                reached[b] = true;
            }
        }
        for (c, r) in common.iter_mut().zip(reached) {
            *c &= r;
        }
    }
    common.iter().position(|&c| c)
}

/// Every round `r` whose round `r + 2` holds a quorum of authors has a block
/// reachable from all round-`(r + 2)` blocks.
pub fn check_common_core(store: &DagStore) -> Result<(), Violation> {
    let quorum = store.committee().quorum();
    let top_round = store.highest_round();
    let mut r = Round::GENESIS;
    while r + 2 <= top_round {
        let top = r + 2;
        if store.authors_at(top) >= quorum {
            let bottom: Vec<_> = store.round_blocks(r).collect();
            let position: FxHashMap<_, usize> =
                bottom.iter().enumerate().map(|(i, &b)| (b, i)).collect();
            let mut common = vec![true; bottom.len()];
            for t in store.round_blocks(top) {
                let mut reached = vec![false; bottom.len()];
                let mut stack = vec![t];
                let mut seen = FxHashSet::default();
                while let Some(x) = stack.pop() {
                    for &p in store.parent_indices(x) {
                        let round = store.block(p).round();
                        if round < r || !seen.insert(p) {
                            continue;
                        }
                        if round == r {
                            reached[position[&p]] = true;
                        } else {
                            stack.push(p);
                        }
                    }
                }
                for (c, x) in common.iter_mut().zip(reached) {
                    *c &= x;
                }
            }
            if !common.contains(&true) {
                return Err(Violation::NoCommonCore(r));
            }
        }
        r = r.next();
    }
    Ok(())
}

/// Result of [`enumerate_common_core`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Enumeration {
    pub dags: u64,
    pub violations: u64,
}

/// Checks the common-core property on every three-round DAG of `n`
/// validators in which each round has between 2f+1 and n blocks and every
/// block references at least 2f+1 blocks of the round below.
pub fn enumerate_common_core(n: usize) -> Enumeration {
    assert!(n <= 8, "enumeration is exponential in n");
    let quorum = 2 * ((n - 1) / 3) + 1;
    // Parent sets over a layer of `size` blocks.
    let choices = |size: usize| -> Vec<Vec<usize>> {
        (0u32..1 << size)
            .filter(|m| m.count_ones() as usize >= quorum)
            .map(|m| (0..size).filter(|&i| m & (1 << i) != 0).collect())
            .collect()
    };
    let mut out = Enumeration::default();
    for bottom in quorum..=n {
        for middle_len in quorum..=n {
            let middle_choices = choices(bottom);
            for middle in assignments(&middle_choices, middle_len) {
                for top_len in quorum..=n {
                    let top_choices = choices(middle_len);
                    for top in assignments(&top_choices, top_len) {
                        out.dags += 1;
                        if layered_common_core(bottom, &middle, &top).is_none() {
                            out.violations += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Every way of giving `len` blocks one of `choices` each.
fn assignments(choices: &[Vec<usize>], len: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<Vec<usize>>| {
                choices.iter().map(move |c| {
                    let mut next = prefix.clone();
                    next.push(c.clone());
                    next
                })
            })
            .collect();
    }
    out
}
