mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use common::{random_dag, store_of, Builder};
use proptest::prelude::*;
use wavedag_core::coin::{combine, elect};
use wavedag_core::committer::decide_snapshot;
use wavedag_core::{
    Block, BlockRef, CoinSchedule, Committee, Committer, DagStore, DecisionRule, Round, Slot,
    SlotStatus, ValidatorId, WaveConfig,
};

/// Reference implementation of the decision rules over plain block lists.
struct Oracle {
    committee: Arc<Committee>,
    blocks: HashMap<BlockRef, Arc<Block>>,
    by_round: BTreeMap<u64, Vec<BlockRef>>,
    ancestors: HashMap<BlockRef, BTreeSet<BlockRef>>,
    wave: WaveConfig,
}

impl Oracle {
    fn new(committee: &Arc<Committee>, list: &[Arc<Block>], wave: WaveConfig) -> Self {
        let mut blocks = HashMap::new();
        let mut by_round: BTreeMap<u64, Vec<BlockRef>> = BTreeMap::new();
        let mut ancestors: HashMap<BlockRef, BTreeSet<BlockRef>> = HashMap::new();
        for g in committee.genesis() {
            ancestors.insert(g.reference(), BTreeSet::from([g.reference()]));
            blocks.insert(g.reference(), Arc::new(g));
        }
        for b in list {
            let mut set = BTreeSet::from([b.reference()]);
            for p in b.parents() {
                set.extend(ancestors[p].iter().copied());
            }
            ancestors.insert(b.reference(), set);
            by_round.entry(b.round().0).or_default().push(b.reference());
            blocks.insert(b.reference(), Arc::clone(b));
        }
        Self {
            committee: Arc::clone(committee),
            blocks,
            by_round,
            ancestors,
            wave,
        }
    }

    fn round(&self, r: u64) -> &[BlockRef] {
        self.by_round.get(&r).map_or(&[], Vec::as_slice)
    }

    fn authors(refs: impl Iterator<Item = BlockRef>) -> usize {
        refs.map(|r| r.author).collect::<BTreeSet<_>>().len()
    }

    fn first_seen(&self, from: &BlockRef, author: ValidatorId, round: Round) -> Option<BlockRef> {
        for p in self.blocks[from].parents() {
            if p.author == author && p.round == round {
                return Some(*p);
            }
            if p.round > round {
                if let Some(hit) = self.first_seen(p, author, round) {
                    return Some(hit);
                }
            }
        }
        None
    }

    fn certifies(&self, c: &BlockRef, leader: &BlockRef) -> bool {
        let vote_round = self.wave.vote_round(leader.round);
        let voting = self.blocks[c]
            .parents()
            .iter()
            .filter(|p| p.round == vote_round)
            .filter(|p| self.first_seen(p, leader.author, leader.round) == Some(*leader))
            .count();
        voting >= self.committee.quorum()
    }

    fn leader(&self, slot: Slot) -> Option<ValidatorId> {
        let certify = self.wave.certify_round(slot.round).0;
        let blocks = self.round(certify);
        if Self::authors(blocks.iter().copied()) < self.committee.quorum() {
            return None;
        }
        let shares: Vec<_> = blocks
            .iter()
            .map(|r| *self.blocks[r].coin_share())
            .collect();
        let value = combine(shares.iter(), &self.committee).ok()?;
        Some(elect(value, usize::from(slot.offset), &self.committee))
    }

    fn leader_blocks(&self, slot: Slot, leader: ValidatorId) -> Vec<BlockRef> {
        let mut out: Vec<_> = self
            .round(slot.round.0)
            .iter()
            .filter(|r| r.author == leader)
            .copied()
            .collect();
        out.sort_by_key(|r| r.digest);
        out
    }

    fn direct(&self, slot: Slot) -> SlotStatus {
        let Some(leader) = self.leader(slot) else {
            return SlotStatus::Undecided;
        };
        let q = self.committee.quorum();
        let certify = self.round(self.wave.certify_round(slot.round).0);
        let votes = self.round(self.wave.vote_round(slot.round).0);
        let candidates = self.leader_blocks(slot, leader);
        for b in &candidates {
            let certifiers = certify.iter().filter(|c| self.certifies(c, b)).copied();
            if Self::authors(certifiers) >= q {
                return SlotStatus::Commit(*b);
            }
        }
        let skip = if candidates.is_empty() {
            Self::authors(votes.iter().copied()) >= q
        } else {
            candidates.iter().all(|b| {
                let non_voters = votes
                    .iter()
                    .filter(|v| self.first_seen(v, b.author, b.round) != Some(*b))
                    .copied();
                Self::authors(non_voters) >= q
            })
        };
        if skip {
            SlotStatus::Skip
        } else {
            SlotStatus::Undecided
        }
    }

    /// Statuses of every slot up to the highest one whose certify round
    /// exists, ascending.
    fn decide(&self) -> Vec<(Slot, SlotStatus)> {
        let w = self.wave.wave_length();
        let highest = self.by_round.keys().next_back().copied().unwrap_or(0);
        if highest < w {
            return Vec::new();
        }
        let mut descending: Vec<(Slot, SlotStatus)> = Vec::new();
        for r in (1..=highest - (w - 1)).rev() {
            for o in (0..self.wave.leaders_per_round()).rev() {
                let slot = Slot::new(Round(r), o);
                let mut status = self.direct(slot);
                if status == SlotStatus::Undecided {
                    let certify = self.wave.certify_round(slot.round);
                    let anchor = descending
                        .iter()
                        .rev()
                        .find(|(s, st)| s.round > certify && *st != SlotStatus::Skip);
                    if let (Some((_, SlotStatus::Commit(a))), Some(leader)) =
                        (anchor, self.leader(slot))
                    {
                        status = SlotStatus::Skip;
                        'search: for b in self.leader_blocks(slot, leader) {
                            for c in self.round(certify.0) {
                                if self.certifies(c, &b) && self.ancestors[a].contains(c) {
                                    status = SlotStatus::Commit(b);
                                    break 'search;
                                }
                            }
                        }
                    }
                }
                descending.push((slot, status));
            }
        }
        descending.reverse();
        descending
    }

    /// Commit sequence: decided prefix, each leader's new history sorted.
    fn sequence(&self) -> Vec<BlockRef> {
        let mut delivered = BTreeSet::new();
        let mut out = Vec::new();
        for (_, status) in self.decide() {
            match status {
                SlotStatus::Undecided => break,
                SlotStatus::Skip => {}
                SlotStatus::Commit(leader) => {
                    let mut fresh: Vec<BlockRef> = self.ancestors[&leader]
                        .iter()
                        .filter(|r| r.round > Round::GENESIS && !delivered.contains(*r))
                        .copied()
                        .collect();
                    fresh.sort_by_key(|r| (r.round, r.author, r.digest));
                    delivered.extend(fresh.iter().copied());
                    out.extend(fresh);
                }
            }
        }
        out
    }
}

fn statuses(store: &DagStore, wave: WaveConfig) -> Vec<(Slot, SlotStatus)> {
    decide_snapshot(store, wave, Arc::new(CoinSchedule))
        .into_iter()
        .map(|d| (d.slot, d.status))
        .collect()
}

fn sequence(committer: &mut Committer, store: &DagStore) -> Vec<BlockRef> {
    committer
        .extend_commit_sequence(store)
        .iter()
        .flat_map(|s| s.blocks.iter().map(|b| b.reference()))
        .collect()
}

#[test]
fn nothing_to_decide_below_the_first_certify_round() {
    let mut b = Builder::new(4, 20);
    let wave = WaveConfig::new(5, 2, 4).unwrap();
    let mut committer = Committer::with_coin(wave);
    assert!(committer.try_decide(&b.store).is_empty());
    let mut layer = b.genesis();
    for r in 1..=4 {
        layer = b.layer(r, &[0, 1, 2, 3], &layer);
    }
    assert!(committer.try_decide(&b.store).is_empty());
    // Round 5 exists only for one author: round 1's coin is not revealed.
    b.add(0, 5, &layer, "lone");
    let decisions = committer.try_decide(&b.store);
    assert_eq!(decisions.len(), 2);
    assert!(decisions
        .iter()
        .all(|d| d.status == SlotStatus::Undecided && d.leader.is_none()));
    assert!(committer.extend_commit_sequence(&b.store).is_empty());
}

#[test]
fn sequencing_is_idempotent() {
    let (committee, blocks) = random_dag(4, 14, 3, 1);
    let store = store_of(&committee, &blocks);
    let mut committer = Committer::with_coin(WaveConfig::new(5, 2, 4).unwrap());
    assert!(!sequence(&mut committer, &store).is_empty());
    assert!(committer.extend_commit_sequence(&store).is_empty());
    assert!(committer.extend_commit_sequence(&store).is_empty());
}

/// Guards the property tests against vacuous inputs.
#[test]
fn random_dags_exercise_every_outcome() {
    let mut seen = BTreeMap::new();
    for seed in 0..30 {
        let (committee, blocks) = random_dag(4, 13, seed, 1);
        let store = store_of(&committee, &blocks);
        for wave in configs() {
            for d in decide_snapshot(&store, wave, Arc::new(CoinSchedule)) {
                let key = match (d.status, d.rule) {
                    (SlotStatus::Commit(_), Some(DecisionRule::Direct)) => "direct commit",
                    (SlotStatus::Commit(_), _) => "indirect commit",
                    (SlotStatus::Skip, Some(DecisionRule::Direct)) => "direct skip",
                    (SlotStatus::Skip, _) => "indirect skip",
                    _ => "undecided",
                };
                *seen.entry(key).or_insert(0) += 1;
            }
        }
    }
    assert_eq!(seen.len(), 5, "{seen:?}");
}

fn configs() -> Vec<WaveConfig> {
    let mut out = Vec::new();
    for w in [4, 5] {
        for l in [1, 2, 3] {
            out.push(WaveConfig::new(w, l, 4).unwrap());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn decisions_match_reference_rules(seed in any::<u64>()) {
        let (committee, blocks) = random_dag(4, 13, seed, 1);
        let store = store_of(&committee, &blocks);
        for wave in configs() {
            let oracle = Oracle::new(&committee, &blocks, wave);
            prop_assert_eq!(statuses(&store, wave), oracle.decide(), "{:?}", wave);
            // Pure function of the snapshot.
            prop_assert_eq!(statuses(&store.clone(), wave), statuses(&store, wave));
            let mut committer = Committer::with_coin(wave);
            prop_assert_eq!(sequence(&mut committer, &store), oracle.sequence());
        }
    }

    #[test]
    fn incremental_sequencing_equals_one_shot(seed in any::<u64>()) {
        let (committee, blocks) = random_dag(4, 16, seed, 1);
        let wave = WaveConfig::new(5, 2, 4).unwrap();
        let mut store = DagStore::new(Arc::clone(&committee));
        let mut committer = Committer::with_coin(wave);
        let mut incremental = Vec::new();
        let mut last_slot = None;
        for block in &blocks {
            store.insert(Arc::clone(block));
            for s in committer.extend_commit_sequence(&store) {
                // Slots leave in strictly ascending order, never revisited.
                prop_assert!(last_slot.is_none_or(|l| l < s.decision.slot));
                last_slot = Some(s.decision.slot);
                if let SlotStatus::Commit(leader) = s.decision.status {
                    prop_assert_eq!(s.blocks.last().map(|b| b.reference()), Some(leader));
                }
                incremental.extend(s.blocks.iter().map(|b| b.reference()));
            }
        }
        let one_shot = sequence(&mut Committer::with_coin(wave), &store);
        prop_assert_eq!(&incremental, &one_shot);
        // No duplicates; every parent precedes its child unless it is genesis
        // or outside the delivered set entirely.
        let position: HashMap<BlockRef, usize> =
            incremental.iter().enumerate().map(|(i, r)| (*r, i)).collect();
        prop_assert_eq!(position.len(), incremental.len());
        for (i, r) in incremental.iter().enumerate() {
            for p in store.get(r).unwrap().parents() {
                if p.round > Round::GENESIS {
                    prop_assert!(position[p] < i);
                }
            }
        }
    }

    /// With at most f equivocators no two blocks of one author and round are
    /// both certified, and 2f+1 certificates are reachable from every later
    /// block.
    #[test]
    fn certificate_invariants(seed in any::<u64>()) {
        let (committee, blocks) = random_dag(7, 10, seed, 2);
        let q = committee.quorum();
        for w in [4u64, 5] {
            let wave = WaveConfig::new(w, 1, 7).unwrap();
            let oracle = Oracle::new(&committee, &blocks, wave);
            for r in 1..=10 - (w - 1) {
                let certify = wave.certify_round(Round(r)).0;
                let mut certified = BTreeMap::<ValidatorId, usize>::new();
                for leader in oracle.round(r) {
                    let certs: Vec<_> = oracle
                        .round(certify)
                        .iter()
                        .filter(|c| oracle.certifies(c, leader))
                        .copied()
                        .collect();
                    if !certs.is_empty() {
                        *certified.entry(leader.author).or_default() += 1;
                    }
                    if Oracle::authors(certs.iter().copied()) >= q {
                        for later in (certify + 1)..=10 {
                            for b in oracle.round(later) {
                                prop_assert!(certs.iter().any(|c| oracle.ancestors[b].contains(c)));
                            }
                        }
                    }
                }
                prop_assert!(certified.values().all(|&c| c <= 1), "{:?}", certified);
            }
        }
    }
}
