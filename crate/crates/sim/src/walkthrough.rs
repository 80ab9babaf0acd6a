//! Hand-built four-validator DAG exercising every decision path: direct
//! commit and skip, an equivocating leader, and an indirect commit through a
//! distant anchor.
//!
//! Rounds are written relative to `R` (round 1). Two slots per round, wave
//! length 5, leaders fixed by table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use wavedag_core::committer::{Committer, DecisionRule, TableSchedule};
use wavedag_core::{
    canonical_parents, Block, BlockRef, Committee, DagStore, InsertOutcome, Round, Slot,
    SlotStatus, Transaction, ValidatorId, WaveConfig,
};

/// `(label, author, round offset from R, parent labels)`. `g0`..`g3` are the
/// genesis blocks.
const BLOCKS: &[(&str, u16, u64, &[&str])] = &[
    ("0@0", 0, 0, &["g0", "g1", "g2", "g3"]),
    ("1@0", 1, 0, &["g0", "g1", "g2", "g3"]),
    ("2@0", 2, 0, &["g0", "g1", "g2", "g3"]),
    ("3@0", 3, 0, &["g0", "g1", "g2", "g3"]),
    ("0@1", 0, 1, &["0@0", "1@0", "2@0"]),
    ("1@1", 1, 1, &["1@0", "0@0", "2@0"]),
    ("2@1", 2, 1, &["2@0", "0@0", "1@0"]),
    ("3@1", 3, 1, &["3@0", "0@0", "1@0"]),
    ("0@2", 0, 2, &["0@1", "1@1", "2@1"]),
    ("1@2", 1, 2, &["1@1", "0@1", "2@1"]),
    ("2@2", 2, 2, &["2@1", "0@1", "1@1"]),
    ("3@2", 3, 2, &["3@1", "0@1", "1@1"]),
    ("0@3", 0, 3, &["0@2", "1@2", "2@2"]),
    ("1@3", 1, 3, &["1@2", "0@2", "3@2"]),
    ("2@3", 2, 3, &["2@2", "0@2", "3@2"]),
    ("3@3", 3, 3, &["3@2", "0@2", "1@2"]),
    ("L5b", 0, 4, &["0@3", "1@3", "3@3"]),
    ("L5b'", 0, 4, &["0@3", "2@3", "3@3"]),
    ("1@4", 1, 4, &["1@3", "0@3", "2@3"]),
    ("2@4", 2, 4, &["2@3", "0@3", "1@3"]),
    ("3@4", 3, 4, &["3@3", "1@3", "2@3"]),
    ("0@5", 0, 5, &["L5b", "1@4", "2@4"]),
    ("1@5", 1, 5, &["1@4", "L5b'", "2@4", "3@4"]),
    ("2@5", 2, 5, &["2@4", "1@4", "3@4"]),
    ("3@5", 3, 5, &["3@4", "1@4", "2@4"]),
    ("0@6", 0, 6, &["0@5", "1@5", "2@5"]),
    ("1@6", 1, 6, &["1@5", "2@5", "3@5"]),
    ("2@6", 2, 6, &["2@5", "1@5", "3@5"]),
    ("3@6", 3, 6, &["3@5", "1@5", "2@5"]),
    ("0@7", 0, 7, &["0@6", "1@6", "2@6"]),
    ("1@7", 1, 7, &["1@6", "2@6", "3@6"]),
    ("2@7", 2, 7, &["2@6", "1@6", "3@6"]),
    ("3@7", 3, 7, &["3@6", "1@6", "2@6"]),
    ("0@8", 0, 8, &["0@7", "1@7", "2@7", "3@7"]),
    ("1@8", 1, 8, &["1@7", "2@7", "3@7"]),
    ("2@8", 2, 8, &["2@7", "1@7", "3@7"]),
    ("3@8", 3, 8, &["3@7", "1@7", "2@7"]),
    ("0@9", 0, 9, &["0@8", "1@8", "2@8"]),
    ("1@9", 1, 9, &["1@8", "2@8", "3@8"]),
    ("2@9", 2, 9, &["2@8", "1@8", "3@8"]),
];

/// `(slot label, round offset, slot offset, leader)`.
const LEADERS: &[(&str, u64, usize, u16)] = &[
    ("L1a", 0, 0, 3),
    ("L1b", 0, 1, 0),
    ("L2a", 1, 0, 0),
    ("L2b", 1, 1, 1),
    ("L3a", 2, 0, 1),
    ("L3b", 2, 1, 3),
    ("L4a", 3, 0, 0),
    ("L4b", 3, 1, 3),
    ("L5a", 4, 0, 3),
    ("L5b", 4, 1, 0),
    ("L6a", 5, 0, 0),
    ("L6b", 5, 1, 1),
];

pub const EXPECTED_LEADERS: &[&str] = &[
    "L1a", "L1b", "L2a", "L2b", "L3a", "L3b", "L4a", "L4b", "L5a", "L5b'", "L6b",
];

pub const EXPECTED_COMMITS: &[&str] = &[
    "L1a",
    "L1b",
    "B(v1,R)",
    "B(v2,R)",
    "L2a",
    "L2b",
    "B(v2,R+1)",
    "L3a",
    "B(v3,R+1)",
    "L3b",
    "B(v0,R+2)",
    "B(v2,R+2)",
    "L4a",
    "L4b",
    "B(v1,R+3)",
    "B(v2,R+3)",
    "L5a",
    "L5b'",
    "B(v1,R+4)",
    "B(v2,R+4)",
    "L6b",
];

/// Classification of one leader slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotLine {
    pub label: String,
    pub slot: Slot,
    pub leader: ValidatorId,
    pub status: SlotStatus,
    pub rule: Option<DecisionRule>,
    /// Label of the anchor slot for indirect decisions.
    pub anchor: Option<String>,
    /// Per-block outcome when the leader proposed several blocks.
    pub blocks: Vec<(String, bool)>,
}

#[derive(Clone, Debug)]
pub struct Walkthrough {
    pub slots: Vec<SlotLine>,
    pub leader_sequence: Vec<String>,
    pub commit_sequence: Vec<String>,
}

impl Walkthrough {
    pub fn matches_expected(&self) -> bool {
        self.leader_sequence == EXPECTED_LEADERS && self.commit_sequence == EXPECTED_COMMITS
    }

    pub fn line(&self, label: &str) -> Option<&SlotLine> {
        self.slots.iter().find(|l| l.label == label)
    }

    /// Human-readable listing, then a diff against the expected sequences if
    /// they differ.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.slots {
            let status = match line.status {
                SlotStatus::Commit(_) => "commit",
                SlotStatus::Skip => "skip",
                SlotStatus::Undecided => "undecided",
            };
            let rule = match (line.rule, &line.anchor) {
                (Some(DecisionRule::Direct), _) => "direct".to_string(),
                (Some(DecisionRule::Indirect { .. }), Some(a)) => format!("indirect, anchor {a}"),
                _ => "-".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<4} round R+{} offset {} leader {}: {status} ({rule})",
                line.label,
                line.slot.round.0 - 1,
                line.slot.offset,
                line.leader
            );
            if line.blocks.len() > 1 {
                for (block, committed) in &line.blocks {
                    let verdict = if *committed { "commit" } else { "skip" };
                    let _ = writeln!(out, "       block {block}: {verdict}");
                }
            }
        }
        let _ = writeln!(out, "leader sequence: {}", self.leader_sequence.join(" "));
        let _ = writeln!(out, "commit sequence: {}", self.commit_sequence.join(" "));
        if !self.matches_expected() {
            let _ = writeln!(out, "expected leaders: {}", EXPECTED_LEADERS.join(" "));
            let _ = writeln!(out, "expected commits: {}", EXPECTED_COMMITS.join(" "));
            let diverge = self
                .commit_sequence
                .iter()
                .zip(EXPECTED_COMMITS)
                .position(|(a, b)| a != b)
                .unwrap_or(self.commit_sequence.len().min(EXPECTED_COMMITS.len()));
            let _ = writeln!(out, "first difference at commit position {diverge}");
        }
        out
    }
}

fn round(offset: u64) -> Round {
    Round(offset + 1)
}

/// Builds the fixture store and the leader table.
pub fn fixture() -> (DagStore, TableSchedule, BTreeMap<BlockRef, String>) {
    let (committee, keys) = Committee::generate(4, 2024).expect("four validators");
    let committee = Arc::new(committee);
    let mut store = DagStore::new(Arc::clone(&committee));
    let mut refs: BTreeMap<String, BlockRef> = BTreeMap::new();
    for (i, g) in committee.genesis().iter().enumerate() {
        refs.insert(format!("g{i}"), g.reference());
    }
    let mut labels = BTreeMap::new();
    for &(label, author, offset, parents) in BLOCKS {
        let author = ValidatorId(author);
        let parents = parents.iter().map(|p| refs[*p]).collect();
        let keys = &keys[author.index()];
        let block = Block::new_signed(
            author,
            round(offset),
            canonical_parents(author, parents),
            vec![Transaction::new(label.as_bytes().to_vec())],
            &keys.coin,
            &keys.signing,
        );
        let reference = block.reference();
        match store.insert(Arc::new(block)) {
            InsertOutcome::Stored(_) => {}
            other => panic!("fixture block {label} not stored: {other:?}"),
        }
        refs.insert(label.to_string(), reference);
        labels.insert(reference, block_label(label, author, offset));
    }
    let schedule = TableSchedule::new(
        LEADERS
            .iter()
            .map(|&(_, r, o, v)| (Slot::new(round(r), o), ValidatorId(v))),
    );
    (store, schedule, labels)
}

fn block_label(label: &str, author: ValidatorId, offset: u64) -> String {
    if label.starts_with('L') {
        return label.to_string();
    }
    if let Some(&(slot, ..)) = LEADERS
        .iter()
        .find(|&&(_, r, _, v)| r == offset && ValidatorId(v) == author)
    {
        return slot.to_string();
    }
    if offset == 0 {
        format!("B({author},R)")
    } else {
        format!("B({author},R+{offset})")
    }
}

/// Runs the committer over the fixture.
pub fn run_walkthrough() -> Walkthrough {
    let (store, schedule, labels) = fixture();
    let wave = WaveConfig::new(5, 2, 4).expect("valid wave");
    let mut committer = Committer::new(wave, Arc::new(schedule));
    let decisions = committer.try_decide(&store);
    let sequenced = committer.extend_commit_sequence(&store);
    let slot_label = |slot: Slot| {
        LEADERS
            .iter()
            .find(|&&(_, r, o, _)| Slot::new(round(r), o) == slot)
            .map(|&(l, ..)| l.to_string())
    };
    let mut slots = Vec::new();
    for d in &decisions {
        let Some(label) = slot_label(d.slot) else {
            continue;
        };
        let leader = d.leader.expect("table leader");
        let blocks = store
            .blocks_at(d.slot.round, leader)
            .iter()
            .map(|&i| {
                let r = store.block(i).reference();
                (labels[&r].clone(), d.status == SlotStatus::Commit(r))
            })
            .collect();
        let anchor = match d.rule {
            Some(DecisionRule::Indirect { anchor }) => slot_label(anchor),
            _ => None,
        };
        slots.push(SlotLine {
            label,
            slot: d.slot,
            leader,
            status: d.status,
            rule: d.rule,
            anchor,
            blocks,
        });
    }
    let mut leader_sequence = Vec::new();
    let mut commit_sequence = Vec::new();
    for s in &sequenced {
        if let SlotStatus::Commit(r) = s.decision.status {
            leader_sequence.push(labels[&r].clone());
        }
        commit_sequence.extend(s.blocks.iter().map(|b| labels[&b.reference()].clone()));
    }
    Walkthrough {
        slots,
        leader_sequence,
        commit_sequence,
    }
}
