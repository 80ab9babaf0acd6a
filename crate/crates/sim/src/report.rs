//! Run results and the metrics derived from them.

use serde::{Deserialize, Serialize};
use wavedag_core::committer::DecisionRule;
use wavedag_core::{BlockRef, DagStore, Round, Slot, SlotStatus, ValidatorId};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Honest,
    /// Stopped for good at some point.
    Crashed,
    /// Crashed and restarted from its log at least once.
    Recovered,
    Equivocator,
}

impl Role {
    /// Roles held to the safety properties.
    pub fn is_honest(self) -> bool {
        self != Role::Equivocator
    }
}

/// One sequenced slot as seen by one validator.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: Slot,
    pub leader: Option<ValidatorId>,
    pub status: SlotStatus,
    pub rule: Option<DecisionRule>,
    /// Highest stored round when the slot was decided.
    pub decided_at: Option<Round>,
    /// Highest stored round when the slot was sequenced.
    pub sequenced_at: Round,
    pub sequenced_time: u64,
}

impl SlotRecord {
    /// Message delays from proposal to decision.
    pub fn decision_hops(&self) -> Option<u64> {
        self.decided_at.map(|d| d.0 - self.slot.round.0 + 1)
    }

    pub fn is_direct_commit(&self) -> bool {
        matches!(self.status, SlotStatus::Commit(_)) && self.rule == Some(DecisionRule::Direct)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorReport {
    pub id: ValidatorId,
    pub role: Role,
    /// Round of the last own proposal.
    pub final_round: Round,
    /// Blocks handed to the host, in order, across restarts.
    pub commit_sequence: Vec<BlockRef>,
    pub slots: Vec<SlotRecord>,
    /// Every block this validator released to the network.
    pub released: Vec<BlockRef>,
    pub restarts: u32,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLatency {
    pub hops: u64,
    pub time: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunParams {
    pub seed: u64,
    pub n: usize,
    pub f: usize,
    pub wave_length: u64,
    pub leaders: usize,
    pub scheduler: String,
    pub crashed: usize,
    pub byzantine: usize,
    pub rounds: u64,
    pub load: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub params: RunParams,
    /// Validator whose view feeds the latency and rate metrics.
    pub observer: ValidatorId,
    pub validators: Vec<ValidatorReport>,
    /// Committed transactions at the observer, in commit order.
    pub tx_latency: Vec<TxLatency>,
    pub end_time: u64,
    pub events: u64,
    /// Honest-to-honest messages still queued when the run stopped.
    pub undelivered: usize,
    /// Every block released by anyone, when requested.
    #[serde(skip)]
    pub union: Option<DagStore>,
}

impl RunReport {
    pub fn honest(&self) -> impl Iterator<Item = &ValidatorReport> {
        self.validators.iter().filter(|v| v.role.is_honest())
    }

    pub fn observer(&self) -> &ValidatorReport {
        &self.validators[self.observer.index()]
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::of(self)
    }
}

/// Summary of the observer's view.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub txs_committed: usize,
    pub mean_latency_hops: f64,
    pub p50_latency_hops: u64,
    pub p99_latency_hops: u64,
    pub mean_latency_time: f64,
    pub direct_commits: usize,
    pub indirect_commits: usize,
    pub skips: usize,
    /// Sequenced propose rounds with at least one directly committed slot,
    /// over all sequenced propose rounds.
    pub commit_rate: f64,
    pub waves: usize,
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Metrics {
    pub fn of(report: &RunReport) -> Self {
        let observer = report.observer();
        let mut hops: Vec<u64> = report.tx_latency.iter().map(|l| l.hops).collect();
        hops.sort_unstable();
        let mean = |xs: &mut dyn Iterator<Item = u64>| {
            let (sum, count) = xs.fold((0u64, 0usize), |(s, c), x| (s + x, c + 1));
            if count == 0 {
                0.0
            } else {
                sum as f64 / count as f64
            }
        };
        let mut direct = 0;
        let mut indirect = 0;
        let mut skips = 0;
        for s in &observer.slots {
            match (s.status, s.rule) {
                (SlotStatus::Commit(_), Some(DecisionRule::Direct)) => direct += 1,
                (SlotStatus::Commit(_), _) => indirect += 1,
                (SlotStatus::Skip, _) => skips += 1,
                (SlotStatus::Undecided, _) => {}
            }
        }
        let (waves, hits) = wave_hits(&observer.slots);
        Metrics {
            txs_committed: hops.len(),
            mean_latency_hops: mean(&mut hops.iter().copied()),
            p50_latency_hops: percentile(&hops, 50.0),
            p99_latency_hops: percentile(&hops, 99.0),
            mean_latency_time: mean(&mut report.tx_latency.iter().map(|l| l.time)),
            direct_commits: direct,
            indirect_commits: indirect,
            skips,
            commit_rate: if waves == 0 {
                0.0
            } else {
                hits as f64 / waves as f64
            },
            waves,
        }
    }
}

/// Number of complete propose rounds in `slots` and how many of them have a
/// directly committed slot. `slots` is in sequence order.
pub fn wave_hits(slots: &[SlotRecord]) -> (usize, usize) {
    let mut waves = 0;
    let mut hits = 0;
    let mut current: Option<(Round, bool)> = None;
    for s in slots {
        match &mut current {
            Some((round, hit)) if *round == s.slot.round => *hit |= s.is_direct_commit(),
            _ => {
                if let Some((_, hit)) = current {
                    waves += 1;
                    hits += usize::from(hit);
                }
                current = Some((s.slot.round, s.is_direct_commit()));
            }
        }
    }
    if let Some((_, hit)) = current {
        waves += 1;
        hits += usize::from(hit);
    }
    (waves, hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let xs: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&xs, 50.0), 50);
        assert_eq!(percentile(&xs, 99.0), 99);
        assert_eq!(percentile(&[7], 99.0), 7);
        assert_eq!(percentile(&[], 50.0), 0);
    }
}
