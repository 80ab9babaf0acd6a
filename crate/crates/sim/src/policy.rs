//! Delivery schedules and fault plans.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use wavedag_core::{Round, ValidatorId};

/// Parameters of the adversarial scheduler. Every delay lies in
/// `1..=max_delay`, so every message is eventually delivered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adversarial {
    pub max_delay: u64,
    /// Number of authors whose blocks always take `max_delay`. The slowed set
    /// rotates every `rotate_every` rounds.
    pub slow_authors: usize,
    pub rotate_every: u64,
    /// Blocks of every `round_period`-th round get the maximum delay.
    pub round_period: u64,
}

impl Default for Adversarial {
    fn default() -> Self {
        Self {
            max_delay: 6,
            slow_authors: 3,
            rotate_every: 7,
            round_period: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheduler {
    /// Every message takes `hop` time units.
    Synchronous {
        hop: u64,
    },
    /// Per round, each validator first hears from its own block plus a
    /// uniformly random set of 2f other live validators (one time unit);
    /// the remaining blocks arrive 1 to 3 units later.
    RandomModel,
    Adversarial(Adversarial),
}

impl Scheduler {
    pub fn sync() -> Self {
        Scheduler::Synchronous { hop: 1 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheduler::Synchronous { .. } => "sync",
            Scheduler::RandomModel => "random",
            Scheduler::Adversarial(_) => "adversarial",
        }
    }
}

/// A validator that crashes once its write-ahead log has taken `at_append`
/// records, and restarts from the log `downtime` time units later.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashRecovery {
    pub validator: ValidatorId,
    pub at_append: usize,
    /// Leave half of the failing record behind.
    pub torn: bool,
    pub downtime: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    /// Validators that stop for good at the given time. Time 0 means they
    /// never propose.
    pub crashes: Vec<(ValidatorId, u64)>,
    pub equivocators: Vec<ValidatorId>,
    /// Blocks per round issued by each equivocator (at least 2).
    pub variants: usize,
    pub recoveries: Vec<CrashRecovery>,
}

impl FaultPlan {
    pub fn crashed_at_start(ids: impl IntoIterator<Item = ValidatorId>) -> Self {
        Self {
            crashes: ids.into_iter().map(|v| (v, 0)).collect(),
            ..Self::default()
        }
    }

    pub fn is_equivocator(&self, v: ValidatorId) -> bool {
        self.equivocators.contains(&v)
    }

    pub fn crash_time(&self, v: ValidatorId) -> Option<u64> {
        self.crashes
            .iter()
            .find(|(id, _)| *id == v)
            .map(|&(_, t)| t)
    }

    pub fn recovery(&self, v: ValidatorId) -> Option<&CrashRecovery> {
        self.recoveries.iter().find(|r| r.validator == v)
    }
}

/// Seeded delay oracle. Draws happen in event order, so a run is a pure
/// function of its seed.
#[derive(Debug)]
pub(crate) struct Delays {
    scheduler: Scheduler,
    rng: ChaCha8Rng,
    n: usize,
    f: usize,
    live: Vec<bool>,
    /// `(recipient, round)` -> authors of the first 2f+1 blocks it receives.
    first: FxHashMap<(ValidatorId, Round), Vec<bool>>,
}

impl Delays {
    pub fn new(scheduler: Scheduler, seed: u64, n: usize, live: Vec<bool>) -> Self {
        Self {
            scheduler,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de1a),
            n,
            f: (n - 1) / 3,
            live,
            first: FxHashMap::default(),
        }
    }

    fn first_set(&mut self, to: ValidatorId, round: Round) -> &Vec<bool> {
        let (n, f) = (self.n, self.f);
        let live = &self.live;
        let rng = &mut self.rng;
        self.first.entry((to, round)).or_insert_with(|| {
            let others: Vec<usize> = (0..n).filter(|&i| i != to.index() && live[i]).collect();
            let mut set = vec![false; n];
            set[to.index()] = true;
            let take = (2 * f).min(others.len());
            for i in sample(rng, others.len(), take) {
                set[others[i]] = true;
            }
            set
        })
    }

    /// Delay of a block of `author` at `round` sent to `to`.
    pub fn block(&mut self, author: ValidatorId, round: Round, to: ValidatorId) -> u64 {
        match self.scheduler.clone() {
            Scheduler::Synchronous { hop } => hop,
            Scheduler::RandomModel => {
                if self.first_set(to, round)[author.index()] {
                    1
                } else {
                    1 + self.rng.random_range(1..=3)
                }
            }
            Scheduler::Adversarial(p) => {
                let rotation = round.0 / p.rotate_every.max(1);
                let slowed =
                    (0..p.slow_authors).any(|i| (rotation as usize + i) % self.n == author.index());
                if slowed || (p.round_period > 0 && round.0.is_multiple_of(p.round_period)) {
                    p.max_delay
                } else {
                    self.rng.random_range(1..=p.max_delay)
                }
            }
        }
    }

    /// Delay of fetch traffic and rebroadcasts.
    pub fn control(&mut self) -> u64 {
        match &self.scheduler {
            Scheduler::Synchronous { hop } => *hop,
            Scheduler::RandomModel => 1,
            Scheduler::Adversarial(p) => {
                let max = p.max_delay;
                self.rng.random_range(1..=max)
            }
        }
    }

    pub fn max_delay(&self) -> u64 {
        match &self.scheduler {
            Scheduler::Synchronous { hop } => *hop,
            Scheduler::RandomModel => 4,
            Scheduler::Adversarial(p) => p.max_delay,
        }
    }
}
