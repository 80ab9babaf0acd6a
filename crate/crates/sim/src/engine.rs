//! The event loop.
//!
//! Events are processed in `(time, seq)` order. All events of one instant are
//! applied first; then each validator handles its inbox as one batch, and
//! only then do validators try to propose. A run is a pure function of its
//! [`SimConfig`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Arc, Mutex};

use thiserror::Error;
use wavedag_core::committer::{CoinSchedule, LeaderSchedule, SequencedSlot};
use wavedag_core::wire::{replay, MemWal, NullWal, Wal, WalError};
use wavedag_core::{
    AdvancePolicy, Block, BlockRef, Committee, DagStore, Round, Transaction, Validator,
    ValidatorConfig, ValidatorId, ValidatorKeys, WaveConfig,
};

use crate::policy::{Delays, FaultPlan, Scheduler};
use crate::report::{Role, RunParams, RunReport, SlotRecord, TxLatency, ValidatorReport};

/// Smallest transaction the load generator emits: submit time, submitter and
/// a counter.
pub const MIN_TX_SIZE: usize = 18;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n: usize,
    pub wave: WaveConfig,
    pub scheduler: Scheduler,
    pub faults: FaultPlan,
    /// Transactions submitted to every live validator per time unit.
    pub load: usize,
    pub tx_size: usize,
    /// No validator proposes past this round.
    pub rounds: u64,
    pub seed: u64,
    pub advance: AdvancePolicy,
    /// Under [`AdvancePolicy::WaitForAll`], how long to wait for the last
    /// blocks of a round once a quorum is in.
    pub advance_timeout: u64,
    /// Live validators re-send their last block this often while stuck.
    /// `None` picks a default when the plan has restarts and disables it
    /// otherwise.
    pub rebroadcast_every: Option<u64>,
    /// Hard stop. `None` derives a generous bound from `rounds`.
    pub max_time: Option<u64>,
    /// Keep a store holding every released block in the report.
    pub keep_union: bool,
    pub schedule: Arc<dyn LeaderSchedule>,
}

impl SimConfig {
    pub fn new(n: usize, wave: WaveConfig, scheduler: Scheduler, rounds: u64, seed: u64) -> Self {
        Self {
            n,
            wave,
            scheduler,
            faults: FaultPlan::default(),
            load: 1,
            tx_size: 32,
            rounds,
            seed,
            advance: AdvancePolicy::Quorum,
            advance_timeout: 2,
            rebroadcast_every: None,
            max_time: None,
            keep_union: false,
            schedule: Arc::new(CoinSchedule),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("committee of {0} validators is not supported")]
    Committee(usize),
    #[error("{leaders} leader slots per round in a committee of {n}")]
    Leaders { leaders: usize, n: usize },
    #[error("{faulty} faulty validators exceed f = {f}")]
    TooManyFaults { faulty: usize, f: usize },
    #[error("validator {0} is not in the committee")]
    UnknownValidator(ValidatorId),
    #[error("equivocators need at least 2 variants, got {0}")]
    Variants(usize),
    #[error("transactions must be at least {MIN_TX_SIZE} bytes")]
    TxSize,
}

#[derive(Clone, Debug)]
enum Msg {
    Block(Arc<Block>),
    FetchRequest(Vec<BlockRef>),
    FetchResponse(Vec<Arc<Block>>),
}

#[derive(Debug)]
enum Action {
    Deliver {
        from: ValidatorId,
        to: ValidatorId,
        msg: Msg,
    },
    Wake(ValidatorId),
    Crash(ValidatorId),
    Restart(ValidatorId),
    Rebroadcast,
}

#[derive(Debug)]
struct Event {
    time: u64,
    seq: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Default)]
struct Queue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, time: u64, action: Action) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            action,
        });
    }
}

struct Node {
    keys: ValidatorKeys,
    validator: Option<Validator>,
    wal: Option<Arc<Mutex<Vec<u8>>>>,
    stopped: bool,
    report: ValidatorReport,
    /// Round a WaitForAll validator has a quorum for, and since when.
    quorum_since: Option<(Round, u64)>,
    wake_at: Option<u64>,
    round_at_last_rebroadcast: Round,
    submitted: u64,
}

struct Sim {
    config: SimConfig,
    committee: Arc<Committee>,
    validator_config: ValidatorConfig,
    nodes: Vec<Node>,
    queue: Queue,
    delays: Delays,
    union: Option<DagStore>,
    observer: ValidatorId,
    tx_latency: Vec<TxLatency>,
    events: u64,
    now: u64,
    last_load: Option<u64>,
}

fn validate(config: &SimConfig) -> Result<(), SimError> {
    let n = config.n;
    if n == 0 || n > usize::from(u16::MAX) {
        return Err(SimError::Committee(n));
    }
    if config.wave.leaders_per_round() > n {
        return Err(SimError::Leaders {
            leaders: config.wave.leaders_per_round(),
            n,
        });
    }
    let f = (n - 1) / 3;
    let plan = &config.faults;
    let mut faulty: Vec<ValidatorId> = plan
        .crashes
        .iter()
        .map(|&(v, _)| v)
        .chain(plan.equivocators.iter().copied())
        .collect();
    faulty.sort();
    faulty.dedup();
    for v in faulty
        .iter()
        .chain(plan.recoveries.iter().map(|r| &r.validator))
    {
        if v.index() >= n {
            return Err(SimError::UnknownValidator(*v));
        }
    }
    if faulty.len() > f {
        return Err(SimError::TooManyFaults {
            faulty: faulty.len(),
            f,
        });
    }
    if !plan.equivocators.is_empty() && plan.variants < 2 {
        return Err(SimError::Variants(plan.variants));
    }
    if config.load > 0 && config.tx_size < MIN_TX_SIZE {
        return Err(SimError::TxSize);
    }
    Ok(())
}

/// Runs one simulation to completion.
pub fn run(config: SimConfig) -> Result<RunReport, SimError> {
    validate(&config)?;
    let mut sim = Sim::new(config);
    sim.run();
    Ok(sim.finish())
}

impl Sim {
    fn new(config: SimConfig) -> Self {
        let n = config.n;
        let (committee, keys) = Committee::generate(n, config.seed).expect("validated size");
        let committee = Arc::new(committee);
        let mut validator_config = ValidatorConfig::new(config.wave);
        validator_config.advance = config.advance;
        validator_config.max_block_transactions = validator_config.limits.max_transactions;
        let plan = &config.faults;
        let live: Vec<bool> = (0..n)
            .map(|i| plan.crash_time(ValidatorId::from(i)) != Some(0))
            .collect();
        let delays = Delays::new(config.scheduler.clone(), config.seed, n, live);
        let nodes = keys
            .into_iter()
            .map(|keys| {
                let id = keys.id;
                let role = if plan.is_equivocator(id) {
                    Role::Equivocator
                } else if plan.crash_time(id).is_some() {
                    Role::Crashed
                } else {
                    Role::Honest
                };
                let (wal, handle): (Box<dyn Wal>, _) = match plan.recovery(id) {
                    Some(r) => {
                        let wal = MemWal::new().crash_at(r.at_append, r.torn);
                        let handle = wal.handle();
                        (Box::new(wal), Some(handle))
                    }
                    None => (Box::new(NullWal), None),
                };
                let validator = Validator::new(
                    keys.clone(),
                    Arc::clone(&committee),
                    validator_config.clone(),
                    Arc::clone(&config.schedule),
                    wal,
                );
                Node {
                    keys,
                    validator: Some(validator),
                    wal: handle,
                    stopped: false,
                    report: ValidatorReport {
                        id,
                        role,
                        final_round: Round::GENESIS,
                        commit_sequence: Vec::new(),
                        slots: Vec::new(),
                        released: Vec::new(),
                        restarts: 0,
                    },
                    quorum_since: None,
                    wake_at: None,
                    round_at_last_rebroadcast: Round::GENESIS,
                    submitted: 0,
                }
            })
            .collect::<Vec<_>>();
        let observer = nodes
            .iter()
            .find(|node| {
                node.report.role == Role::Honest && plan.recovery(node.report.id).is_none()
            })
            .or_else(|| nodes.iter().find(|node| node.report.role.is_honest()))
            .map_or(ValidatorId(0), |node| node.report.id);
        let union = config
            .keep_union
            .then(|| DagStore::new(Arc::clone(&committee)));
        Self {
            config,
            committee,
            validator_config,
            nodes,
            queue: Queue::default(),
            delays,
            union,
            observer,
            tx_latency: Vec::new(),
            events: 0,
            now: 0,
            last_load: None,
        }
    }

    fn max_time(&self) -> u64 {
        self.config.max_time.unwrap_or_else(|| {
            let per_round = 4 * self.delays.max_delay().max(1) + 4;
            let downtime: u64 = self
                .config
                .faults
                .recoveries
                .iter()
                .map(|r| r.downtime + 64)
                .sum();
            (self.config.rounds + 10) * per_round * 4 + downtime * 4 + 1_000
        })
    }

    fn rebroadcast_every(&self) -> Option<u64> {
        match self.config.rebroadcast_every {
            Some(0) => None,
            Some(every) => Some(every),
            None if !self.config.faults.recoveries.is_empty() => {
                Some(4 * self.delays.max_delay().max(1) + 4)
            }
            None => None,
        }
    }

    fn run(&mut self) {
        for (v, at) in self.config.faults.crashes.clone() {
            if at == 0 {
                self.stop(v);
            } else {
                self.queue.push(at, Action::Crash(v));
            }
        }
        if let Some(every) = self.rebroadcast_every() {
            self.queue.push(every, Action::Rebroadcast);
        }
        self.step(Vec::new());
        let limit = self.max_time();
        while let Some(next) = self.queue.heap.peek() {
            if next.time > limit {
                break;
            }
            self.now = next.time;
            let mut batch = Vec::new();
            while self.queue.heap.peek().is_some_and(|e| e.time == self.now) {
                batch.push(self.queue.heap.pop().expect("peeked").action);
            }
            self.events += batch.len() as u64;
            self.step(batch);
        }
    }

    fn live(&self, v: ValidatorId) -> bool {
        let node = &self.nodes[v.index()];
        !node.stopped && node.validator.is_some()
    }

    fn stop(&mut self, v: ValidatorId) {
        let node = &mut self.nodes[v.index()];
        node.stopped = true;
        node.validator = None;
    }

    fn step(&mut self, batch: Vec<Action>) {
        let n = self.config.n;
        let mut inbox: Vec<Vec<(ValidatorId, Arc<Block>)>> = vec![Vec::new(); n];
        let mut touched = vec![false; n];
        for action in batch {
            match action {
                Action::Crash(v) => self.stop(v),
                Action::Restart(v) => {
                    self.restart(v);
                    touched[v.index()] = true;
                }
                Action::Wake(v) => {
                    self.nodes[v.index()].wake_at = None;
                    touched[v.index()] = true;
                }
                Action::Rebroadcast => self.rebroadcast(),
                Action::Deliver { from, to, msg } => {
                    if !self.live(to) {
                        continue;
                    }
                    touched[to.index()] = true;
                    match msg {
                        Msg::Block(block) => inbox[to.index()].push((from, block)),
                        Msg::FetchResponse(blocks) => {
                            inbox[to.index()].extend(blocks.into_iter().map(|b| (from, b)))
                        }
                        Msg::FetchRequest(refs) => {
                            let validator =
                                self.nodes[to.index()].validator.as_ref().expect("live");
                            let blocks = validator.on_fetch_request(&refs);
                            if !blocks.is_empty() {
                                let at = self.now + self.delays.control();
                                self.queue.push(
                                    at,
                                    Action::Deliver {
                                        from: to,
                                        to: from,
                                        msg: Msg::FetchResponse(blocks),
                                    },
                                );
                            }
                        }
                    }
                }
            }
        }
        self.submit_load();
        for i in 0..n {
            let v = ValidatorId::from(i);
            let blocks = std::mem::take(&mut inbox[i]);
            if !self.live(v) {
                continue;
            }
            let now = self.now;
            let validator = self.nodes[i].validator.as_mut().expect("live");
            let result = if blocks.is_empty() {
                if touched[i] {
                    Ok(validator.poll_fetches(now))
                } else {
                    continue;
                }
            } else {
                validator.on_blocks_received(blocks, now).map(|effects| {
                    self.record_committed(v, effects.committed);
                    effects.fetches
                })
            };
            match result {
                Ok(fetches) => self.send_fetches(v, fetches),
                Err(e) => self.crash_on(v, e),
            }
        }
        for i in 0..n {
            let v = ValidatorId::from(i);
            self.propose(v);
            self.schedule_wake(v);
        }
    }

    fn submit_load(&mut self) {
        if self.config.load == 0 {
            return;
        }
        let elapsed = match self.last_load {
            Some(t) if t == self.now => return,
            Some(t) => self.now - t,
            None => 1,
        };
        self.last_load = Some(self.now);
        let count = self.config.load as u64 * elapsed;
        let size = self.config.tx_size;
        let now = self.now;
        for node in &mut self.nodes {
            let Some(validator) = node.validator.as_mut() else {
                continue;
            };
            if node.stopped || validator.round().0 >= self.config.rounds {
                continue;
            }
            for _ in 0..count {
                let mut payload = Vec::with_capacity(size);
                payload.extend_from_slice(&now.to_be_bytes());
                payload.extend_from_slice(&node.report.id.0.to_be_bytes());
                payload.extend_from_slice(&node.submitted.to_be_bytes());
                payload.resize(size, 0);
                node.submitted += 1;
                // A full pool just drops load.
                let _ = validator.submit_transaction(Transaction::new(payload));
            }
        }
    }

    fn send_fetches(&mut self, from: ValidatorId, fetches: Vec<(ValidatorId, Vec<BlockRef>)>) {
        for (peer, refs) in fetches {
            let at = self.now + self.delays.control();
            self.queue.push(
                at,
                Action::Deliver {
                    from,
                    to: peer,
                    msg: Msg::FetchRequest(refs),
                },
            );
        }
    }

    fn schedule_wake(&mut self, v: ValidatorId) {
        if !self.live(v) {
            return;
        }
        let node = &self.nodes[v.index()];
        let validator = node.validator.as_ref().expect("live");
        let fetch = validator.next_fetch_due().map(|t| t.max(self.now + 1));
        let quorum = node
            .quorum_since
            .map(|(_, since)| (since + self.config.advance_timeout).max(self.now + 1));
        let due = match (fetch, quorum) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        if let Some(due) = due {
            if node.wake_at.is_none_or(|w| due < w || w <= self.now) {
                self.nodes[v.index()].wake_at = Some(due);
                self.queue.push(due, Action::Wake(v));
            }
        }
    }

    fn propose(&mut self, v: ValidatorId) {
        // Several rounds can open at once when a laggard catches up.
        for _ in 0..self.config.rounds.max(1) {
            if !self.live(v) {
                return;
            }
            let now = self.now;
            let timeout = self.config.advance_timeout;
            let rounds = self.config.rounds;
            let node = &mut self.nodes[v.index()];
            let validator = node.validator.as_mut().expect("live");
            let Some(round) = validator.next_proposal_round(true) else {
                node.quorum_since = None;
                return;
            };
            if round.0 > rounds {
                return;
            }
            let timed_out = match node.quorum_since {
                Some((r, since)) if r == round => now >= since + timeout,
                _ => false,
            };
            match validator.try_advance_round(timed_out) {
                Ok(Some((block, committed))) => {
                    node.quorum_since = None;
                    node.report.final_round = block.round();
                    self.record_committed(v, committed);
                    self.release(v, block);
                }
                Ok(None) => {
                    if node.quorum_since.map(|(r, _)| r) != Some(round) {
                        node.quorum_since = Some((round, now));
                    }
                    return;
                }
                Err(e) => {
                    self.crash_on(v, e);
                    return;
                }
            }
        }
    }

    /// Broadcasts a fresh own block; equivocators split the committee between
    /// variants.
    fn release(&mut self, v: ValidatorId, block: Arc<Block>) {
        let mut variants = vec![block];
        if self.nodes[v.index()].report.role == Role::Equivocator {
            let first = Arc::clone(&variants[0]);
            let keys = &self.nodes[v.index()].keys;
            for i in 1..self.config.faults.variants {
                let marker = format!("equivocation {} {} {i}", v, first.round().0);
                variants.push(Arc::new(Block::new_signed(
                    v,
                    first.round(),
                    first.parents().to_vec(),
                    vec![Transaction::new(marker.into_bytes())],
                    &keys.coin,
                    &keys.signing,
                )));
            }
            let extra: Vec<(ValidatorId, Arc<Block>)> =
                variants[1..].iter().map(|b| (v, Arc::clone(b))).collect();
            let now = self.now;
            let validator = self.nodes[v.index()].validator.as_mut().expect("live");
            if let Ok(effects) = validator.on_blocks_received(extra, now) {
                self.record_committed(v, effects.committed);
            }
        }
        for b in &variants {
            self.nodes[v.index()].report.released.push(b.reference());
            if let Some(union) = self.union.as_mut() {
                union.insert(Arc::clone(b));
            }
        }
        let k = variants.len();
        for peer in 0..self.config.n {
            let to = ValidatorId::from(peer);
            if to == v {
                continue;
            }
            let block = &variants[peer % k];
            let at = self.now + self.delays.block(v, block.round(), to);
            self.queue.push(
                at,
                Action::Deliver {
                    from: v,
                    to,
                    msg: Msg::Block(Arc::clone(block)),
                },
            );
        }
    }

    fn resend_last(&mut self, v: ValidatorId) {
        let Some(block) = self.nodes[v.index()]
            .validator
            .as_ref()
            .and_then(|val| val.last_proposal().cloned())
        else {
            return;
        };
        for peer in 0..self.config.n {
            let to = ValidatorId::from(peer);
            if to != v {
                let at = self.now + self.delays.control();
                self.queue.push(
                    at,
                    Action::Deliver {
                        from: v,
                        to,
                        msg: Msg::Block(Arc::clone(&block)),
                    },
                );
            }
        }
    }

    fn rebroadcast(&mut self) {
        let mut unfinished = false;
        for i in 0..self.config.n {
            let v = ValidatorId::from(i);
            if !self.live(v) {
                if !self.nodes[i].stopped {
                    unfinished = true;
                }
                continue;
            }
            let validator = self.nodes[i].validator.as_ref().expect("live");
            let round = validator.round();
            let done = round.0 >= self.config.rounds
                || validator.store().highest_quorum_round().0 >= self.config.rounds;
            if !done {
                unfinished = true;
                if round == self.nodes[i].round_at_last_rebroadcast {
                    self.resend_last(v);
                }
            }
            self.nodes[i].round_at_last_rebroadcast = round;
        }
        if unfinished {
            if let Some(every) = self.rebroadcast_every() {
                self.queue.push(self.now + every, Action::Rebroadcast);
            }
        }
    }

    fn crash_on(&mut self, v: ValidatorId, error: WalError) {
        let node = &mut self.nodes[v.index()];
        node.validator = None;
        node.quorum_since = None;
        match (error, self.config.faults.recovery(v)) {
            (WalError::Crashed, Some(plan)) => {
                let at = self.now + plan.downtime.max(1);
                self.queue.push(at, Action::Restart(v));
            }
            (e, _) => panic!("{v}: unexpected log failure: {e}"),
        }
    }

    fn restart(&mut self, v: ValidatorId) {
        let node = &mut self.nodes[v.index()];
        let image = node
            .wal
            .as_ref()
            .expect("restartable")
            .lock()
            .expect("wal")
            .clone();
        let records = replay(&image).expect("only the tail can be torn");
        let intact: usize = records.iter().map(|r| r.encode().len()).sum();
        let wal = MemWal::from_bytes(image[..intact].to_vec());
        node.wal = Some(wal.handle());
        let (validator, committed) = Validator::recover(
            node.keys.clone(),
            Arc::clone(&self.committee),
            self.validator_config.clone(),
            Arc::clone(&self.config.schedule),
            Box::new(wal),
            records,
        )
        .expect("own log replays");
        node.report.restarts += 1;
        node.report.role = Role::Recovered;
        node.report.final_round = validator.round();
        node.validator = Some(validator);
        self.record_committed(v, committed);
        self.resend_last(v);
    }

    fn record_committed(&mut self, v: ValidatorId, committed: Vec<SequencedSlot>) {
        if committed.is_empty() {
            return;
        }
        let node = &mut self.nodes[v.index()];
        let sequenced_at = node
            .validator
            .as_ref()
            .map_or(Round::GENESIS, |val| val.store().highest_round());
        for slot in committed {
            let d = slot.decision;
            // A restarted validator sequences its early slots again; their
            // blocks are already suppressed.
            let repeated = node
                .report
                .slots
                .last()
                .is_some_and(|last| last.slot >= d.slot);
            if !repeated {
                node.report.slots.push(SlotRecord {
                    slot: d.slot,
                    leader: d.leader,
                    status: d.status,
                    rule: d.rule,
                    decided_at: d.decided_at,
                    sequenced_at,
                    sequenced_time: self.now,
                });
            }
            for block in &slot.blocks {
                node.report.commit_sequence.push(block.reference());
                if v != self.observer {
                    continue;
                }
                for tx in block.transactions() {
                    let Some(submitted) = tx
                        .payload()
                        .get(..8)
                        .map(|b| u64::from_be_bytes(b.try_into().expect("8 bytes")))
                    else {
                        continue;
                    };
                    if tx.payload().starts_with(b"equivocation") {
                        continue;
                    }
                    self.tx_latency.push(TxLatency {
                        hops: sequenced_at.0.saturating_sub(block.round().0) + 1,
                        time: self.now.saturating_sub(submitted),
                    });
                }
            }
        }
    }

    fn finish(self) -> RunReport {
        let honest: Vec<bool> = self
            .nodes
            .iter()
            .map(|n| n.report.role.is_honest())
            .collect();
        let undelivered = self
            .queue
            .heap
            .iter()
            .filter(|e| {
                matches!(&e.action, Action::Deliver { from, to, .. }
                if honest[from.index()] && honest[to.index()])
            })
            .count();
        let config = &self.config;
        let f = (config.n - 1) / 3;
        RunReport {
            params: RunParams {
                seed: config.seed,
                n: config.n,
                f,
                wave_length: config.wave.wave_length(),
                leaders: config.wave.leaders_per_round(),
                scheduler: config.scheduler.name().to_string(),
                crashed: config.faults.crashes.len(),
                byzantine: config.faults.equivocators.len(),
                rounds: config.rounds,
                load: config.load,
            },
            observer: self.observer,
            validators: self.nodes.into_iter().map(|n| n.report).collect(),
            tx_latency: self.tx_latency,
            end_time: self.now,
            events: self.events,
            undelivered,
            union: self.union,
        }
    }
}
