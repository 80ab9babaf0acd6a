//! One validator process: a node plus an open-loop load generator.
//!
//! The generator submits transactions to the local node at a fixed rate,
//! whether or not earlier ones have committed. A transaction not seen in the
//! commit stream after `resubmit_after` is sent again to a different
//! validator, rotating through the peers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use sha2::{Digest as _, Sha256};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::time::{interval, Instant, MissedTickBehavior};
use wavedag_core::wire::Message;
use wavedag_core::{Block, Transaction, ValidatorId};

use crate::config::{ClusterConfig, ConfigError};
use crate::node::{spawn_node, NodeError};

/// Payload header: run nonce, submit time (ms since process start), origin,
/// counter. The nonce keeps a restarted process from claiming transactions
/// of its previous run.
const TX_HEADER: usize = 8 + 8 + 2 + 8;

#[derive(Clone, Debug)]
pub struct LoadConfig {
    /// Transactions per second; zero disables the generator.
    pub rate: u64,
    /// Payload size in bytes, at least the 26-byte header.
    pub tx_size: usize,
    pub resubmit_after: Duration,
    pub run_for: Duration,
    /// Log file for crash recovery.
    pub wal: Option<PathBuf>,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            rate: 1_000,
            tx_size: 64,
            resubmit_after: Duration::from_secs(5),
            run_for: Duration::from_secs(60),
            wal: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("binding listener: {0}")]
    Bind(std::io::Error),
    #[error(transparent)]
    Node(#[from] NodeError),
}

#[derive(Clone, Debug, Default)]
pub struct ProcessSummary {
    pub id: ValidatorId,
    /// Includes blocks re-delivered from the log after a restart.
    pub committed_blocks: u64,
    /// Transactions in blocks committed during this run.
    pub committed_txs: u64,
    pub submitted: u64,
    pub resubmitted: u64,
    /// Own transactions seen committed, with submit-to-commit latency.
    pub own_committed: u64,
    pub mean_latency_ms: f64,
    pub p50_latency_ms: u64,
    pub p99_latency_ms: u64,
    /// Running hash of committed block digests after every
    /// [`PrefixHasher::EVERY`] blocks. Two processes agree on their common
    /// prefix iff they agree on every shared entry.
    pub prefix_hashes: Vec<(u64, String)>,
}

/// Chained hash over committed block digests.
#[derive(Clone, Debug, Default)]
pub struct PrefixHasher {
    state: [u8; 32],
    count: u64,
    marks: Vec<(u64, String)>,
}

impl PrefixHasher {
    pub const EVERY: u64 = 100;

    pub fn push(&mut self, block: &Block) {
        let mut h = Sha256::new();
        h.update(self.state);
        h.update(block.digest().0);
        self.state = h.finalize().into();
        self.count += 1;
        if self.count.is_multiple_of(Self::EVERY) {
            self.marks.push((self.count, hex::encode(self.state)));
        }
    }

    pub fn marks(&self) -> &[(u64, String)] {
        &self.marks
    }
}

struct TxHeader {
    run: u64,
    submit_ms: u64,
    origin: ValidatorId,
    counter: u64,
}

fn make_tx(h: &TxHeader, size: usize) -> Transaction {
    let mut payload = Vec::with_capacity(size.max(TX_HEADER));
    payload.extend(h.run.to_be_bytes());
    payload.extend(h.submit_ms.to_be_bytes());
    payload.extend(h.origin.0.to_be_bytes());
    payload.extend(h.counter.to_be_bytes());
    payload.resize(size.max(TX_HEADER), 0);
    Transaction::new(payload)
}

fn parse_tx(tx: &Transaction) -> Option<TxHeader> {
    let p = tx.payload();
    if p.len() < TX_HEADER {
        return None;
    }
    Some(TxHeader {
        run: u64::from_be_bytes(p[..8].try_into().ok()?),
        submit_ms: u64::from_be_bytes(p[8..16].try_into().ok()?),
        origin: ValidatorId(u16::from_be_bytes(p[16..18].try_into().ok()?)),
        counter: u64::from_be_bytes(p[18..26].try_into().ok()?),
    })
}

struct Outstanding {
    tx: Transaction,
    deadline: Instant,
}

/// Runs validator `id` of `cluster` for `load.run_for`, then stops it.
pub async fn run_process(
    cluster: &ClusterConfig,
    id: ValidatorId,
    load: LoadConfig,
) -> Result<ProcessSummary, ProcessError> {
    let mut config = cluster.node_config(id)?;
    config.wal = load.wal.clone();
    let listener = TcpListener::bind(cluster.address(id)?)
        .await
        .map_err(ProcessError::Bind)?;
    let mut node = spawn_node(config, listener)?;
    let others: Vec<ValidatorId> = node.sender.peers().collect();

    let start = Instant::now();
    let run = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64);
    let stop = tokio::time::sleep(load.run_for);
    tokio::pin!(stop);
    let mut tick = interval(Duration::from_millis(10));
    tick.set_missed_tick_behavior(MissedTickBehavior::Skip);

    let mut summary = ProcessSummary {
        id,
        ..Default::default()
    };
    let mut hasher = PrefixHasher::default();
    let mut pending: BTreeMap<u64, Outstanding> = BTreeMap::new();
    let mut latencies = Vec::new();
    let mut next_peer = 0usize;
    // Blocks delivered before a restart count towards the prefix only.
    let mut replaying = node.replayed;

    loop {
        tokio::select! {
            _ = &mut stop => break,
            block = node.committed.recv() => {
                let Some(block) = block else { break };
                summary.committed_blocks += 1;
                hasher.push(&block);
                if replaying > 0 {
                    replaying -= 1;
                    continue;
                }
                for tx in block.transactions() {
                    summary.committed_txs += 1;
                    let Some(h) = parse_tx(tx) else { continue };
                    if h.run == run && h.origin == id && pending.remove(&h.counter).is_some() {
                        let now = start.elapsed().as_millis() as u64;
                        latencies.push(now.saturating_sub(h.submit_ms));
                    }
                }
            }
            _ = tick.tick() => {
                let now = Instant::now();
                let elapsed = now - start;
                let due = (elapsed.as_micros() as u64).saturating_mul(load.rate) / 1_000_000;
                while summary.submitted < due {
                    let counter = summary.submitted;
                    let header = TxHeader {
                        run,
                        submit_ms: elapsed.as_millis() as u64,
                        origin: id,
                        counter,
                    };
                    let tx = make_tx(&header, load.tx_size);
                    if node.submit.try_send(tx.clone()).is_err() {
                        break;
                    }
                    pending.insert(counter, Outstanding { tx, deadline: now + load.resubmit_after });
                    summary.submitted += 1;
                }
                if others.is_empty() {
                    continue;
                }
                for entry in pending.values_mut().filter(|o| o.deadline <= now) {
                    let peer = others[next_peer % others.len()];
                    next_peer += 1;
                    node.sender.send(peer, &Message::Transaction(entry.tx.clone()));
                    entry.deadline = now + load.resubmit_after;
                    summary.resubmitted += 1;
                }
            }
        }
    }
    node.kill();
    if let Ok(Ok(Err(e))) = tokio::time::timeout(Duration::from_secs(1), &mut node.task).await {
        return Err(e.into());
    }

    latencies.sort_unstable();
    summary.own_committed = latencies.len() as u64;
    if !latencies.is_empty() {
        summary.mean_latency_ms = latencies.iter().sum::<u64>() as f64 / latencies.len() as f64;
        summary.p50_latency_ms = latencies[latencies.len() / 2];
        summary.p99_latency_ms = latencies[(latencies.len() * 99 / 100).min(latencies.len() - 1)];
    }
    summary.prefix_hashes = hasher.marks().to_vec();
    Ok(summary)
}
