//! A validator driven by its TCP transport.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::{interval, Instant, MissedTickBehavior};
use wavedag_core::validator::{Backoff, RecoveryError};
use wavedag_core::wire::{FileWal, Message, NullWal, Wal, WalError, WalRecord};
use wavedag_core::{
    Block, CoinSchedule, Committee, Effects, Round, Transaction, Validator, ValidatorConfig,
    ValidatorId, ValidatorKeys,
};

use crate::transport::{Transport, TransportSender};

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub keys: ValidatorKeys,
    pub committee: Arc<Committee>,
    pub validator: ValidatorConfig,
    pub peers: Vec<(ValidatorId, SocketAddr)>,
    /// Log file; `None` runs without durability.
    pub wal: Option<PathBuf>,
    /// `fsync` every log append.
    pub sync_wal: bool,
    pub tick: Duration,
    /// Lower bound between two own proposals (throughput experiments only).
    pub min_block_interval: Duration,
    /// How long to wait for all n blocks under the wait-for-all policy.
    pub advance_timeout: Duration,
    /// Resend the last proposal after this long without a new one.
    pub rebroadcast_after: Duration,
}

impl NodeConfig {
    pub fn new(
        keys: ValidatorKeys,
        committee: Arc<Committee>,
        validator: ValidatorConfig,
        peers: Vec<(ValidatorId, SocketAddr)>,
    ) -> Self {
        let mut validator = validator;
        // Fetch retries in milliseconds, capped at one second.
        validator.fetch_backoff = Backoff {
            base: 100,
            cap: 1_000,
        };
        Self {
            keys,
            committee,
            validator,
            peers,
            wal: None,
            sync_wal: false,
            tick: Duration::from_millis(10),
            min_block_interval: Duration::from_millis(20),
            advance_timeout: Duration::from_millis(500),
            rebroadcast_after: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("log: {0}")]
    Wal(#[from] WalError),
    #[error("recovery: {0}")]
    Recovery(#[from] RecoveryError),
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeStatus {
    pub round: Round,
    pub committed: u64,
}

pub struct NodeHandle {
    pub id: ValidatorId,
    pub submit: mpsc::Sender<Transaction>,
    /// Committed blocks in commit order, exactly once.
    pub committed: mpsc::UnboundedReceiver<Arc<Block>>,
    pub status: watch::Receiver<NodeStatus>,
    /// How many of the first blocks on `committed` were already handed out
    /// before a crash. A restarted node re-delivers its whole committed
    /// sequence so hosts can rebuild derived state such as prefix hashes.
    pub replayed: u64,
    pub sender: TransportSender,
    pub task: JoinHandle<Result<(), NodeError>>,
}

impl NodeHandle {
    /// Stops the node abruptly, as a crash would.
    pub fn kill(&self) {
        self.task.abort();
    }
}

/// Recovers from the log if one exists, starts the transport on `listener`
/// and runs the node until killed.
pub fn spawn_node(config: NodeConfig, listener: TcpListener) -> Result<NodeHandle, NodeError> {
    let id = config.keys.id;
    let (wal, records): (Box<dyn Wal>, _) = match &config.wal {
        Some(path) => {
            let (wal, records) = FileWal::open(path, config.sync_wal)?;
            (Box::new(wal), records)
        }
        None => (Box::new(NullWal), Vec::new()),
    };
    // Without its checkpoints the log replays as if nothing had been handed
    // out, so recovery returns the full committed sequence.
    let replayed = records
        .iter()
        .filter_map(|r| match r {
            WalRecord::Checkpoint(count) => Some(*count),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let records = records
        .into_iter()
        .filter(|r| !matches!(r, WalRecord::Checkpoint(_)))
        .collect();
    let (validator, recovered) = Validator::recover(
        config.keys.clone(),
        Arc::clone(&config.committee),
        config.validator.clone(),
        Arc::new(CoinSchedule),
        wal,
        records,
    )?;
    let transport = Transport::start(id, listener, &config.peers, config.validator.limits)?;
    let sender = transport.sender();
    let (submit, submissions) = mpsc::channel(100_000);
    let (committed_tx, committed) = mpsc::unbounded_channel();
    let (status_tx, status) = watch::channel(NodeStatus::default());
    let mut driver = Driver {
        start: Instant::now(),
        last_proposal_at: None,
        validator,
        sender: sender.clone(),
        committed: committed_tx,
        status: status_tx,
        delivered: 0,
        config,
    };
    driver.emit(recovered.iter().flat_map(|s| s.blocks.iter()));
    if let Some(last) = driver.validator.last_proposal() {
        tracing::info!(%id, round = %last.round(), "recovered");
        driver.sender.broadcast(&Message::Block(Arc::clone(last)));
    }
    let task = tokio::spawn(driver.run(transport, submissions));
    Ok(NodeHandle {
        id,
        submit,
        committed,
        status,
        replayed,
        sender,
        task,
    })
}

struct Driver {
    config: NodeConfig,
    validator: Validator,
    sender: TransportSender,
    committed: mpsc::UnboundedSender<Arc<Block>>,
    status: watch::Sender<NodeStatus>,
    start: Instant,
    last_proposal_at: Option<Instant>,
    delivered: u64,
}

impl Driver {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    async fn run(
        mut self,
        mut transport: Transport,
        mut submissions: mpsc::Receiver<Transaction>,
    ) -> Result<(), NodeError> {
        let mut tick = interval(self.config.tick);
        tick.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                incoming = transport.recv() => {
                    let Some((from, message)) = incoming else { return Ok(()) };
                    self.handle(from, message)?;
                }
                Some(tx) = submissions.recv() => {
                    let _ = self.validator.submit_transaction(tx);
                }
                _ = tick.tick() => {
                    let fetches = self.validator.poll_fetches(self.now_ms());
                    self.send_fetches(fetches);
                    self.rebroadcast_if_stalled();
                }
            }
            self.try_propose()?;
        }
    }

    fn handle(&mut self, from: ValidatorId, message: Message) -> Result<(), NodeError> {
        let now = self.now_ms();
        match message {
            Message::Block(block) => {
                let effects = self.validator.on_block_received(from, block, now)?;
                self.apply(effects);
            }
            Message::FetchResponse(blocks) => {
                let effects = self
                    .validator
                    .on_blocks_received(blocks.into_iter().map(|b| (from, b)), now)?;
                self.apply(effects);
            }
            Message::FetchRequest(refs) => {
                let blocks = self.validator.on_fetch_request(&refs);
                if !blocks.is_empty() {
                    self.sender.send(from, &Message::FetchResponse(blocks));
                }
            }
            Message::Transaction(tx) => {
                let _ = self.validator.submit_transaction(tx);
            }
            Message::Hello(_) => {}
        }
        Ok(())
    }

    fn apply(&mut self, effects: Effects) {
        for (r, reason) in &effects.rejected {
            tracing::warn!(block = %r, "rejected: {reason}");
        }
        self.send_fetches(effects.fetches);
        self.emit(effects.committed.iter().flat_map(|s| s.blocks.iter()));
    }

    fn send_fetches(&self, fetches: Vec<(ValidatorId, Vec<wavedag_core::BlockRef>)>) {
        for (peer, refs) in fetches {
            self.sender.send(peer, &Message::FetchRequest(refs));
        }
    }

    fn emit<'a>(&mut self, blocks: impl Iterator<Item = &'a Arc<Block>>) {
        for block in blocks {
            self.delivered += 1;
            let _ = self.committed.send(Arc::clone(block));
        }
        self.status.send_replace(NodeStatus {
            round: self.validator.round(),
            committed: self.delivered,
        });
    }

    fn try_propose(&mut self) -> Result<(), NodeError> {
        let now = Instant::now();
        let since = self.last_proposal_at.map(|t| now - t);
        if since.is_some_and(|s| s < self.config.min_block_interval) {
            return Ok(());
        }
        let timed_out = since.is_none_or(|s| s >= self.config.advance_timeout);
        if let Some((block, committed)) = self.validator.try_advance_round(timed_out)? {
            self.last_proposal_at = Some(now);
            self.sender.broadcast(&Message::Block(block));
            self.emit(committed.iter().flat_map(|s| s.blocks.iter()));
        }
        Ok(())
    }

    fn rebroadcast_if_stalled(&mut self) {
        let Some(at) = self.last_proposal_at else {
            return;
        };
        if at.elapsed() < self.config.rebroadcast_after {
            return;
        }
        if let Some(last) = self.validator.last_proposal() {
            self.sender.broadcast(&Message::Block(Arc::clone(last)));
        }
        self.last_proposal_at = Some(Instant::now());
    }
}
