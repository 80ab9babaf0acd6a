//! Point-to-point TCP channels between validators.
//!
//! Every node dials every peer and only writes on that connection; inbound
//! connections are read-only. A dialer's first frame is `Hello(id)`. Outbound
//! frames wait in a per-peer queue of at most [`QUEUE_BOUND`] frames; when it
//! is full the oldest queued block is dropped (receivers recover it by pull
//! synchronization), or the oldest frame if no block is queued.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, Notify};
use tokio::task::JoinSet;
use wavedag_core::wire::frame::{HEADER_LEN, KIND_BLOCK};
use wavedag_core::wire::{decode_payload, encode_frame, parse_header, Limits, Message};
use wavedag_core::ValidatorId;

pub const QUEUE_BOUND: usize = 10_000;
pub const INGRESS_BOUND: usize = 65_536;

/// Reconnect delays: doubling from `RECONNECT_BASE`, capped at `RECONNECT_CAP`.
const RECONNECT_BASE: Duration = Duration::from_millis(20);
const RECONNECT_CAP: Duration = Duration::from_secs(1);

struct Queue {
    frames: Mutex<VecDeque<Arc<Vec<u8>>>>,
    notify: Notify,
    dropped: AtomicU64,
}

impl Queue {
    fn new() -> Self {
        Self {
            frames: Mutex::new(VecDeque::new()),
            notify: Notify::new(),
            dropped: AtomicU64::new(0),
        }
    }

    fn push(&self, frame: Arc<Vec<u8>>) {
        let mut frames = self.frames.lock().expect("queue lock");
        if frames.len() >= QUEUE_BOUND {
            let victim = frames
                .iter()
                .position(|f| f[HEADER_LEN] == KIND_BLOCK)
                .unwrap_or(0);
            frames.remove(victim);
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        frames.push_back(frame);
        drop(frames);
        self.notify.notify_one();
    }

    fn push_front(&self, frame: Arc<Vec<u8>>) {
        self.frames.lock().expect("queue lock").push_front(frame);
    }

    async fn pop(&self) -> Arc<Vec<u8>> {
        loop {
            if let Some(frame) = self.frames.lock().expect("queue lock").pop_front() {
                return frame;
            }
            self.notify.notified().await;
        }
    }
}

/// Cloneable sending half.
#[derive(Clone)]
pub struct TransportSender {
    me: ValidatorId,
    queues: Arc<Vec<Option<Arc<Queue>>>>,
}

impl TransportSender {
    pub fn me(&self) -> ValidatorId {
        self.me
    }

    pub fn peers(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        self.queues
            .iter()
            .enumerate()
            .filter(|(_, q)| q.is_some())
            .map(|(i, _)| ValidatorId::from(i))
    }

    pub fn send(&self, to: ValidatorId, message: &Message) {
        self.send_frame(to, Arc::new(encode_frame(message)));
    }

    fn send_frame(&self, to: ValidatorId, frame: Arc<Vec<u8>>) {
        if let Some(Some(queue)) = self.queues.get(to.index()) {
            queue.push(frame);
        }
    }

    /// Sends to every peer, encoding once.
    pub fn broadcast(&self, message: &Message) {
        let frame = Arc::new(encode_frame(message));
        for queue in self.queues.iter().flatten() {
            queue.push(Arc::clone(&frame));
        }
    }

    /// Frames dropped so far because a peer queue was full.
    pub fn dropped(&self) -> u64 {
        self.queues
            .iter()
            .flatten()
            .map(|q| q.dropped.load(Ordering::Relaxed))
            .sum()
    }
}

/// A running transport. Dropping it stops every connection task.
pub struct Transport {
    sender: TransportSender,
    incoming: mpsc::Receiver<(ValidatorId, Message)>,
    local_addr: SocketAddr,
    _tasks: JoinSet<()>,
}

impl Transport {
    /// Starts accepting on `listener` and dialing every peer in `peers`
    /// (entries for `me` are ignored).
    pub fn start(
        me: ValidatorId,
        listener: TcpListener,
        peers: &[(ValidatorId, SocketAddr)],
        limits: Limits,
    ) -> std::io::Result<Self> {
        let local_addr = listener.local_addr()?;
        let n = peers
            .iter()
            .map(|(id, _)| id.index() + 1)
            .max()
            .unwrap_or(0);
        let (tx, incoming) = mpsc::channel(INGRESS_BOUND);
        let mut tasks = JoinSet::new();
        tasks.spawn(accept_loop(listener, tx, n, limits));
        let mut queues = vec![None; n];
        for &(id, addr) in peers {
            if id == me {
                continue;
            }
            let queue = Arc::new(Queue::new());
            queues[id.index()] = Some(Arc::clone(&queue));
            tasks.spawn(dial_loop(me, addr, queue));
        }
        Ok(Self {
            sender: TransportSender {
                me,
                queues: Arc::new(queues),
            },
            incoming,
            local_addr,
            _tasks: tasks,
        })
    }

    pub fn sender(&self) -> TransportSender {
        self.sender.clone()
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Next inbound message; `None` once every reader has stopped.
    pub async fn recv(&mut self) -> Option<(ValidatorId, Message)> {
        self.incoming.recv().await
    }
}

async fn accept_loop(
    listener: TcpListener,
    tx: mpsc::Sender<(ValidatorId, Message)>,
    n: usize,
    limits: Limits,
) {
    let mut readers = JoinSet::new();
    loop {
        match listener.accept().await {
            Ok((stream, addr)) => {
                let _ = stream.set_nodelay(true);
                let tx = tx.clone();
                readers.spawn(async move {
                    if let Err(e) = read_loop(stream, tx, n, limits).await {
                        tracing::debug!(%addr, "inbound connection closed: {e}");
                    }
                });
            }
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                tokio::time::sleep(RECONNECT_BASE).await;
            }
        }
        while readers.try_join_next().is_some() {}
    }
}

async fn read_frame(stream: &mut TcpStream, limits: &Limits) -> std::io::Result<Message> {
    let mut header = [0u8; HEADER_LEN];
    stream.read_exact(&mut header).await?;
    let length = parse_header(header).map_err(invalid)?;
    let mut payload = vec![0u8; length];
    stream.read_exact(&mut payload).await?;
    decode_payload(&payload, limits).map_err(invalid)
}

fn invalid(e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
}

async fn read_loop(
    mut stream: TcpStream,
    tx: mpsc::Sender<(ValidatorId, Message)>,
    n: usize,
    limits: Limits,
) -> std::io::Result<()> {
    let peer = match read_frame(&mut stream, &limits).await? {
        Message::Hello(id) if id.index() < n => id,
        other => {
            return Err(invalid(format!(
                "expected hello, got kind {}",
                other.kind()
            )))
        }
    };
    loop {
        let message = read_frame(&mut stream, &limits).await?;
        if tx.send((peer, message)).await.is_err() {
            return Ok(());
        }
    }
}

async fn dial_loop(me: ValidatorId, addr: SocketAddr, queue: Arc<Queue>) {
    let hello = encode_frame(&Message::Hello(me));
    let mut delay = RECONNECT_BASE;
    loop {
        let mut stream = match TcpStream::connect(addr).await {
            Ok(s) => s,
            Err(e) => {
                tracing::trace!(%addr, "connect failed: {e}");
                tokio::time::sleep(delay).await;
                delay = (delay * 2).min(RECONNECT_CAP);
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        if stream.write_all(&hello).await.is_err() {
            continue;
        }
        delay = RECONNECT_BASE;
        loop {
            let frame = queue.pop().await;
            if let Err(e) = stream.write_all(&frame).await {
                tracing::debug!(%addr, "write failed, reconnecting: {e}");
                queue.push_front(frame);
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(kind: u8, tag: u8) -> Arc<Vec<u8>> {
        Arc::new(vec![0, 0, 0, 2, kind, tag])
    }

    #[test]
    fn full_queue_drops_oldest_block_first() {
        let q = Queue::new();
        q.push(frame(1, 0));
        q.push(frame(KIND_BLOCK, 1));
        for i in 2..QUEUE_BOUND {
            q.push(frame(1, i as u8));
        }
        q.push(frame(1, 99));
        let frames = q.frames.lock().unwrap();
        assert_eq!(frames.len(), QUEUE_BOUND);
        assert!(frames.iter().all(|f| f[4] != KIND_BLOCK));
        assert_eq!(frames[0][5], 0);
        drop(frames);
        // No block left: the oldest frame goes.
        q.push(frame(1, 100));
        assert_eq!(q.frames.lock().unwrap()[0][5], 2);
        assert_eq!(q.dropped.load(Ordering::Relaxed), 2);
    }
}
