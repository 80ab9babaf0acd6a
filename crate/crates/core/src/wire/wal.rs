//! Write-ahead log.
//!
//! Record layout: `body_len u32 BE | kind u8 | body | crc32 u32 BE`, where the
//! checksum covers `kind || body`.
//!
//! | kind | body |
//! |------|------|
//! | 0 | received block (block encoding) |
//! | 1 | own proposal (block encoding) |
//! | 2 | commit checkpoint: number of delivered blocks, `u64` |
//!
//! Replay stops quietly at a damaged final record (a torn write) and fails on
//! damage anywhere earlier.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::codec::{decode_block, encode_block_into, DecodeError, Limits};
use crate::types::Block;

pub const KIND_RECEIVED_BLOCK: u8 = 0;
pub const KIND_OWN_PROPOSAL: u8 = 1;
pub const KIND_CHECKPOINT: u8 = 2;

const PREFIX_LEN: usize = 4 + 1;
const CRC_LEN: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WalRecord {
    ReceivedBlock(Arc<Block>),
    OwnProposal(Arc<Block>),
    /// Number of blocks delivered to the commit observer so far.
    Checkpoint(u64),
}

impl WalRecord {
    pub fn kind(&self) -> u8 {
        match self {
            WalRecord::ReceivedBlock(_) => KIND_RECEIVED_BLOCK,
            WalRecord::OwnProposal(_) => KIND_OWN_PROPOSAL,
            WalRecord::Checkpoint(_) => KIND_CHECKPOINT,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![0u8; 4];
        out.push(self.kind());
        match self {
            WalRecord::ReceivedBlock(b) | WalRecord::OwnProposal(b) => {
                encode_block_into(b, &mut out)
            }
            WalRecord::Checkpoint(count) => out.extend_from_slice(&count.to_be_bytes()),
        }
        let body_len = (out.len() - PREFIX_LEN) as u32;
        out[..4].copy_from_slice(&body_len.to_be_bytes());
        let crc = crc32fast::hash(&out[4..]);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }
}

#[derive(Debug, Error)]
pub enum WalError {
    #[error("corrupted record at offset {offset}: {reason}")]
    Corrupted { offset: usize, reason: String },
    #[error("log writer crashed")]
    Crashed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Append-only log handle owned by one validator.
pub trait Wal: Send {
    /// Appends one record durably and returns its starting offset.
    fn append(&mut self, record: &WalRecord) -> Result<u64, WalError>;
}

fn decode_body(kind: u8, body: &[u8]) -> Result<WalRecord, String> {
    let limits = Limits {
        max_transaction_bytes: usize::MAX,
        max_transactions: usize::MAX,
        max_parents: usize::MAX,
    };
    let block = |body| {
        decode_block(body, &limits)
            .map(Arc::new)
            .map_err(|e: DecodeError| e.to_string())
    };
    match kind {
        KIND_RECEIVED_BLOCK => Ok(WalRecord::ReceivedBlock(block(body)?)),
        KIND_OWN_PROPOSAL => Ok(WalRecord::OwnProposal(block(body)?)),
        KIND_CHECKPOINT => {
            let bytes: [u8; 8] = body
                .try_into()
                .map_err(|_| format!("checkpoint body of {} bytes", body.len()))?;
            Ok(WalRecord::Checkpoint(u64::from_be_bytes(bytes)))
        }
        other => Err(format!("unknown record kind {other}")),
    }
}

/// Parses a log image. A damaged or incomplete final record is discarded.
pub fn replay(bytes: &[u8]) -> Result<Vec<WalRecord>, WalError> {
    let mut records = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        if rest.len() < PREFIX_LEN {
            break;
        }
        let body_len = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let total = PREFIX_LEN + body_len + CRC_LEN;
        if rest.len() < total {
            break;
        }
        let is_last = rest.len() == total;
        let covered = &rest[4..PREFIX_LEN + body_len];
        let stored = u32::from_be_bytes(
            rest[PREFIX_LEN + body_len..total]
                .try_into()
                .expect("4 bytes"),
        );
        if crc32fast::hash(covered) != stored {
            if is_last {
                break;
            }
            return Err(WalError::Corrupted {
                offset,
                reason: "checksum mismatch".into(),
            });
        }
        let record = decode_body(covered[0], &covered[1..])
            .map_err(|reason| WalError::Corrupted { offset, reason })?;
        records.push(record);
        offset += total;
    }
    Ok(records)
}

pub fn replay_file(path: &Path) -> Result<Vec<WalRecord>, WalError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut file) => {
            file.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    }
    replay(&bytes)
}

/// File-backed log. Each append is flushed with `sync_data` when `sync` is set.
pub struct FileWal {
    file: File,
    path: PathBuf,
    offset: u64,
    sync: bool,
}

impl FileWal {
    /// Opens (creating if needed) a log and truncates any torn tail so new
    /// records follow the last intact one.
    pub fn open(path: impl Into<PathBuf>, sync: bool) -> Result<(Self, Vec<WalRecord>), WalError> {
        let path = path.into();
        let records = replay_file(&path)?;
        let intact: u64 = records.iter().map(|r| r.encode().len() as u64).sum();
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(&path)?;
        file.set_len(intact)?;
        let mut wal = Self {
            file,
            path,
            offset: intact,
            sync,
        };
        io::Seek::seek(&mut wal.file, io::SeekFrom::Start(intact))?;
        Ok((wal, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Wal for FileWal {
    fn append(&mut self, record: &WalRecord) -> Result<u64, WalError> {
        let bytes = record.encode();
        self.file.write_all(&bytes)?;
        if self.sync {
            self.file.sync_data()?;
        }
        let at = self.offset;
        self.offset += bytes.len() as u64;
        Ok(at)
    }
}

/// Log that keeps nothing, for runs that never recover.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullWal;

impl Wal for NullWal {
    fn append(&mut self, _: &WalRecord) -> Result<u64, WalError> {
        Ok(0)
    }
}

/// In-memory log with optional crash injection: the `crash_at`-th append
/// (0-based) fails with [`WalError::Crashed`], optionally leaving a torn
/// prefix of the record behind. Every later append also fails.
#[derive(Clone, Default)]
pub struct MemWal {
    bytes: Arc<Mutex<Vec<u8>>>,
    appends: usize,
    crash_at: Option<usize>,
    torn: bool,
    crashed: bool,
}

impl MemWal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self {
            bytes: Arc::new(Mutex::new(bytes)),
            ..Self::default()
        }
    }

    pub fn crash_at(mut self, append_index: usize, torn: bool) -> Self {
        self.crash_at = Some(append_index);
        self.torn = torn;
        self
    }

    /// Shared handle to the log image, readable after a crash.
    pub fn handle(&self) -> Arc<Mutex<Vec<u8>>> {
        Arc::clone(&self.bytes)
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.bytes.lock().expect("wal lock").clone()
    }

    pub fn has_crashed(&self) -> bool {
        self.crashed
    }
}

impl Wal for MemWal {
    fn append(&mut self, record: &WalRecord) -> Result<u64, WalError> {
        if self.crashed {
            return Err(WalError::Crashed);
        }
        let encoded = record.encode();
        let mut bytes = self.bytes.lock().expect("wal lock");
        if self.crash_at == Some(self.appends) {
            self.crashed = true;
            if self.torn {
                bytes.extend_from_slice(&encoded[..encoded.len() / 2]);
            }
            return Err(WalError::Crashed);
        }
        self.appends += 1;
        let at = bytes.len() as u64;
        bytes.extend_from_slice(&encoded);
        Ok(at)
    }
}
