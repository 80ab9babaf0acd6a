//! Byte-level formats: canonical block encoding, network frames and the
//! write-ahead log. These layouts are fixed; see the fixture vectors under
//! `tests/fixtures`.

pub mod codec;
pub mod frame;
pub mod wal;

pub use codec::{decode_block, encode_block, DecodeError, Limits};
pub use frame::{decode_payload, encode_frame, parse_header, try_decode_frame, Message};
pub use wal::{replay, replay_file, FileWal, MemWal, NullWal, Wal, WalError, WalRecord};
