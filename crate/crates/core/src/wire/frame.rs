//! Length-prefixed network frames.
//!
//! `length u32 BE | kind u8 | body`, where `length = body.len() + 1`.
//!
//! | kind | body |
//! |------|------|
//! | 0 | block encoding |
//! | 1 | fetch request: `count u32`, refs |
//! | 2 | fetch response: `count u32`, (`len u32`, block encoding)* |
//! | 3 | hello: sender id `u16` (first frame on every connection) |
//! | 4 | client transaction: payload bytes |

use std::sync::Arc;

use super::codec::{put_ref, read_block, DecodeError, Limits, Reader, REF_LEN};
use crate::types::{Block, BlockRef, Transaction, ValidatorId};

pub const MAX_FRAME: usize = 16 * 1024 * 1024;
pub const HEADER_LEN: usize = 4;

pub const KIND_BLOCK: u8 = 0;
pub const KIND_FETCH_REQUEST: u8 = 1;
pub const KIND_FETCH_RESPONSE: u8 = 2;
pub const KIND_HELLO: u8 = 3;
pub const KIND_TRANSACTION: u8 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Block(Arc<Block>),
    FetchRequest(Vec<BlockRef>),
    FetchResponse(Vec<Arc<Block>>),
    Hello(ValidatorId),
    Transaction(Transaction),
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::Block(_) => KIND_BLOCK,
            Message::FetchRequest(_) => KIND_FETCH_REQUEST,
            Message::FetchResponse(_) => KIND_FETCH_RESPONSE,
            Message::Hello(_) => KIND_HELLO,
            Message::Transaction(_) => KIND_TRANSACTION,
        }
    }
}

/// Encodes a message as a complete frame, header included.
pub fn encode_frame(message: &Message) -> Vec<u8> {
    let mut out = vec![0u8; HEADER_LEN];
    out.push(message.kind());
    match message {
        Message::Block(block) => super::codec::encode_block_into(block, &mut out),
        Message::FetchRequest(refs) => {
            out.extend_from_slice(&(refs.len() as u32).to_be_bytes());
            for r in refs {
                put_ref(&mut out, r);
            }
        }
        Message::FetchResponse(blocks) => {
            out.extend_from_slice(&(blocks.len() as u32).to_be_bytes());
            for block in blocks {
                let len = super::codec::encoded_len(block) as u32;
                out.extend_from_slice(&len.to_be_bytes());
                super::codec::encode_block_into(block, &mut out);
            }
        }
        Message::Hello(id) => out.extend_from_slice(&id.0.to_be_bytes()),
        Message::Transaction(tx) => out.extend_from_slice(tx.payload()),
    }
    let length = (out.len() - HEADER_LEN) as u32;
    out[..HEADER_LEN].copy_from_slice(&length.to_be_bytes());
    out
}

/// Validates a frame header and returns the number of bytes that follow it.
pub fn parse_header(header: [u8; HEADER_LEN]) -> Result<usize, DecodeError> {
    let length = u32::from_be_bytes(header) as usize;
    if length == 0 {
        return Err(DecodeError::EmptyFrame);
    }
    if length > MAX_FRAME {
        return Err(DecodeError::FrameTooLarge(length));
    }
    Ok(length)
}

/// Decodes the part of a frame after the length header (`kind | body`).
pub fn decode_payload(payload: &[u8], limits: &Limits) -> Result<Message, DecodeError> {
    let (&kind, body) = payload.split_first().ok_or(DecodeError::EmptyFrame)?;
    let mut reader = Reader::new(body);
    let message = match kind {
        KIND_BLOCK => Message::Block(Arc::new(read_block(&mut reader, limits)?)),
        KIND_FETCH_REQUEST => {
            let count = reader.u32()? as usize;
            let needed = count.saturating_mul(REF_LEN);
            if needed > reader.remaining() {
                return Err(DecodeError::Truncated {
                    offset: 5,
                    needed,
                    available: reader.remaining(),
                });
            }
            Message::FetchRequest(
                (0..count)
                    .map(|_| reader.block_ref())
                    .collect::<Result<_, _>>()?,
            )
        }
        KIND_FETCH_RESPONSE => {
            let count = reader.u32()? as usize;
            if count.saturating_mul(4) > reader.remaining() {
                return Err(DecodeError::Truncated {
                    offset: 5,
                    needed: count.saturating_mul(4),
                    available: reader.remaining(),
                });
            }
            let mut blocks = Vec::with_capacity(count);
            for _ in 0..count {
                let len = reader.u32()? as usize;
                let mut inner = Reader::new(reader.take(len)?);
                blocks.push(Arc::new(read_block(&mut inner, limits)?));
                inner.finish()?;
            }
            Message::FetchResponse(blocks)
        }
        KIND_HELLO => Message::Hello(ValidatorId(reader.u16()?)),
        KIND_TRANSACTION => {
            let payload = reader.take(reader.remaining())?;
            if payload.len() > limits.max_transaction_bytes {
                return Err(DecodeError::TransactionTooLarge(payload.len()));
            }
            Message::Transaction(Transaction::new(payload))
        }
        other => return Err(DecodeError::UnknownKind(other)),
    };
    reader.finish()?;
    Ok(message)
}

/// Decodes the first complete frame in `buf`. Returns `None` when more bytes
/// are needed, otherwise the message and the number of bytes consumed.
pub fn try_decode_frame(
    buf: &[u8],
    limits: &Limits,
) -> Result<Option<(Message, usize)>, DecodeError> {
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    let length = parse_header(buf[..HEADER_LEN].try_into().expect("header slice"))?;
    let end = HEADER_LEN + length;
    if buf.len() < end {
        return Ok(None);
    }
    let message = decode_payload(&buf[HEADER_LEN..end], limits)?;
    Ok(Some((message, end)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Digest;
    use crate::types::{Committee, Round};

    fn block() -> Arc<Block> {
        let (c, _) = Committee::generate(4, 1).unwrap();
        Arc::new(c.genesis().remove(2))
    }

    #[test]
    fn every_kind_round_trips() {
        let limits = Limits::default();
        let r = BlockRef::new(ValidatorId(3), Round(9), Digest([7; 32]));
        let messages = [
            Message::Block(block()),
            Message::FetchRequest(vec![r, r]),
            Message::FetchRequest(vec![]),
            Message::FetchResponse(vec![block(), block()]),
            Message::Hello(ValidatorId(6)),
            Message::Transaction(Transaction::new(vec![1; 512])),
        ];
        for message in messages {
            let frame = encode_frame(&message);
            let length = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
            assert_eq!(length, frame.len() - 4);
            let (decoded, used) = try_decode_frame(&frame, &limits).unwrap().unwrap();
            assert_eq!(decoded, message);
            assert_eq!(used, frame.len());
            assert_eq!(
                try_decode_frame(&frame[..frame.len() - 1], &limits).unwrap(),
                None
            );
        }
    }

    #[test]
    fn header_bounds() {
        assert_eq!(parse_header([0, 0, 0, 0]), Err(DecodeError::EmptyFrame));
        let big = (MAX_FRAME as u32 + 1).to_be_bytes();
        assert_eq!(
            parse_header(big),
            Err(DecodeError::FrameTooLarge(MAX_FRAME + 1))
        );
        assert_eq!(
            parse_header((MAX_FRAME as u32).to_be_bytes()),
            Ok(MAX_FRAME)
        );
        assert_eq!(
            decode_payload(&[9, 0], &Limits::default()),
            Err(DecodeError::UnknownKind(9))
        );
    }

    #[test]
    fn fetch_request_count_larger_than_body() {
        let mut payload = vec![KIND_FETCH_REQUEST];
        payload.extend_from_slice(&1000u32.to_be_bytes());
        assert!(matches!(
            decode_payload(&payload, &Limits::default()),
            Err(DecodeError::Truncated { .. })
        ));
    }
}
