//! Canonical block encoding.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! author u16 | round u64 | parent_count u16 | parents (author u16, round u64, digest [32])*
//! | tx_count u32 | txs (len u32, bytes)* | share_author u16 | share_round u64 | share [32]
//! | signature [64]
//! ```
//!
//! The digest is SHA-256 over everything except the trailing signature.

use thiserror::Error;

use crate::coin::{CoinShare, SHARE_LEN};
use crate::crypto::{Digest, Signature, DIGEST_LEN, SIGNATURE_LEN};
use crate::types::{Block, BlockRef, Round, Transaction, ValidatorId};

pub const REF_LEN: usize = 2 + 8 + DIGEST_LEN;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Limits {
    pub max_transaction_bytes: usize,
    pub max_transactions: usize,
    pub max_parents: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_transaction_bytes: 1024,
            max_transactions: 10_000,
            max_parents: usize::from(u16::MAX),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after block")]
    TrailingBytes(usize),
    #[error("{0} parents exceed the limit")]
    TooManyParents(usize),
    #[error("{0} transactions exceed the limit")]
    TooManyTransactions(usize),
    #[error("transaction of {0} bytes exceeds the limit")]
    TransactionTooLarge(usize),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("frame without a kind byte")]
    EmptyFrame,
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: len,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            extra => Err(DecodeError::TrailingBytes(extra)),
        }
    }

    pub(crate) fn block_ref(&mut self) -> Result<BlockRef, DecodeError> {
        let author = ValidatorId(self.u16()?);
        let round = Round(self.u64()?);
        let digest = Digest(self.array()?);
        Ok(BlockRef::new(author, round, digest))
    }
}

pub(crate) fn put_ref(out: &mut Vec<u8>, r: &BlockRef) {
    out.extend_from_slice(&r.author.0.to_be_bytes());
    out.extend_from_slice(&r.round.0.to_be_bytes());
    out.extend_from_slice(&r.digest.0);
}

fn put_unsigned(
    out: &mut Vec<u8>,
    author: ValidatorId,
    round: Round,
    parents: &[BlockRef],
    transactions: &[Transaction],
    share: &CoinShare,
) {
    out.extend_from_slice(&author.0.to_be_bytes());
    out.extend_from_slice(&round.0.to_be_bytes());
    let parent_count = u16::try_from(parents.len()).expect("parent count fits in u16");
    out.extend_from_slice(&parent_count.to_be_bytes());
    for parent in parents {
        put_ref(out, parent);
    }
    let tx_count = u32::try_from(transactions.len()).expect("tx count fits in u32");
    out.extend_from_slice(&tx_count.to_be_bytes());
    for tx in transactions {
        let len = u32::try_from(tx.len()).expect("tx length fits in u32");
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(tx.payload());
    }
    out.extend_from_slice(&share.author.0.to_be_bytes());
    out.extend_from_slice(&share.round.0.to_be_bytes());
    out.extend_from_slice(&share.share);
}

fn unsigned_len(parents: &[BlockRef], transactions: &[Transaction]) -> usize {
    2 + 8
        + 2
        + parents.len() * REF_LEN
        + 4
        + transactions.iter().map(|t| 4 + t.len()).sum::<usize>()
        + 2
        + 8
        + SHARE_LEN
}

pub(crate) fn block_digest(
    author: ValidatorId,
    round: Round,
    parents: &[BlockRef],
    transactions: &[Transaction],
    share: &CoinShare,
) -> Digest {
    let mut buf = Vec::with_capacity(unsigned_len(parents, transactions));
    put_unsigned(&mut buf, author, round, parents, transactions, share);
    Digest::of(&buf)
}

pub fn encoded_len(block: &Block) -> usize {
    unsigned_len(block.parents(), block.transactions()) + SIGNATURE_LEN
}

pub fn encode_block_into(block: &Block, out: &mut Vec<u8>) {
    out.reserve(encoded_len(block));
    put_unsigned(
        out,
        block.author(),
        block.round(),
        block.parents(),
        block.transactions(),
        block.coin_share(),
    );
    out.extend_from_slice(&block.signature().0);
}

pub fn encode_block(block: &Block) -> Vec<u8> {
    let mut out = Vec::new();
    encode_block_into(block, &mut out);
    out
}

pub(crate) fn read_block(reader: &mut Reader<'_>, limits: &Limits) -> Result<Block, DecodeError> {
    let author = ValidatorId(reader.u16()?);
    let round = Round(reader.u64()?);
    let parent_count = usize::from(reader.u16()?);
    if parent_count > limits.max_parents {
        return Err(DecodeError::TooManyParents(parent_count));
    }
    if parent_count * REF_LEN > reader.remaining() {
        return Err(DecodeError::Truncated {
            offset: reader.pos,
            needed: parent_count * REF_LEN,
            available: reader.remaining(),
        });
    }
    let parents = (0..parent_count)
        .map(|_| reader.block_ref())
        .collect::<Result<Vec<_>, _>>()?;
    let tx_count = reader.u32()? as usize;
    if tx_count > limits.max_transactions {
        return Err(DecodeError::TooManyTransactions(tx_count));
    }
    // Every transaction needs at least its length prefix.
    if tx_count.saturating_mul(4) > reader.remaining() {
        return Err(DecodeError::Truncated {
            offset: reader.pos,
            needed: tx_count * 4,
            available: reader.remaining(),
        });
    }
    let mut transactions = Vec::with_capacity(tx_count);
    for _ in 0..tx_count {
        let len = reader.u32()? as usize;
        if len > limits.max_transaction_bytes {
            return Err(DecodeError::TransactionTooLarge(len));
        }
        transactions.push(Transaction::new(reader.take(len)?));
    }
    let share = CoinShare {
        author: ValidatorId(reader.u16()?),
        round: Round(reader.u64()?),
        share: reader.array()?,
    };
    let signature = Signature(reader.array()?);
    Ok(Block::from_parts(
        author,
        round,
        parents,
        transactions,
        share,
        signature,
    ))
}

/// Decodes one block. Checks structure and size bounds only.
pub fn decode_block(bytes: &[u8], limits: &Limits) -> Result<Block, DecodeError> {
    let mut reader = Reader::new(bytes);
    let block = read_block(&mut reader, limits)?;
    reader.finish()?;
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Committee;

    fn sample() -> Block {
        let (_, keys) = Committee::generate(4, 3).unwrap();
        let parents = (0..3)
            .map(|i| BlockRef::new(ValidatorId(i), Round(4), Digest([i as u8 + 1; 32])))
            .collect();
        let txs = vec![Transaction::new(vec![1, 2, 3]), Transaction::new(vec![])];
        Block::new_signed(
            ValidatorId(1),
            Round(5),
            parents,
            txs,
            &keys[1].coin,
            &keys[1].signing,
        )
    }

    #[test]
    fn round_trip() {
        let block = sample();
        let bytes = encode_block(&block);
        assert_eq!(bytes.len(), encoded_len(&block));
        assert_eq!(decode_block(&bytes, &Limits::default()).unwrap(), block);
    }

    #[test]
    fn flipping_a_parent_byte_changes_the_digest() {
        let block = sample();
        let mut bytes = encode_block(&block);
        bytes[12 + 20] ^= 0x40;
        let mutated = decode_block(&bytes, &Limits::default()).unwrap();
        assert_ne!(mutated.digest(), block.digest());
        assert!(mutated.reference().is_equivocation(&block.reference()));
    }

    #[test]
    fn signature_does_not_affect_digest() {
        let block = sample();
        let mut bytes = encode_block(&block);
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        let mutated = decode_block(&bytes, &Limits::default()).unwrap();
        assert_eq!(mutated.digest(), block.digest());
        assert_ne!(mutated.signature(), block.signature());
    }

    #[test]
    fn structural_errors() {
        let block = sample();
        let bytes = encode_block(&block);
        let limits = Limits::default();
        assert!(matches!(
            decode_block(&bytes[..bytes.len() - 1], &limits),
            Err(DecodeError::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(
            decode_block(&extra, &limits),
            Err(DecodeError::TrailingBytes(1))
        );

        // Declared transaction count larger than what the input can hold.
        let tx_count_at = 12 + 3 * REF_LEN;
        let mut lying = bytes.clone();
        lying[tx_count_at..tx_count_at + 4].copy_from_slice(&5000u32.to_be_bytes());
        assert!(matches!(
            decode_block(&lying, &limits),
            Err(DecodeError::Truncated { .. })
        ));
        lying[tx_count_at..tx_count_at + 4].copy_from_slice(&20_000u32.to_be_bytes());
        assert_eq!(
            decode_block(&lying, &limits),
            Err(DecodeError::TooManyTransactions(20_000))
        );

        let tight = Limits {
            max_transaction_bytes: 2,
            ..Limits::default()
        };
        assert_eq!(
            decode_block(&bytes, &tight),
            Err(DecodeError::TransactionTooLarge(3))
        );
        let few_parents = Limits {
            max_parents: 2,
            ..Limits::default()
        };
        assert_eq!(
            decode_block(&bytes, &few_parents),
            Err(DecodeError::TooManyParents(3))
        );
    }
}
