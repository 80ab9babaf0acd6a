//! Global coin.
//!
//! Deterministic stand-in for a threshold signature: a share for round `r` is a
//! keyed hash of `r` under the author's coin key, and any 2f+1 valid shares of
//! the same round combine to `PRF(seed, r)`. Subset independence holds by
//! construction. The value is predictable to anyone holding the setup seed, so
//! the adversarial simulator must not consult it before the certify round.

use std::fmt;

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{derive_key, Digest};
use crate::types::{Committee, Round, ValidatorId};

pub const SHARE_LEN: usize = 32;

#[derive(Copy, Clone, PartialEq, Eq, Hash)]
pub struct CoinShare {
    pub author: ValidatorId,
    pub round: Round,
    pub share: [u8; SHARE_LEN],
}

impl CoinShare {
    /// Placeholder carried by genesis blocks.
    pub fn empty(author: ValidatorId, round: Round) -> Self {
        Self {
            author,
            round,
            share: [0u8; SHARE_LEN],
        }
    }
}

impl fmt::Debug for CoinShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Share({},{},{})",
            self.author,
            self.round,
            hex::encode(&self.share[..4])
        )
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct CoinValue {
    pub round: Round,
    pub value: u64,
}

/// Per-validator coin-signing material.
#[derive(Clone)]
pub struct CoinSecret {
    key: [u8; 32],
}

impl CoinSecret {
    pub fn derive(seed: u64, id: ValidatorId) -> Self {
        Self {
            key: derive_key(b"wavedag/coin-share", seed, u64::from(id.0)),
        }
    }

    pub fn make_share(&self, author: ValidatorId, round: Round) -> CoinShare {
        CoinShare {
            author,
            round,
            share: share_bytes(&self.key, author, round),
        }
    }
}

impl fmt::Debug for CoinSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CoinSecret(..)")
    }
}

fn share_bytes(key: &[u8; 32], author: ValidatorId, round: Round) -> [u8; SHARE_LEN] {
    Digest::of_parts(&[
        b"wavedag/share",
        key,
        &author.0.to_be_bytes(),
        &round.0.to_be_bytes(),
    ])
    .0
}

/// Public coin material: per-author share verification keys and the seed of
/// the combined value.
#[derive(Clone)]
pub struct CoinSetup {
    seed: u64,
    share_keys: Vec<[u8; 32]>,
}

impl CoinSetup {
    pub fn derive(seed: u64, n: usize) -> Self {
        Self {
            seed,
            share_keys: (0..n)
                .map(|i| CoinSecret::derive(seed, ValidatorId::from(i)).key)
                .collect(),
        }
    }

    pub fn verify_share(&self, share: &CoinShare) -> bool {
        match self.share_keys.get(share.author.index()) {
            Some(key) => share_bytes(key, share.author, share.round) == share.share,
            None => false,
        }
    }

    /// The value any 2f+1 valid shares of `round` reconstruct.
    fn value(&self, round: Round) -> u64 {
        Digest::of_parts(&[
            b"wavedag/coin-value",
            &self.seed.to_be_bytes(),
            &round.0.to_be_bytes(),
        ])
        .prefix_u64()
    }
}

impl fmt::Debug for CoinSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoinSetup(n={})", self.share_keys.len())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoinError {
    #[error("need {needed} shares from distinct authors, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("shares from rounds {0} and {1} mixed")]
    MixedRounds(Round, Round),
    #[error("invalid share from {0} for round {1}")]
    InvalidShareInSet(ValidatorId, Round),
}

pub fn make_share(author: ValidatorId, round: Round, secret: &CoinSecret) -> CoinShare {
    secret.make_share(author, round)
}

pub fn verify_share(share: &CoinShare, setup: &CoinSetup) -> bool {
    setup.verify_share(share)
}

/// Combines shares of one round. Duplicate shares from the same author count
/// once.
pub fn combine<'a>(
    shares: impl IntoIterator<Item = &'a CoinShare>,
    committee: &Committee,
) -> Result<CoinValue, CoinError> {
    let setup = committee.coin_setup();
    let mut round = None;
    let mut authors = FxHashSet::default();
    for share in shares {
        match round {
            None => round = Some(share.round),
            Some(r) if r != share.round => return Err(CoinError::MixedRounds(r, share.round)),
            Some(_) => {}
        }
        if !setup.verify_share(share) {
            return Err(CoinError::InvalidShareInSet(share.author, share.round));
        }
        authors.insert(share.author);
    }
    let needed = committee.quorum();
    match round {
        Some(round) if authors.len() >= needed => Ok(CoinValue {
            round,
            value: setup.value(round),
        }),
        _ => Err(CoinError::InsufficientShares {
            needed,
            got: authors.len(),
        }),
    }
}

/// Validator elected for `offset` under a combined coin value.
pub fn elect(value: CoinValue, offset: usize, committee: &Committee) -> ValidatorId {
    let n = committee.size() as u64;
    ValidatorId::from(((value.value % n + offset as u64) % n) as usize)
}
