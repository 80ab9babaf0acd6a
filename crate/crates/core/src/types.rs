use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coin::{CoinSecret, CoinSetup, CoinShare};
use crate::crypto::{Digest, KeyPair, Signature, VerificationKey};
use crate::wire::codec;

#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u16);

impl ValidatorId {
    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

impl From<usize> for ValidatorId {
    fn from(index: usize) -> Self {
        ValidatorId(u16::try_from(index).expect("validator index fits in u16"))
    }
}

impl fmt::Debug for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Logical DAG round. Round 0 holds the genesis blocks.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Round(pub u64);

impl Round {
    pub const GENESIS: Round = Round(0);

    pub fn next(self) -> Round {
        Round(self.0 + 1)
    }

    /// Previous round, saturating at genesis.
    pub fn prev(self) -> Round {
        Round(self.0.saturating_sub(1))
    }

    pub fn as_usize(self) -> usize {
        usize::try_from(self.0).expect("round fits in usize")
    }
}

impl Add<u64> for Round {
    type Output = Round;

    fn add(self, rhs: u64) -> Round {
        Round(self.0 + rhs)
    }
}

impl Sub<u64> for Round {
    type Output = Round;

    fn sub(self, rhs: u64) -> Round {
        Round(self.0 - rhs)
    }
}

impl fmt::Debug for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transaction(pub Vec<u8>);

impl Transaction {
    pub fn new(payload: impl Into<Vec<u8>>) -> Self {
        Transaction(payload.into())
    }

    pub fn payload(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Transaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = &self.0[..self.0.len().min(8)];
        write!(f, "Tx({}B:{})", self.0.len(), hex::encode(head))
    }
}

/// Compact handle to a block. Ordered by `(author, round, digest)`.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockRef {
    pub author: ValidatorId,
    pub round: Round,
    pub digest: Digest,
}

impl BlockRef {
    pub fn new(author: ValidatorId, round: Round, digest: Digest) -> Self {
        Self {
            author,
            round,
            digest,
        }
    }

    /// Two distinct blocks for the same author and round.
    pub fn is_equivocation(&self, other: &BlockRef) -> bool {
        self.author == other.author && self.round == other.round && self.digest != other.digest
    }
}

pub fn is_equivocation(a: &BlockRef, b: &BlockRef) -> bool {
    a.is_equivocation(b)
}

impl fmt::Debug for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B({},{},{:?})", self.author, self.round, self.digest)
    }
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B({},{})", self.author, self.round)
    }
}

/// A signed DAG vertex. Immutable once built; the digest is computed at
/// construction from the canonical encoding (without the signature).
#[derive(Clone, PartialEq, Eq)]
pub struct Block {
    author: ValidatorId,
    round: Round,
    parents: Vec<BlockRef>,
    transactions: Vec<Transaction>,
    coin_share: CoinShare,
    signature: Signature,
    digest: Digest,
}

impl Block {
    /// Assembles a block from decoded or hand-built parts. No validation.
    pub fn from_parts(
        author: ValidatorId,
        round: Round,
        parents: Vec<BlockRef>,
        transactions: Vec<Transaction>,
        coin_share: CoinShare,
        signature: Signature,
    ) -> Self {
        let digest = codec::block_digest(author, round, &parents, &transactions, &coin_share);
        Self {
            author,
            round,
            parents,
            transactions,
            coin_share,
            signature,
            digest,
        }
    }

    /// Builds and signs a block. Parents are taken in the given order; use
    /// [`canonical_parents`] to produce the order validators expect.
    pub fn new_signed(
        author: ValidatorId,
        round: Round,
        parents: Vec<BlockRef>,
        transactions: Vec<Transaction>,
        coin_secret: &CoinSecret,
        key: &KeyPair,
    ) -> Self {
        let coin_share = coin_secret.make_share(author, round);
        let mut block = Self::from_parts(
            author,
            round,
            parents,
            transactions,
            coin_share,
            Signature::ZERO,
        );
        block.signature = key.sign(&block.digest);
        block
    }

    pub fn genesis(author: ValidatorId) -> Self {
        Self::from_parts(
            author,
            Round::GENESIS,
            Vec::new(),
            Vec::new(),
            CoinShare::empty(author, Round::GENESIS),
            Signature::ZERO,
        )
    }

    pub fn author(&self) -> ValidatorId {
        self.author
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn parents(&self) -> &[BlockRef] {
        &self.parents
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn coin_share(&self) -> &CoinShare {
        &self.coin_share
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn reference(&self) -> BlockRef {
        BlockRef::new(self.author, self.round, self.digest)
    }

    pub fn is_genesis(&self) -> bool {
        self.round == Round::GENESIS
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} parents={:?} txs={}",
            self.reference(),
            self.parents,
            self.transactions.len()
        )
    }
}

/// Sorts parents into the canonical order: the author's own most recent
/// block first, the rest ascending by `(author, round, digest)`.
pub fn canonical_parents(author: ValidatorId, mut parents: Vec<BlockRef>) -> Vec<BlockRef> {
    parents.sort();
    parents.dedup();
    let own = parents
        .iter()
        .enumerate()
        .filter(|(_, p)| p.author == author)
        .max_by_key(|(_, p)| (p.round, p.digest))
        .map(|(i, _)| i);
    if let Some(i) = own {
        let mine = parents.remove(i);
        parents.insert(0, mine);
    }
    parents
}

pub fn is_canonical_order(author: ValidatorId, parents: &[BlockRef]) -> bool {
    let own_max = parents
        .iter()
        .filter(|p| p.author == author)
        .map(|p| (p.round, p.digest))
        .max();
    let rest = match own_max {
        Some(key) => {
            let first = &parents[0];
            if first.author != author || (first.round, first.digest) != key {
                return false;
            }
            &parents[1..]
        }
        None => parents,
    };
    rest.windows(2).all(|w| w[0] < w[1])
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommitteeError {
    #[error("committee size {0} is not of the form 3f+1")]
    BadSize(usize),
    #[error("committee size {0} exceeds the u16 id space")]
    TooLarge(usize),
}

#[derive(Clone, Debug)]
pub struct Committee {
    n: usize,
    f: usize,
    keys: Vec<VerificationKey>,
    coin: CoinSetup,
}

/// Secret material held by one validator.
#[derive(Clone, Debug)]
pub struct ValidatorKeys {
    pub id: ValidatorId,
    pub signing: KeyPair,
    pub coin: CoinSecret,
}

impl Committee {
    /// Derives a committee and every member's secrets from a seed.
    pub fn generate(
        n: usize,
        seed: u64,
    ) -> Result<(Committee, Vec<ValidatorKeys>), CommitteeError> {
        if n == 0 || !(n - 1).is_multiple_of(3) {
            return Err(CommitteeError::BadSize(n));
        }
        if n > usize::from(u16::MAX) {
            return Err(CommitteeError::TooLarge(n));
        }
        let secrets: Vec<ValidatorKeys> = (0..n)
            .map(|i| {
                let id = ValidatorId::from(i);
                ValidatorKeys {
                    id,
                    signing: KeyPair::derive(seed, id),
                    coin: CoinSecret::derive(seed, id),
                }
            })
            .collect();
        let committee = Committee {
            n,
            f: (n - 1) / 3,
            keys: secrets
                .iter()
                .map(|k| k.signing.verification_key())
                .collect(),
            coin: CoinSetup::derive(seed, n),
        };
        Ok((committee, secrets))
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn faults(&self) -> usize {
        self.f
    }

    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn validity_threshold(&self) -> usize {
        self.f + 1
    }

    pub fn contains(&self, id: ValidatorId) -> bool {
        id.index() < self.n
    }

    pub fn key(&self, id: ValidatorId) -> Option<&VerificationKey> {
        self.keys.get(id.index())
    }

    pub fn coin_setup(&self) -> &CoinSetup {
        &self.coin
    }

    pub fn ids(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        (0..self.n).map(ValidatorId::from)
    }

    pub fn genesis(&self) -> Vec<Block> {
        self.ids().map(Block::genesis).collect()
    }
}

pub fn quorum(committee: &Committee) -> usize {
    committee.quorum()
}

/// Role a round plays inside one wave.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoundRole {
    Propose,
    Boost,
    Vote,
    Certify,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WaveConfigError {
    #[error("wave length must be at least 3, got {0}")]
    WaveTooShort(u64),
    #[error("leaders per round must be in [1, {n}], got {leaders}")]
    BadLeaderCount { leaders: usize, n: usize },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveConfig {
    wave_length: u64,
    leaders_per_round: usize,
}

impl WaveConfig {
    pub fn new(
        wave_length: u64,
        leaders_per_round: usize,
        n: usize,
    ) -> Result<Self, WaveConfigError> {
        if wave_length < 3 {
            return Err(WaveConfigError::WaveTooShort(wave_length));
        }
        if leaders_per_round == 0 || leaders_per_round > n {
            return Err(WaveConfigError::BadLeaderCount {
                leaders: leaders_per_round,
                n,
            });
        }
        Ok(Self {
            wave_length,
            leaders_per_round,
        })
    }

    pub fn wave_length(&self) -> u64 {
        self.wave_length
    }

    pub fn leaders_per_round(&self) -> usize {
        self.leaders_per_round
    }

    /// Waves of three rounds are safe but give no liveness guarantee.
    pub fn liveness_safe(&self) -> bool {
        self.wave_length >= 4
    }

    /// Role of the `position`-th round of a wave (0-based).
    pub fn role(&self, position: u64) -> RoundRole {
        assert!(position < self.wave_length, "position outside the wave");
        match position {
            0 => RoundRole::Propose,
            p if p == self.wave_length - 1 => RoundRole::Certify,
            p if p == self.wave_length - 2 => RoundRole::Vote,
            _ => RoundRole::Boost,
        }
    }

    pub fn roles(&self) -> Vec<RoundRole> {
        (0..self.wave_length).map(|p| self.role(p)).collect()
    }

    pub fn vote_round(&self, propose: Round) -> Round {
        propose + (self.wave_length - 2)
    }

    pub fn certify_round(&self, propose: Round) -> Round {
        propose + (self.wave_length - 1)
    }
}

/// A leader position: the propose round and the coin-imposed offset.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Slot {
    pub round: Round,
    pub offset: u16,
}

impl Slot {
    pub fn new(round: Round, offset: usize) -> Self {
        Self {
            round,
            offset: u16::try_from(offset).expect("leader offset fits in u16"),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}/{}", self.round, self.offset)
    }
}

/// A slot together with the validator elected to fill it.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct LeaderSlot {
    pub slot: Slot,
    pub elected: ValidatorId,
}

#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum SlotStatus {
    Undecided,
    Commit(BlockRef),
    Skip,
}

impl SlotStatus {
    pub fn is_decided(&self) -> bool {
        !matches!(self, SlotStatus::Undecided)
    }
}
