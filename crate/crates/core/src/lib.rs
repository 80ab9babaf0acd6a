//! Core of an uncertified-DAG asynchronous BFT consensus protocol.
//!
//! Validators build a round-based DAG of signed blocks. Every round starts a
//! new overlapping wave; a global coin revealed in the wave's last (certify)
//! round elects `leaders_per_round` leader slots for the wave's first
//! (propose) round. The [`committer`] classifies every slot as commit or skip
//! using the direct rule (2f+1 certificates / 2f+1 non-votes) or, failing
//! that, the indirect rule through a later anchor, and linearizes the causal
//! history of committed leaders into a total order.
//!
//! The crate is synchronous and runtime-agnostic. Network drivers live in
//! the `wavedag-sim` (deterministic discrete-event simulation) and
//! `wavedag-net` (TCP) crates.

pub mod coin;
pub mod committer;
pub mod crypto;
pub mod dag;
pub mod types;
pub mod validator;
pub mod wire;

pub use coin::{CoinSecret, CoinSetup, CoinShare, CoinValue};
pub use committer::{
    CoinSchedule, Committer, DecisionRule, LeaderSchedule, SequencedSlot, SlotDecision,
    TableSchedule,
};
pub use crypto::{Digest, KeyPair, Signature};
pub use dag::{BlockIdx, DagStore, InsertOutcome, Validation, ValidationError};
pub use types::{
    canonical_parents, Block, BlockRef, Committee, LeaderSlot, Round, RoundRole, Slot, SlotStatus,
    Transaction, ValidatorId, ValidatorKeys, WaveConfig,
};
pub use validator::{AdvancePolicy, Effects, Validator, ValidatorConfig};
