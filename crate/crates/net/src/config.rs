//! Peer configuration file.
//!
//! ```toml
//! committee_seed = 7
//! wave_length = 5
//! leaders = 2
//!
//! [[validators]]
//! id = 0
//! address = "127.0.0.1:7000"
//! public_key = "…"  # optional, checked against the seed-derived key
//! ```
//!
//! Key and coin material are derived from `committee_seed` (mock scheme), so
//! the file only needs addresses.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wavedag_core::{Committee, ValidatorId, ValidatorKeys, WaveConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerEntry {
    pub id: u16,
    pub address: SocketAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_key: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub committee_seed: u64,
    pub wave_length: u64,
    pub leaders: usize,
    pub validators: Vec<PeerEntry>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("validator ids must be 0..n in order; entry {position} has id {id}")]
    BadIds { position: usize, id: u16 },
    #[error("invalid committee: {0}")]
    Committee(String),
    #[error("public key of {0} does not match the committee seed")]
    KeyMismatch(ValidatorId),
    #[error("{0} is not in the committee")]
    UnknownValidator(ValidatorId),
}

impl ClusterConfig {
    /// A local cluster on the given addresses.
    pub fn local(committee_seed: u64, wave: WaveConfig, addresses: &[SocketAddr]) -> Self {
        Self {
            committee_seed,
            wave_length: wave.wave_length(),
            leaders: wave.leaders_per_round(),
            validators: addresses
                .iter()
                .enumerate()
                .map(|(i, &address)| PeerEntry {
                    id: i as u16,
                    address,
                    public_key: None,
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ClusterConfig = toml::from_str(text)?;
        config.committee()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn wave(&self) -> Result<WaveConfig, ConfigError> {
        WaveConfig::new(self.wave_length, self.leaders, self.validators.len())
            .map_err(|e| ConfigError::Committee(e.to_string()))
    }

    /// Derives the committee and every member's secrets, checking ids and any
    /// listed public keys.
    pub fn committee(&self) -> Result<(Arc<Committee>, Vec<ValidatorKeys>), ConfigError> {
        for (position, entry) in self.validators.iter().enumerate() {
            if usize::from(entry.id) != position {
                return Err(ConfigError::BadIds {
                    position,
                    id: entry.id,
                });
            }
        }
        let (committee, keys) = Committee::generate(self.validators.len(), self.committee_seed)
            .map_err(|e| ConfigError::Committee(e.to_string()))?;
        for (entry, k) in self.validators.iter().zip(&keys) {
            if let Some(listed) = &entry.public_key {
                if *listed != hex::encode(k.signing.verification_key().0) {
                    return Err(ConfigError::KeyMismatch(k.id));
                }
            }
        }
        self.wave()?;
        Ok((Arc::new(committee), keys))
    }

    pub fn address(&self, id: ValidatorId) -> Result<SocketAddr, ConfigError> {
        self.validators
            .get(id.index())
            .map(|e| e.address)
            .ok_or(ConfigError::UnknownValidator(id))
    }

    pub fn peers(&self) -> Vec<(ValidatorId, SocketAddr)> {
        self.validators
            .iter()
            .map(|e| (ValidatorId(e.id), e.address))
            .collect()
    }

    /// Node settings for member `id`, with quorum advancement.
    pub fn node_config(&self, id: ValidatorId) -> Result<crate::NodeConfig, ConfigError> {
        let (committee, keys) = self.committee()?;
        let keys = keys
            .into_iter()
            .nth(id.index())
            .ok_or(ConfigError::UnknownValidator(id))?;
        let validator = wavedag_core::ValidatorConfig::new(self.wave()?);
        Ok(crate::NodeConfig::new(
            keys,
            committee,
            validator,
            self.peers(),
        ))
    }
}
