//! Hashing and block authentication.
//!
//! Digests are SHA-256. Block signatures use a keyed-hash stand-in: every
//! validator holds a 32-byte key and the committee holds the matching
//! verification key. The scheme is symmetric (the verification key equals the
//! signing key) which is adequate for simulation and local clusters, not for
//! adversarial deployments. Only the byte layout (32-byte digest, 64-byte
//! signature) is part of the wire format.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::types::ValidatorId;

pub const DIGEST_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update(part);
        }
        Self(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    /// First eight bytes as a big-endian integer.
    pub fn prefix_u64(&self) -> u64 {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&self.0[..8]);
        u64::from_be_bytes(buf)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(&self.0[..4]))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(self.0))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let array: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Self(array))
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub const ZERO: Signature = Signature([0u8; SIGNATURE_LEN]);
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", hex::encode(&self.0[..4]))
    }
}

/// Derives 32 bytes of key material from a seed, a purpose label and an index.
pub(crate) fn derive_key(label: &[u8], seed: u64, index: u64) -> [u8; 32] {
    Digest::of_parts(&[label, &seed.to_be_bytes(), &index.to_be_bytes()]).0
}

fn mac(key: &[u8; 32], domain: &[u8], message: &[u8]) -> [u8; 32] {
    Digest::of_parts(&[domain, key, message]).0
}

/// Signing key of one validator.
#[derive(Clone)]
pub struct KeyPair {
    secret: [u8; 32],
}

impl KeyPair {
    pub fn derive(seed: u64, id: ValidatorId) -> Self {
        Self {
            secret: derive_key(b"wavedag/sign", seed, u64::from(id.0)),
        }
    }

    pub fn from_bytes(secret: [u8; 32]) -> Self {
        Self { secret }
    }

    pub fn verification_key(&self) -> VerificationKey {
        VerificationKey(self.secret)
    }

    pub fn sign(&self, digest: &Digest) -> Signature {
        let mut out = [0u8; SIGNATURE_LEN];
        out[..32].copy_from_slice(&mac(&self.secret, b"sig/0", &digest.0));
        out[32..].copy_from_slice(&mac(&self.secret, b"sig/1", &digest.0));
        Signature(out)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeyPair(..)")
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerificationKey(pub [u8; 32]);

impl VerificationKey {
    pub fn verify(&self, digest: &Digest, signature: &Signature) -> bool {
        KeyPair::from_bytes(self.0).sign(digest) == *signature
    }
}

impl fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vk:{}", hex::encode(&self.0[..4]))
    }
}
