//! Deterministic signing and hashing.
//!
//! Ed25519 signatures are deterministic, so replaying the same transaction
//! sequence with the same seeds reproduces byte-identical blocks. SHA-256 is
//! used for every digest in the system.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::hexbytes;

pub const SEED_LEN: usize = 32;
pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("invalid-argument: {0}")]
    InvalidArgument(String),
    #[error("invalid-key: {0}")]
    InvalidKey(String),
}

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hexbytes::decode_strict(s)?;
        let arr: [u8; DIGEST_LEN] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 lowercase hex chars"))
    }
}

pub fn hash(message: &[u8]) -> Digest {
    Digest(Sha256::digest(message).into())
}

/// Hashes the concatenation of several byte strings, each prefixed with its
/// length so that part boundaries cannot be shifted.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

/// `hex(first 8 bytes of hash(public_key))`.
pub fn fingerprint(public_key: &[u8]) -> String {
    hex::encode(&hash(public_key).0[..8])
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    #[serde(with = "hexbytes")]
    pub private_key: Vec<u8>,
    #[serde(with = "hexbytes")]
    pub public_key: Vec<u8>,
    pub key_id: String,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(&self.private_key, message).expect("keypair holds a well-formed private key")
    }

    /// Convenience for fixtures: a seed made of one repeated byte.
    pub fn from_byte(b: u8) -> Self {
        keygen(&[b; SEED_LEN]).expect("seed has the right length")
    }

    /// Derives a keypair from an arbitrary label by hashing it into a seed.
    pub fn from_label(label: &str) -> Self {
        keygen(hash(label.as_bytes()).as_bytes()).expect("digest is 32 bytes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signature {
    #[serde(with = "hexbytes")]
    pub bytes: Vec<u8>,
    pub signer_key_id: String,
}

pub fn keygen(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: [u8; SEED_LEN] = seed.try_into().map_err(|_| {
        CryptoError::InvalidArgument(format!("seed must be {SEED_LEN} bytes, got {}", seed.len()))
    })?;
    let signing = SigningKey::from_bytes(&seed);
    let public_key = signing.verifying_key().to_bytes().to_vec();
    Ok(KeyPair {
        private_key: seed.to_vec(),
        key_id: fingerprint(&public_key),
        public_key,
    })
}

pub fn sign(private_key: &[u8], message: &[u8]) -> Result<Signature, CryptoError> {
    let seed: [u8; SEED_LEN] = private_key
        .try_into()
        .map_err(|_| CryptoError::InvalidKey(format!("private key must be {SEED_LEN} bytes")))?;
    let signing = SigningKey::from_bytes(&seed);
    let sig = signing.sign(message);
    Ok(Signature {
        bytes: sig.to_bytes().to_vec(),
        signer_key_id: fingerprint(signing.verifying_key().as_bytes()),
    })
}

/// Never errors; any malformed input simply fails verification.
pub fn verify(public_key: &[u8], message: &[u8], signature: &Signature) -> bool {
    if signature.signer_key_id != fingerprint(public_key) {
        return false;
    }
    let Ok(pk_bytes) = <[u8; 32]>::try_from(public_key) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk_bytes) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(&signature.bytes) else {
        return false;
    };
    vk.verify(message, &sig).is_ok()
}
