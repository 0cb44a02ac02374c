//! Serde helper: byte strings as lowercase base16.
//!
//! Decoding rejects uppercase digits so that every byte string has exactly one
//! textual form.

use serde::{Deserialize, Deserializer, Serializer};

pub fn decode_strict(s: &str) -> Option<Vec<u8>> {
    if s.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return None;
    }
    hex::decode(s).ok()
}

pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
    let s = String::deserialize(d)?;
    decode_strict(&s).ok_or_else(|| serde::de::Error::custom("expected lowercase hex byte string"))
}
