//! Serde adapters that render byte blobs as lowercase hex strings.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer, T: AsRef<[u8]>>(bytes: T, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>, T: FromHexBytes>(d: D) -> Result<T, D::Error> {
    let text = String::deserialize(d)?;
    let bytes = hex::decode(text.trim()).map_err(D::Error::custom)?;
    T::from_hex_bytes(bytes).map_err(D::Error::custom)
}

pub trait FromHexBytes: Sized {
    fn from_hex_bytes(bytes: Vec<u8>) -> Result<Self, String>;
}

impl FromHexBytes for Vec<u8> {
    fn from_hex_bytes(bytes: Vec<u8>) -> Result<Self, String> {
        Ok(bytes)
    }
}

impl<const N: usize> FromHexBytes for [u8; N] {
    fn from_hex_bytes(bytes: Vec<u8>) -> Result<Self, String> {
        let len = bytes.len();
        bytes
            .try_into()
            .map_err(|_| format!("expected {N} bytes, got {len}"))
    }
}

/// Parses hex text, tolerating whitespace and an optional `0x` prefix.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, hex::FromHexError> {
    let cleaned: String = text
        .trim()
        .trim_start_matches("0x")
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    hex::decode(cleaned)
}
