//! Canonical textual record notation.
//!
//! Every record is first mapped to a JSON-like value tree by serde and then
//! rendered with this grammar:
//!
//! ```text
//! value  := "n" | "t" | "f"
//!         | "i" ["-"] digits "e"            integer
//!         | "s" len ":" utf8-bytes          string, len counts bytes
//!         | "l" count ":" value*            list
//!         | "m" count ":" (string value)*   map, keys strictly ascending
//! ```
//!
//! Byte strings are lowercase base16 and timestamps RFC 3339 strings at the
//! serde layer, so the rendering is fully textual. Decoding is strict: leading
//! zeros, unsorted or duplicate keys, and trailing bytes are rejected, which
//! makes `decode` the exact inverse of `encode` and every value has one form.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonicalError {
    #[error("malformed-input at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("malformed-input: {0}")]
    Schema(String),
    #[error("unencodable value: {0}")]
    Unencodable(String),
}

pub fn encode_value(value: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.push(b'n'),
        Value::Bool(true) => out.push(b't'),
        Value::Bool(false) => out.push(b'f'),
        Value::Number(n) => {
            let text = if let Some(u) = n.as_u64() {
                u.to_string()
            } else if let Some(i) = n.as_i64() {
                i.to_string()
            } else {
                return Err(CanonicalError::Unencodable(format!("non-integer number {n}")));
            };
            out.push(b'i');
            out.extend_from_slice(text.as_bytes());
            out.push(b'e');
        }
        Value::String(s) => encode_str(s, out),
        Value::Array(items) => {
            out.extend_from_slice(format!("l{}:", items.len()).as_bytes());
            for item in items {
                encode_value(item, out)?;
            }
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.extend_from_slice(format!("m{}:", keys.len()).as_bytes());
            for key in keys {
                encode_str(key, out);
                encode_value(&map[key.as_str()], out)?;
            }
        }
    }
    Ok(())
}

fn encode_str(s: &str, out: &mut Vec<u8>) {
    out.extend_from_slice(format!("s{}:", s.len()).as_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn decode_value(bytes: &[u8]) -> Result<Value, CanonicalError> {
    let mut parser = Parser { bytes, pos: 0 };
    let value = parser.value()?;
    if parser.pos != bytes.len() {
        return Err(parser.err("trailing bytes after value"));
    }
    Ok(value)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, reason: impl Into<String>) -> CanonicalError {
        CanonicalError::Malformed { offset: self.pos, reason: reason.into() }
    }

    fn next(&mut self) -> Result<u8, CanonicalError> {
        let b = *self.bytes.get(self.pos).ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        Ok(b)
    }

    fn expect(&mut self, want: u8) -> Result<(), CanonicalError> {
        let at = self.pos;
        let got = self.next()?;
        if got != want {
            return Err(CanonicalError::Malformed {
                offset: at,
                reason: format!("expected {:?}, found {:?}", want as char, got as char),
            });
        }
        Ok(())
    }

    /// Decimal digits without superfluous leading zeros.
    fn digits(&mut self) -> Result<&str, CanonicalError> {
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        let run = &self.bytes[start..self.pos];
        if run.is_empty() {
            return Err(self.err("expected digits"));
        }
        if run.len() > 1 && run[0] == b'0' {
            return Err(CanonicalError::Malformed { offset: start, reason: "leading zero".into() });
        }
        Ok(std::str::from_utf8(run).expect("ascii digits"))
    }

    fn length(&mut self) -> Result<usize, CanonicalError> {
        let start = self.pos;
        let n = self
            .digits()?
            .parse::<usize>()
            .map_err(|_| CanonicalError::Malformed { offset: start, reason: "length overflow".into() })?;
        self.expect(b':')?;
        Ok(n)
    }

    fn string(&mut self) -> Result<String, CanonicalError> {
        let len = self.length()?;
        let start = self.pos;
        let end = start.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CanonicalError::Malformed { offset: start, reason: format!("string of {len} bytes runs past end") }
        })?;
        let s = std::str::from_utf8(&self.bytes[start..end])
            .map_err(|e| CanonicalError::Malformed { offset: start + e.valid_up_to(), reason: "invalid UTF-8".into() })?;
        self.pos = end;
        Ok(s.to_owned())
    }

    fn value(&mut self) -> Result<Value, CanonicalError> {
        let at = self.pos;
        match self.next()? {
            b'n' => Ok(Value::Null),
            b't' => Ok(Value::Bool(true)),
            b'f' => Ok(Value::Bool(false)),
            b'i' => {
                let negative = self.bytes.get(self.pos) == Some(&b'-');
                if negative {
                    self.pos += 1;
                }
                let start = self.pos;
                let digits = self.digits()?.to_owned();
                let overflow = || CanonicalError::Malformed { offset: start, reason: "integer overflow".into() };
                let number = if negative {
                    if digits == "0" {
                        return Err(CanonicalError::Malformed { offset: start, reason: "negative zero".into() });
                    }
                    Number::from(format!("-{digits}").parse::<i64>().map_err(|_| overflow())?)
                } else {
                    Number::from(digits.parse::<u64>().map_err(|_| overflow())?)
                };
                self.expect(b'e')?;
                Ok(Value::Number(number))
            }
            b's' => Ok(Value::String(self.string()?)),
            b'l' => {
                let count = self.length()?;
                let mut items = Vec::new();
                for _ in 0..count {
                    items.push(self.value()?);
                }
                Ok(Value::Array(items))
            }
            b'm' => {
                let count = self.length()?;
                let mut map = Map::new();
                let mut prev: Option<String> = None;
                for _ in 0..count {
                    let key_at = self.pos;
                    self.expect(b's')?;
                    let key = self.string()?;
                    if prev.as_ref().is_some_and(|p| p.as_str() >= key.as_str()) {
                        return Err(CanonicalError::Malformed {
                            offset: key_at,
                            reason: format!("map key {key:?} out of order or duplicated"),
                        });
                    }
                    let value = self.value()?;
                    map.insert(key.clone(), value);
                    prev = Some(key);
                }
                Ok(Value::Object(map))
            }
            other => Err(CanonicalError::Malformed { offset: at, reason: format!("unknown tag {:?}", other as char) }),
        }
    }
}

pub fn to_canonical<T: Serialize + ?Sized>(record: &T) -> Result<Vec<u8>, CanonicalError> {
    let value = serde_json::to_value(record).map_err(|e| CanonicalError::Unencodable(e.to_string()))?;
    let mut out = Vec::new();
    encode_value(&value, &mut out)?;
    Ok(out)
}

pub fn from_canonical<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let value = decode_value(bytes)?;
    serde_json::from_value(value).map_err(|e| CanonicalError::Schema(e.to_string()))
}

/// Canonical serialization for every record type in the crate.
pub trait Canonical: Serialize + DeserializeOwned {
    fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical(self).expect("record types contain only strings, integers, booleans, lists and maps")
    }

    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, CanonicalError> {
        from_canonical(bytes)
    }
}

impl<T: Serialize + DeserializeOwned> Canonical for T {}
