use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use thiserror::Error;

/// Maximum container nesting accepted by the decoder.
const MAX_DEPTH: usize = 256;

/// A bencoded value.
///
/// Dictionary keys live in a `BTreeMap`, so they are unique and iterate in
/// ascending raw-byte order, which is exactly the canonical emission order.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum BValue {
    Int(i64),
    Bytes(Vec<u8>),
    List(Vec<BValue>),
    Dict(BTreeMap<Vec<u8>, BValue>),
}

impl BValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            BValue::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            BValue::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        self.as_bytes().and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn as_list(&self) -> Option<&[BValue]> {
        match self {
            BValue::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_dict(&self) -> Option<&BTreeMap<Vec<u8>, BValue>> {
        match self {
            BValue::Dict(d) => Some(d),
            _ => None,
        }
    }

    /// Looks up `key` when `self` is a dictionary.
    pub fn get(&self, key: &str) -> Option<&BValue> {
        self.as_dict().and_then(|d| d.get(key.as_bytes()))
    }

    pub fn bytes(b: impl Into<Vec<u8>>) -> Self {
        BValue::Bytes(b.into())
    }

    pub fn dict<K, I>(entries: I) -> Self
    where
        K: Into<Vec<u8>>,
        I: IntoIterator<Item = (K, BValue)>,
    {
        BValue::Dict(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

impl fmt::Debug for BValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BValue::Int(n) => write!(f, "{n}"),
            BValue::Bytes(b) => write!(f, "{:?}", String::from_utf8_lossy(b)),
            BValue::List(l) => f.debug_list().entries(l).finish(),
            BValue::Dict(d) => f
                .debug_map()
                .entries(d.iter().map(|(k, v)| (String::from_utf8_lossy(k), v)))
                .finish(),
        }
    }
}

impl From<i64> for BValue {
    fn from(n: i64) -> Self {
        BValue::Int(n)
    }
}

impl From<&str> for BValue {
    fn from(s: &str) -> Self {
        BValue::Bytes(s.as_bytes().to_vec())
    }
}

/// What exactly was wrong with a malformed input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Malformation {
    BadPrefix(u8),
    UnexpectedEnd,
    UnterminatedInteger,
    InvalidInteger,
    IntegerOverflow,
    InvalidLength,
    LengthOverrun,
    NonStringKey,
    UnsortedKeys,
    DuplicateKey,
    TooDeep,
}

impl fmt::Display for Malformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Malformation::BadPrefix(b) => write!(f, "unexpected byte 0x{b:02x}"),
            Malformation::UnexpectedEnd => f.write_str("unexpected end of input"),
            Malformation::UnterminatedInteger => f.write_str("unterminated integer"),
            Malformation::InvalidInteger => f.write_str("invalid integer literal"),
            Malformation::IntegerOverflow => f.write_str("integer exceeds 64-bit range"),
            Malformation::InvalidLength => f.write_str("invalid string length prefix"),
            Malformation::LengthOverrun => f.write_str("string length runs past end of input"),
            Malformation::NonStringKey => f.write_str("dictionary key is not a byte string"),
            Malformation::UnsortedKeys => f.write_str("dictionary keys not in ascending order"),
            Malformation::DuplicateKey => f.write_str("duplicate dictionary key"),
            Malformation::TooDeep => f.write_str("nesting too deep"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed input at byte {offset}: {kind}")]
    Malformed { offset: usize, kind: Malformation },
    #[error("{count} trailing bytes after value ending at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

impl DecodeError {
    pub fn malformation(&self) -> Option<Malformation> {
        match self {
            DecodeError::Malformed { kind, .. } => Some(*kind),
            DecodeError::TrailingBytes { .. } => None,
        }
    }
}

/// Key-order policy for dictionaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    /// Keys must be strictly ascending (rejects unsorted and duplicate keys).
    #[default]
    Strict,
    /// Unsorted keys are accepted; duplicates are still rejected.
    Lenient,
}

/// Decodes a complete bencoded document in strict mode.
pub fn decode(input: &[u8]) -> Result<BValue, DecodeError> {
    decode_with(input, DecodeMode::Strict)
}

pub fn decode_with(input: &[u8], mode: DecodeMode) -> Result<BValue, DecodeError> {
    let mut parser = Parser::new(input, mode);
    let value = parser.value(0)?;
    parser.finish()?;
    Ok(value)
}

/// Decodes a top-level dictionary and also reports the byte span of every
/// top-level value, so callers can hash a value's original encoding.
pub fn decode_dict_spans(
    input: &[u8],
    mode: DecodeMode,
) -> Result<(BValue, BTreeMap<Vec<u8>, Range<usize>>), DecodeError> {
    let mut parser = Parser::new(input, mode);
    let mut spans = BTreeMap::new();
    let value = parser.dict(0, Some(&mut spans))?;
    parser.finish()?;
    Ok((value, spans))
}

pub(crate) struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    mode: DecodeMode,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(input: &'a [u8], mode: DecodeMode) -> Self {
        Parser {
            input,
            pos: 0,
            mode,
        }
    }

    fn err(&self, offset: usize, kind: Malformation) -> DecodeError {
        DecodeError::Malformed { offset, kind }
    }

    fn peek(&self) -> Result<u8, DecodeError> {
        self.input
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.pos, Malformation::UnexpectedEnd))
    }

    fn finish(&self) -> Result<(), DecodeError> {
        if self.pos < self.input.len() {
            return Err(DecodeError::TrailingBytes {
                offset: self.pos,
                count: self.input.len() - self.pos,
            });
        }
        Ok(())
    }

    fn value(&mut self, depth: usize) -> Result<BValue, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(self.err(self.pos, Malformation::TooDeep));
        }
        match self.peek()? {
            b'i' => self.int().map(BValue::Int),
            b'l' => {
                self.pos += 1;
                let mut items = Vec::new();
                while self.peek()? != b'e' {
                    items.push(self.value(depth + 1)?);
                }
                self.pos += 1;
                Ok(BValue::List(items))
            }
            b'd' => self.dict(depth, None),
            b'0'..=b'9' => self.string().map(|s| BValue::Bytes(s.to_vec())),
            other => Err(self.err(self.pos, Malformation::BadPrefix(other))),
        }
    }

    fn dict(
        &mut self,
        depth: usize,
        mut spans: Option<&mut BTreeMap<Vec<u8>, Range<usize>>>,
    ) -> Result<BValue, DecodeError> {
        match self.peek()? {
            b'd' => self.pos += 1,
            other => return Err(self.err(self.pos, Malformation::BadPrefix(other))),
        }
        let mut map = BTreeMap::new();
        let mut prev: Option<&'a [u8]> = None;
        while self.peek()? != b'e' {
            let key_at = self.pos;
            if !self.peek()?.is_ascii_digit() {
                return Err(self.err(key_at, Malformation::NonStringKey));
            }
            let key = self.string()?;
            if let Some(prev) = prev {
                if key == prev {
                    return Err(self.err(key_at, Malformation::DuplicateKey));
                }
                if key < prev && self.mode == DecodeMode::Strict {
                    return Err(self.err(key_at, Malformation::UnsortedKeys));
                }
            }
            if self.mode == DecodeMode::Lenient && map.contains_key(key) {
                return Err(self.err(key_at, Malformation::DuplicateKey));
            }
            let start = self.pos;
            let value = self.value(depth + 1)?;
            if let Some(spans) = spans.as_deref_mut() {
                spans.insert(key.to_vec(), start..self.pos);
            }
            map.insert(key.to_vec(), value);
            prev = Some(key);
        }
        self.pos += 1;
        Ok(BValue::Dict(map))
    }

    fn int(&mut self) -> Result<i64, DecodeError> {
        let start = self.pos;
        self.pos += 1;
        let end = self.input[self.pos..]
            .iter()
            .position(|&b| b == b'e')
            .map(|i| self.pos + i)
            .ok_or_else(|| self.err(start, Malformation::UnterminatedInteger))?;
        let digits = &self.input[self.pos..end];
        let value = parse_canonical_int(digits).map_err(|kind| self.err(start, kind))?;
        self.pos = end + 1;
        Ok(value)
    }

    fn string(&mut self) -> Result<&'a [u8], DecodeError> {
        let start = self.pos;
        let colon = self.input[self.pos..]
            .iter()
            .position(|&b| b == b':')
            .map(|i| self.pos + i)
            .ok_or_else(|| self.err(start, Malformation::UnexpectedEnd))?;
        let digits = &self.input[self.pos..colon];
        if digits.is_empty()
            || !digits.iter().all(u8::is_ascii_digit)
            || (digits.len() > 1 && digits[0] == b'0')
        {
            return Err(self.err(start, Malformation::InvalidLength));
        }
        let len: usize = std::str::from_utf8(digits)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(start, Malformation::InvalidLength))?;
        let body = colon + 1;
        let end = body
            .checked_add(len)
            .filter(|&e| e <= self.input.len())
            .ok_or_else(|| self.err(start, Malformation::LengthOverrun))?;
        self.pos = end;
        Ok(&self.input[body..end])
    }
}

fn parse_canonical_int(digits: &[u8]) -> Result<i64, Malformation> {
    let (negative, magnitude) = match digits.split_first() {
        Some((b'-', rest)) => (true, rest),
        _ => (false, digits),
    };
    if magnitude.is_empty() || !magnitude.iter().all(u8::is_ascii_digit) {
        return Err(Malformation::InvalidInteger);
    }
    if magnitude.len() > 1 && magnitude[0] == b'0' {
        return Err(Malformation::InvalidInteger);
    }
    if negative && magnitude == b"0" {
        return Err(Malformation::InvalidInteger);
    }
    // digits are ASCII, so this cannot fail
    let text = std::str::from_utf8(digits).map_err(|_| Malformation::InvalidInteger)?;
    text.parse::<i64>()
        .map_err(|_| Malformation::IntegerOverflow)
}

/// Canonical encoding: sorted keys, minimal integer and length literals.
pub fn encode(value: &BValue) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(value, &mut out);
    out
}

pub fn encode_into(value: &BValue, out: &mut Vec<u8>) {
    match value {
        BValue::Int(n) => {
            out.push(b'i');
            out.extend_from_slice(n.to_string().as_bytes());
            out.push(b'e');
        }
        BValue::Bytes(b) => encode_bytes(b, out),
        BValue::List(items) => {
            out.push(b'l');
            for item in items {
                encode_into(item, out);
            }
            out.push(b'e');
        }
        BValue::Dict(map) => {
            out.push(b'd');
            for (k, v) in map {
                encode_bytes(k, out);
                encode_into(v, out);
            }
            out.push(b'e');
        }
    }
}

fn encode_bytes(b: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(b.len().to_string().as_bytes());
    out.push(b':');
    out.extend_from_slice(b);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn malformed(input: &[u8]) -> Malformation {
        decode(input)
            .expect_err("should be rejected")
            .malformation()
            .expect("malformed, not trailing")
    }

    #[test]
    fn decodes_grammar_examples() {
        assert_eq!(decode(b"i42e").unwrap(), BValue::Int(42));
        assert_eq!(decode(b"le").unwrap(), BValue::List(vec![]));
        assert_eq!(
            decode(b"d4:spaml1:a1:bee").unwrap(),
            BValue::dict([("spam", BValue::List(vec!["a".into(), "b".into()]))])
        );
        assert_eq!(decode(b"i-7e").unwrap(), BValue::Int(-7));
        assert_eq!(decode(b"0:").unwrap(), BValue::Bytes(vec![]));
    }

    #[test]
    fn encodes_grammar_examples() {
        assert_eq!(encode(&BValue::Int(0)), b"i0e");
        assert_eq!(
            encode(&BValue::dict([("b", BValue::Int(1)), ("a", BValue::Int(2))])),
            b"d1:ai2e1:bi1ee"
        );
        assert_eq!(encode(&BValue::List(vec!["spam".into()])), b"l4:spame");
    }

    #[test]
    fn rejects_malformed_integers() {
        assert_eq!(malformed(b"i42"), Malformation::UnterminatedInteger);
        assert_eq!(malformed(b"ie"), Malformation::InvalidInteger);
        assert_eq!(malformed(b"i-e"), Malformation::InvalidInteger);
        assert_eq!(malformed(b"i03e"), Malformation::InvalidInteger);
        assert_eq!(malformed(b"i-0e"), Malformation::InvalidInteger);
        assert_eq!(malformed(b"i1.5e"), Malformation::InvalidInteger);
        assert_eq!(
            malformed(b"i9223372036854775808e"),
            Malformation::IntegerOverflow
        );
        assert_eq!(
            decode(b"i-9223372036854775808e").unwrap(),
            BValue::Int(i64::MIN)
        );
    }

    #[test]
    fn rejects_malformed_strings_and_prefixes() {
        assert_eq!(malformed(b"5:abc"), Malformation::LengthOverrun);
        assert_eq!(malformed(b"03:abc"), Malformation::InvalidLength);
        assert_eq!(malformed(b"3abc"), Malformation::UnexpectedEnd);
        assert_eq!(malformed(b"x"), Malformation::BadPrefix(b'x'));
        assert_eq!(malformed(b"l"), Malformation::UnexpectedEnd);
        assert_eq!(malformed(b""), Malformation::UnexpectedEnd);
        assert_eq!(malformed(b"di1ei2ee"), Malformation::NonStringKey);
    }

    #[test]
    fn strict_mode_enforces_key_order() {
        assert_eq!(malformed(b"d1:bi1e1:ai2ee"), Malformation::UnsortedKeys);
        assert_eq!(malformed(b"d1:ai1e1:ai2ee"), Malformation::DuplicateKey);
        let lenient = decode_with(b"d1:bi1e1:ai2ee", DecodeMode::Lenient).unwrap();
        assert_eq!(lenient.get("a"), Some(&BValue::Int(2)));
        assert_eq!(
            decode_with(b"d1:bi1e1:ai2e1:bi3ee", DecodeMode::Lenient)
                .unwrap_err()
                .malformation(),
            Some(Malformation::DuplicateKey)
        );
    }

    #[test]
    fn trailing_bytes_are_an_error() {
        assert_eq!(
            decode(b"i1ei2e"),
            Err(DecodeError::TrailingBytes {
                offset: 3,
                count: 3
            })
        );
    }

    #[test]
    fn deep_nesting_is_bounded() {
        let mut input = vec![b'l'; 10_000];
        input.extend(vec![b'e'; 10_000]);
        assert_eq!(malformed(&input), Malformation::TooDeep);
    }

    #[test]
    fn dict_spans_cover_original_bytes() {
        let input = b"d4:infod1:xi1ee4:spami3ee";
        let (value, spans) = decode_dict_spans(input, DecodeMode::Strict).unwrap();
        assert_eq!(&input[spans[&b"info"[..]].clone()], b"d1:xi1ee");
        assert_eq!(&input[spans[&b"spam"[..]].clone()], b"i3e");
        assert_eq!(value.get("spam"), Some(&BValue::Int(3)));
    }
}
