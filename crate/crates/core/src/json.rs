//! JSON values with RFC 8785 (JCS) canonical serialization.
//!
//! Every signature in the protocol is computed over the bytes produced by
//! [`canonicalize`]. The value model is deliberately narrower than general
//! JSON: numbers are finite IEEE-754 doubles and object keys are unique, which
//! are exactly the inputs JCS can serialize without ambiguity.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Largest integer that survives a round trip through an IEEE-754 double.
pub const MAX_SAFE_INTEGER: u64 = (1 << 53) - 1;

const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JsonError {
    #[error("malformed JSON at byte {offset}: {message}")]
    MalformedJson { offset: usize, message: String },
    #[error("duplicate object key {0:?}")]
    DuplicateKey(String),
    #[error("number is not finite")]
    NonFiniteNumber,
    #[error("unpaired UTF-16 surrogate at byte {offset}")]
    UnpairedSurrogate { offset: usize },
}

/// A finite IEEE-754 double.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Number(f64);

impl Number {
    pub fn new(value: f64) -> Result<Self, JsonError> {
        if value.is_finite() {
            Ok(Number(value))
        } else {
            Err(JsonError::NonFiniteNumber)
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// The value as an exact non-negative integer, if it is one.
    pub fn as_u64(self) -> Option<u64> {
        let v = self.0;
        if v >= 0.0 && v.fract() == 0.0 && v <= MAX_SAFE_INTEGER as f64 {
            Some(v as u64)
        } else {
            None
        }
    }
}

impl From<u32> for Number {
    fn from(v: u32) -> Self {
        Number(f64::from(v))
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_number(self.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JsonValue {
    Null,
    Bool(bool),
    Number(Number),
    String(String),
    Array(Vec<JsonValue>),
    Object(BTreeMap<String, JsonValue>),
}

impl JsonValue {
    /// Integer constructor for protocol fields (timestamps, counters).
    ///
    /// Values above 2^53 - 1 are rejected since JCS cannot carry them exactly.
    pub fn integer(v: u64) -> Result<Self, JsonError> {
        if v > MAX_SAFE_INTEGER {
            return Err(JsonError::NonFiniteNumber);
        }
        Ok(JsonValue::Number(Number(v as f64)))
    }

    pub fn number(v: f64) -> Result<Self, JsonError> {
        Number::new(v).map(JsonValue::Number)
    }

    pub fn string(s: impl Into<String>) -> Self {
        JsonValue::String(s.into())
    }

    pub fn object() -> Self {
        JsonValue::Object(BTreeMap::new())
    }

    pub fn as_object(&self) -> Option<&BTreeMap<String, JsonValue>> {
        match self {
            JsonValue::Object(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_object_mut(&mut self) -> Option<&mut BTreeMap<String, JsonValue>> {
        match self {
            JsonValue::Object(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[JsonValue]> {
        match self {
            JsonValue::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            JsonValue::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            JsonValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            JsonValue::Number(n) => n.as_u64(),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&JsonValue> {
        self.as_object().and_then(|m| m.get(key))
    }

    /// Insert into an object value. Panics if `self` is not an object.
    pub fn insert(&mut self, key: impl Into<String>, value: JsonValue) {
        match self {
            JsonValue::Object(m) => {
                m.insert(key.into(), value);
            }
            _ => panic!("insert on non-object JSON value"),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            JsonValue::Null => "null",
            JsonValue::Bool(_) => "boolean",
            JsonValue::Number(_) => "number",
            JsonValue::String(_) => "string",
            JsonValue::Array(_) => "array",
            JsonValue::Object(_) => "object",
        }
    }

    /// Canonical text form; shorthand for [`canonicalize`].
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        write_value(self, &mut out);
        out
    }

    /// Indented, key-sorted rendering for humans. Not used for signing.
    pub fn to_pretty_string(&self) -> String {
        let mut out = String::new();
        write_pretty(self, 0, &mut out);
        out
    }
}

impl From<bool> for JsonValue {
    fn from(b: bool) -> Self {
        JsonValue::Bool(b)
    }
}

impl From<u32> for JsonValue {
    fn from(v: u32) -> Self {
        JsonValue::Number(Number::from(v))
    }
}

impl From<&str> for JsonValue {
    fn from(s: &str) -> Self {
        JsonValue::String(s.to_owned())
    }
}

impl From<String> for JsonValue {
    fn from(s: String) -> Self {
        JsonValue::String(s)
    }
}

impl From<Vec<JsonValue>> for JsonValue {
    fn from(v: Vec<JsonValue>) -> Self {
        JsonValue::Array(v)
    }
}

impl fmt::Display for JsonValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_string())
    }
}

/// RFC 8785 canonical UTF-8 bytes of `value`.
pub fn canonicalize(value: &JsonValue) -> Vec<u8> {
    value.to_canonical_string().into_bytes()
}

/// Object keys are ordered by their UTF-16 code units.
fn cmp_utf16(a: &str, b: &str) -> Ordering {
    a.encode_utf16().cmp(b.encode_utf16())
}

fn sorted_entries(map: &BTreeMap<String, JsonValue>) -> Vec<(&String, &JsonValue)> {
    let mut entries: Vec<_> = map.iter().collect();
    // BTreeMap already orders by UTF-8 bytes, which only disagrees with UTF-16
    // order for code points at or above U+E000.
    if entries.iter().any(|(k, _)| k.chars().any(|c| c >= '\u{e000}')) {
        entries.sort_by(|a, b| cmp_utf16(a.0, b.0));
    }
    entries
}

fn write_value(value: &JsonValue, out: &mut String) {
    match value {
        JsonValue::Null => out.push_str("null"),
        JsonValue::Bool(true) => out.push_str("true"),
        JsonValue::Bool(false) => out.push_str("false"),
        JsonValue::Number(n) => out.push_str(&format_number(n.0)),
        JsonValue::String(s) => write_string(s, out),
        JsonValue::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        JsonValue::Object(map) => {
            out.push('{');
            for (i, (k, v)) in sorted_entries(map).into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(k, out);
                out.push(':');
                write_value(v, out);
            }
            out.push('}');
        }
    }
}

fn write_string(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\u{08}' => out.push_str("\\b"),
            '\u{0c}' => out.push_str("\\f"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// ECMAScript `Number.prototype.toString` for a finite double.
///
/// Rust's `{:e}` formatting yields the shortest digit string that round-trips,
/// which is the digit selection ECMAScript requires; only the layout differs.
pub(crate) fn format_number(v: f64) -> String {
    debug_assert!(v.is_finite());
    if v == 0.0 {
        return "0".to_owned();
    }
    let mut out = String::new();
    if v < 0.0 {
        out.push('-');
    }
    let abs = v.abs();
    let mut sci = format!("{:e}", abs);
    // `{:e}` finds the shortest round-tripping digit count but may not pick
    // the candidate closest to the exact value. Re-rounding to that many
    // digits is exact (ties to even); keep it when it still round-trips.
    let shortest_digits = sci.split_once('e').map_or(0, |(m, _)| m.replace('.', "").len());
    let nearest = format!("{:.*e}", shortest_digits.saturating_sub(1), abs);
    if nearest.parse::<f64>() == Ok(abs) {
        sci = nearest;
    }
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp always emits 'e'");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let k = digits.len() as i32;
    // Position of the decimal point relative to the digit string.
    let n = exp + 1;

    if k <= n && n <= 21 {
        out.push_str(&digits);
        out.extend(std::iter::repeat('0').take((n - k) as usize));
    } else if 0 < n && n <= 21 {
        out.push_str(&digits[..n as usize]);
        out.push('.');
        out.push_str(&digits[n as usize..]);
    } else if -6 < n && n <= 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat('0').take((-n) as usize));
        out.push_str(&digits);
    } else {
        out.push_str(&digits[..1]);
        if k > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        out.push('e');
        out.push(if n - 1 >= 0 { '+' } else { '-' });
        out.push_str(&(n - 1).abs().to_string());
    }
    out
}

fn write_pretty(value: &JsonValue, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match value {
        JsonValue::Array(items) if !items.is_empty() => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_pretty(item, indent + 1, out);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        JsonValue::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            let entries = sorted_entries(map);
            let len = entries.len();
            for (i, (k, v)) in entries.into_iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_string(k, out);
                out.push_str(": ");
                write_pretty(v, indent + 1, out);
                if i + 1 < len {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        other => write_value(other, out),
    }
}

/// Parse UTF-8 JSON text. Duplicate object keys are an error.
pub fn parse(bytes: &[u8]) -> Result<JsonValue, JsonError> {
    let mut p = Parser { src: bytes, pos: 0 };
    p.skip_ws();
    let v = p.value(0)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing characters"));
    }
    Ok(v)
}

pub fn parse_str(s: &str) -> Result<JsonValue, JsonError> {
    parse(s.as_bytes())
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> JsonError {
        JsonError::MalformedJson {
            offset: self.pos,
            message: message.to_owned(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(b' ' | b'\t' | b'\n' | b'\r') = self.peek() {
            self.pos += 1;
        }
    }

    fn expect_literal(&mut self, lit: &str, v: JsonValue) -> Result<JsonValue, JsonError> {
        if self.src[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            Ok(v)
        } else {
            Err(self.err("invalid literal"))
        }
    }

    fn value(&mut self, depth: usize) -> Result<JsonValue, JsonError> {
        if depth > MAX_DEPTH {
            return Err(self.err("nesting too deep"));
        }
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'{') => self.object(depth),
            Some(b'[') => self.array(depth),
            Some(b'"') => self.string().map(JsonValue::String),
            Some(b't') => self.expect_literal("true", JsonValue::Bool(true)),
            Some(b'f') => self.expect_literal("false", JsonValue::Bool(false)),
            Some(b'n') => self.expect_literal("null", JsonValue::Null),
            Some(b'-' | b'0'..=b'9') => self.number(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn object(&mut self, depth: usize) -> Result<JsonValue, JsonError> {
        self.pos += 1;
        let mut map = BTreeMap::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(JsonValue::Object(map));
        }
        loop {
            self.skip_ws();
            if self.peek() != Some(b'"') {
                return Err(self.err("expected object key"));
            }
            let key = self.string()?;
            self.skip_ws();
            if self.peek() != Some(b':') {
                return Err(self.err("expected ':'"));
            }
            self.pos += 1;
            self.skip_ws();
            let v = self.value(depth + 1)?;
            if map.contains_key(&key) {
                return Err(JsonError::DuplicateKey(key));
            }
            map.insert(key, v);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(JsonValue::Object(map));
                }
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
    }

    fn array(&mut self, depth: usize) -> Result<JsonValue, JsonError> {
        self.pos += 1;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(JsonValue::Array(items));
        }
        loop {
            self.skip_ws();
            items.push(self.value(depth + 1)?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(JsonValue::Array(items));
                }
                _ => return Err(self.err("expected ',' or ']'")),
            }
        }
    }

    fn hex4(&mut self) -> Result<u16, JsonError> {
        let end = self.pos + 4;
        let chunk = self
            .src
            .get(self.pos..end)
            .ok_or_else(|| self.err("truncated \\u escape"))?;
        let text = std::str::from_utf8(chunk).map_err(|_| self.err("bad \\u escape"))?;
        let v = u16::from_str_radix(text, 16).map_err(|_| self.err("bad \\u escape"))?;
        if !chunk.iter().all(u8::is_ascii_hexdigit) {
            return Err(self.err("bad \\u escape"));
        }
        self.pos = end;
        Ok(v)
    }

    fn string(&mut self) -> Result<String, JsonError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let start = self.pos;
            while let Some(b) = self.peek() {
                if b == b'"' || b == b'\\' || b < 0x20 {
                    break;
                }
                self.pos += 1;
            }
            let run = std::str::from_utf8(&self.src[start..self.pos]).map_err(|e| {
                JsonError::MalformedJson {
                    offset: start + e.valid_up_to(),
                    message: "invalid UTF-8".to_owned(),
                }
            })?;
            out.push_str(run);
            match self.peek() {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    let esc_at = self.pos;
                    self.pos += 1;
                    let c = self.peek().ok_or_else(|| self.err("truncated escape"))?;
                    self.pos += 1;
                    match c {
                        b'"' => out.push('"'),
                        b'\\' => out.push('\\'),
                        b'/' => out.push('/'),
                        b'b' => out.push('\u{08}'),
                        b'f' => out.push('\u{0c}'),
                        b'n' => out.push('\n'),
                        b'r' => out.push('\r'),
                        b't' => out.push('\t'),
                        b'u' => {
                            let hi = self.hex4()?;
                            let cp = match hi {
                                0xd800..=0xdbff => {
                                    if self.src[self.pos..].starts_with(b"\\u") {
                                        self.pos += 2;
                                        let lo = self.hex4()?;
                                        if !(0xdc00..=0xdfff).contains(&lo) {
                                            return Err(JsonError::UnpairedSurrogate {
                                                offset: esc_at,
                                            });
                                        }
                                        0x10000
                                            + ((u32::from(hi) - 0xd800) << 10)
                                            + (u32::from(lo) - 0xdc00)
                                    } else {
                                        return Err(JsonError::UnpairedSurrogate {
                                            offset: esc_at,
                                        });
                                    }
                                }
                                0xdc00..=0xdfff => {
                                    return Err(JsonError::UnpairedSurrogate { offset: esc_at })
                                }
                                _ => u32::from(hi),
                            };
                            out.push(char::from_u32(cp).expect("valid scalar value"));
                        }
                        _ => {
                            self.pos = esc_at;
                            return Err(self.err("invalid escape"));
                        }
                    }
                }
                Some(_) => return Err(self.err("control character in string")),
            }
        }
    }

    fn number(&mut self) -> Result<JsonValue, JsonError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        match self.peek() {
            Some(b'0') => self.pos += 1,
            Some(b'1'..=b'9') => {
                while let Some(b'0'..=b'9') = self.peek() {
                    self.pos += 1;
                }
            }
            _ => return Err(self.err("invalid number")),
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.err("invalid fraction"));
            }
            while let Some(b'0'..=b'9') = self.peek() {
                self.pos += 1;
            }
        }
        if let Some(b'e' | b'E') = self.peek() {
            self.pos += 1;
            if let Some(b'+' | b'-') = self.peek() {
                self.pos += 1;
            }
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.err("invalid exponent"));
            }
            while let Some(b'0'..=b'9') = self.peek() {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ASCII digits");
        let v: f64 = text.parse().map_err(|_| self.err("invalid number"))?;
        JsonValue::number(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon(s: &str) -> String {
        parse_str(s).unwrap().to_canonical_string()
    }

    #[test]
    fn sorts_keys() {
        assert_eq!(canon(r#"{"b":2,"a":1}"#), r#"{"a":1,"b":2}"#);
        assert_eq!(canon("{}"), "{}");
        assert_eq!(canon(r#"{"x":1.0}"#), r#"{"x":1}"#);
    }

    #[test]
    fn non_ascii_is_emitted_raw() {
        assert_eq!(canon(r#"{"s":"\u00e9"}"#), "{\"s\":\"\u{e9}\"}");
        assert_eq!(canon(r#""\u2028""#), "\"\u{2028}\"");
        assert_eq!(canon(r#""\u007f""#), "\"\u{7f}\"");
    }

    #[test]
    fn control_characters_use_short_or_lowercase_escapes() {
        assert_eq!(canon(r#""\u000F\u0008\u001f""#), r#""\u000f\b\u001f""#);
        assert_eq!(canon(r#""\/""#), r#""/""#);
    }

    #[test]
    fn duplicate_keys_rejected() {
        assert_eq!(
            parse_str(r#"{"a":1,"a":2}"#),
            Err(JsonError::DuplicateKey("a".into()))
        );
        // nested objects are checked too
        assert!(matches!(
            parse_str(r#"{"o":{"k":1,"k":1}}"#),
            Err(JsonError::DuplicateKey(_))
        ));
    }

    #[test]
    fn surrogates() {
        assert_eq!(canon(r#""\ud83d\ude00""#), "\"\u{1f600}\"");
        assert!(matches!(
            parse_str(r#""\ud83d""#),
            Err(JsonError::UnpairedSurrogate { .. })
        ));
        assert!(matches!(
            parse_str(r#""\ude00x""#),
            Err(JsonError::UnpairedSurrogate { .. })
        ));
        assert!(matches!(
            parse_str(r#""\ud83d\u0041""#),
            Err(JsonError::UnpairedSurrogate { .. })
        ));
    }

    #[test]
    fn malformed_inputs() {
        for bad in [
            "", "{", "[1,]", "{\"a\" 1}", "01", "1.", "-", "tru", "\"abc", "{} x", "\"\t\"",
            "[1 2]", "\"\\x\"", "+1", ".5",
        ] {
            assert!(
                matches!(parse_str(bad), Err(JsonError::MalformedJson { .. })),
                "{bad:?} should be malformed"
            );
        }
        assert!(parse(&[b'"', 0xff, b'"']).is_err());
    }

    #[test]
    fn overflowing_number_is_non_finite() {
        assert_eq!(parse_str("1e400"), Err(JsonError::NonFiniteNumber));
        assert_eq!(Number::new(f64::NAN), Err(JsonError::NonFiniteNumber));
        assert_eq!(Number::new(f64::INFINITY), Err(JsonError::NonFiniteNumber));
    }

    #[test]
    fn deep_nesting_is_bounded() {
        let deep = "[".repeat(10_000);
        assert!(parse_str(&deep).is_err());
    }

    #[test]
    fn integer_limit() {
        assert!(JsonValue::integer(MAX_SAFE_INTEGER).is_ok());
        assert!(JsonValue::integer(MAX_SAFE_INTEGER + 1).is_err());
        assert_eq!(
            JsonValue::integer(1_700_000_000_123).unwrap().to_string(),
            "1700000000123"
        );
    }

    #[test]
    fn utf16_key_order_differs_from_utf8_above_e000() {
        // U+FB33 sorts before U+1F600 in UTF-8 but after it in UTF-16.
        let v = parse_str("{\"\u{fb33}\":1,\"\u{1f600}\":2}").unwrap();
        assert_eq!(v.to_canonical_string(), "{\"\u{1f600}\":2,\"\u{fb33}\":1}");
    }

    #[test]
    fn number_layouts() {
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(1e21), "1e+21");
        assert_eq!(format_number(1e20), "100000000000000000000");
        assert_eq!(format_number(1e-7), "1e-7");
        assert_eq!(format_number(1.5e-6), "0.0000015");
        assert_eq!(format_number(-2.5), "-2.5");
        assert_eq!(format_number(123.456e30), "1.23456e+32");
    }

    #[test]
    fn pretty_output_reparses_to_same_value() {
        let v = parse_str(r#"{"b":[1,{"c":null}],"a":"x","e":[],"f":{}}"#).unwrap();
        assert_eq!(parse_str(&v.to_pretty_string()).unwrap(), v);
    }
}
