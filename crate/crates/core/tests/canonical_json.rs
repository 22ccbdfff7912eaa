use std::collections::BTreeMap;

use hdp_core::json::{canonicalize, parse, parse_str, JsonError, JsonValue, Number};
use proptest::prelude::*;

fn data(name: &str) -> String {
    std::fs::read_to_string(format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn rfc8785_sample_documents() {
    for (input, output) in [
        ("rfc8785_sample.json", "rfc8785_sample.canonical"),
        ("rfc8785_sort.json", "rfc8785_sort.canonical"),
    ] {
        let v = parse_str(&data(input)).unwrap();
        assert_eq!(String::from_utf8(canonicalize(&v)).unwrap(), data(output), "{input}");
    }
}

#[test]
fn rfc8785_number_table() {
    let table = data("rfc8785_numbers.txt");
    let mut n = 0;
    for line in table.lines().filter(|l| !l.is_empty()) {
        let (bits, want) = line.split_once(' ').unwrap();
        let x = f64::from_bits(u64::from_str_radix(bits, 16).unwrap());
        assert_eq!(JsonValue::number(x).unwrap().to_canonical_string(), want, "{bits}");
        n += 1;
    }
    assert_eq!(n, 24);
}

#[test]
fn non_finite_numbers_unrepresentable() {
    for x in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
        assert!(matches!(Number::new(x), Err(JsonError::NonFiniteNumber)));
    }
    assert!(parse_str("[NaN]").is_err());
    assert!(parse_str("[1e400]").is_err());
}

#[test]
fn property_order_is_utf16() {
    // U+FB33 sorts after the surrogate pair of U+1F600 in UTF-16,
    // although it sorts before it by code point.
    let v = parse_str("{\"\u{FB33}\":1,\"\u{1F600}\":2,\"\u{80}\":3}").unwrap();
    assert_eq!(v.to_canonical_string(), "{\"\u{80}\":3,\"\u{1F600}\":2,\"\u{FB33}\":1}");
}

#[test]
fn string_escaping() {
    let v = JsonValue::string("\u{8}\u{c}\n\r\t\u{1}\u{1f}\"\\/\u{7f}\u{2028}");
    assert_eq!(v.to_canonical_string(), "\"\\b\\f\\n\\r\\t\\u0001\\u001f\\\"\\\\/\u{7f}\u{2028}\"");
}

#[test]
fn parser_rejections() {
    assert!(matches!(parse_str(r#"{"a":1,"a":2}"#), Err(JsonError::DuplicateKey(_))));
    assert!(matches!(parse_str(r#""\ud800""#), Err(JsonError::UnpairedSurrogate { .. })));
    assert!(matches!(parse_str(r#""\udc00x""#), Err(JsonError::UnpairedSurrogate { .. })));
    assert_eq!(parse_str(r#""😀""#).unwrap(), JsonValue::string("\u{1F600}"));
    for bad in ["", "{", "[1,]", "01", "1.", "\"\u{1}\"", "tru", "[1] 2", "'a'"] {
        assert!(matches!(parse_str(bad), Err(JsonError::MalformedJson { .. })), "{bad:?}");
    }
    assert!(parse(&[b'"', 0xff, b'"']).is_err());
    let deep = "[".repeat(10_000) + &"]".repeat(10_000);
    assert!(parse_str(&deep).is_err());
}

fn json_leaf() -> impl Strategy<Value = JsonValue> {
    prop_oneof![
        Just(JsonValue::Null),
        any::<bool>().prop_map(JsonValue::Bool),
        any::<f64>()
            .prop_filter("finite", |x| x.is_finite())
            .prop_map(|x| JsonValue::number(x).unwrap()),
        any::<u32>().prop_map(JsonValue::from),
        "\\PC{0,12}".prop_map(JsonValue::string),
        "[\u{0}-\u{1f}\"\\\\]{0,4}".prop_map(JsonValue::string),
    ]
}

fn json_value() -> impl Strategy<Value = JsonValue> {
    json_leaf().prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..6).prop_map(JsonValue::Array),
            proptest::collection::btree_map("\\PC{0,8}", inner, 0..6).prop_map(JsonValue::Object),
        ]
    })
}

/// Serialize with members in a caller-chosen order and arbitrary whitespace;
/// strings and numbers reuse canonical text, which is valid JSON.
fn write_shuffled(v: &JsonValue, rng: &mut impl FnMut(usize) -> usize, out: &mut String) {
    match v {
        JsonValue::Array(items) => {
            out.push_str("[ ");
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(" ,\n");
                }
                write_shuffled(item, rng, out);
            }
            out.push(']');
        }
        JsonValue::Object(m) => {
            let mut entries: Vec<_> = m.iter().collect();
            for i in (1..entries.len()).rev() {
                entries.swap(i, rng(i + 1));
            }
            out.push('{');
            for (i, (k, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&JsonValue::string(k.as_str()).to_canonical_string());
                out.push_str(" :\t");
                write_shuffled(item, rng, out);
            }
            out.push_str(" }");
        }
        other => out.push_str(&other.to_canonical_string()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn numbers_match_ecmascript(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        let mut buf = ryu_js::Buffer::new();
        let want = buf.format_finite(x);
        prop_assert_eq!(JsonValue::number(x).unwrap().to_canonical_string(), want);
    }

    #[test]
    fn integers_print_plainly(n in 0u64..(1u64 << 53)) {
        prop_assert_eq!(JsonValue::integer(n).unwrap().to_canonical_string(), n.to_string());
    }

    #[test]
    fn canonical_form_is_a_fixed_point(v in json_value()) {
        let once = canonicalize(&v);
        let back = parse(&once).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(canonicalize(&back), once);
    }

    #[test]
    fn member_order_and_whitespace_do_not_matter(v in json_value(), seed in any::<u64>()) {
        let mut state = seed | 1;
        let mut rng = |n: usize| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % n as u64) as usize
        };
        let mut text = String::new();
        write_shuffled(&v, &mut rng, &mut text);
        prop_assert_eq!(canonicalize(&parse_str(&text).unwrap()), canonicalize(&v));
    }

    #[test]
    fn canonical_members_sorted_by_utf16(m in proptest::collection::btree_map("\\PC{0,6}", any::<u32>(), 0..8)) {
        let mut entries: Vec<(&String, &u32)> = m.iter().collect();
        entries.sort_by_key(|(k, _)| k.encode_utf16().collect::<Vec<u16>>());
        let body: Vec<String> = entries
            .iter()
            .map(|(k, n)| format!("{}:{n}", JsonValue::string(k.as_str()).to_canonical_string()))
            .collect();
        let v = JsonValue::Object(m.iter().map(|(k, n)| (k.clone(), JsonValue::from(*n))).collect::<BTreeMap<_, _>>());
        prop_assert_eq!(v.to_canonical_string(), format!("{{{}}}", body.join(",")));
    }
}
