//! Wire encodings: the `X-HDP-Token` header value, the `X-HDP-Token-Ref`
//! store, and the well-known issuer key document.
//!
//! There is deliberately no function that renders a token into a URL; tokens
//! travel in headers or bodies only.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use thiserror::Error;
use uuid::Uuid;

use crate::crypto::{b64url_decode, b64url_encode, CryptoError, PublicKey, ALG_ED25519};
use crate::json::{self, JsonError, JsonValue};
use crate::token::{validate_structure, SchemaError, StructuralViolation, Token};

pub const HEADER_TOKEN: &str = "X-HDP-Token";
pub const HEADER_TOKEN_REF: &str = "X-HDP-Token-Ref";
pub const WELL_KNOWN_KEYS_PATH: &str = "/.well-known/hdp-keys.json";
pub const MEDIA_TYPE: &str = "application/hdp-token+json";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Base64(#[from] CryptoError),
    #[error(transparent)]
    Json(#[from] JsonError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("token is not structurally valid: {0:?}")]
    StructurallyInvalid(Vec<StructuralViolation>),
    #[error("no stored token with id {0}")]
    Missing(String),
    #[error("token id {0} is already stored with different content")]
    DuplicateTokenIdConflict(String),
    #[error("invalid token reference {0:?}")]
    BadReference(String),
    #[error("duplicate kid {0:?} in key document")]
    DuplicateKid(String),
    #[error("unsupported alg {0:?}")]
    UnsupportedAlg(String),
    #[error("key document: {0}")]
    BadKeyDocument(String),
    #[error("store I/O: {0}")]
    Io(#[from] io::Error),
}

/// `X-HDP-Token` value: base64url of the canonical token JSON.
pub fn encode_header_value(token: &Token) -> String {
    b64url_encode(&token.canonical_bytes())
}

pub fn decode_header_value(value: &str) -> Result<Token, TransportError> {
    let bytes = b64url_decode(value.trim())?;
    let v = json::parse(&bytes)?;
    Ok(Token::from_json(&v)?)
}

/// Server-side storage behind `X-HDP-Token-Ref`.
///
/// In memory, optionally mirrored to a directory of `<token_id>.json` files
/// holding canonical JSON.
#[derive(Debug, Default)]
pub struct TokenRefStore {
    tokens: RwLock<HashMap<String, Token>>,
    dir: Option<PathBuf>,
}

impl TokenRefStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a directory-backed store and load existing tokens.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, TransportError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut tokens = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let token = Token::from_json(&json::parse(&fs::read(&path)?)?)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            if stem != token.header.token_id {
                return Err(TransportError::BadReference(path.display().to_string()));
            }
            tokens.insert(token.header.token_id.clone(), token);
        }
        Ok(TokenRefStore {
            tokens: RwLock::new(tokens),
            dir: Some(dir),
        })
    }

    /// Store a token; idempotent for identical content.
    pub fn put(&self, token: &Token) -> Result<String, TransportError> {
        let violations = validate_structure(token);
        if !violations.is_empty() {
            return Err(TransportError::StructurallyInvalid(violations));
        }
        let id = token.header.token_id.clone();
        let mut tokens = self.tokens.write().expect("store lock poisoned");
        if let Some(existing) = tokens.get(&id) {
            if existing.canonical_bytes() == token.canonical_bytes() {
                return Ok(id);
            }
            return Err(TransportError::DuplicateTokenIdConflict(id));
        }
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!(".{id}.json.tmp"));
            fs::write(&tmp, token.canonical_bytes())?;
            fs::rename(&tmp, dir.join(format!("{id}.json")))?;
        }
        tokens.insert(id.clone(), token.clone());
        Ok(id)
    }

    pub fn get(&self, token_id: &str) -> Result<Token, TransportError> {
        let id = token_id.trim();
        Uuid::try_parse(id).map_err(|_| TransportError::BadReference(id.to_owned()))?;
        self.tokens
            .read()
            .expect("store lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| TransportError::Missing(id.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.tokens.read().expect("store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `{"keys":[{"kid":..,"alg":"Ed25519","public_key":..}]}`
pub fn render_wellknown(keys: &[PublicKey]) -> JsonValue {
    let mut doc = JsonValue::object();
    doc.insert(
        "keys",
        JsonValue::Array(keys.iter().map(PublicKey::to_key_file).collect()),
    );
    doc
}

pub fn parse_wellknown(doc: &JsonValue) -> Result<Vec<PublicKey>, TransportError> {
    let bad = |m: &str| TransportError::BadKeyDocument(m.to_owned());
    let entries = doc
        .get("keys")
        .and_then(JsonValue::as_array)
        .ok_or_else(|| bad("expected an object with a \"keys\" array"))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let field = |name: &str| {
            entry
                .get(name)
                .and_then(JsonValue::as_str)
                .ok_or_else(|| bad(&format!("key entry missing string {name:?}")))
        };
        let kid = field("kid")?;
        let alg = field("alg")?;
        if alg != ALG_ED25519 {
            return Err(TransportError::UnsupportedAlg(alg.to_owned()));
        }
        if !seen.insert(kid.to_owned()) {
            return Err(TransportError::DuplicateKid(kid.to_owned()));
        }
        out.push(PublicKey::from_b64url(kid, field("public_key")?)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::lifecycle::{issue, IssueRequest};
    use crate::token::{Classification, IdType, Principal, Scope};

    fn token(id: &str) -> Token {
        issue(
            &IssueRequest::new(
                Principal::new("u", IdType::Opaque),
                Scope::new("look things up", Classification::Public),
                "s",
            )
            .at(1_750_000_000_000)
            .with_token_id(id),
            &KeyPair::from_seed("k1", [8u8; 32]),
        )
        .unwrap()
    }

    const ID: &str = "aaaaaaaa-bbbb-4ccc-8ddd-eeeeeeeeeeee";

    #[test]
    fn header_round_trip_and_alphabet() {
        let t = token(ID);
        let h = encode_header_value(&t);
        assert!(h
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_'));
        assert_eq!(decode_header_value(&h).unwrap(), t);
        let padded = format!("{h}=");
        assert!(matches!(
            decode_header_value(&padded),
            Err(TransportError::Base64(CryptoError::InvalidBase64Url(_)))
        ));
        assert!(matches!(
            decode_header_value(&b64url_encode(b"{\"a\":")),
            Err(TransportError::Json(_))
        ));
        assert!(matches!(
            decode_header_value(&b64url_encode(b"{}")),
            Err(TransportError::Schema(_))
        ));
    }

    #[test]
    fn store_put_get() {
        let store = TokenRefStore::in_memory();
        let t = token(ID);
        assert_eq!(store.put(&t).unwrap(), ID);
        assert_eq!(store.put(&t).unwrap(), ID);
        assert_eq!(store.get(ID).unwrap(), t);
        assert!(matches!(
            store.get("12345678-1234-4234-8234-123456789012"),
            Err(TransportError::Missing(_))
        ));
        assert!(matches!(store.get("../etc"), Err(TransportError::BadReference(_))));

        let mut forged = token(ID);
        forged.scope.intent = "something else".into();
        assert!(matches!(
            store.put(&forged),
            Err(TransportError::DuplicateTokenIdConflict(_))
        ));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn store_persists_canonical_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = token(ID);
        {
            let store = TokenRefStore::open(dir.path()).unwrap();
            store.put(&t).unwrap();
        }
        let on_disk = fs::read(dir.path().join(format!("{ID}.json"))).unwrap();
        assert_eq!(on_disk, t.canonical_bytes());
        let reopened = TokenRefStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get(ID).unwrap().canonical_bytes(), t.canonical_bytes());
    }

    #[test]
    fn wellknown_document() {
        let k = KeyPair::from_seed("k1", [8u8; 32]).public_key();
        let doc = render_wellknown(&[k.clone()]);
        let text = doc.to_canonical_string();
        assert_eq!(
            text,
            format!(
                r#"{{"keys":[{{"alg":"Ed25519","kid":"k1","public_key":"{}"}}]}}"#,
                k.to_b64url()
            )
        );
        assert_eq!(k.to_b64url().len(), 43);
        assert_eq!(parse_wellknown(&doc).unwrap(), vec![k.clone()]);

        let dup = render_wellknown(&[k.clone(), k.clone()]);
        assert!(matches!(parse_wellknown(&dup), Err(TransportError::DuplicateKid(_))));

        let rs = json::parse_str(&text.replace("Ed25519", "RS256")).unwrap();
        assert!(matches!(parse_wellknown(&rs), Err(TransportError::UnsupportedAlg(_))));

        let short = json::parse_str(&text.replace(&k.to_b64url(), "AAAA")).unwrap();
        assert!(matches!(
            parse_wellknown(&short),
            Err(TransportError::Base64(CryptoError::BadKeyLength(3)))
        ));
    }
}
