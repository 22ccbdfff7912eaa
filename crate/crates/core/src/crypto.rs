//! Ed25519 signing material, signatures, and the unpadded base64url codec.
//!
//! Nothing outside this module touches a curve library directly.

use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use rand::RngCore;
use thiserror::Error;

use crate::json::JsonValue;

pub const ALG_ED25519: &str = "Ed25519";
pub const SEED_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("seed must be {SEED_LEN} bytes, got {0}")]
    BadSeedLength(usize),
    #[error("public key must be {PUBLIC_KEY_LEN} bytes, got {0}")]
    BadKeyLength(usize),
    #[error("signature must be {SIGNATURE_LEN} bytes, got {0}")]
    BadSignatureLength(usize),
    #[error("invalid base64url: {0}")]
    InvalidBase64Url(String),
    #[error("public key is not a valid curve point")]
    InvalidPublicKey,
    #[error("key file: {0}")]
    KeyFile(String),
}

pub fn b64url_encode(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

/// Strict decode: base64url alphabet only, no padding, canonical trailing bits.
pub fn b64url_decode(s: &str) -> Result<Vec<u8>, CryptoError> {
    if s.contains('=') {
        return Err(CryptoError::InvalidBase64Url("padding is not allowed".into()));
    }
    URL_SAFE_NO_PAD
        .decode(s)
        .map_err(|e| CryptoError::InvalidBase64Url(e.to_string()))
}

/// An Ed25519 public key with its key identifier.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    kid: String,
    bytes: [u8; PUBLIC_KEY_LEN],
}

impl PublicKey {
    pub fn from_bytes(kid: impl Into<String>, bytes: &[u8]) -> Result<Self, CryptoError> {
        let bytes: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::BadKeyLength(bytes.len()))?;
        Ok(PublicKey {
            kid: kid.into(),
            bytes,
        })
    }

    pub fn from_b64url(kid: impl Into<String>, encoded: &str) -> Result<Self, CryptoError> {
        Self::from_bytes(kid, &b64url_decode(encoded)?)
    }

    pub fn kid(&self) -> &str {
        &self.kid
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.bytes
    }

    pub fn to_b64url(&self) -> String {
        b64url_encode(&self.bytes)
    }

    /// `true` iff `sig` is a valid signature of `message` under this key.
    ///
    /// Uses strict verification: small-order keys and non-canonical `R`/`S`
    /// encodings are rejected.
    pub fn verify(&self, message: &[u8], sig: &Signature64) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.bytes) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
        vk.verify_strict(message, &sig).is_ok()
    }

    pub fn to_key_file(&self) -> JsonValue {
        let mut doc = JsonValue::object();
        doc.insert("kid", self.kid.as_str().into());
        doc.insert("alg", ALG_ED25519.into());
        doc.insert("public_key", self.to_b64url().into());
        doc
    }

    /// Read a public key file. A secret key file is accepted as well; its
    /// seed is checked against the stated public key and then discarded.
    pub fn from_key_file(doc: &JsonValue) -> Result<Self, CryptoError> {
        if doc.get("seed").is_some() {
            return KeyPair::from_key_file(doc).map(|kp| kp.public_key());
        }
        let fields = KeyFileFields::read(doc, false)?;
        PublicKey::from_b64url(fields.kid, fields.public_key)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey")
            .field("kid", &self.kid)
            .field("key", &self.to_b64url())
            .finish()
    }
}

/// Ed25519 signing key held as its RFC 8032 32-byte seed.
#[derive(Clone)]
pub struct KeyPair {
    kid: String,
    signing: SigningKey,
}

impl KeyPair {
    /// Generate a key pair. With `seed` the result is deterministic.
    pub fn generate(kid: impl Into<String>, seed: Option<&[u8]>) -> Result<Self, CryptoError> {
        let seed: [u8; SEED_LEN] = match seed {
            Some(s) => s.try_into().map_err(|_| CryptoError::BadSeedLength(s.len()))?,
            None => {
                let mut s = [0u8; SEED_LEN];
                OsRng.fill_bytes(&mut s);
                s
            }
        };
        Ok(KeyPair {
            kid: kid.into(),
            signing: SigningKey::from_bytes(&seed),
        })
    }

    pub fn from_seed(kid: impl Into<String>, seed: [u8; SEED_LEN]) -> Self {
        KeyPair {
            kid: kid.into(),
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn kid(&self) -> &str {
        &self.kid
    }

    pub fn seed(&self) -> [u8; SEED_LEN] {
        self.signing.to_bytes()
    }

    pub fn public_key_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey {
            kid: self.kid.clone(),
            bytes: self.public_key_bytes(),
        }
    }

    /// Deterministic RFC 8032 signature.
    pub fn sign(&self, message: &[u8]) -> Signature64 {
        Signature64(self.signing.sign(message).to_bytes())
    }

    pub fn to_key_file(&self) -> JsonValue {
        let mut doc = self.public_key().to_key_file();
        doc.insert("seed", b64url_encode(&self.seed()).into());
        doc
    }

    pub fn from_key_file(doc: &JsonValue) -> Result<Self, CryptoError> {
        let fields = KeyFileFields::read(doc, true)?;
        let seed = b64url_decode(fields.seed.expect("seed required"))?;
        let kp = KeyPair::generate(fields.kid, Some(&seed))?;
        let stated = b64url_decode(fields.public_key)?;
        if stated.len() != PUBLIC_KEY_LEN {
            return Err(CryptoError::BadKeyLength(stated.len()));
        }
        if stated != kp.public_key_bytes() {
            return Err(CryptoError::KeyFile(
                "public_key does not match seed".into(),
            ));
        }
        Ok(kp)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("kid", &self.kid)
            .field("public_key", &b64url_encode(&self.public_key_bytes()))
            .finish_non_exhaustive()
    }
}

struct KeyFileFields<'a> {
    kid: &'a str,
    public_key: &'a str,
    seed: Option<&'a str>,
}

impl<'a> KeyFileFields<'a> {
    fn read(doc: &'a JsonValue, need_seed: bool) -> Result<Self, CryptoError> {
        let map = doc
            .as_object()
            .ok_or_else(|| CryptoError::KeyFile("expected a JSON object".into()))?;
        for key in map.keys() {
            if !matches!(key.as_str(), "kid" | "alg" | "seed" | "public_key") {
                return Err(CryptoError::KeyFile(format!("unknown field {key:?}")));
            }
        }
        let text = |name: &str| {
            map.get(name)
                .and_then(JsonValue::as_str)
                .ok_or_else(|| CryptoError::KeyFile(format!("missing string field {name:?}")))
        };
        let alg = text("alg")?;
        if alg != ALG_ED25519 {
            return Err(CryptoError::KeyFile(format!("unsupported alg {alg:?}")));
        }
        let seed = if need_seed { Some(text("seed")?) } else { None };
        Ok(KeyFileFields {
            kid: text("kid")?,
            public_key: text("public_key")?,
            seed,
        })
    }
}

/// A raw 64-byte Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature64(pub [u8; SIGNATURE_LEN]);

impl Signature64 {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(Signature64)
            .map_err(|_| CryptoError::BadSignatureLength(bytes.len()))
    }

    pub fn from_b64url(encoded: &str) -> Result<Self, CryptoError> {
        Self::from_bytes(&b64url_decode(encoded)?)
    }

    pub fn to_b64url(&self) -> String {
        b64url_encode(&self.0)
    }
}

impl fmt::Debug for Signature64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature64({})", self.to_b64url())
    }
}
