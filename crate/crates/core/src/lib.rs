//! Human delegation provenance (HDP) tokens.
//!
//! A token records a human authorization event (principal, scope, session)
//! under an Ed25519 root signature, then accumulates one signed hop per agent
//! that delegates the task onward. Any holder of the issuer's public key can
//! verify the whole record offline with [`verify::verify_token`].
//!
//! ```
//! use hdp_core::crypto::KeyPair;
//! use hdp_core::lifecycle::{extend, issue, HopRequest, IssueRequest};
//! use hdp_core::token::{Classification, IdType, Principal, Scope};
//! use hdp_core::verify::{verify_token, SessionContext};
//!
//! let key = KeyPair::generate("issuer-2026", None).unwrap();
//! let now = 1_750_000_000_000;
//! let token = issue(
//!     &IssueRequest::new(
//!         Principal::new("user-42", IdType::Opaque),
//!         Scope::new("Draft the weekly status email", Classification::Internal),
//!         "session-7",
//!     )
//!     .at(now),
//!     &key,
//! )
//! .unwrap();
//! let token = extend(
//!     &token,
//!     &HopRequest::new("orchestrator", "planner", "split into research and drafting"),
//!     &key,
//!     now + 5,
//! )
//! .unwrap();
//!
//! let ctx = SessionContext::new([key.public_key()], "session-7", now + 10).unwrap();
//! assert!(verify_token(&token, &ctx).passed);
//! ```

#![forbid(unsafe_code)]

pub mod corpus;
pub mod crypto;
pub mod harness;
pub mod json;
pub mod lifecycle;
pub mod token;
pub mod transport;
pub mod verify;

pub use crypto::{KeyPair, PublicKey, Signature64};
pub use json::JsonValue;
pub use lifecycle::{extend, issue, reauthorize, strip_for_audit, HopRequest, IssueRequest};
pub use token::{AuditRecord, Hop, Token};
pub use verify::{verify_lineage, verify_token, SessionContext, VerificationReport};
