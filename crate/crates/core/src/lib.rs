//! Core of the remixhub platform.
//!
//! A project is a self-describing container of media assets and behavior
//! scripts that carries its own provenance ledger. The platform stores
//! projects content-addressed, tracks who remixed whom as a lineage DAG,
//! hosts social metadata and classifies members by how they participate.
//!
//! Module map:
//!
//! - [`container`]: the `.pmp` project format (parse, validate, canonical
//!   serialization, content and script hashing, provenance ledger).
//! - [`repository`]: deduplicating blob store and the project registry.
//! - [`lineage`]: declared and detected remix edges, ancestry queries.
//! - [`community`]: users, friendships, tags, comments, ratings, galleries,
//!   project summaries and front-page rankings.
//! - [`participation`]: the append-only event log and the four-state
//!   participation classifier.
//! - [`platform`]: the single-writer commit point tying the above together,
//!   with journal-backed persistence.
//! - [`sample`]: seeded random projects and asset pools for tests.

pub mod canonical;
pub mod community;
pub mod container;
mod digest;
pub mod journal;
pub mod lineage;
pub mod participation;
pub mod platform;
pub mod repository;
pub mod sample;
mod timestamp;

pub use digest::{Digest, DigestParseError};
pub use timestamp::Timestamp;

/// Server-assigned project identifier; the first registration gets 1.
pub type ProjectId = u64;

/// Usernames are 1–32 characters drawn from `[a-z0-9_]`.
pub fn is_valid_username(name: &str) -> bool {
    (1..=32).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}
