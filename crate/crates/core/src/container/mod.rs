//! The programmable-media project container.
//!
//! A project couples non-programmable media (images, audio, text) with the
//! behavior scripts that drive them, plus a provenance ledger recording
//! where the file has been. On disk it is a single canonical JSON document
//! (extension `.pmp`):
//!
//! ```text
//! {"assets":[{"data":<base64>,"id":<sha256 hex>,"kind":"image"|"audio"|"text","media_type":<str>}...],
//!  "author":<str>,"format_version":1,
//!  "provenance":[{"action":<str>,"actor":<str>,"project_ref":<int|null>,"seq":<int>,"server":<str>,"timestamp":<rfc3339 Z>}...],
//!  "sprites":[<sprite>...],"stage":<sprite>,"title":<str>}
//! ```
//!
//! A sprite is `{"costumes":[<id>...],"name":<str>,"scripts":[[<block>...]...],"sounds":[<id>...]}`
//! and a block is `{"args":[<str>...],"body":[<block>...],"op":<str>}` with
//! `body` omitted when absent. Assets are listed in ascending id order.
//!
//! The *content core* (`assets`, `format_version`, `sprites`, `stage`) is
//! what [`content_hash`] covers; title, author and ledger are excluded so
//! cosmetic edits and ledger growth never change a project's identity.

mod codec;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Serialize, Serializer};

use crate::{canonical, Digest, ProjectId, Timestamp};

pub use codec::{parse_project, serialize_project};
pub use validate::{validate, Rule, Violation};

pub const FORMAT_VERSION: u32 = 1;
pub const STAGE_NAME: &str = "stage";
pub const FILE_EXTENSION: &str = "pmp";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContainerError {
    #[error("malformed syntax: {0}")]
    MalformedSyntax(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("integrity error at {path}: {message}")]
    IntegrityError { path: String, message: String },
    #[error("unsupported format_version {0}")]
    VersionUnsupported(String),
    #[error("project failed validation: {}", summarize(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("script has no blocks")]
    EmptyScript,
    #[error("provenance seq gap: expected {expected}, got {found}")]
    SeqGap { expected: u64, found: u64 },
    #[error("provenance timestamp {found} precedes last recorded {last}")]
    TimestampRegression { last: Timestamp, found: Timestamp },
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl ContainerError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ContainerError::MalformedSyntax(_) => "MalformedSyntax",
            ContainerError::SchemaViolation { .. } => "SchemaViolation",
            ContainerError::IntegrityError { .. } => "IntegrityError",
            ContainerError::VersionUnsupported(_) => "VersionUnsupported",
            ContainerError::ValidationFailed(_) => "ValidationFailed",
            ContainerError::EmptyScript => "EmptyScript",
            ContainerError::SeqGap { .. } => "SeqGap",
            ContainerError::TimestampRegression { .. } => "TimestampRegression",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetKind {
    Image,
    Audio,
    Text,
}

impl AssetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AssetKind::Image => "image",
            AssetKind::Audio => "audio",
            AssetKind::Text => "text",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "image" => Some(AssetKind::Image),
            "audio" => Some(AssetKind::Audio),
            "text" => Some(AssetKind::Text),
            _ => None,
        }
    }
}

/// A piece of non-programmable media, identified by the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Asset {
    #[serde(serialize_with = "serialize_base64")]
    pub data: Vec<u8>,
    pub id: Digest,
    pub kind: AssetKind,
    pub media_type: String,
}

impl Asset {
    pub fn new(kind: AssetKind, media_type: impl Into<String>, data: Vec<u8>) -> Self {
        Asset {
            id: Digest::of(&data),
            kind,
            media_type: media_type.into(),
            data,
        }
    }
}

fn serialize_base64<S: Serializer>(data: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
    use base64::Engine as _;
    serializer.serialize_str(&base64::engine::general_purpose::STANDARD.encode(data))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    /// Scalars only; numbers keep the text the author typed.
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body: Option<Script>,
    pub op: String,
}

impl Block {
    pub fn new<I, S>(op: impl Into<String>, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Block {
            op: op.into(),
            args: args.into_iter().map(Into::into).collect(),
            body: None,
        }
    }

    pub fn with_body(mut self, body: Script) -> Self {
        self.body = Some(body);
        self
    }
}

/// An ordered block sequence. Serialized as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Script {
    pub blocks: Vec<Block>,
}

impl Script {
    pub fn new(blocks: Vec<Block>) -> Self {
        Script { blocks }
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sprite {
    pub costumes: Vec<Digest>,
    pub name: String,
    pub scripts: Vec<Script>,
    pub sounds: Vec<Digest>,
}

impl Sprite {
    pub fn new(name: impl Into<String>) -> Self {
        Sprite {
            name: name.into(),
            costumes: Vec::new(),
            sounds: Vec::new(),
            scripts: Vec::new(),
        }
    }

    pub fn stage() -> Self {
        Sprite::new(STAGE_NAME)
    }

    fn asset_refs(&self) -> impl Iterator<Item = &Digest> {
        self.costumes.iter().chain(self.sounds.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProvenanceAction {
    Created,
    Downloaded,
    Uploaded,
    Derived,
}

impl ProvenanceAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProvenanceAction::Created => "created",
            ProvenanceAction::Downloaded => "downloaded",
            ProvenanceAction::Uploaded => "uploaded",
            ProvenanceAction::Derived => "derived",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "created" => Some(ProvenanceAction::Created),
            "downloaded" => Some(ProvenanceAction::Downloaded),
            "uploaded" => Some(ProvenanceAction::Uploaded),
            "derived" => Some(ProvenanceAction::Derived),
            _ => None,
        }
    }

    /// Every action except `created` must name the server project involved.
    pub fn requires_project_ref(&self) -> bool {
        !matches!(self, ProvenanceAction::Created)
    }
}

impl fmt::Display for ProvenanceAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProvenanceRecord {
    pub action: ProvenanceAction,
    pub actor: String,
    pub project_ref: Option<ProjectId>,
    pub seq: u64,
    pub server: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Project {
    #[serde(serialize_with = "serialize_asset_table")]
    pub assets: BTreeMap<Digest, Asset>,
    pub author: String,
    pub format_version: u32,
    pub provenance: Vec<ProvenanceRecord>,
    pub sprites: Vec<Sprite>,
    pub stage: Sprite,
    pub title: String,
}

fn serialize_asset_table<S: Serializer>(
    assets: &BTreeMap<Digest, Asset>,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    serializer.collect_seq(assets.values())
}

/// The hash-relevant part of a project.
#[derive(Serialize)]
struct ContentCore<'a> {
    #[serde(serialize_with = "serialize_asset_table")]
    assets: &'a BTreeMap<Digest, Asset>,
    format_version: u32,
    sprites: &'a [Sprite],
    stage: &'a Sprite,
}

impl Project {
    pub fn new(title: impl Into<String>, author: impl Into<String>) -> Self {
        Project {
            format_version: FORMAT_VERSION,
            title: title.into(),
            author: author.into(),
            stage: Sprite::stage(),
            sprites: Vec::new(),
            assets: BTreeMap::new(),
            provenance: Vec::new(),
        }
    }

    /// Adds an asset to the table and returns its id.
    pub fn add_asset(&mut self, asset: Asset) -> Digest {
        let id = asset.id;
        self.assets.insert(id, asset);
        id
    }

    pub fn sprite(&self, name: &str) -> Option<&Sprite> {
        self.sprites.iter().find(|s| s.name == name)
    }

    /// Stage first, then sprites in order.
    pub fn all_sprites(&self) -> impl Iterator<Item = &Sprite> {
        std::iter::once(&self.stage).chain(self.sprites.iter())
    }

    pub fn next_seq(&self) -> u64 {
        self.provenance.last().map_or(0, |r| r.seq + 1)
    }

    pub fn last_timestamp(&self) -> Option<Timestamp> {
        self.provenance.last().map(|r| r.timestamp)
    }

    /// Extends the ledger. The record must continue the sequence exactly and
    /// must not go back in time; the content core is untouched.
    pub fn append_provenance(&mut self, record: ProvenanceRecord) -> Result<(), ContainerError> {
        let expected = self.next_seq();
        if record.seq != expected {
            return Err(ContainerError::SeqGap {
                expected,
                found: record.seq,
            });
        }
        if let Some(last) = self.last_timestamp() {
            if record.timestamp < last {
                return Err(ContainerError::TimestampRegression {
                    last,
                    found: record.timestamp,
                });
            }
        }
        self.provenance.push(record);
        Ok(())
    }

    /// Brings a project to its validated shape: drops empty scripts, turns
    /// empty block bodies into absent ones and prunes image/audio assets no
    /// sprite references. Text assets are project-level and always kept.
    pub fn normalize(&mut self) {
        for sprite in std::iter::once(&mut self.stage).chain(self.sprites.iter_mut()) {
            sprite.scripts.retain(|s| !s.is_empty());
            for script in &mut sprite.scripts {
                normalize_script(script);
            }
        }
        let referenced: BTreeSet<Digest> = self
            .all_sprites()
            .flat_map(|s| s.asset_refs().copied())
            .collect();
        self.assets
            .retain(|id, asset| asset.kind == AssetKind::Text || referenced.contains(id));
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }
}

fn normalize_script(script: &mut Script) {
    for block in &mut script.blocks {
        if let Some(body) = &mut block.body {
            normalize_script(body);
            if body.is_empty() {
                block.body = None;
            }
        }
    }
}

fn ensure_valid(project: &Project) -> Result<(), ContainerError> {
    let violations = validate(project);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ContainerError::ValidationFailed(violations))
    }
}

/// SHA-256 of the canonical serialization of the content core.
pub fn content_hash(project: &Project) -> Result<Digest, ContainerError> {
    ensure_valid(project)?;
    Ok(content_hash_unchecked(project))
}

pub(crate) fn content_hash_unchecked(project: &Project) -> Digest {
    let core = ContentCore {
        assets: &project.assets,
        format_version: project.format_version,
        sprites: &project.sprites,
        stage: &project.stage,
    };
    Digest::of(&canonical::to_vec(&core).expect("content core serializes"))
}

/// SHA-256 of the canonical serialization of the script's block list.
pub fn script_hash(script: &Script) -> Result<Digest, ContainerError> {
    if script.is_empty() {
        return Err(ContainerError::EmptyScript);
    }
    Ok(Digest::of(&canonical::to_vec(script).expect("script serializes")))
}

/// Every reusable component of a project: all asset ids plus the hash of
/// every non-empty script on the stage and on each sprite.
pub fn component_set(project: &Project) -> BTreeSet<Digest> {
    let mut set: BTreeSet<Digest> = project.assets.keys().copied().collect();
    set.extend(
        project
            .all_sprites()
            .flat_map(|s| s.scripts.iter())
            .filter_map(|s| script_hash(s).ok()),
    );
    set
}
