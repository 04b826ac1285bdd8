use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use super::{AssetKind, Project, Script, Sprite, FORMAT_VERSION, STAGE_NAME};
use crate::{is_valid_username, Digest};

/// One broken invariant, located by a JSON-style field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub rule: Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rule {
    VersionUnsupported,
    InvalidUsername,
    StageName,
    EmptySpriteName,
    DuplicateSpriteName,
    DanglingAssetRef,
    AssetKindMismatch,
    EmptyScript,
    EmptyBody,
    EmptyOp,
    AssetIdMismatch,
    AssetKeyMismatch,
    EmptyAssetData,
    InvalidMediaType,
    MediaTypeMismatch,
    UnreferencedAsset,
    SeqNotIncreasing,
    TimestampRegression,
    MissingProjectRef,
    EmptyServer,
}

impl Rule {
    /// Rules about bytes and references, as opposed to document shape.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            Rule::DanglingAssetRef | Rule::AssetIdMismatch | Rule::AssetKeyMismatch
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}", self.path, self.rule)
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, path: impl Into<String>, rule: Rule) {
        self.0.push(Violation {
            path: path.into(),
            rule,
        });
    }
}

/// Checks every structural invariant. An empty result means the project
/// is valid and can be serialized.
pub fn validate(project: &Project) -> Vec<Violation> {
    let mut out = Collector(Vec::new());

    if project.format_version != FORMAT_VERSION {
        out.push("format_version", Rule::VersionUnsupported);
    }
    if !is_valid_username(&project.author) {
        out.push("author", Rule::InvalidUsername);
    }

    if project.stage.name != STAGE_NAME {
        out.push("stage.name", Rule::StageName);
    }
    check_sprite(project, &project.stage, "stage", &mut out);

    let mut names = HashSet::new();
    for (i, sprite) in project.sprites.iter().enumerate() {
        let path = format!("sprites[{i}]");
        if sprite.name.is_empty() {
            out.push(format!("{path}.name"), Rule::EmptySpriteName);
        } else if !names.insert(sprite.name.as_str()) {
            out.push(format!("{path}.name"), Rule::DuplicateSpriteName);
        }
        check_sprite(project, sprite, &path, &mut out);
    }

    let referenced: BTreeSet<&Digest> = project
        .all_sprites()
        .flat_map(|s| s.costumes.iter().chain(s.sounds.iter()))
        .collect();
    for (key, asset) in &project.assets {
        let path = format!("assets[{key}]");
        if *key != asset.id {
            out.push(format!("{path}.id"), Rule::AssetKeyMismatch);
        }
        if asset.data.is_empty() {
            out.push(format!("{path}.data"), Rule::EmptyAssetData);
        } else if Digest::of(&asset.data) != asset.id {
            out.push(format!("{path}.id"), Rule::AssetIdMismatch);
        }
        match media_type_top_level(&asset.media_type) {
            None => out.push(format!("{path}.media_type"), Rule::InvalidMediaType),
            Some(top) if top != asset.kind.as_str() => {
                out.push(format!("{path}.media_type"), Rule::MediaTypeMismatch)
            }
            Some(_) => {}
        }
        if asset.kind != AssetKind::Text && !referenced.contains(key) {
            out.push(path, Rule::UnreferencedAsset);
        }
    }

    let mut prev: Option<&super::ProvenanceRecord> = None;
    for (i, record) in project.provenance.iter().enumerate() {
        let path = format!("provenance[{i}]");
        if let Some(prev) = prev {
            if record.seq <= prev.seq {
                out.push(format!("{path}.seq"), Rule::SeqNotIncreasing);
            }
            if record.timestamp < prev.timestamp {
                out.push(format!("{path}.timestamp"), Rule::TimestampRegression);
            }
        }
        if record.action.requires_project_ref() && record.project_ref.is_none() {
            out.push(format!("{path}.project_ref"), Rule::MissingProjectRef);
        }
        if !is_valid_username(&record.actor) {
            out.push(format!("{path}.actor"), Rule::InvalidUsername);
        }
        if record.server.is_empty() {
            out.push(format!("{path}.server"), Rule::EmptyServer);
        }
        prev = Some(record);
    }

    out.0
}

fn check_sprite(project: &Project, sprite: &Sprite, path: &str, out: &mut Collector) {
    let refs = [
        ("costumes", &sprite.costumes, AssetKind::Image),
        ("sounds", &sprite.sounds, AssetKind::Audio),
    ];
    for (field, ids, kind) in refs {
        for (j, id) in ids.iter().enumerate() {
            match project.assets.get(id) {
                None => out.push(format!("{path}.{field}[{j}]"), Rule::DanglingAssetRef),
                Some(asset) if asset.kind != kind => {
                    out.push(format!("{path}.{field}[{j}]"), Rule::AssetKindMismatch)
                }
                Some(_) => {}
            }
        }
    }
    for (j, script) in sprite.scripts.iter().enumerate() {
        let spath = format!("{path}.scripts[{j}]");
        if script.is_empty() {
            out.push(spath, Rule::EmptyScript);
        } else {
            check_blocks(script, &spath, out);
        }
    }
}

fn check_blocks(script: &Script, path: &str, out: &mut Collector) {
    for (k, block) in script.blocks.iter().enumerate() {
        let bpath = format!("{path}[{k}]");
        if block.op.is_empty() {
            out.push(format!("{bpath}.op"), Rule::EmptyOp);
        }
        if let Some(body) = &block.body {
            if body.is_empty() {
                out.push(format!("{bpath}.body"), Rule::EmptyBody);
            } else {
                check_blocks(body, &format!("{bpath}.body"), out);
            }
        }
    }
}

/// `image/png` -> `image`. None unless the value looks like `type/subtype`.
fn media_type_top_level(media_type: &str) -> Option<&str> {
    let (top, sub) = media_type.split_once('/')?;
    let token = |s: &str| {
        !s.is_empty()
            && s.bytes()
                .all(|b| b.is_ascii_alphanumeric() || b"!#$&-^_.+".contains(&b))
    };
    (token(top) && token(sub)).then_some(top)
}
