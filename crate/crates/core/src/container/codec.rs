use std::collections::BTreeMap;
use std::fmt;

use base64::Engine as _;
use serde::de::{self, Deserialize, Deserializer, MapAccess, SeqAccess, Visitor};
use serde_json::{Map, Number, Value};

use super::{
    ensure_valid, validate, Asset, AssetKind, Block, ContainerError, Project, ProvenanceAction,
    ProvenanceRecord, Script, Sprite, FORMAT_VERSION,
};
use crate::{canonical, Digest, Timestamp};

type Result<T> = std::result::Result<T, ContainerError>;

const TOP_LEVEL_KEYS: [&str; 7] = [
    "assets",
    "author",
    "format_version",
    "provenance",
    "sprites",
    "stage",
    "title",
];

/// Parses `.pmp` bytes into a normalized, fully validated project.
pub fn parse_project(bytes: &[u8]) -> Result<Project> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ContainerError::MalformedSyntax(format!("not UTF-8: {e}")))?;
    let StrictValue(doc) = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => schema("$", e.to_string()),
        _ => ContainerError::MalformedSyntax(e.to_string()),
    })?;

    let root = doc
        .as_object()
        .ok_or_else(|| schema("$", "top level must be an object"))?;
    check_version(root)?;
    let root = object(&doc, "$", &TOP_LEVEL_KEYS, &[])?;

    let assets = decode_assets(&root["assets"])?;
    let sprites = array(&root["sprites"], "sprites")?
        .iter()
        .enumerate()
        .map(|(i, v)| decode_sprite(v, &format!("sprites[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let provenance = array(&root["provenance"], "provenance")?
        .iter()
        .enumerate()
        .map(|(i, v)| decode_record(v, &format!("provenance[{i}]")))
        .collect::<Result<Vec<_>>>()?;

    let mut project = Project {
        format_version: FORMAT_VERSION,
        title: string(&root["title"], "title")?,
        author: string(&root["author"], "author")?,
        stage: decode_sprite(&root["stage"], "stage")?,
        sprites,
        assets,
        provenance,
    };
    project.normalize();

    let violations = validate(&project);
    match violations.iter().find(|v| v.rule.is_integrity()).or(violations.first()) {
        None => Ok(project),
        Some(first) if first.rule.is_integrity() => Err(ContainerError::IntegrityError {
            path: first.path.clone(),
            message: format!("{:?}", first.rule),
        }),
        Some(first) => Err(schema(&first.path, format!("{:?}", first.rule))),
    }
}

/// Emits the canonical byte form. Equal projects give identical bytes.
pub fn serialize_project(project: &Project) -> Result<Vec<u8>> {
    ensure_valid(project)?;
    Ok(canonical::to_vec(project).expect("project serializes"))
}

fn check_version(root: &Map<String, Value>) -> Result<()> {
    match root.get("format_version") {
        None => Err(schema("format_version", "missing field")),
        Some(Value::Number(n)) if n.as_u64() == Some(u64::from(FORMAT_VERSION)) => Ok(()),
        Some(Value::Number(n)) if n.is_i64() || n.is_u64() => {
            Err(ContainerError::VersionUnsupported(n.to_string()))
        }
        Some(_) => Err(schema("format_version", "expected an integer")),
    }
}

fn decode_assets(value: &Value) -> Result<BTreeMap<Digest, Asset>> {
    let mut table = BTreeMap::new();
    for (i, entry) in array(value, "assets")?.iter().enumerate() {
        let path = format!("assets[{i}]");
        let obj = object(entry, &path, &["data", "id", "kind", "media_type"], &[])?;
        let id = digest(&obj["id"], &format!("{path}.id"))?;
        let kind_name = string(&obj["kind"], &format!("{path}.kind"))?;
        let kind = AssetKind::from_name(&kind_name)
            .ok_or_else(|| schema(&format!("{path}.kind"), format!("unknown kind {kind_name:?}")))?;
        let media_type = string(&obj["media_type"], &format!("{path}.media_type"))?;
        let encoded = string(&obj["data"], &format!("{path}.data"))?;
        let data = base64::engine::general_purpose::STANDARD
            .decode(encoded.as_bytes())
            .map_err(|e| ContainerError::IntegrityError {
                path: format!("{path}.data"),
                message: format!("invalid base64: {e}"),
            })?;
        if Digest::of(&data) != id {
            return Err(ContainerError::IntegrityError {
                path: format!("{path}.id"),
                message: "id is not the SHA-256 of data".into(),
            });
        }
        let asset = Asset {
            id,
            kind,
            media_type,
            data,
        };
        if table.insert(id, asset).is_some() {
            return Err(schema(&format!("{path}.id"), "duplicate asset id"));
        }
    }
    Ok(table)
}

fn decode_sprite(value: &Value, path: &str) -> Result<Sprite> {
    let obj = object(value, path, &["costumes", "name", "scripts", "sounds"], &[])?;
    let ids = |field: &str| -> Result<Vec<Digest>> {
        array(&obj[field], &format!("{path}.{field}"))?
            .iter()
            .enumerate()
            .map(|(j, v)| digest(v, &format!("{path}.{field}[{j}]")))
            .collect()
    };
    Ok(Sprite {
        name: string(&obj["name"], &format!("{path}.name"))?,
        costumes: ids("costumes")?,
        sounds: ids("sounds")?,
        scripts: array(&obj["scripts"], &format!("{path}.scripts"))?
            .iter()
            .enumerate()
            .map(|(j, v)| decode_script(v, &format!("{path}.scripts[{j}]")))
            .collect::<Result<_>>()?,
    })
}

fn decode_script(value: &Value, path: &str) -> Result<Script> {
    let blocks = array(value, path)?
        .iter()
        .enumerate()
        .map(|(k, v)| decode_block(v, &format!("{path}[{k}]")))
        .collect::<Result<_>>()?;
    Ok(Script { blocks })
}

fn decode_block(value: &Value, path: &str) -> Result<Block> {
    let obj = object(value, path, &["args", "op"], &["body"])?;
    let args = array(&obj["args"], &format!("{path}.args"))?
        .iter()
        .enumerate()
        .map(|(a, v)| match v {
            Value::String(s) => Ok(s.clone()),
            _ => Err(schema(
                &format!("{path}.args[{a}]"),
                "arguments are strings; numbers are written as decimal text",
            )),
        })
        .collect::<Result<_>>()?;
    let body = match obj.get("body") {
        None => None,
        Some(v) => Some(decode_script(v, &format!("{path}.body"))?),
    };
    Ok(Block {
        op: string(&obj["op"], &format!("{path}.op"))?,
        args,
        body,
    })
}

fn decode_record(value: &Value, path: &str) -> Result<ProvenanceRecord> {
    let obj = object(
        value,
        path,
        &["action", "actor", "project_ref", "seq", "server", "timestamp"],
        &[],
    )?;
    let action_name = string(&obj["action"], &format!("{path}.action"))?;
    let action = ProvenanceAction::from_name(&action_name).ok_or_else(|| {
        schema(&format!("{path}.action"), format!("unknown action {action_name:?}"))
    })?;
    let project_ref = match &obj["project_ref"] {
        Value::Null => None,
        v => Some(uint(v, &format!("{path}.project_ref"))?),
    };
    let ts_path = format!("{path}.timestamp");
    let timestamp: Timestamp = string(&obj["timestamp"], &ts_path)?
        .parse()
        .map_err(|e| schema(&ts_path, format!("{e}")))?;
    Ok(ProvenanceRecord {
        seq: uint(&obj["seq"], &format!("{path}.seq"))?,
        action,
        actor: string(&obj["actor"], &format!("{path}.actor"))?,
        project_ref,
        timestamp,
        server: string(&obj["server"], &format!("{path}.server"))?,
    })
}

fn schema(path: &str, message: impl Into<String>) -> ContainerError {
    ContainerError::SchemaViolation {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Requires an object whose keys are exactly `required` plus any subset of
/// `optional`.
fn object<'a>(
    value: &'a Value,
    path: &str,
    required: &[&str],
    optional: &[&str],
) -> Result<&'a Map<String, Value>> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema(path, "expected an object"))?;
    if let Some(missing) = required.iter().find(|k| !obj.contains_key(**k)) {
        return Err(schema(&format!("{path}.{missing}"), "missing field"));
    }
    if let Some(extra) = obj
        .keys()
        .find(|k| !required.contains(&k.as_str()) && !optional.contains(&k.as_str()))
    {
        return Err(schema(&format!("{path}.{extra}"), "unknown field"));
    }
    Ok(obj)
}

fn array<'a>(value: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    value
        .as_array()
        .ok_or_else(|| schema(path, "expected an array"))
}

fn string(value: &Value, path: &str) -> Result<String> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| schema(path, "expected a string"))
}

fn uint(value: &Value, path: &str) -> Result<u64> {
    value
        .as_u64()
        .ok_or_else(|| schema(path, "expected a non-negative integer"))
}

fn digest(value: &Value, path: &str) -> Result<Digest> {
    let s = value
        .as_str()
        .ok_or_else(|| schema(path, "expected a digest string"))?;
    s.parse().map_err(|e| schema(path, format!("{e}")))
}

/// A `serde_json::Value` that refuses duplicate object keys instead of
/// silently keeping the last one.
struct StrictValue(Value);

impl<'de> Deserialize<'de> for StrictValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        deserializer.deserialize_any(StrictVisitor).map(StrictValue)
    }
}

struct StrictVisitor;

impl<'de> Visitor<'de> for StrictVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("any JSON value")
    }

    fn visit_bool<E>(self, v: bool) -> std::result::Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> std::result::Result<Value, E> {
        Ok(Value::Number(v.into()))
    }

    fn visit_u64<E>(self, v: u64) -> std::result::Result<Value, E> {
        Ok(Value::Number(v.into()))
    }

    fn visit_f64<E>(self, v: f64) -> std::result::Result<Value, E> {
        Ok(Number::from_f64(v).map_or(Value::Null, Value::Number))
    }

    fn visit_str<E>(self, v: &str) -> std::result::Result<Value, E> {
        Ok(Value::String(v.to_string()))
    }

    fn visit_string<E>(self, v: String) -> std::result::Result<Value, E> {
        Ok(Value::String(v))
    }

    fn visit_unit<E>(self) -> std::result::Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_none<E>(self) -> std::result::Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Value, A::Error> {
        let mut items = Vec::new();
        while let Some(StrictValue(v)) = seq.next_element()? {
            items.push(v);
        }
        Ok(Value::Array(items))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Value, A::Error> {
        let mut out = Map::new();
        while let Some(key) = map.next_key::<String>()? {
            if out.contains_key(&key) {
                return Err(de::Error::custom(format!("duplicate key {key:?}")));
            }
            let StrictValue(v) = map.next_value()?;
            out.insert(key, v);
        }
        Ok(Value::Object(out))
    }
}
