//! Seeded random fixtures: projects, scripts, ledgers and asset pools.
//!
//! Everything here produces values that pass validation, so generated
//! projects can be fed straight to the codec or the platform.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::container::{
    Asset, AssetKind, Block, Project, ProvenanceAction, ProvenanceRecord, Script, Sprite,
};
use crate::{Digest, ProjectId, Timestamp};

const OPS: &[&str] = &[
    "move", "turn", "say", "think", "wait", "repeat", "forever", "ifOnEdgeBounce", "playSound", "changeColor",
];
const HATS: &[&str] = &["whenGreenFlag", "whenKeyPressed", "whenClicked", "whenIReceive"];
const ALPHABET: &[char] = &[
    'a', 'b', 'z', 'A', 'Q', '0', '9', ' ', '"', '\\', '/', '\n', '\t', '\u{1}', '\u{1f}', '\u{7f}', 'é', 'ß', '中',
    '\u{2028}', '🐱',
];

/// A string of up to `max` chars mixing ASCII, escapes and non-BMP text.
pub fn random_text(rng: &mut impl Rng, max: usize) -> String {
    let len = rng.random_range(0..=max);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

pub fn random_username(rng: &mut impl Rng) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_";
    let len = rng.random_range(1..=12);
    (0..len).map(|_| *CHARS.choose(rng).unwrap() as char).collect()
}

fn random_block(rng: &mut impl Rng, depth: usize) -> Block {
    let op = *OPS.choose(rng).unwrap();
    let nargs = rng.random_range(0..3);
    let args: Vec<String> = (0..nargs).map(|_| random_text(rng, 6)).collect();
    let block = Block::new(op, args);
    if depth > 0 && rng.random_bool(0.2) {
        block.with_body(random_body(rng, depth - 1))
    } else {
        block
    }
}

fn random_body(rng: &mut impl Rng, depth: usize) -> Script {
    let n = rng.random_range(1..4);
    Script::new((0..n).map(|_| random_block(rng, depth)).collect())
}

/// A non-empty script: a hat block whose body nests up to `depth` levels.
pub fn random_script(rng: &mut impl Rng, depth: usize) -> Script {
    let hat = Block::new(*HATS.choose(rng).unwrap(), [random_text(rng, 4)]);
    let mut blocks = vec![hat.with_body(random_body(rng, depth))];
    if rng.random_bool(0.2) {
        blocks.push(random_block(rng, depth));
    }
    Script::new(blocks)
}

/// Fixed sets of assets that projects draw from, so that content repeats.
#[derive(Debug, Clone)]
pub struct AssetPool {
    pub images: Vec<Asset>,
    pub sounds: Vec<Asset>,
    pub texts: Vec<Asset>,
}

impl AssetPool {
    /// `size` assets split across the three kinds, all with distinct bytes.
    pub fn new(rng: &mut impl Rng, size: usize) -> Self {
        let mut pool = AssetPool {
            images: Vec::new(),
            sounds: Vec::new(),
            texts: Vec::new(),
        };
        for i in 0..size {
            let mut data = format!("asset-{i}-").into_bytes();
            let extra = rng.random_range(1..16);
            data.extend((0..extra).map(|_| rng.random::<u8>()));
            match i % 3 {
                0 => pool.images.push(Asset::new(AssetKind::Image, "image/png", data)),
                1 => pool.sounds.push(Asset::new(AssetKind::Audio, "audio/wav", data)),
                _ => pool.texts.push(Asset::new(AssetKind::Text, "text/plain", data)),
            }
        }
        pool
    }

    pub fn len(&self) -> usize {
        self.images.len() + self.sounds.len() + self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn pick_refs(rng: &mut impl Rng, project: &mut Project, from: &[Asset], max: usize) -> Vec<Digest> {
    if from.is_empty() {
        return Vec::new();
    }
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|_| project.add_asset(from.choose(rng).unwrap().clone()))
        .collect()
}

fn fill_sprite(rng: &mut impl Rng, project: &mut Project, mut sprite: Sprite, pool: &AssetPool) -> Sprite {
    sprite.costumes = pick_refs(rng, project, &pool.images, 3);
    sprite.sounds = pick_refs(rng, project, &pool.sounds, 2);
    let nscripts = rng.random_range(0..3);
    sprite.scripts = (0..nscripts).map(|_| random_script(rng, 2)).collect();
    sprite
}

/// A valid project drawing its assets from `pool`, with an empty ledger.
pub fn random_project_from_pool(rng: &mut impl Rng, pool: &AssetPool) -> Project {
    let mut project = Project::new(random_text(rng, 12), random_username(rng));
    let stage = std::mem::replace(&mut project.stage, Sprite::stage());
    project.stage = fill_sprite(rng, &mut project, stage, pool);
    let nsprites = rng.random_range(0..4);
    for i in 0..nsprites {
        let name = format!("sprite{i}{}", random_text(rng, 3));
        let sprite = fill_sprite(rng, &mut project, Sprite::new(name), pool);
        project.sprites.push(sprite);
    }
    pick_refs(rng, &mut project, &pool.texts, 1);
    project
}

/// A valid project with its own fresh assets and a short random ledger.
pub fn random_project(rng: &mut impl Rng) -> Project {
    let pool = AssetPool::new(rng, 6);
    let mut project = random_project_from_pool(rng, &pool);
    let n = rng.random_range(0..4);
    let start = Timestamp::from_unix_millis(1_600_000_000_000 + rng.random_range(0..1_000_000_000));
    extend_ledger(rng, &mut project, n, start);
    project
}

/// Appends `n` well-formed ledger records starting no earlier than `start`.
pub fn extend_ledger(rng: &mut impl Rng, project: &mut Project, n: usize, start: Timestamp) {
    let mut at = project.last_timestamp().map_or(start, |last| last.max(start));
    for _ in 0..n {
        let action = if project.provenance.is_empty() {
            ProvenanceAction::Created
        } else {
            *[ProvenanceAction::Downloaded, ProvenanceAction::Uploaded, ProvenanceAction::Derived]
                .choose(rng)
                .unwrap()
        };
        let project_ref: Option<ProjectId> = action.requires_project_ref().then(|| rng.random_range(1..500));
        let record = ProvenanceRecord {
            action,
            actor: random_username(rng),
            project_ref,
            seq: project.next_seq(),
            server: "sample.invalid".into(),
            timestamp: at,
        };
        project.append_provenance(record).expect("generated record continues the ledger");
        at = at.plus_millis(rng.random_range(0..86_400_000));
    }
}
