//! The remix lineage graph.
//!
//! Two kinds of edge point from a child project to a parent it appropriated
//! from: *declared* edges come from the `downloaded` records in the child's
//! provenance ledger, *detected* edges from component containment (the
//! share of the child's assets and scripts also present in the parent).
//! Every edge points from a later upload to a strictly earlier one, so the
//! graph is acyclic by construction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::container::{Project, ProvenanceAction};
use crate::repository::Repository;
use crate::{Digest, ProjectId, Timestamp};

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LineageError {
    #[error("a project cannot be its own parent ({0})")]
    SelfEdge(ProjectId),
    #[error("parent {parent} was not uploaded before child {child}")]
    TemporalViolation { child: ProjectId, parent: ProjectId },
    #[error("project {0} not found")]
    NotFound(ProjectId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Declared,
    Detected,
}

/// Directional containment `shared / total`, kept as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Overlap {
    pub shared: u32,
    pub total: u32,
}

impl Overlap {
    pub const NONE: Overlap = Overlap { shared: 0, total: 0 };

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            f64::from(self.shared) / f64::from(self.total)
        }
    }
}

impl Ord for Overlap {
    fn cmp(&self, other: &Self) -> Ordering {
        // a/b vs c/d as a*d vs c*b; an empty ratio counts as 0.
        let lhs = u64::from(self.shared) * u64::from(other.total.max(1));
        let rhs = u64::from(other.shared) * u64::from(self.total.max(1));
        lhs.cmp(&rhs)
    }
}

impl PartialOrd for Overlap {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Overlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.shared, self.total)
    }
}

/// Serialized as its fraction so API consumers see a plain number.
pub fn serialize_fraction<S: Serializer>(overlap: &Overlap, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(overlap.fraction())
}

fn serialize_opt_fraction<S: Serializer>(overlap: &Option<Overlap>, s: S) -> Result<S::Ok, S::Error> {
    match overlap {
        Some(o) => s.serialize_f64(o.fraction()),
        None => s.serialize_none(),
    }
}

/// How much of `child` also appears in `parent`: |child ∩ parent| / |child|,
/// zero when the child has no components.
pub fn overlap(child: &BTreeSet<Digest>, parent: &BTreeSet<Digest>) -> Overlap {
    let shared = child.intersection(parent).count();
    Overlap {
        shared: shared as u32,
        total: child.len() as u32,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEdge {
    pub child: ProjectId,
    pub parent: ProjectId,
    pub kind: EdgeKind,
    pub overlap: Overlap,
    pub created_at: Timestamp,
}

/// Inverted index from component digest to the projects containing it.
#[derive(Debug, Default, Clone)]
pub struct ComponentIndex {
    postings: HashMap<Digest, BTreeSet<ProjectId>>,
    sets: BTreeMap<ProjectId, BTreeSet<Digest>>,
}

impl ComponentIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, project: ProjectId, components: BTreeSet<Digest>) {
        for digest in &components {
            self.postings.entry(*digest).or_default().insert(project);
        }
        self.sets.insert(project, components);
    }

    pub fn components_of(&self, project: ProjectId) -> Option<&BTreeSet<Digest>> {
        self.sets.get(&project)
    }

    pub fn projects_with(&self, component: &Digest) -> impl Iterator<Item = ProjectId> + '_ {
        self.postings.get(component).into_iter().flatten().copied()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Result of scanning a ledger for the project it was downloaded from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeclaredParent {
    pub parent: Option<ProjectId>,
    /// `downloaded` refs to ids this server never registered.
    pub unverified: Vec<ProjectId>,
}

impl DeclaredParent {
    pub fn has_unverified(&self) -> bool {
        !self.unverified.is_empty()
    }
}

/// Latest `downloaded` record whose `project_ref` is registered wins.
pub fn declared_parent(project: &Project, is_registered: impl Fn(ProjectId) -> bool) -> DeclaredParent {
    let mut out = DeclaredParent::default();
    for record in project.provenance.iter().rev() {
        if record.action != ProvenanceAction::Downloaded {
            continue;
        }
        let Some(reference) = record.project_ref else {
            continue;
        };
        if is_registered(reference) {
            out.parent = Some(reference);
            break;
        }
        out.unverified.push(reference);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Candidate {
    #[serde(rename = "id")]
    pub project_id: ProjectId,
    #[serde(serialize_with = "serialize_fraction")]
    pub overlap: Overlap,
}

/// Earlier projects the child reuses at least `threshold` of, ordered by
/// overlap descending then id ascending.
///
/// `child_id` is the child's own id when it is already registered (it must
/// be the most recent registration); only projects with smaller ids are
/// considered. Projects in `credited` (the declared parent and its declared
/// ancestors, see [`LineageGraph::declared_chain`]) are left out: that
/// reuse is already attributed.
pub fn detect_candidates(
    child: &BTreeSet<Digest>,
    child_id: Option<ProjectId>,
    credited: &BTreeSet<ProjectId>,
    index: &ComponentIndex,
    threshold: f64,
) -> Vec<Candidate> {
    let mut shared: HashMap<ProjectId, u32> = HashMap::new();
    for digest in child {
        for project in index.projects_with(digest) {
            *shared.entry(project).or_default() += 1;
        }
    }
    let total = child.len() as u32;
    let mut out: Vec<Candidate> = shared
        .into_iter()
        .filter(|(id, _)| child_id.is_none_or(|c| *id < c) && !credited.contains(id))
        .map(|(project_id, shared)| Candidate {
            project_id,
            overlap: Overlap { shared, total },
        })
        .filter(|c| c.overlap.fraction() >= threshold)
        .collect();
    out.sort_by(|a, b| b.overlap.cmp(&a.overlap).then(a.project_id.cmp(&b.project_id)));
    out
}

type EdgeKey = (ProjectId, ProjectId, EdgeKind);

/// Append-only set of lineage edges with parent and child adjacency.
#[derive(Debug, Default, Clone)]
pub struct LineageGraph {
    edges: BTreeMap<EdgeKey, LineageEdge>,
    parents: HashMap<ProjectId, BTreeSet<(EdgeKind, ProjectId)>>,
    children: HashMap<ProjectId, BTreeSet<(EdgeKind, ProjectId)>>,
}

impl LineageGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks the edge invariants against the registry.
    pub fn check_edge(repo: &Repository, child: ProjectId, parent: ProjectId) -> Result<(), LineageError> {
        if child == parent {
            return Err(LineageError::SelfEdge(child));
        }
        for id in [child, parent] {
            if !repo.contains(id) {
                return Err(LineageError::NotFound(id));
            }
        }
        // Ids are assigned in upload order under a single writer.
        if parent > child {
            return Err(LineageError::TemporalViolation { child, parent });
        }
        Ok(())
    }

    pub fn get(&self, child: ProjectId, parent: ProjectId, kind: EdgeKind) -> Option<&LineageEdge> {
        self.edges.get(&(child, parent, kind))
    }

    /// Inserts an already checked edge; returns false if it existed.
    pub fn insert(&mut self, edge: LineageEdge) -> bool {
        let key = (edge.child, edge.parent, edge.kind);
        if self.edges.contains_key(&key) {
            return false;
        }
        self.parents
            .entry(edge.child)
            .or_default()
            .insert((edge.kind, edge.parent));
        self.children
            .entry(edge.parent)
            .or_default()
            .insert((edge.kind, edge.child));
        self.edges.insert(key, edge);
        true
    }

    /// Checks and inserts; recording the same (child, parent, kind) twice
    /// returns the original edge.
    pub fn record_lineage(
        &mut self,
        repo: &Repository,
        child: ProjectId,
        parent: ProjectId,
        kind: EdgeKind,
        overlap: Overlap,
        now: Timestamp,
    ) -> Result<LineageEdge, LineageError> {
        Self::check_edge(repo, child, parent)?;
        if let Some(existing) = self.get(child, parent, kind) {
            return Ok(existing.clone());
        }
        let edge = LineageEdge {
            child,
            parent,
            kind,
            overlap,
            created_at: now,
        };
        self.insert(edge.clone());
        Ok(edge)
    }

    pub fn edges(&self) -> impl Iterator<Item = &LineageEdge> {
        self.edges.values()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Parent edges of `child`: declared first, then detected, each by
    /// ascending parent id.
    pub fn parent_edges(&self, child: ProjectId) -> Vec<&LineageEdge> {
        self.parents
            .get(&child)
            .into_iter()
            .flatten()
            .map(|(kind, parent)| &self.edges[&(child, *parent, *kind)])
            .collect()
    }

    /// Child edges of `parent`, ordered like [`LineageGraph::parent_edges`].
    pub fn child_edges(&self, parent: ProjectId) -> Vec<&LineageEdge> {
        self.children
            .get(&parent)
            .into_iter()
            .flatten()
            .map(|(kind, child)| &self.edges[&(*child, parent, *kind)])
            .collect()
    }

    pub fn declared_parent_of(&self, child: ProjectId) -> Option<ProjectId> {
        self.parent_edges(child)
            .into_iter()
            .find(|e| e.kind == EdgeKind::Declared)
            .map(|e| e.parent)
    }

    /// `project` followed up its declared parents to the root.
    pub fn declared_chain(&self, project: ProjectId) -> BTreeSet<ProjectId> {
        let mut chain = BTreeSet::new();
        let mut next = Some(project);
        while let Some(id) = next {
            if !chain.insert(id) {
                break;
            }
            next = self.declared_parent_of(id);
        }
        chain
    }

    /// Distinct children over declared edges only.
    pub fn remix_count(&self, project: ProjectId) -> usize {
        self.children
            .get(&project)
            .map_or(0, |set| set.iter().filter(|(k, _)| *k == EdgeKind::Declared).count())
    }

    pub fn ancestors(&self, repo: &Repository, project: ProjectId, depth: usize) -> Result<LineageNode, LineageError> {
        self.expand(repo, project, depth, Direction::Ancestors)
    }

    pub fn descendants(&self, repo: &Repository, project: ProjectId, depth: usize) -> Result<LineageNode, LineageError> {
        self.expand(repo, project, depth, Direction::Descendants)
    }

    pub fn expand(
        &self,
        repo: &Repository,
        project: ProjectId,
        depth: usize,
        direction: Direction,
    ) -> Result<LineageNode, LineageError> {
        let root_meta = repo.get_project(project).map_err(|_| LineageError::NotFound(project))?;

        // Breadth-first over an arena; each project appears once, at the
        // shallowest level it is reachable from the root.
        struct Slot {
            node: LineageNode,
            children: Vec<usize>,
        }
        let mut arena = vec![Slot {
            node: LineageNode::leaf(project, &root_meta.title, &root_meta.author, None, None),
            children: Vec::new(),
        }];
        let mut visited = HashSet::from([project]);
        let mut queue = VecDeque::from([(0usize, project, 0usize)]);
        while let Some((slot, id, level)) = queue.pop_front() {
            if level >= depth {
                continue;
            }
            let edges = match direction {
                Direction::Ancestors => self.parent_edges(id),
                Direction::Descendants => self.child_edges(id),
            };
            for edge in edges {
                let next = match direction {
                    Direction::Ancestors => edge.parent,
                    Direction::Descendants => edge.child,
                };
                if !visited.insert(next) {
                    continue;
                }
                let meta = repo.get_project(next).map_err(|_| LineageError::NotFound(next))?;
                arena.push(Slot {
                    node: LineageNode::leaf(next, &meta.title, &meta.author, Some(edge.kind), Some(edge.overlap)),
                    children: Vec::new(),
                });
                let index = arena.len() - 1;
                arena[slot].children.push(index);
                queue.push_back((index, next, level + 1));
            }
        }

        fn assemble(arena: &mut [Slot], at: usize) -> LineageNode {
            let children = std::mem::take(&mut arena[at].children);
            let mut node = std::mem::replace(&mut arena[at].node, LineageNode::leaf(0, "", "", None, None));
            node.children = children.into_iter().map(|c| assemble(arena, c)).collect();
            node
        }
        Ok(assemble(&mut arena, 0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ancestors,
    Descendants,
}

/// A lineage query result. The root carries no `kind`/`overlap`; every
/// other node carries the edge that linked it to its tree parent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineageNode {
    pub project_id: ProjectId,
    pub title: String,
    pub author: String,
    pub kind: Option<EdgeKind>,
    #[serde(serialize_with = "serialize_opt_fraction")]
    pub overlap: Option<Overlap>,
    pub children: Vec<LineageNode>,
}

impl LineageNode {
    fn leaf(id: ProjectId, title: &str, author: &str, kind: Option<EdgeKind>, overlap: Option<Overlap>) -> Self {
        LineageNode {
            project_id: id,
            title: title.to_string(),
            author: author.to_string(),
            kind,
            overlap,
            children: Vec::new(),
        }
    }

    /// Number of nodes below the root.
    pub fn descendant_count(&self) -> usize {
        self.children.iter().map(|c| 1 + c.descendant_count()).sum()
    }

    /// Ids of every node below the root, preorder.
    pub fn ids(&self) -> Vec<ProjectId> {
        let mut out = Vec::new();
        fn walk(n: &LineageNode, out: &mut Vec<ProjectId>) {
            for c in &n.children {
                out.push(c.project_id);
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }
}
