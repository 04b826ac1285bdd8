//! Content-addressed storage and the project registry.
//!
//! Blobs live under `blobs/<first2hex>/<next2hex>/<full64hex>`, project
//! files under `projects/<project_id>.pmp`. Stored project files are never
//! rewritten: downloads stamp a fresh ledger record into the served copy
//! only.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::{
    self, parse_project, serialize_project, ContainerError, Project, ProvenanceAction,
    ProvenanceRecord,
};
use crate::{Digest, ProjectId, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum RepositoryError {
    #[error("blob is empty")]
    EmptyBlob,
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("stored bytes for {0} do not match their digest")]
    IntegrityError(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

pub type Result<T> = std::result::Result<T, RepositoryError>;

/// Registration metadata for an uploaded project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredProject {
    pub project_id: ProjectId,
    pub content_hash: Digest,
    pub title: String,
    pub author: String,
    pub uploaded_at: Timestamp,
    pub featured: bool,
    /// SHA-256 of the stored canonical file.
    pub canonical_bytes_ref: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Registration {
    New(StoredProject),
    Duplicate { duplicate_of: ProjectId },
}

impl Registration {
    pub fn project_id(&self) -> ProjectId {
        match self {
            Registration::New(stored) => stored.project_id,
            Registration::Duplicate { duplicate_of } => *duplicate_of,
        }
    }
}

/// Output of [`Repository::prepare_registration`]: files are written, the
/// registry is not yet updated.
#[derive(Debug, Clone)]
pub struct PreparedRegistration {
    pub registration: Registration,
    pub content_hash: Digest,
    /// The uploaded ledger ended after `now`; the upload record was stamped
    /// with the ledger's last timestamp instead.
    pub clock_skew: bool,
}

enum Backend {
    Memory(BTreeMap<String, Vec<u8>>),
    Disk(PathBuf),
}

impl Backend {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> io::Result<()> {
        match self {
            Backend::Memory(map) => {
                map.insert(rel.to_string(), bytes.to_vec());
                Ok(())
            }
            Backend::Disk(root) => write_atomically(&root.join(rel), bytes),
        }
    }

    fn read(&self, rel: &str) -> io::Result<Option<Vec<u8>>> {
        match self {
            Backend::Memory(map) => Ok(map.get(rel).cloned()),
            Backend::Disk(root) => match fs::read(root.join(rel)) {
                Ok(bytes) => Ok(Some(bytes)),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(e),
            },
        }
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("blob paths have a parent");
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("blob")
    ));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// `blobs/ab/cd/abcd…` for a digest starting `abcd`.
pub fn blob_path(digest: &Digest) -> String {
    let hex = digest.to_hex();
    format!("blobs/{}/{}/{}", &hex[0..2], &hex[2..4], hex)
}

pub fn project_file_path(id: ProjectId) -> String {
    format!("projects/{id}.{}", container::FILE_EXTENSION)
}

/// Deduplicating byte store keyed by SHA-256.
pub struct BlobStore {
    backend: Backend,
    index: BTreeSet<Digest>,
}

impl BlobStore {
    pub fn in_memory() -> Self {
        BlobStore {
            backend: Backend::Memory(BTreeMap::new()),
            index: BTreeSet::new(),
        }
    }

    /// Opens (creating if needed) a blob tree rooted at `root`, indexing
    /// whatever blobs are already there.
    pub fn open(root: &Path) -> Result<Self> {
        let blobs = root.join("blobs");
        fs::create_dir_all(&blobs)?;
        let mut index = BTreeSet::new();
        for first in fs::read_dir(&blobs)? {
            let first = first?.path();
            if !first.is_dir() {
                continue;
            }
            for second in fs::read_dir(&first)? {
                let second = second?.path();
                if !second.is_dir() {
                    continue;
                }
                for entry in fs::read_dir(&second)? {
                    let name = entry?.file_name();
                    if let Some(digest) = name.to_str().and_then(|n| n.parse::<Digest>().ok()) {
                        index.insert(digest);
                    }
                }
            }
        }
        Ok(BlobStore {
            backend: Backend::Disk(root.to_path_buf()),
            index,
        })
    }

    pub fn store(&mut self, bytes: &[u8]) -> Result<Digest> {
        if bytes.is_empty() {
            return Err(RepositoryError::EmptyBlob);
        }
        let digest = Digest::of(bytes);
        if !self.index.contains(&digest) {
            self.backend.write(&blob_path(&digest), bytes)?;
            self.index.insert(digest);
        }
        Ok(digest)
    }

    /// Returns the stored bytes, re-verifying them against the key.
    pub fn get(&self, digest: &Digest) -> Result<Vec<u8>> {
        let bytes = self
            .backend
            .read(&blob_path(digest))?
            .ok_or_else(|| RepositoryError::NotFound(format!("blob {digest}")))?;
        if Digest::of(&bytes) != *digest {
            return Err(RepositoryError::IntegrityError(format!("blob {digest}")));
        }
        Ok(bytes)
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.index.contains(digest)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Blob store, immutable project files and registration metadata.
pub struct Repository {
    blobs: BlobStore,
    files: Backend,
    projects: BTreeMap<ProjectId, StoredProject>,
    by_hash: HashMap<Digest, ProjectId>,
    server: String,
}

impl Repository {
    pub fn in_memory(server: impl Into<String>) -> Self {
        Repository {
            blobs: BlobStore::in_memory(),
            files: Backend::Memory(BTreeMap::new()),
            projects: BTreeMap::new(),
            by_hash: HashMap::new(),
            server: server.into(),
        }
    }

    pub fn open(root: &Path, server: impl Into<String>) -> Result<Self> {
        fs::create_dir_all(root.join("projects"))?;
        Ok(Repository {
            blobs: BlobStore::open(root)?,
            files: Backend::Disk(root.to_path_buf()),
            projects: BTreeMap::new(),
            by_hash: HashMap::new(),
            server: server.into(),
        })
    }

    pub fn server(&self) -> &str {
        &self.server
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn store_blob(&mut self, bytes: &[u8]) -> Result<Digest> {
        self.blobs.store(bytes)
    }

    pub fn get_blob(&self, digest: &Digest) -> Result<Vec<u8>> {
        self.blobs.get(digest)
    }

    pub fn next_project_id(&self) -> ProjectId {
        self.projects.keys().next_back().map_or(1, |id| id + 1)
    }

    pub fn lookup_hash(&self, content_hash: &Digest) -> Option<ProjectId> {
        self.by_hash.get(content_hash).copied()
    }

    pub fn contains(&self, id: ProjectId) -> bool {
        self.projects.contains_key(&id)
    }

    pub fn get_project(&self, id: ProjectId) -> Result<&StoredProject> {
        self.projects
            .get(&id)
            .ok_or_else(|| RepositoryError::NotFound(format!("project {id}")))
    }

    /// Registered projects in ascending id (= upload) order.
    pub fn projects(&self) -> impl Iterator<Item = &StoredProject> {
        self.projects.values()
    }

    pub fn len(&self) -> usize {
        self.projects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projects.is_empty()
    }

    /// Does the write half of a registration: stores every asset blob and
    /// the project file (with its `uploaded` ledger record) under the next
    /// id. The registry itself is left untouched until
    /// [`Repository::apply_registered`], so a failed commit leaves no node.
    pub fn prepare_registration(
        &mut self,
        project: &Project,
        uploader: &str,
        now: Timestamp,
    ) -> Result<PreparedRegistration> {
        let content_hash = container::content_hash(project)?;
        if let Some(existing) = self.lookup_hash(&content_hash) {
            return Ok(PreparedRegistration {
                registration: Registration::Duplicate {
                    duplicate_of: existing,
                },
                content_hash,
                clock_skew: false,
            });
        }
        if let Some(last) = self.projects.values().next_back() {
            debug_assert!(last.uploaded_at <= now, "uploads must be serialized in time order");
        }

        let project_id = self.next_project_id();
        let last = project.last_timestamp();
        let clock_skew = last.is_some_and(|last| last > now);
        let stamped_at = last.map_or(now, |last| last.max(now));

        let mut stored = project.clone();
        stored.append_provenance(ProvenanceRecord {
            seq: stored.next_seq(),
            action: ProvenanceAction::Uploaded,
            actor: uploader.to_string(),
            project_ref: Some(project_id),
            timestamp: stamped_at,
            server: self.server.clone(),
        })?;
        let bytes = serialize_project(&stored)?;

        for asset in stored.assets.values() {
            self.blobs.store(&asset.data)?;
        }
        self.files.write(&project_file_path(project_id), &bytes)?;

        Ok(PreparedRegistration {
            registration: Registration::New(StoredProject {
                project_id,
                content_hash,
                title: stored.title.clone(),
                author: uploader.to_string(),
                uploaded_at: now,
                featured: false,
                canonical_bytes_ref: Digest::of(&bytes),
            }),
            content_hash,
            clock_skew,
        })
    }

    /// Commits registration metadata produced by `prepare_registration`
    /// (or replayed from a journal).
    pub fn apply_registered(&mut self, stored: StoredProject) {
        self.by_hash.insert(stored.content_hash, stored.project_id);
        self.projects.insert(stored.project_id, stored);
    }

    /// Prepare and apply in one step, for callers without a journal.
    pub fn register_project(
        &mut self,
        project: &Project,
        uploader: &str,
        now: Timestamp,
    ) -> Result<Registration> {
        let prepared = self.prepare_registration(project, uploader, now)?;
        if let Registration::New(stored) = &prepared.registration {
            self.apply_registered(stored.clone());
        }
        Ok(prepared.registration)
    }

    pub fn set_featured(&mut self, id: ProjectId, featured: bool) -> Result<()> {
        self.projects
            .get_mut(&id)
            .ok_or_else(|| RepositoryError::NotFound(format!("project {id}")))?
            .featured = featured;
        Ok(())
    }

    /// The stored canonical file, verified against its recorded digest.
    pub fn stored_file(&self, id: ProjectId) -> Result<Vec<u8>> {
        let meta = self.get_project(id)?;
        let bytes = self
            .files
            .read(&project_file_path(id))?
            .ok_or_else(|| RepositoryError::NotFound(format!("file for project {id}")))?;
        if Digest::of(&bytes) != meta.canonical_bytes_ref {
            return Err(RepositoryError::IntegrityError(format!("project file {id}")));
        }
        Ok(bytes)
    }

    pub fn stored_project(&self, id: ProjectId) -> Result<Project> {
        Ok(parse_project(&self.stored_file(id)?)?)
    }

    /// The stored file with one `downloaded` record appended for
    /// `requester`. The stored copy is not modified.
    pub fn fetch_project_file(&self, id: ProjectId, requester: &str, now: Timestamp) -> Result<Vec<u8>> {
        let mut project = self.stored_project(id)?;
        let at = project.last_timestamp().map_or(now, |last| last.max(now));
        project.append_provenance(ProvenanceRecord {
            seq: project.next_seq(),
            action: ProvenanceAction::Downloaded,
            actor: requester.to_string(),
            project_ref: Some(id),
            timestamp: at,
            server: self.server.clone(),
        })?;
        Ok(serialize_project(&project)?)
    }
}
