//! The platform facade: one commit point for every mutation.
//!
//! All writes take the state write lock, validate against committed state,
//! append their facts to the journal, then apply them in memory. Readers
//! share the read lock and only ever see fully applied transactions. On
//! open, the journal is replayed to rebuild state.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard};
use rand::RngCore;
use serde::Serialize;

use crate::community::{
    self, Comment, Community, CommunityError, FriendLink, FrontPage, Gallery, ProjectSummary, Rating, Snapshot,
    Tag, User,
};
use crate::container::{self, parse_project, ContainerError, Project};
use crate::journal::{Fact, Journal, JournalError};
use crate::lineage::{
    self, detect_candidates, Candidate, ComponentIndex, Direction, EdgeKind, LineageEdge, LineageError,
    LineageGraph, LineageNode,
};
use crate::participation::{
    CommunityStats, EventKind, EventLog, ParticipationError, ParticipationState, Subject, Window,
};
use crate::repository::{Registration, Repository, RepositoryError, StoredProject};
use crate::{Digest, ProjectId, Timestamp};

const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq)]
pub struct PlatformConfig {
    /// Host identifier written into provenance records.
    pub server_name: String,
    pub overlap_threshold: f64,
    pub participation_window_days: u32,
    pub front_page_size: usize,
    /// Token for the built-in `admin` account, created on first open.
    pub admin_token: Option<String>,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            server_name: "localhost".into(),
            overlap_threshold: lineage::DEFAULT_OVERLAP_THRESHOLD,
            participation_window_days: crate::participation::DEFAULT_WINDOW_DAYS,
            front_page_size: community::DEFAULT_FRONT_PAGE_SIZE,
            admin_token: None,
        }
    }
}

impl PlatformConfig {
    pub fn validate(&self) -> std::result::Result<(), PlatformError> {
        let bad = |m: &str| Err(PlatformError::InvalidConfig(m.to_string()));
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return bad("overlap threshold must lie in (0, 1]");
        }
        if self.participation_window_days < 1 {
            return bad("participation window must be at least one day");
        }
        if self.front_page_size < 1 {
            return bad("front page list size must be at least 1");
        }
        if self.server_name.is_empty() {
            return bad("server name must not be empty");
        }
        Ok(())
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// A settable clock for tests and simulations.
#[derive(Debug)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        ManualClock(AtomicI64::new(start.unix_millis()))
    }

    pub fn set(&self, at: Timestamp) {
        self.0.store(at.unix_millis(), Ordering::SeqCst);
    }

    pub fn advance_millis(&self, millis: i64) {
        self.0.fetch_add(millis, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_unix_millis(self.0.load(Ordering::SeqCst))
    }
}

/// Broad error class, for mapping onto transport status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Invalid,
    Unauthorized,
    Forbidden,
    NotFound,
    Conflict,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
    #[error(transparent)]
    Lineage(#[from] LineageError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error(transparent)]
    Participation(#[from] ParticipationError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("data directory {0} is in use by another process")]
    Locked(PathBuf),
    #[error("data directory {path} is not writable: {message}")]
    DataDirUnwritable { path: PathBuf, message: String },
    #[error("platform was opened read-only")]
    ReadOnly,
}

impl PlatformError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::Container(e) => e.code(),
            PlatformError::Repository(e) => match e {
                RepositoryError::EmptyBlob => "EmptyBlob",
                RepositoryError::StorageFailure(_) => "StorageFailure",
                RepositoryError::NotFound(_) => "NotFound",
                RepositoryError::IntegrityError(_) => "IntegrityError",
                RepositoryError::Container(c) => c.code(),
            },
            PlatformError::Lineage(e) => match e {
                LineageError::SelfEdge(_) => "SelfEdge",
                LineageError::TemporalViolation { .. } => "TemporalViolation",
                LineageError::NotFound(_) => "NotFound",
            },
            PlatformError::Community(e) => match e {
                CommunityError::InvalidUsername(_) => "InvalidUsername",
                CommunityError::DuplicateUsername(_) => "DuplicateUsername",
                CommunityError::SelfFriend => "SelfFriend",
                CommunityError::UnknownUser(_) => "UnknownUser",
                CommunityError::NotFound(_) => "NotFound",
                CommunityError::InvalidLabel(_) => "InvalidLabel",
                CommunityError::EmptyText => "EmptyText",
                CommunityError::TextTooLong => "TextTooLong",
                CommunityError::StarsOutOfRange(_) => "StarsOutOfRange",
                CommunityError::InvalidName => "InvalidName",
                CommunityError::Forbidden(_) => "Forbidden",
            },
            PlatformError::Participation(e) => match e {
                ParticipationError::UnknownUser(_) => "UnknownUser",
                ParticipationError::EmptyWindow => "EmptyWindow",
                ParticipationError::OutOfOrder { .. } | ParticipationError::Malformed { .. } => "EventLogCorrupt",
            },
            PlatformError::Journal(_) => "StorageFailure",
            PlatformError::Unauthorized => "Unauthorized",
            PlatformError::InvalidConfig(_) => "InvalidConfig",
            PlatformError::Locked(_) => "DataDirLocked",
            PlatformError::DataDirUnwritable { .. } => "DataDirUnwritable",
            PlatformError::ReadOnly => "ReadOnly",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.code() {
            "Unauthorized" => ErrorClass::Unauthorized,
            "Forbidden" => ErrorClass::Forbidden,
            "NotFound" | "UnknownUser" => ErrorClass::NotFound,
            "DuplicateUsername" => ErrorClass::Conflict,
            "StorageFailure" | "EventLogCorrupt" | "DataDirLocked" | "DataDirUnwritable" | "ReadOnly"
            | "InvalidConfig" => ErrorClass::Internal,
            // Stored bytes failing verification is a server-side fault.
            "IntegrityError" if matches!(self, PlatformError::Repository(RepositoryError::IntegrityError(_))) => {
                ErrorClass::Internal
            }
            _ => ErrorClass::Invalid,
        }
    }
}

pub type Result<T> = std::result::Result<T, PlatformError>;

/// Response to an upload.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UploadOutcome {
    pub project_id: ProjectId,
    pub content_hash: Digest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<ProjectId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub based_on: Option<ProjectId>,
    pub detected: Vec<Candidate>,
    /// `unverified_provenance`, `ledger_clock_skew`: the ledger looked
    /// implausible but the upload was accepted.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserProfile {
    pub username: String,
    pub created_at: Timestamp,
    pub is_admin: bool,
    pub participation_state: ParticipationState,
    pub following: Vec<String>,
    pub followers: Vec<String>,
    pub projects: Vec<ProjectId>,
}

struct State {
    repo: Repository,
    lineage: LineageGraph,
    index: ComponentIndex,
    community: Community,
    events: EventLog,
    journal: Option<Journal>,
    read_only: bool,
    last_at: Option<Timestamp>,
}

fn fact_time(fact: &Fact) -> Option<Timestamp> {
    match fact {
        Fact::UserCreated { user } => Some(user.created_at),
        Fact::FriendAdded { link } => Some(link.created_at),
        Fact::ProjectRegistered { project } => Some(project.uploaded_at),
        Fact::EdgeRecorded { edge } => Some(edge.created_at),
        Fact::TagAdded { tag } => Some(tag.created_at),
        Fact::CommentAdded { comment } => Some(comment.created_at),
        Fact::RatingSet { rating } => Some(rating.created_at),
        Fact::GalleryCreated { gallery } => Some(gallery.created_at),
        Fact::EventRecorded { event } => Some(event.at),
        Fact::ProjectFeatured { .. } | Fact::GalleryProjectAdded { .. } => None,
    }
}

impl State {
    fn new(repo: Repository, journal: Option<Journal>, read_only: bool) -> Self {
        State {
            repo,
            lineage: LineageGraph::new(),
            index: ComponentIndex::new(),
            community: Community::new(),
            events: EventLog::new(),
            journal,
            read_only,
            last_at: None,
        }
    }

    fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            repo: &self.repo,
            lineage: &self.lineage,
            community: &self.community,
            events: &self.events,
        }
    }

    /// Next commit time: never earlier than anything already committed.
    fn tick(&mut self, clock: &dyn Clock) -> Timestamp {
        let now = clock.now();
        let now = self.last_at.map_or(now, |last| last.max(now));
        self.last_at = Some(now);
        now
    }

    fn require_user(&self, name: &str) -> Result<()> {
        self.community.require_user(name)?;
        Ok(())
    }

    fn require_project(&self, id: ProjectId) -> Result<&StoredProject> {
        Ok(self.repo.get_project(id)?)
    }

    fn event(&self, actor: &str, kind: EventKind, subject: Subject, at: Timestamp) -> Fact {
        Fact::EventRecorded {
            event: self.events.prepare(actor, kind, Some(subject), at),
        }
    }

    fn commit(&mut self, facts: Vec<Fact>, components: Vec<(ProjectId, BTreeSet<Digest>)>) -> Result<()> {
        if self.read_only {
            return Err(PlatformError::ReadOnly);
        }
        if let Some(journal) = &mut self.journal {
            journal.append(&facts)?;
        }
        for (id, set) in components {
            self.index.insert(id, set);
        }
        for fact in facts {
            self.apply(fact)
                .expect("facts are validated against committed state before commit");
        }
        Ok(())
    }

    fn apply(&mut self, fact: Fact) -> Result<()> {
        if let Some(at) = fact_time(&fact) {
            self.last_at = Some(self.last_at.map_or(at, |last| last.max(at)));
        }
        match fact {
            Fact::UserCreated { user } => self.community.insert_user(user),
            Fact::FriendAdded { link } => self.community.insert_friend(link),
            Fact::ProjectRegistered { project } => self.repo.apply_registered(project),
            Fact::ProjectFeatured { project_id, featured } => self.repo.set_featured(project_id, featured)?,
            Fact::EdgeRecorded { edge } => {
                self.lineage.insert(edge);
            }
            Fact::TagAdded { tag } => self.community.insert_tag(tag),
            Fact::CommentAdded { comment } => self.community.insert_comment(comment),
            Fact::RatingSet { rating } => self.community.upsert_rating(rating),
            Fact::GalleryCreated { gallery } => self.community.insert_gallery(gallery),
            Fact::GalleryProjectAdded { gallery_id, project_id } => {
                self.community.add_to_gallery(gallery_id, project_id);
            }
            Fact::EventRecorded { event } => {
                self.events.append(event)?;
            }
        }
        Ok(())
    }

    /// Replays one journaled fact, rebuilding derived indexes.
    fn replay(&mut self, fact: Fact) -> Result<()> {
        let registered = match &fact {
            Fact::ProjectRegistered { project } => Some((project.project_id, project.content_hash)),
            _ => None,
        };
        self.apply(fact)?;
        if let Some((id, expected)) = registered {
            let project = self.repo.stored_project(id)?;
            if container::content_hash(&project)? != expected {
                return Err(RepositoryError::IntegrityError(format!("project file {id}")).into());
            }
            self.index.insert(id, container::component_set(&project));
        }
        Ok(())
    }
}

pub struct Platform {
    state: RwLock<State>,
    config: PlatformConfig,
    clock: Arc<dyn Clock>,
    data_dir: Option<PathBuf>,
    _lock: Option<File>,
}

/// Shared read access to committed state.
pub struct ReadView<'a>(RwLockReadGuard<'a, State>);

impl ReadView<'_> {
    pub fn repo(&self) -> &Repository {
        &self.0.repo
    }

    pub fn lineage(&self) -> &LineageGraph {
        &self.0.lineage
    }

    pub fn index(&self) -> &ComponentIndex {
        &self.0.index
    }

    pub fn community(&self) -> &Community {
        &self.0.community
    }

    pub fn events(&self) -> &EventLog {
        &self.0.events
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        self.0.snapshot()
    }
}

fn new_token() -> String {
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl Platform {
    /// An ephemeral platform with no persistence.
    pub fn in_memory(config: PlatformConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.validate()?;
        let repo = Repository::in_memory(config.server_name.clone());
        let platform = Platform {
            state: RwLock::new(State::new(repo, None, false)),
            config,
            clock,
            data_dir: None,
            _lock: None,
        };
        platform.bootstrap_admin()?;
        Ok(platform)
    }

    /// Opens (or initializes) a data directory for exclusive read-write use
    /// and replays its journal.
    pub fn open(dir: &Path, config: PlatformConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.validate()?;
        let unwritable = |e: std::io::Error| PlatformError::DataDirUnwritable {
            path: dir.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(unwritable)?;
        let lock = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))
            .map_err(unwritable)?;
        lock.try_lock().map_err(|_| PlatformError::Locked(dir.to_path_buf()))?;

        let repo = Repository::open(dir, config.server_name.clone())?;
        let (journal, commits) = Journal::open(dir)?;
        let mut state = State::new(repo, Some(journal), false);
        for commit in commits {
            for fact in commit.facts {
                state.replay(fact)?;
            }
        }
        tracing::info!(
            dir = %dir.display(),
            projects = state.repo.len(),
            users = state.community.user_count(),
            events = state.events.len(),
            "platform state rebuilt from journal"
        );
        let platform = Platform {
            state: RwLock::new(state),
            config,
            clock,
            data_dir: Some(dir.to_path_buf()),
            _lock: Some(lock),
        };
        platform.bootstrap_admin()?;
        Ok(platform)
    }

    /// Replays a data directory without taking the writer lock. Mutations
    /// fail with [`PlatformError::ReadOnly`].
    pub fn open_read_only(dir: &Path, config: PlatformConfig) -> Result<Self> {
        config.validate()?;
        let repo = Repository::open(dir, config.server_name.clone())?;
        let mut state = State::new(repo, None, true);
        for commit in Journal::read(dir)? {
            for fact in commit.facts {
                state.replay(fact)?;
            }
        }
        Ok(Platform {
            state: RwLock::new(state),
            config,
            clock: Arc::new(SystemClock),
            data_dir: Some(dir.to_path_buf()),
            _lock: None,
        })
    }

    fn bootstrap_admin(&self) -> Result<()> {
        let Some(token) = &self.config.admin_token else {
            return Ok(());
        };
        let mut state = self.state.write();
        if state.community.user("admin").is_some() {
            return Ok(());
        }
        let now = state.tick(self.clock.as_ref());
        let user = User {
            username: "admin".into(),
            created_at: now,
            token_hash: Digest::of(token.as_bytes()),
            is_admin: true,
        };
        state.commit(vec![Fact::UserCreated { user }], vec![])
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn read(&self) -> ReadView<'_> {
        ReadView(self.state.read())
    }

    // ---- users and auth ----

    /// Creates a member and returns it with its freshly issued token.
    pub fn create_user(&self, username: &str) -> Result<(User, String)> {
        community::validate_username(username)?;
        let mut state = self.state.write();
        if state.community.user(username).is_some() {
            return Err(CommunityError::DuplicateUsername(username.to_string()).into());
        }
        let token = new_token();
        let now = state.tick(self.clock.as_ref());
        let user = User {
            username: username.to_string(),
            created_at: now,
            token_hash: Digest::of(token.as_bytes()),
            is_admin: false,
        };
        state.commit(vec![Fact::UserCreated { user: user.clone() }], vec![])?;
        Ok((user, token))
    }

    /// Resolves a bearer token to its username.
    pub fn authenticate(&self, token: &str) -> Result<String> {
        let hash = Digest::of(token.as_bytes());
        let state = self.state.read();
        match state.community.user_for_token_hash(&hash) {
            Some(user) if constant_time_eq(user.token_hash.as_bytes(), hash.as_bytes()) => {
                Ok(user.username.clone())
            }
            _ => Err(PlatformError::Unauthorized),
        }
    }

    pub fn add_friend(&self, from: &str, to: &str) -> Result<FriendLink> {
        let mut state = self.state.write();
        state.require_user(from)?;
        state.require_user(to)?;
        if from == to {
            return Err(CommunityError::SelfFriend.into());
        }
        let now = state.tick(self.clock.as_ref());
        let existing = state.community.friend_link(from, to).cloned();
        let link = existing.clone().unwrap_or_else(|| FriendLink {
            from: from.to_string(),
            to: to.to_string(),
            created_at: now,
        });
        let mut facts = Vec::new();
        if existing.is_none() {
            facts.push(Fact::FriendAdded { link: link.clone() });
        }
        facts.push(state.event(from, EventKind::Friend, Subject::User(to.to_string()), now));
        state.commit(facts, vec![])?;
        Ok(link)
    }

    pub fn user_profile(&self, name: &str) -> Result<UserProfile> {
        let state = self.state.read();
        let user = state.community.require_user(name)?;
        let window = Window::trailing_days(self.clock.now().max(state.last_at.unwrap_or(user.created_at)), self.config.participation_window_days)?;
        Ok(UserProfile {
            username: user.username.clone(),
            created_at: user.created_at,
            is_admin: user.is_admin,
            participation_state: state.events.classify(name, window),
            following: state.community.following(name),
            followers: state.community.followers(name),
            projects: state
                .repo
                .projects()
                .filter(|p| p.author == name)
                .map(|p| p.project_id)
                .collect(),
        })
    }

    // ---- projects ----

    /// Parses, registers and links an uploaded project file, recording the
    /// upload event, all in one commit.
    pub fn upload(&self, bytes: &[u8], actor: &str) -> Result<UploadOutcome> {
        let project = parse_project(bytes)?;
        self.upload_project(&project, actor)
    }

    pub fn upload_project(&self, project: &Project, actor: &str) -> Result<UploadOutcome> {
        let mut state = self.state.write();
        state.require_user(actor)?;
        let now = state.tick(self.clock.as_ref());
        let prepared = state.repo.prepare_registration(project, actor, now)?;

        let stored = match prepared.registration {
            Registration::Duplicate { duplicate_of } => {
                let facts = vec![state.event(actor, EventKind::Upload, Subject::Project(duplicate_of), now)];
                state.commit(facts, vec![])?;
                return Ok(UploadOutcome {
                    project_id: duplicate_of,
                    content_hash: prepared.content_hash,
                    duplicate_of: Some(duplicate_of),
                    based_on: None,
                    detected: Vec::new(),
                    warnings: Vec::new(),
                });
            }
            Registration::New(stored) => stored,
        };
        let id = stored.project_id;

        let declared = lineage::declared_parent(project, |r| state.repo.contains(r));
        let components = container::component_set(project);
        let credited = declared
            .parent
            .map(|parent| state.lineage.declared_chain(parent))
            .unwrap_or_default();
        let detected = detect_candidates(
            &components,
            None,
            &credited,
            &state.index,
            self.config.overlap_threshold,
        );

        let mut facts = vec![Fact::ProjectRegistered { project: stored }];
        if let Some(parent) = declared.parent {
            let parent_set = state.index.components_of(parent).cloned().unwrap_or_default();
            facts.push(Fact::EdgeRecorded {
                edge: LineageEdge {
                    child: id,
                    parent,
                    kind: EdgeKind::Declared,
                    overlap: lineage::overlap(&components, &parent_set),
                    created_at: now,
                },
            });
        }
        for c in &detected {
            facts.push(Fact::EdgeRecorded {
                edge: LineageEdge {
                    child: id,
                    parent: c.project_id,
                    kind: EdgeKind::Detected,
                    overlap: c.overlap,
                    created_at: now,
                },
            });
        }
        facts.push(state.event(actor, EventKind::Upload, Subject::Project(id), now));
        state.commit(facts, vec![(id, components)])?;

        let mut warnings = Vec::new();
        if declared.has_unverified() {
            tracing::warn!(project = id, refs = ?declared.unverified, "ledger names projects this server never registered");
            warnings.push("unverified_provenance".to_string());
        }
        if prepared.clock_skew {
            warnings.push("ledger_clock_skew".to_string());
        }
        Ok(UploadOutcome {
            project_id: id,
            content_hash: prepared.content_hash,
            duplicate_of: None,
            based_on: declared.parent,
            detected,
            warnings,
        })
    }

    /// The stored file with a `downloaded` record for `requester`.
    pub fn fetch_project_file(&self, id: ProjectId, requester: &str) -> Result<Vec<u8>> {
        let mut state = self.state.write();
        state.require_project(id)?;
        state.require_user(requester)?;
        let now = state.tick(self.clock.as_ref());
        let bytes = state.repo.fetch_project_file(id, requester, now)?;
        let facts = vec![state.event(requester, EventKind::Download, Subject::Project(id), now)];
        state.commit(facts, vec![])?;
        Ok(bytes)
    }

    pub fn get_project(&self, id: ProjectId) -> Result<StoredProject> {
        Ok(self.state.read().repo.get_project(id)?.clone())
    }

    pub fn project_summary(&self, id: ProjectId) -> Result<ProjectSummary> {
        Ok(self.state.read().snapshot().project_summary(id)?)
    }

    /// Summary of a project as seen by `viewer`; a known viewer's visit is
    /// logged as a view event.
    pub fn view_project(&self, id: ProjectId, viewer: Option<&str>) -> Result<ProjectSummary> {
        if let Some(viewer) = viewer {
            let mut state = self.state.write();
            state.require_project(id)?;
            state.require_user(viewer)?;
            let now = state.tick(self.clock.as_ref());
            let facts = vec![state.event(viewer, EventKind::View, Subject::Project(id), now)];
            state.commit(facts, vec![])?;
        }
        self.project_summary(id)
    }

    pub fn set_featured(&self, id: ProjectId, actor: &str, featured: bool) -> Result<()> {
        let mut state = self.state.write();
        state.require_project(id)?;
        if !state.community.require_user(actor)?.is_admin {
            return Err(CommunityError::Forbidden("only admins can feature projects".into()).into());
        }
        state.commit(vec![Fact::ProjectFeatured { project_id: id, featured }], vec![])
    }

    // ---- social metadata ----

    pub fn tag_project(&self, id: ProjectId, tagger: &str, label: &str) -> Result<Tag> {
        let label = community::normalize_label(label)?;
        let mut state = self.state.write();
        state.require_project(id)?;
        state.require_user(tagger)?;
        let now = state.tick(self.clock.as_ref());
        let mut facts = Vec::new();
        let tag = match state.community.find_tag(id, tagger, &label) {
            Some(existing) => existing.clone(),
            None => {
                let tag = Tag {
                    project_id: id,
                    tagger: tagger.to_string(),
                    label,
                    created_at: now,
                };
                facts.push(Fact::TagAdded { tag: tag.clone() });
                tag
            }
        };
        facts.push(state.event(tagger, EventKind::Tag, Subject::Project(id), now));
        state.commit(facts, vec![])?;
        Ok(tag)
    }

    pub fn comment_project(&self, id: ProjectId, author: &str, text: &str) -> Result<Comment> {
        community::validate_comment(text)?;
        let mut state = self.state.write();
        state.require_project(id)?;
        state.require_user(author)?;
        let now = state.tick(self.clock.as_ref());
        let comment = Comment {
            comment_id: state.community.next_comment_id(),
            project_id: id,
            author: author.to_string(),
            text: text.to_string(),
            created_at: now,
        };
        let facts = vec![
            Fact::CommentAdded { comment: comment.clone() },
            state.event(author, EventKind::Comment, Subject::Project(id), now),
        ];
        state.commit(facts, vec![])?;
        Ok(comment)
    }

    pub fn rate_project(&self, id: ProjectId, rater: &str, stars: i64) -> Result<Rating> {
        let stars = community::validate_stars(stars)?;
        let mut state = self.state.write();
        state.require_project(id)?;
        state.require_user(rater)?;
        let now = state.tick(self.clock.as_ref());
        let rating = Rating {
            project_id: id,
            rater: rater.to_string(),
            stars,
            created_at: now,
        };
        let facts = vec![
            Fact::RatingSet { rating: rating.clone() },
            state.event(rater, EventKind::Rate, Subject::Project(id), now),
        ];
        state.commit(facts, vec![])?;
        Ok(rating)
    }

    pub fn create_gallery(&self, name: &str, owner: &str) -> Result<Gallery> {
        community::validate_gallery_name(name)?;
        let mut state = self.state.write();
        state.require_user(owner)?;
        let now = state.tick(self.clock.as_ref());
        let gallery = Gallery {
            gallery_id: state.community.next_gallery_id(),
            name: name.to_string(),
            owner: owner.to_string(),
            projects: Vec::new(),
            created_at: now,
        };
        state.commit(vec![Fact::GalleryCreated { gallery: gallery.clone() }], vec![])?;
        Ok(gallery)
    }

    pub fn add_to_gallery(&self, gallery_id: u64, project_id: ProjectId, actor: &str) -> Result<Gallery> {
        let mut state = self.state.write();
        state.require_user(actor)?;
        let gallery = state
            .community
            .gallery(gallery_id)
            .cloned()
            .ok_or_else(|| CommunityError::NotFound(format!("gallery {gallery_id}")))?;
        state.require_project(project_id)?;
        if !state.community.may_curate(&gallery, actor) {
            return Err(CommunityError::Forbidden(format!("{actor} does not own gallery {gallery_id}")).into());
        }
        let now = state.tick(self.clock.as_ref());
        let mut facts = Vec::new();
        if !gallery.projects.contains(&project_id) {
            facts.push(Fact::GalleryProjectAdded { gallery_id, project_id });
        }
        facts.push(state.event(actor, EventKind::GalleryAdd, Subject::Project(project_id), now));
        state.commit(facts, vec![])?;
        Ok(state.community.gallery(gallery_id).cloned().expect("gallery exists"))
    }

    pub fn gallery(&self, id: u64) -> Result<Gallery> {
        self.state
            .read()
            .community
            .gallery(id)
            .cloned()
            .ok_or_else(|| CommunityError::NotFound(format!("gallery {id}")).into())
    }

    /// Appends a raw activity event for a known actor.
    pub fn record_event(&self, actor: &str, kind: EventKind, subject: Option<Subject>) -> Result<u64> {
        let mut state = self.state.write();
        if state.community.user(actor).is_none() {
            return Err(ParticipationError::UnknownUser(actor.to_string()).into());
        }
        let now = state.tick(self.clock.as_ref());
        let event = state.events.prepare(actor, kind, subject, now);
        let id = event.event_id;
        state.commit(vec![Fact::EventRecorded { event }], vec![])?;
        Ok(id)
    }

    // ---- lineage and discovery ----

    pub fn lineage(&self, id: ProjectId, direction: Direction, depth: usize) -> Result<LineageNode> {
        let state = self.state.read();
        Ok(state.lineage.expand(&state.repo, id, depth, direction)?)
    }

    pub fn remix_count(&self, id: ProjectId) -> Result<usize> {
        let state = self.state.read();
        state.require_project(id)?;
        Ok(state.lineage.remix_count(id))
    }

    pub fn edges(&self) -> Vec<LineageEdge> {
        self.state.read().lineage.edges().cloned().collect()
    }

    pub fn front_page(&self, limit: Option<usize>) -> FrontPage {
        let limit = limit.unwrap_or(self.config.front_page_size);
        self.state.read().snapshot().front_page(limit)
    }

    // ---- participation ----

    pub fn classify(&self, user: &str, window: Window) -> Result<ParticipationState> {
        let state = self.state.read();
        if state.community.user(user).is_none() {
            return Err(ParticipationError::UnknownUser(user.to_string()).into());
        }
        Ok(state.events.classify(user, window))
    }

    pub fn community_stats(&self, window: Window) -> CommunityStats {
        let state = self.state.read();
        state
            .events
            .community_stats(state.community.users().map(|u| u.username.as_str()), window)
    }

    /// Stats over the `days` days ending now.
    pub fn community_stats_trailing(&self, days: u32) -> Result<CommunityStats> {
        let end = {
            let state = self.state.read();
            let now = self.clock.now();
            state.last_at.map_or(now, |last| last.max(now))
        };
        Ok(self.community_stats(Window::trailing_days(end, days)?))
    }

    pub fn export_events(&self) -> Vec<u8> {
        self.state.read().events.export_ndjson()
    }
}
