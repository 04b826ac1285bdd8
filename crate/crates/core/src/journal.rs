//! Write-ahead journal of committed facts.
//!
//! Each line of `journal.ndjson` is one canonical JSON commit holding every
//! fact of a transaction, so a transaction is visible after restart either
//! entirely or not at all. A torn final line (crash mid-write) is dropped
//! on open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::community::{Comment, FriendLink, Gallery, Rating, Tag, User};
use crate::lineage::LineageEdge;
use crate::participation::EventRecord;
use crate::repository::StoredProject;
use crate::ProjectId;

pub const JOURNAL_FILE: &str = "journal.ndjson";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fact", rename_all = "snake_case")]
pub enum Fact {
    UserCreated { user: User },
    FriendAdded { link: FriendLink },
    ProjectRegistered { project: StoredProject },
    ProjectFeatured { project_id: ProjectId, featured: bool },
    EdgeRecorded { edge: LineageEdge },
    TagAdded { tag: Tag },
    CommentAdded { comment: Comment },
    RatingSet { rating: Rating },
    GalleryCreated { gallery: Gallery },
    GalleryProjectAdded { gallery_id: u64, project_id: ProjectId },
    EventRecorded { event: EventRecord },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub seq: u64,
    pub facts: Vec<Fact>,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal I/O: {0}")]
    Io(#[from] io::Error),
    #[error("journal line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
}

pub struct Journal {
    file: File,
    path: PathBuf,
    next_seq: u64,
    len: u64,
}

/// Parses journal bytes. Returns the commits and the byte length of the
/// intact prefix.
fn decode(bytes: &[u8]) -> Result<(Vec<Commit>, usize), JournalError> {
    let mut commits = Vec::new();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(len) = rest.iter().position(|b| *b == b'\n') else {
            // Unterminated tail.
            break;
        };
        match serde_json::from_slice::<Commit>(&rest[..len]) {
            Ok(commit) => commits.push(commit),
            Err(e) if offset + len + 1 == bytes.len() => {
                tracing::warn!(line = line_no, error = %e, "dropping corrupt final journal line");
                break;
            }
            Err(e) => {
                return Err(JournalError::Corrupt {
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        offset += len + 1;
    }
    Ok((commits, offset))
}

impl Journal {
    /// Opens for appending, truncating any torn tail, and returns the
    /// commits already on disk.
    pub fn open(dir: &Path) -> Result<(Journal, Vec<Commit>), JournalError> {
        let path = dir.join(JOURNAL_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let (commits, intact) = decode(&bytes)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if intact < bytes.len() {
            file.set_len(intact as u64)?;
            file.sync_all()?;
        }
        let next_seq = commits.last().map_or(1, |c| c.seq + 1);
        Ok((
            Journal {
                file,
                path,
                next_seq,
                len: intact as u64,
            },
            commits,
        ))
    }

    /// Reads committed transactions without opening for writing.
    pub fn read(dir: &Path) -> Result<Vec<Commit>, JournalError> {
        match fs::read(dir.join(JOURNAL_FILE)) {
            Ok(bytes) => decode(&bytes).map(|(commits, _)| commits),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably appends one transaction.
    pub fn append(&mut self, facts: &[Fact]) -> Result<u64, JournalError> {
        let commit = Commit {
            seq: self.next_seq,
            facts: facts.to_vec(),
        };
        let mut line = canonical::to_vec(&commit).expect("commit serializes");
        line.push(b'\n');
        if let Err(e) = self.file.write_all(&line).and_then(|_| self.file.sync_data()) {
            // Cut off any partial line so later appends stay parseable.
            let _ = self.file.set_len(self.len);
            return Err(e.into());
        }
        self.len += line.len() as u64;
        self.next_seq += 1;
        Ok(commit.seq)
    }
}
