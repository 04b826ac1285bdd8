//! Members and the metadata they attach to projects.
//!
//! Friendship is a directed follower link. Tags, comments and ratings hang
//! off projects; galleries are owner-curated ordered project collections.
//! [`Snapshot`] assembles the read models (project summary, front page)
//! from committed state.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::lineage::{serialize_fraction, EdgeKind, LineageGraph, Overlap};
use crate::participation::{EventKind, EventLog, Subject};
use crate::repository::{Repository, StoredProject};
use crate::{is_valid_username, Digest, ProjectId, Timestamp};

pub const MAX_LABEL_CHARS: usize = 24;
pub const MAX_COMMENT_CHARS: usize = 2000;
pub const MAX_GALLERY_NAME_CHARS: usize = 100;
pub const DEFAULT_FRONT_PAGE_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommunityError {
    #[error("invalid username {0:?}: 1-32 characters from [a-z0-9_]")]
    InvalidUsername(String),
    #[error("username {0:?} is taken")]
    DuplicateUsername(String),
    #[error("users cannot befriend themselves")]
    SelfFriend,
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid tag label {0:?}: 1-24 characters")]
    InvalidLabel(String),
    #[error("text is empty")]
    EmptyText,
    #[error("text exceeds {MAX_COMMENT_CHARS} characters")]
    TextTooLong,
    #[error("stars must be between 1 and 5, got {0}")]
    StarsOutOfRange(i64),
    #[error("invalid gallery name")]
    InvalidName,
    #[error("{0}")]
    Forbidden(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub username: String,
    pub created_at: Timestamp,
    /// SHA-256 of the bearer token; the token itself is never stored.
    pub token_hash: Digest,
    pub is_admin: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FriendLink {
    pub from: String,
    pub to: String,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub project_id: ProjectId,
    pub tagger: String,
    pub label: String,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: u64,
    pub project_id: ProjectId,
    pub author: String,
    pub text: String,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub project_id: ProjectId,
    pub rater: String,
    pub stars: u8,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gallery {
    pub gallery_id: u64,
    pub name: String,
    pub owner: String,
    pub projects: Vec<ProjectId>,
    pub created_at: Timestamp,
}

pub fn validate_username(name: &str) -> Result<(), CommunityError> {
    if is_valid_username(name) {
        Ok(())
    } else {
        Err(CommunityError::InvalidUsername(name.to_string()))
    }
}

/// Trims and lowercases a tag label, then checks its length.
pub fn normalize_label(label: &str) -> Result<String, CommunityError> {
    let norm = label.trim().to_lowercase();
    let chars = norm.chars().count();
    if chars == 0 || chars > MAX_LABEL_CHARS || norm.chars().any(char::is_control) {
        return Err(CommunityError::InvalidLabel(label.to_string()));
    }
    Ok(norm)
}

pub fn validate_comment(text: &str) -> Result<(), CommunityError> {
    if text.trim().is_empty() {
        return Err(CommunityError::EmptyText);
    }
    if text.chars().count() > MAX_COMMENT_CHARS {
        return Err(CommunityError::TextTooLong);
    }
    Ok(())
}

pub fn validate_stars(stars: i64) -> Result<u8, CommunityError> {
    match stars {
        1..=5 => Ok(stars as u8),
        _ => Err(CommunityError::StarsOutOfRange(stars)),
    }
}

pub fn validate_gallery_name(name: &str) -> Result<(), CommunityError> {
    let chars = name.trim().chars().count();
    if chars == 0 || name.chars().count() > MAX_GALLERY_NAME_CHARS {
        return Err(CommunityError::InvalidName);
    }
    Ok(())
}

/// Mean of current ratings, kept exact as `sum / count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingMean {
    pub sum: u64,
    pub count: u64,
}

impl RatingMean {
    pub fn value(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }

    /// Two decimals, rounding half up on the exact ratio.
    pub fn display(&self) -> String {
        let hundredths = (self.sum * 200 + self.count) / (2 * self.count);
        format!("{}.{:02}", hundredths / 100, hundredths % 100)
    }
}

impl Ord for RatingMean {
    fn cmp(&self, other: &Self) -> Ordering {
        (u128::from(self.sum) * u128::from(other.count)).cmp(&(u128::from(other.sum) * u128::from(self.count)))
    }
}

impl PartialOrd for RatingMean {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for RatingMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

impl Serialize for RatingMean {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.display())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Community {
    users: BTreeMap<String, User>,
    tokens: HashMap<Digest, String>,
    following: BTreeMap<String, BTreeMap<String, FriendLink>>,
    followers: BTreeMap<String, BTreeSet<String>>,
    tags: BTreeMap<ProjectId, Vec<Tag>>,
    tag_keys: BTreeSet<(ProjectId, String, String)>,
    comments: BTreeMap<ProjectId, Vec<Comment>>,
    comment_count: u64,
    ratings: BTreeMap<ProjectId, BTreeMap<String, Rating>>,
    galleries: BTreeMap<u64, Gallery>,
}

impl Community {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn user(&self, name: &str) -> Option<&User> {
        self.users.get(name)
    }

    pub fn require_user(&self, name: &str) -> Result<&User, CommunityError> {
        self.user(name)
            .ok_or_else(|| CommunityError::UnknownUser(name.to_string()))
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.users.values()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn user_for_token_hash(&self, hash: &Digest) -> Option<&User> {
        self.tokens.get(hash).and_then(|name| self.users.get(name))
    }

    pub fn insert_user(&mut self, user: User) {
        self.tokens.insert(user.token_hash, user.username.clone());
        self.users.insert(user.username.clone(), user);
    }

    pub fn friend_link(&self, from: &str, to: &str) -> Option<&FriendLink> {
        self.following.get(from).and_then(|m| m.get(to))
    }

    pub fn insert_friend(&mut self, link: FriendLink) {
        self.followers
            .entry(link.to.clone())
            .or_default()
            .insert(link.from.clone());
        self.following
            .entry(link.from.clone())
            .or_default()
            .insert(link.to.clone(), link);
    }

    /// Users `name` links to.
    pub fn following(&self, name: &str) -> Vec<String> {
        self.following
            .get(name)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Users linking to `name`.
    pub fn followers(&self, name: &str) -> Vec<String> {
        self.followers
            .get(name)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn has_tag(&self, project: ProjectId, tagger: &str, label: &str) -> bool {
        self.tag_keys
            .contains(&(project, tagger.to_string(), label.to_string()))
    }

    pub fn find_tag(&self, project: ProjectId, tagger: &str, label: &str) -> Option<&Tag> {
        self.tags
            .get(&project)?
            .iter()
            .find(|t| t.tagger == tagger && t.label == label)
    }

    pub fn insert_tag(&mut self, tag: Tag) {
        if self
            .tag_keys
            .insert((tag.project_id, tag.tagger.clone(), tag.label.clone()))
        {
            self.tags.entry(tag.project_id).or_default().push(tag);
        }
    }

    pub fn tags(&self, project: ProjectId) -> &[Tag] {
        self.tags.get(&project).map_or(&[], Vec::as_slice)
    }

    pub fn next_comment_id(&self) -> u64 {
        self.comment_count + 1
    }

    pub fn insert_comment(&mut self, comment: Comment) {
        self.comment_count = self.comment_count.max(comment.comment_id);
        self.comments.entry(comment.project_id).or_default().push(comment);
    }

    pub fn comments(&self, project: ProjectId) -> &[Comment] {
        self.comments.get(&project).map_or(&[], Vec::as_slice)
    }

    /// Later ratings by the same rater replace earlier ones.
    pub fn upsert_rating(&mut self, rating: Rating) {
        self.ratings
            .entry(rating.project_id)
            .or_default()
            .insert(rating.rater.clone(), rating);
    }

    pub fn ratings(&self, project: ProjectId) -> impl Iterator<Item = &Rating> {
        self.ratings.get(&project).into_iter().flat_map(|m| m.values())
    }

    pub fn rating_mean(&self, project: ProjectId) -> Option<RatingMean> {
        let (sum, count) = self
            .ratings(project)
            .fold((0u64, 0u64), |(s, c), r| (s + u64::from(r.stars), c + 1));
        (count > 0).then_some(RatingMean { sum, count })
    }

    pub fn next_gallery_id(&self) -> u64 {
        self.galleries.keys().next_back().map_or(1, |id| id + 1)
    }

    pub fn gallery(&self, id: u64) -> Option<&Gallery> {
        self.galleries.get(&id)
    }

    pub fn insert_gallery(&mut self, gallery: Gallery) {
        self.galleries.insert(gallery.gallery_id, gallery);
    }

    /// Appends to a gallery unless already present; returns whether it
    /// changed.
    pub fn add_to_gallery(&mut self, gallery_id: u64, project: ProjectId) -> bool {
        match self.galleries.get_mut(&gallery_id) {
            Some(g) if !g.projects.contains(&project) => {
                g.projects.push(project);
                true
            }
            _ => false,
        }
    }

    /// Whether `actor` may add projects to the gallery.
    pub fn may_curate(&self, gallery: &Gallery, actor: &str) -> bool {
        gallery.owner == actor || self.user(actor).is_some_and(|u| u.is_admin)
    }

    pub fn galleries_containing(&self, project: ProjectId) -> impl Iterator<Item = &Gallery> {
        self.galleries
            .values()
            .filter(move |g| g.projects.contains(&project))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagCount {
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectRef {
    pub project_id: ProjectId,
    pub title: String,
    pub author: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReuseRef {
    pub project_id: ProjectId,
    pub title: String,
    pub author: String,
    #[serde(serialize_with = "serialize_fraction")]
    pub overlap: Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GalleryRef {
    pub gallery_id: u64,
    pub name: String,
    pub owner: String,
}

/// Everything a project page shows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectSummary {
    pub title: String,
    pub author: String,
    pub uploaded_at: Timestamp,
    /// Distinct labels by ascending label, with how many members applied each.
    pub tags: Vec<TagCount>,
    pub comments: Vec<Comment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating_mean: Option<RatingMean>,
    pub rating_count: u64,
    pub remix_count: u64,
    pub based_on: Option<ProjectRef>,
    pub reuses: Vec<ReuseRef>,
    pub galleries: Vec<GalleryRef>,
    pub download_count: u64,
    pub view_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectCard {
    pub project_id: ProjectId,
    pub title: String,
    pub author: String,
    pub uploaded_at: Timestamp,
    pub featured: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating_mean: Option<RatingMean>,
    pub rating_count: u64,
    pub remix_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrontPage {
    pub newest: Vec<ProjectCard>,
    pub top_rated: Vec<ProjectCard>,
    pub most_remixed: Vec<ProjectCard>,
    pub featured: Vec<ProjectCard>,
}

/// Read-only view over committed state.
pub struct Snapshot<'a> {
    pub repo: &'a Repository,
    pub lineage: &'a LineageGraph,
    pub community: &'a Community,
    pub events: &'a EventLog,
}

impl Snapshot<'_> {
    fn project_ref(&self, id: ProjectId) -> Option<ProjectRef> {
        self.repo.get_project(id).ok().map(|p| ProjectRef {
            project_id: id,
            title: p.title.clone(),
            author: p.author.clone(),
        })
    }

    pub fn project_summary(&self, id: ProjectId) -> Result<ProjectSummary, CommunityError> {
        let meta = self
            .repo
            .get_project(id)
            .map_err(|_| CommunityError::NotFound(format!("project {id}")))?;

        let mut tag_counts: BTreeMap<&str, u64> = BTreeMap::new();
        for tag in self.community.tags(id) {
            *tag_counts.entry(tag.label.as_str()).or_default() += 1;
        }
        let reuses = self
            .lineage
            .parent_edges(id)
            .into_iter()
            .filter(|e| e.kind == EdgeKind::Detected)
            .filter_map(|e| {
                self.project_ref(e.parent).map(|r| ReuseRef {
                    project_id: r.project_id,
                    title: r.title,
                    author: r.author,
                    overlap: e.overlap,
                })
            })
            .collect();
        let subject = Subject::Project(id);

        Ok(ProjectSummary {
            title: meta.title.clone(),
            author: meta.author.clone(),
            uploaded_at: meta.uploaded_at,
            tags: tag_counts
                .into_iter()
                .map(|(label, count)| TagCount {
                    label: label.to_string(),
                    count,
                })
                .collect(),
            comments: self.community.comments(id).to_vec(),
            rating_mean: self.community.rating_mean(id),
            rating_count: self.community.ratings(id).count() as u64,
            remix_count: self.lineage.remix_count(id) as u64,
            based_on: self
                .lineage
                .declared_parent_of(id)
                .and_then(|p| self.project_ref(p)),
            reuses,
            galleries: self
                .community
                .galleries_containing(id)
                .map(|g| GalleryRef {
                    gallery_id: g.gallery_id,
                    name: g.name.clone(),
                    owner: g.owner.clone(),
                })
                .collect(),
            download_count: self.events.count(EventKind::Download, &subject),
            view_count: self.events.count(EventKind::View, &subject),
        })
    }

    fn card(&self, p: &StoredProject) -> ProjectCard {
        ProjectCard {
            project_id: p.project_id,
            title: p.title.clone(),
            author: p.author.clone(),
            uploaded_at: p.uploaded_at,
            featured: p.featured,
            rating_mean: self.community.rating_mean(p.project_id),
            rating_count: self.community.ratings(p.project_id).count() as u64,
            remix_count: self.lineage.remix_count(p.project_id) as u64,
        }
    }

    /// The four discovery lists, each cut to `limit` entries. Every list is
    /// ordered by its key and then by ascending project id.
    pub fn front_page(&self, limit: usize) -> FrontPage {
        let cards: Vec<ProjectCard> = self.repo.projects().map(|p| self.card(p)).collect();
        let newest_first = |a: &ProjectCard, b: &ProjectCard| {
            b.uploaded_at.cmp(&a.uploaded_at).then(a.project_id.cmp(&b.project_id))
        };
        let list = |filter: &dyn Fn(&ProjectCard) -> bool,
                    order: &dyn Fn(&ProjectCard, &ProjectCard) -> Ordering| {
            let mut out: Vec<ProjectCard> = cards.iter().filter(|c| filter(c)).cloned().collect();
            out.sort_by(|a, b| order(a, b));
            out.truncate(limit);
            out
        };
        FrontPage {
            newest: list(&|_| true, &newest_first),
            top_rated: list(&|c| c.rating_mean.is_some(), &|a, b| {
                b.rating_mean.cmp(&a.rating_mean).then(a.project_id.cmp(&b.project_id))
            }),
            most_remixed: list(&|_| true, &|a, b| {
                b.remix_count.cmp(&a.remix_count).then(a.project_id.cmp(&b.project_id))
            }),
            featured: list(&|c| c.featured, &newest_first),
        }
    }
}
