//! The append-only activity log and the four-state participation model.
//!
//! A member's state over a time window sits on two axes. Production: did
//! they upload anything? Activity: did they tag, comment, rate, befriend or
//! curate a gallery? Viewing and downloading alone leave a member a passive
//! consumer.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{canonical, ProjectId, Timestamp};

pub const DEFAULT_WINDOW_DAYS: u32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParticipationError {
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("window start must precede its end")]
    EmptyWindow,
    #[error("event {found} does not follow {expected_after}")]
    OutOfOrder { expected_after: u64, found: u64 },
    #[error("malformed event log line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    View,
    Download,
    Upload,
    Tag,
    Comment,
    Rate,
    Friend,
    GalleryAdd,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::View,
        EventKind::Download,
        EventKind::Upload,
        EventKind::Tag,
        EventKind::Comment,
        EventKind::Rate,
        EventKind::Friend,
        EventKind::GalleryAdd,
    ];

    /// Social-metadata actions: the "active" axis.
    pub fn is_active(&self) -> bool {
        matches!(
            self,
            EventKind::Tag | EventKind::Comment | EventKind::Rate | EventKind::Friend | EventKind::GalleryAdd
        )
    }

    pub fn is_production(&self) -> bool {
        matches!(self, EventKind::Upload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subject {
    Project(ProjectId),
    User(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: u64,
    pub actor: String,
    pub kind: EventKind,
    pub subject: Option<Subject>,
    pub at: Timestamp,
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, ParticipationError> {
        if start >= end {
            return Err(ParticipationError::EmptyWindow);
        }
        Ok(Window { start, end })
    }

    /// The `days` days ending at (and including) `now`.
    pub fn trailing_days(now: Timestamp, days: u32) -> Result<Self, ParticipationError> {
        if days == 0 {
            return Err(ParticipationError::EmptyWindow);
        }
        Window::new(now.minus_days(i64::from(days)).plus_millis(1), now.plus_millis(1))
    }

    pub fn contains(&self, at: Timestamp) -> bool {
        self.start <= at && at < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParticipationState {
    PassiveConsumption,
    ActiveConsumption,
    PassiveProduction,
    ActiveProduction,
}

impl ParticipationState {
    pub fn from_axes(production: bool, active: bool) -> Self {
        match (production, active) {
            (false, false) => ParticipationState::PassiveConsumption,
            (false, true) => ParticipationState::ActiveConsumption,
            (true, false) => ParticipationState::PassiveProduction,
            (true, true) => ParticipationState::ActiveProduction,
        }
    }

    pub fn is_production(&self) -> bool {
        matches!(self, ParticipationState::PassiveProduction | ParticipationState::ActiveProduction)
    }

    pub fn is_active(&self) -> bool {
        matches!(self, ParticipationState::ActiveConsumption | ParticipationState::ActiveProduction)
    }
}

impl fmt::Display for ParticipationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Classifies from any event sequence; events of other actors or outside
/// the window are ignored.
pub fn classify_events<'a>(
    events: impl IntoIterator<Item = &'a EventRecord>,
    user: &str,
    window: Window,
) -> ParticipationState {
    let (mut production, mut active) = (false, false);
    for e in events {
        if e.actor == user && window.contains(e.at) {
            production |= e.kind.is_production();
            active |= e.kind.is_active();
        }
    }
    ParticipationState::from_axes(production, active)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CommunityStats {
    pub active_consumption: u64,
    pub active_production: u64,
    pub passive_consumption: u64,
    pub passive_production: u64,
    pub total_users: u64,
    pub window_end: Option<Timestamp>,
    pub window_start: Option<Timestamp>,
}

impl CommunityStats {
    pub fn count(&self, state: ParticipationState) -> u64 {
        match state {
            ParticipationState::PassiveConsumption => self.passive_consumption,
            ParticipationState::ActiveConsumption => self.active_consumption,
            ParticipationState::PassiveProduction => self.passive_production,
            ParticipationState::ActiveProduction => self.active_production,
        }
    }

    fn bump(&mut self, state: ParticipationState) {
        let slot = match state {
            ParticipationState::PassiveConsumption => &mut self.passive_consumption,
            ParticipationState::ActiveConsumption => &mut self.active_consumption,
            ParticipationState::PassiveProduction => &mut self.passive_production,
            ParticipationState::ActiveProduction => &mut self.active_production,
        };
        *slot += 1;
        self.total_users += 1;
    }
}

/// Append-only event log with per-actor and per-subject indexes.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<EventRecord>,
    by_actor: HashMap<String, Vec<usize>>,
    counters: BTreeMap<(EventKind, Subject), u64>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&self) -> u64 {
        self.events.last().map_or(1, |e| e.event_id + 1)
    }

    pub fn last_at(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.at)
    }

    /// Builds the next record without appending it.
    pub fn prepare(&self, actor: &str, kind: EventKind, subject: Option<Subject>, at: Timestamp) -> EventRecord {
        EventRecord {
            event_id: self.next_id(),
            actor: actor.to_string(),
            kind,
            subject,
            at: self.last_at().map_or(at, |last| last.max(at)),
        }
    }

    /// Appends a record; ids must continue the sequence and time must not
    /// go backwards.
    pub fn append(&mut self, record: EventRecord) -> Result<u64, ParticipationError> {
        let expected_after = self.next_id() - 1;
        if record.event_id != expected_after + 1 || self.last_at().is_some_and(|last| record.at < last) {
            return Err(ParticipationError::OutOfOrder {
                expected_after,
                found: record.event_id,
            });
        }
        if let Some(subject) = &record.subject {
            *self.counters.entry((record.kind, subject.clone())).or_default() += 1;
        }
        self.by_actor
            .entry(record.actor.clone())
            .or_default()
            .push(self.events.len());
        let id = record.event_id;
        self.events.push(record);
        Ok(id)
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events_of<'a>(&'a self, actor: &str) -> impl Iterator<Item = &'a EventRecord> + 'a {
        self.by_actor
            .get(actor)
            .into_iter()
            .flatten()
            .map(|&i| &self.events[i])
    }

    /// Live counter of `kind` events about `subject`.
    pub fn count(&self, kind: EventKind, subject: &Subject) -> u64 {
        self.counters
            .get(&(kind, subject.clone()))
            .copied()
            .unwrap_or(0)
    }

    pub fn counters(&self) -> &BTreeMap<(EventKind, Subject), u64> {
        &self.counters
    }

    pub fn classify(&self, user: &str, window: Window) -> ParticipationState {
        classify_events(self.events_of(user), user, window)
    }

    /// Partitions `users` into the four states.
    pub fn community_stats<'a>(&self, users: impl IntoIterator<Item = &'a str>, window: Window) -> CommunityStats {
        let mut stats = CommunityStats {
            window_start: Some(window.start),
            window_end: Some(window.end),
            ..CommunityStats::default()
        };
        for user in users {
            stats.bump(self.classify(user, window));
        }
        stats
    }

    /// One canonical JSON document per line, in event-id order.
    pub fn export_ndjson(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            out.extend(canonical::to_vec(e).expect("event serializes"));
            out.push(b'\n');
        }
        out
    }

    pub fn from_ndjson(bytes: &[u8]) -> Result<Self, ParticipationError> {
        let mut log = EventLog::new();
        for (i, line) in bytes.split(|b| *b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let record: EventRecord = serde_json::from_slice(line).map_err(|e| ParticipationError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            log.append(record)?;
        }
        Ok(log)
    }
}
