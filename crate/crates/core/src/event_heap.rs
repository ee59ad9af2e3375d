//! The event heap: a TTL-bounded, unstructured event store shared by every
//! middleware component.
//!
//! Components coordinate by posting [`Event`]s and retrieving them with an
//! [`EventTemplate`], either destructively ([`ConsumeMode::Take`]) or by
//! looking without removing ([`ConsumeMode::Snoop`]). Retrieval is
//! oldest-first by sequence number. An event may name a set of target
//! components; only those components ever see it.
//!
//! Time is logical. The heap's clock only moves through [`EventHeap::expire`],
//! which also evicts everything whose lifetime has run out.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Tick;

/// A field value carried by an event.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_owned())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Str(s)
    }
}

impl From<i64> for Scalar {
    fn from(i: i64) -> Self {
        Scalar::Int(i)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

/// The unit of coordination on the heap.
///
/// `posted_at` and `seq` are assigned by [`EventHeap::post`]; whatever the
/// caller put there is overwritten.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub event_type: String,
    pub fields: BTreeMap<String, Scalar>,
    pub source: String,
    /// Empty means visible to every component.
    pub targets: BTreeSet<String>,
    pub ttl: Tick,
    pub posted_at: Tick,
    pub seq: u64,
}

impl Event {
    pub fn new(event_type: impl Into<String>, source: impl Into<String>, ttl: Tick) -> Self {
        Self {
            event_type: event_type.into(),
            fields: BTreeMap::new(),
            source: source.into(),
            targets: BTreeSet::new(),
            ttl,
            posted_at: 0,
            seq: 0,
        }
    }

    pub fn with_field(mut self, key: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.fields.insert(key.into(), value.into());
        self
    }

    pub fn with_target(mut self, component: impl Into<String>) -> Self {
        self.targets.insert(component.into());
        self
    }

    /// First tick at which the event is no longer live.
    pub fn expires_at(&self) -> Tick {
        self.posted_at.saturating_add(self.ttl)
    }

    pub fn is_live(&self, now: Tick) -> bool {
        now < self.expires_at()
    }

    pub fn visible_to(&self, consumer: &str) -> bool {
        self.targets.is_empty() || self.targets.contains(consumer)
    }
}

/// Equality-subset matching: the type (when given) must be equal and every
/// constrained field must be present with an equal value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTemplate {
    pub event_type: Option<String>,
    pub field_constraints: BTreeMap<String, Scalar>,
}

impl EventTemplate {
    /// Matches every event.
    pub fn any() -> Self {
        Self::default()
    }

    pub fn of_type(event_type: impl Into<String>) -> Self {
        Self {
            event_type: Some(event_type.into()),
            field_constraints: BTreeMap::new(),
        }
    }

    pub fn with_field(mut self, key: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.field_constraints.insert(key.into(), value.into());
        self
    }

    pub fn matches(&self, event: &Event) -> bool {
        if let Some(ty) = &self.event_type {
            if ty != &event.event_type {
                return false;
            }
        }
        self.field_constraints
            .iter()
            .all(|(k, v)| event.fields.get(k) == Some(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumeMode {
    /// Remove the returned event.
    Take,
    /// Leave the heap untouched.
    Snoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubscriptionId(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeapError {
    #[error("invalid event: {0}")]
    InvalidEvent(&'static str),
    #[error("clock regression: heap is at {current}, asked to move to {requested}")]
    ClockRegression { current: Tick, requested: Tick },
    #[error("unknown subscription {0:?}")]
    UnknownSubscription(SubscriptionId),
}

/// One line of the post log kept for the trace viewer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostRecord {
    pub seq: u64,
    pub event_type: String,
    pub source: String,
    pub targets: BTreeSet<String>,
    pub posted_at: Tick,
}

struct Subscriber {
    consumer: String,
    template: EventTemplate,
    tx: Sender<Event>,
}

struct Inner {
    next_seq: u64,
    events: BTreeMap<u64, Event>,
    subscribers: BTreeMap<SubscriptionId, Subscriber>,
    next_subscription: u64,
    log: Vec<PostRecord>,
}

/// Thread-safe event heap. Every operation takes one lock, so each appears
/// atomic to concurrent callers.
pub struct EventHeap {
    inner: Mutex<Inner>,
    now: Arc<AtomicU64>,
}

impl Default for EventHeap {
    fn default() -> Self {
        Self::new()
    }
}

impl EventHeap {
    pub fn new() -> Self {
        Self {
            inner: Mutex::new(Inner {
                next_seq: 1,
                events: BTreeMap::new(),
                subscribers: BTreeMap::new(),
                next_subscription: 1,
                log: Vec::new(),
            }),
            now: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn now(&self) -> Tick {
        self.now.load(Ordering::SeqCst)
    }

    /// Stores the event and fans it out to matching subscribers. Returns the
    /// assigned sequence number.
    pub fn post(&self, mut event: Event) -> Result<u64, HeapError> {
        if event.event_type.is_empty() {
            return Err(HeapError::InvalidEvent("empty event type"));
        }
        if event.ttl == 0 {
            return Err(HeapError::InvalidEvent("ttl must be positive"));
        }
        let mut inner = self.inner.lock();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        event.seq = seq;
        event.posted_at = self.now();

        inner.log.push(PostRecord {
            seq,
            event_type: event.event_type.clone(),
            source: event.source.clone(),
            targets: event.targets.clone(),
            posted_at: event.posted_at,
        });
        // Dropped receivers are pruned lazily; unsubscribe is the normal path.
        inner.subscribers.retain(|_, sub| {
            if event.visible_to(&sub.consumer) && sub.template.matches(&event) {
                sub.tx.send(event.clone()).is_ok()
            } else {
                true
            }
        });
        inner.events.insert(seq, event);
        Ok(seq)
    }

    /// Oldest live event visible to `consumer` and matching `template`.
    pub fn consume(
        &self,
        consumer: &str,
        template: &EventTemplate,
        mode: ConsumeMode,
    ) -> Option<Event> {
        let mut inner = self.inner.lock();
        let now = self.now();
        let seq = inner
            .events
            .values()
            .find(|e| e.is_live(now) && e.visible_to(consumer) && template.matches(e))
            .map(|e| e.seq)?;
        match mode {
            ConsumeMode::Take => inner.events.remove(&seq),
            ConsumeMode::Snoop => inner.events.get(&seq).cloned(),
        }
    }

    /// Every live event visible to `consumer` and matching `template`, oldest
    /// first, without removing anything.
    pub fn snoop_all(&self, consumer: &str, template: &EventTemplate) -> Vec<Event> {
        let inner = self.inner.lock();
        let now = self.now();
        inner
            .events
            .values()
            .filter(|e| e.is_live(now) && e.visible_to(consumer) && template.matches(e))
            .cloned()
            .collect()
    }

    /// Registers a subscriber. Only events posted after this call are
    /// delivered.
    pub fn subscribe(&self, consumer: impl Into<String>, template: EventTemplate) -> Subscription {
        let (tx, rx) = mpsc::channel();
        let mut inner = self.inner.lock();
        let id = SubscriptionId(inner.next_subscription);
        inner.next_subscription += 1;
        inner.subscribers.insert(
            id,
            Subscriber {
                consumer: consumer.into(),
                template,
                tx,
            },
        );
        Subscription {
            id,
            rx,
            now: Arc::clone(&self.now),
        }
    }

    pub fn unsubscribe(&self, id: SubscriptionId) -> Result<(), HeapError> {
        self.inner
            .lock()
            .subscribers
            .remove(&id)
            .map(|_| ())
            .ok_or(HeapError::UnknownSubscription(id))
    }

    /// Moves the clock to `now` and evicts every event with
    /// `posted_at + ttl <= now`. Returns how many were evicted.
    pub fn expire(&self, now: Tick) -> Result<usize, HeapError> {
        let mut inner = self.inner.lock();
        let current = self.now();
        if now < current {
            return Err(HeapError::ClockRegression {
                current,
                requested: now,
            });
        }
        self.now.store(now, Ordering::SeqCst);
        let before = inner.events.len();
        inner.events.retain(|_, e| e.is_live(now));
        Ok(before - inner.events.len())
    }

    /// Number of stored events, live or not yet swept.
    pub fn len(&self) -> usize {
        self.inner.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Post log entries with `seq > after`.
    pub fn post_log(&self, after: u64) -> Vec<PostRecord> {
        let inner = self.inner.lock();
        let start = inner.log.partition_point(|r| r.seq <= after);
        inner.log[start..].to_vec()
    }
}

/// Delivery queue of a subscription. Events whose lifetime ran out while
/// queued are dropped on read.
pub struct Subscription {
    id: SubscriptionId,
    rx: Receiver<Event>,
    now: Arc<AtomicU64>,
}

impl Subscription {
    pub fn id(&self) -> SubscriptionId {
        self.id
    }

    /// Next queued live event, if any is ready.
    pub fn try_next(&self) -> Option<Event> {
        loop {
            match self.rx.try_recv() {
                Ok(e) if e.is_live(self.now.load(Ordering::SeqCst)) => return Some(e),
                Ok(_) => continue,
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => return None,
            }
        }
    }

    /// Blocks up to `timeout` for the next live event.
    pub fn next_timeout(&self, timeout: Duration) -> Option<Event> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(e) if e.is_live(self.now.load(Ordering::SeqCst)) => return Some(e),
                Ok(_) => continue,
                Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => return None,
            }
        }
    }

    /// Drains every live event currently queued.
    pub fn drain(&self) -> Vec<Event> {
        std::iter::from_fn(|| self.try_next()).collect()
    }
}
