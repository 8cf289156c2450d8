//! Per-session event log with index-based resume.

use std::collections::VecDeque;
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Status,
    Epoch,
    QueryIssued,
    AnswerApplied,
    Metrics,
    /// A display event whose payload was dropped to bound memory.
    Gap,
    Done,
    Error,
}

impl EventKind {
    /// Display events may lose their payload; nothing answer-related may.
    pub fn is_display(self) -> bool {
        matches!(self, EventKind::Epoch | EventKind::Metrics)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub index: u64,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug)]
struct LogState {
    events: Vec<Event>,
    /// Positions of display events that still hold their payload, oldest first.
    retained: VecDeque<usize>,
    finished: bool,
}

/// Append-only, strictly ordered event feed.
///
/// Indices are dense: event `k` is always at position `k`, so a reader that
/// resumes from its last index sees no holes. Once more than
/// `display_capacity` display events hold payloads, the oldest is replaced by
/// a [`EventKind::Gap`] marker in place.
#[derive(Debug)]
pub struct EventLog {
    state: Mutex<LogState>,
    display_capacity: usize,
    count: watch::Sender<u64>,
}

impl EventLog {
    pub fn new(display_capacity: usize) -> Self {
        Self {
            state: Mutex::new(LogState {
                events: Vec::new(),
                retained: VecDeque::new(),
                finished: false,
            }),
            display_capacity,
            count: watch::Sender::new(0),
        }
    }

    fn lock(&self) -> MutexGuard<'_, LogState> {
        self.state.lock().expect("event log poisoned")
    }

    /// Appends an event and returns its index. Never blocks on readers.
    pub fn push(&self, kind: EventKind, payload: Value) -> u64 {
        let mut st = self.lock();
        let index = st.events.len() as u64;
        st.events.push(Event { index, kind, payload });
        if kind.is_display() {
            st.retained.push_back(index as usize);
            while st.retained.len() > self.display_capacity {
                let Some(old) = st.retained.pop_front() else { break };
                let e = &mut st.events[old];
                e.payload = json!({ "dropped": e.kind });
                e.kind = EventKind::Gap;
            }
        }
        drop(st);
        self.count.send_replace(index + 1);
        index
    }

    /// Appends the terminal [`EventKind::Done`] event. Nothing follows it.
    pub fn finish(&self, payload: Value) -> u64 {
        let index = {
            let mut st = self.lock();
            let index = st.events.len() as u64;
            st.events.push(Event {
                index,
                kind: EventKind::Done,
                payload,
            });
            st.finished = true;
            index
        };
        self.count.send_replace(index + 1);
        index
    }

    /// Whether the terminal event has been appended.
    pub fn is_finished(&self) -> bool {
        self.lock().finished
    }

    /// Events with index `>= from`, in order.
    pub fn since(&self, from: u64) -> Vec<Event> {
        let st = self.lock();
        st.events
            .get(from as usize..)
            .map(<[Event]>::to_vec)
            .unwrap_or_default()
    }

    pub fn len(&self) -> u64 {
        self.lock().events.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Watches the number of events appended so far.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.count.subscribe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_are_dense_and_resume_is_exact() {
        let log = EventLog::new(8);
        for k in 0..5 {
            assert_eq!(log.push(EventKind::Status, json!(k)), k);
        }
        let tail = log.since(3);
        assert_eq!(tail.iter().map(|e| e.index).collect::<Vec<_>>(), vec![3, 4]);
        assert!(log.since(5).is_empty());
        assert!(log.since(99).is_empty());
    }

    #[test]
    fn only_display_payloads_are_dropped() {
        let log = EventLog::new(2);
        log.push(EventKind::Epoch, json!({"epoch": 0}));
        log.push(EventKind::AnswerApplied, json!({"i": 1}));
        log.push(EventKind::Epoch, json!({"epoch": 1}));
        log.push(EventKind::Metrics, json!({"acc": 0.5}));
        let all = log.since(0);
        assert_eq!(all.len(), 4);
        assert_eq!(all[0].kind, EventKind::Gap);
        assert_eq!(all[0].payload, json!({"dropped": "epoch"}));
        assert_eq!(all[1].kind, EventKind::AnswerApplied);
        assert_eq!(all[2].payload, json!({"epoch": 1}));
        assert_eq!(all.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn finish_marks_the_end() {
        let log = EventLog::new(4);
        log.push(EventKind::Status, Value::Null);
        assert!(!log.is_finished());
        assert_eq!(log.finish(json!({})), 1);
        assert!(log.is_finished());
        assert_eq!(log.since(1)[0].kind, EventKind::Done);
    }

    #[test]
    fn subscribers_see_the_count() {
        let log = EventLog::new(4);
        let rx = log.subscribe();
        log.push(EventKind::Status, Value::Null);
        assert_eq!(*rx.borrow(), 1);
    }
}
