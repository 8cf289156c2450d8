//! Answer sources for pair queries.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::{AnswerRecord, ConstraintInbox, ConstraintSource, Link};
use crate::error::{Error, Result};
use crate::query::QueryDecision;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Simulated,
    Human,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub i: usize,
    pub j: usize,
    pub link: Link,
    pub latency_ms: u64,
    pub source: AnswerSource,
}

/// A pair the trainer wants answered.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRequest {
    pub i: usize,
    pub j: usize,
    pub step: u64,
    pub source: ConstraintSource,
    /// Scores behind the choice; absent for seed queries.
    pub decision: Option<QueryDecision>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OracleReply {
    Answered(Link),
    /// The answer will arrive later through the constraint inbox.
    Pending(String),
}

pub trait Oracle: Send {
    fn ask(&mut self, request: &QueryRequest) -> Result<OracleReply>;

    /// True while an earlier question is still unanswered.
    fn busy(&self) -> bool {
        false
    }
}

/// Answers from ground-truth labels: must-link iff the labels agree.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    labels: Vec<Option<usize>>,
    orientation: String,
}

impl SimulatedOracle {
    pub fn new(orientation: impl Into<String>, labels: Vec<Option<usize>>) -> Self {
        Self {
            labels,
            orientation: orientation.into(),
        }
    }

    pub fn from_labels(orientation: impl Into<String>, labels: &[usize]) -> Self {
        Self::new(orientation, labels.iter().copied().map(Some).collect())
    }

    fn label(&self, id: usize) -> Result<usize> {
        self.labels
            .get(id)
            .copied()
            .flatten()
            .ok_or_else(|| Error::MissingLabel {
                sample: id,
                orientation: self.orientation.clone(),
            })
    }

    pub fn answer(&self, i: usize, j: usize) -> Result<OracleAnswer> {
        let link = if self.label(i)? == self.label(j)? {
            Link::MustLink
        } else {
            Link::CannotLink
        };
        Ok(OracleAnswer {
            i,
            j,
            link,
            latency_ms: 0,
            source: AnswerSource::Simulated,
        })
    }
}

impl Oracle for SimulatedOracle {
    fn ask(&mut self, request: &QueryRequest) -> Result<OracleReply> {
        Ok(OracleReply::Answered(self.answer(request.i, request.j)?.link))
    }
}

/// Serves the answers of a recorded log in order.
#[derive(Clone, Debug)]
pub struct ReplayOracle {
    log: Vec<AnswerRecord>,
    position: usize,
}

impl ReplayOracle {
    /// Pseudo links in the log are skipped; they are never asked.
    pub fn new(log: &[AnswerRecord]) -> Self {
        Self {
            log: log
                .iter()
                .filter(|r| r.source != ConstraintSource::Pseudo)
                .cloned()
                .collect(),
            position: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.log.len() - self.position
    }

    pub fn next_answer(&mut self, i: usize, j: usize) -> Result<OracleAnswer> {
        let rec = self
            .log
            .get(self.position)
            .ok_or(Error::ReplayExhausted(self.position))?;
        let same = (rec.i == i && rec.j == j) || (rec.i == j && rec.j == i);
        if !same {
            return Err(Error::DivergentReplay {
                index: self.position,
                logged_i: rec.i,
                logged_j: rec.j,
                asked_i: i,
                asked_j: j,
            });
        }
        self.position += 1;
        Ok(OracleAnswer {
            i,
            j,
            link: rec.link,
            latency_ms: 0,
            source: AnswerSource::Replay,
        })
    }
}

impl Oracle for ReplayOracle {
    fn ask(&mut self, request: &QueryRequest) -> Result<OracleReply> {
        Ok(OracleReply::Answered(self.next_answer(request.i, request.j)?.link))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketStatus {
    Pending,
    Resolved,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ticket {
    pub id: String,
    pub i: usize,
    pub j: usize,
    pub step: u64,
    pub source: ConstraintSource,
    pub decision: Option<QueryDecision>,
    pub status: TicketStatus,
    pub answer: Option<Link>,
    #[serde(skip)]
    issued: Instant,
    /// Continue-policy tickets deliver through the inbox; blocking tickets
    /// hand the answer straight back to the waiting trainer.
    #[serde(skip)]
    via_inbox: bool,
}

#[derive(Debug, Default)]
struct TicketState {
    tickets: BTreeMap<u64, Ticket>,
    next: u64,
    closed: bool,
}

/// Queue of questions waiting for a human. Shared between the trainer and
/// request handlers; every transition happens under one lock.
#[derive(Clone, Debug)]
pub struct TicketQueue {
    shared: Arc<(Mutex<TicketState>, Condvar)>,
    inbox: ConstraintInbox,
}

fn parse_ticket(id: &str) -> Result<u64> {
    id.strip_prefix("t-")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::UnknownTicket(id.to_string()))
}

impl TicketQueue {
    pub fn new(inbox: ConstraintInbox) -> Self {
        Self {
            shared: Arc::new((Mutex::new(TicketState::default()), Condvar::new())),
            inbox,
        }
    }

    fn lock(&self) -> MutexGuard<'_, TicketState> {
        self.shared.0.lock().expect("ticket queue poisoned")
    }

    pub fn inbox(&self) -> &ConstraintInbox {
        &self.inbox
    }

    fn enqueue(&self, request: &QueryRequest, via_inbox: bool) -> Result<String> {
        let mut st = self.lock();
        if st.closed {
            return Err(Error::TicketCancelled("session closed".into()));
        }
        let n = st.next;
        st.next += 1;
        let id = format!("t-{n}");
        st.tickets.insert(
            n,
            Ticket {
                id: id.clone(),
                i: request.i,
                j: request.j,
                step: request.step,
                source: request.source,
                decision: request.decision.clone(),
                status: TicketStatus::Pending,
                answer: None,
                issued: Instant::now(),
                via_inbox,
            },
        );
        Ok(id)
    }

    /// Oldest unresolved ticket.
    pub fn next_pending(&self) -> Option<Ticket> {
        self.lock()
            .tickets
            .values()
            .find(|t| t.status == TicketStatus::Pending)
            .cloned()
    }

    pub fn pending_count(&self) -> usize {
        self.lock()
            .tickets
            .values()
            .filter(|t| t.status == TicketStatus::Pending)
            .count()
    }

    pub fn get(&self, id: &str) -> Result<Ticket> {
        let n = parse_ticket(id)?;
        self.lock()
            .tickets
            .get(&n)
            .cloned()
            .ok_or_else(|| Error::UnknownTicket(id.to_string()))
    }

    /// Resolves a pending ticket exactly once.
    pub fn resolve(&self, id: &str, link: Link) -> Result<OracleAnswer> {
        let n = parse_ticket(id)?;
        let mut st = self.lock();
        let closed = st.closed;
        let ticket = st
            .tickets
            .get_mut(&n)
            .ok_or_else(|| Error::UnknownTicket(id.to_string()))?;
        match ticket.status {
            TicketStatus::Resolved => return Err(Error::TicketConflict(id.to_string())),
            TicketStatus::Cancelled => return Err(Error::TicketCancelled(id.to_string())),
            TicketStatus::Pending if closed => return Err(Error::TicketCancelled(id.to_string())),
            TicketStatus::Pending => {}
        }
        ticket.status = TicketStatus::Resolved;
        ticket.answer = Some(link);
        let answer = OracleAnswer {
            i: ticket.i,
            j: ticket.j,
            link,
            latency_ms: ticket.issued.elapsed().as_millis() as u64,
            source: AnswerSource::Human,
        };
        if ticket.via_inbox {
            self.inbox.push(AnswerRecord {
                i: ticket.i,
                j: ticket.j,
                link,
                step: ticket.step,
                source: ticket.source,
            });
        }
        drop(st);
        self.shared.1.notify_all();
        Ok(answer)
    }

    /// Cancels every pending ticket and refuses new ones.
    pub fn close(&self) {
        let mut st = self.lock();
        st.closed = true;
        for t in st.tickets.values_mut() {
            if t.status == TicketStatus::Pending {
                t.status = TicketStatus::Cancelled;
            }
        }
        drop(st);
        self.shared.1.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Blocks until the ticket is resolved or cancelled.
    pub fn wait(&self, id: &str) -> Result<Link> {
        let n = parse_ticket(id)?;
        let mut st = self.lock();
        loop {
            let t = st.tickets.get(&n).ok_or_else(|| Error::UnknownTicket(id.to_string()))?;
            match (t.status, t.answer) {
                (TicketStatus::Resolved, Some(link)) => return Ok(link),
                (TicketStatus::Cancelled, _) => return Err(Error::TicketCancelled(id.to_string())),
                _ => st = self.shared.1.wait(st).expect("ticket queue poisoned"),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitPolicy {
    /// Keep training; the answer is applied at a later batch boundary.
    #[default]
    Continue,
    /// Stop at the query until the answer arrives.
    Block,
}

/// Oracle backed by a [`TicketQueue`].
#[derive(Clone, Debug)]
pub struct HumanOracle {
    queue: TicketQueue,
    policy: WaitPolicy,
}

impl HumanOracle {
    pub fn new(queue: TicketQueue, policy: WaitPolicy) -> Self {
        Self { queue, policy }
    }

    pub fn queue(&self) -> &TicketQueue {
        &self.queue
    }
}

impl Oracle for HumanOracle {
    fn ask(&mut self, request: &QueryRequest) -> Result<OracleReply> {
        match self.policy {
            WaitPolicy::Continue => Ok(OracleReply::Pending(self.queue.enqueue(request, true)?)),
            WaitPolicy::Block => {
                let id = self.queue.enqueue(request, false)?;
                Ok(OracleReply::Answered(self.queue.wait(&id)?))
            }
        }
    }

    fn busy(&self) -> bool {
        self.queue.pending_count() > 0
    }
}
