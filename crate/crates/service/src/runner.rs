//! A training session running on its own thread, observed through a
//! snapshot and an event log.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;

use orient_core::constraints::AnswerRecord;
use orient_core::numerics::project_2d;
use orient_core::oracle::{Oracle, OracleReply, QueryRequest, Ticket, TicketQueue};
use orient_core::trainer::{Control, EpochSummary, Phase, RunSummary, StepReport, TrainHooks};
use orient_core::{Error, LossBreakdown, MetricsReport, Result, Session};
use serde::Serialize;
use serde_json::json;

use crate::events::{EventKind, EventLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Created,
    Pretraining,
    Training,
    Paused,
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetView {
    pub spent: usize,
    pub total: usize,
}

/// What `get_state` reports, minus the live ticket list.
#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub status: Status,
    pub epoch: usize,
    pub step: u64,
    pub budget: BudgetView,
    pub loss: Option<LossBreakdown>,
    /// PCA of the current features, one point per sample.
    pub projection: Vec<[f64; 2]>,
    pub assignments: Vec<usize>,
    pub metrics: Option<MetricsReport>,
    pub holdout_metrics: Option<MetricsReport>,
    pub answers: usize,
    pub stopped_early: bool,
    pub error: Option<String>,
}

#[derive(Debug, Default)]
struct Flags {
    paused: bool,
    stopped: bool,
    /// Status to restore on resume.
    phase: Option<Status>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlAction {
    Pause,
    Resume,
    Stop,
}

/// State shared between request handlers and the training thread.
#[derive(Debug)]
pub struct Shared {
    snapshot: Mutex<Snapshot>,
    flags: Mutex<Flags>,
    wake: Condvar,
    pub events: Arc<EventLog>,
    /// Present when a human answers.
    pub queue: Option<TicketQueue>,
    pub payload_refs: Vec<Option<String>>,
    has_labels: bool,
}

impl Shared {
    fn snap(&self) -> MutexGuard<'_, Snapshot> {
        self.snapshot.lock().expect("snapshot poisoned")
    }

    fn flags(&self) -> MutexGuard<'_, Flags> {
        self.flags.lock().expect("control flags poisoned")
    }

    pub fn snapshot(&self) -> Snapshot {
        self.snap().clone()
    }

    pub fn pending_tickets(&self) -> Vec<Ticket> {
        self.queue.iter().flat_map(|q| q.next_pending()).collect()
    }

    fn set_status(&self, status: Status) {
        let changed = {
            let mut s = self.snap();
            let changed = s.status != status;
            s.status = status;
            changed
        };
        if changed {
            self.events.push(EventKind::Status, json!({ "status": status }));
        }
    }

    /// Applies a control action; refuses everything once training is done.
    pub fn control(&self, action: ControlAction) -> std::result::Result<Status, Status> {
        let current = self.snap().status;
        if current == Status::Done {
            return Err(current);
        }
        let mut f = self.flags();
        match action {
            ControlAction::Pause => {
                if !f.paused && !f.stopped {
                    f.paused = true;
                    f.phase = Some(current);
                    drop(f);
                    self.set_status(Status::Paused);
                }
            }
            ControlAction::Resume => {
                if f.paused {
                    f.paused = false;
                    let back = f.phase.take().unwrap_or(Status::Training);
                    drop(f);
                    self.set_status(back);
                }
            }
            ControlAction::Stop => {
                f.stopped = true;
                f.paused = false;
                drop(f);
                // unblocks a trainer waiting on a human answer
                if let Some(q) = &self.queue {
                    q.close();
                }
            }
        }
        self.wake.notify_all();
        Ok(self.snap().status)
    }

    fn stop_requested(&self) -> bool {
        self.flags().stopped
    }

    /// Blocks while paused. Returns whether to keep going.
    fn checkpoint(&self) -> Control {
        let mut f = self.flags();
        while f.paused && !f.stopped {
            f = self.wake.wait(f).expect("control flags poisoned");
        }
        if f.stopped {
            Control::Stop
        } else {
            Control::Continue
        }
    }
}

/// Oracle wrapper announcing every question before it is asked, so a
/// client sees a query even while the trainer blocks on it.
struct Announcing {
    inner: Box<dyn Oracle>,
    events: Arc<EventLog>,
}

impl Oracle for Announcing {
    fn ask(&mut self, request: &QueryRequest) -> Result<OracleReply> {
        self.events.push(
            EventKind::QueryIssued,
            json!({
                "i": request.i,
                "j": request.j,
                "step": request.step,
                "source": request.source,
                "decision": request.decision,
            }),
        );
        self.inner.ask(request)
    }

    fn busy(&self) -> bool {
        self.inner.busy()
    }
}

struct ServiceHooks {
    shared: Arc<Shared>,
    /// Prefix of the answer log already announced.
    announced: usize,
}

impl ServiceHooks {
    fn announce_answers(&mut self, session: &Session) {
        let log: &[AnswerRecord] = session.store().answer_log();
        // pseudo links can be withdrawn, shortening the log
        self.announced = self.announced.min(log.len());
        for r in &log[self.announced..] {
            self.shared.events.push(
                EventKind::AnswerApplied,
                json!({ "record": r, "applied_at_step": session.step() }),
            );
        }
        self.announced = log.len();
    }

    fn refresh_views(&self, session: &Session) -> Result<()> {
        let z = session.embeddings()?;
        let projection = project_2d(&z)?;
        let summary = session.summarize()?;
        let mut s = self.shared.snap();
        s.projection = projection;
        s.assignments = summary.assignments;
        if self.shared.has_labels {
            s.metrics = Some(summary.metrics);
            s.holdout_metrics = summary.holdout_metrics;
        }
        Ok(())
    }
}

impl TrainHooks for ServiceHooks {
    fn on_phase(&mut self, session: &Session, phase: Phase) {
        self.announce_answers(session);
        let status = match phase {
            Phase::Pretrain => Status::Pretraining,
            Phase::Train => Status::Training,
        };
        let paused = {
            let mut f = self.shared.flags();
            if f.paused {
                f.phase = Some(status);
            }
            f.paused
        };
        if !paused {
            self.shared.set_status(status);
        }
    }

    fn on_step(&mut self, session: &Session, report: &StepReport) -> Control {
        {
            let mut s = self.shared.snap();
            s.step = session.step();
            s.epoch = report.epoch;
            s.loss = Some(report.loss);
            s.budget.spent = session.budget().spent;
            s.answers = session.store().answer_count();
        }
        self.announce_answers(session);
        self.shared.checkpoint()
    }

    fn on_epoch(&mut self, session: &Session, summary: &EpochSummary) -> Control {
        if let Err(e) = self.refresh_views(session) {
            tracing::warn!("could not refresh session views: {e}");
        }
        let (projection, assignments, metrics) = {
            let s = self.shared.snap();
            (s.projection.clone(), s.assignments.clone(), s.metrics.clone())
        };
        self.shared.events.push(
            EventKind::Epoch,
            json!({ "summary": summary, "projection": projection, "assignments": assignments }),
        );
        if let Some(m) = metrics {
            self.shared
                .events
                .push(EventKind::Metrics, json!({ "epoch": summary.epoch, "metrics": m }));
        }
        self.shared.checkpoint()
    }
}

/// A session owned by a background thread.
#[derive(Debug)]
pub struct Runner {
    pub shared: Arc<Shared>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl Runner {
    /// Takes ownership of a built session and starts training it.
    pub fn start(
        build: impl FnOnce(Box<dyn Oracle>) -> Result<Session>,
        oracle: Box<dyn Oracle>,
        queue: Option<TicketQueue>,
        payload_refs: Vec<Option<String>>,
        display_capacity: usize,
    ) -> Result<Self> {
        let events = Arc::new(EventLog::new(display_capacity));
        let announcing = Box::new(Announcing {
            inner: oracle,
            events: events.clone(),
        });
        let mut session = build(announcing)?;
        let n = session.features().rows();
        let projection = project_2d(&session.embeddings()?)?;
        let has_labels = !session.labels().is_empty();
        let snapshot = Snapshot {
            status: Status::Created,
            epoch: 0,
            step: 0,
            budget: BudgetView {
                spent: 0,
                total: session.budget().total,
            },
            loss: None,
            projection,
            assignments: session.assignments()?,
            metrics: None,
            holdout_metrics: None,
            answers: 0,
            stopped_early: false,
            error: None,
        };
        if payload_refs.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} payload refs for {n} samples",
                payload_refs.len()
            )));
        }
        let shared = Arc::new(Shared {
            snapshot: Mutex::new(snapshot),
            flags: Mutex::new(Flags::default()),
            wake: Condvar::new(),
            events,
            queue,
            payload_refs,
            has_labels,
        });
        shared
            .events
            .push(EventKind::Status, json!({ "status": Status::Created }));

        let worker = shared.clone();
        let thread = std::thread::Builder::new()
            .name("orient-session".into())
            .spawn(move || {
                let mut hooks = ServiceHooks {
                    shared: worker.clone(),
                    announced: 0,
                };
                let outcome = session.run(&mut hooks);
                hooks.announce_answers(&session);
                finish(&worker, &session, outcome);
            })
            .map_err(Error::from)?;
        Ok(Self {
            shared,
            thread: Mutex::new(Some(thread)),
        })
    }

    /// Stops training and waits for the thread to exit.
    pub fn shutdown(&self) {
        let _ = self.shared.control(ControlAction::Stop);
        if let Some(t) = self.thread.lock().expect("runner poisoned").take() {
            let _ = t.join();
        }
    }
}

fn finish(shared: &Shared, session: &Session, outcome: Result<RunSummary>) {
    let outcome = match outcome {
        Ok(summary) => Ok(summary),
        // a stop closes the ticket queue under a waiting trainer
        Err(Error::TicketCancelled(_)) if shared.stop_requested() => session.summarize().map(|mut s| {
            s.stopped_early = true;
            s
        }),
        Err(e) => Err(e),
    };
    if let Some(q) = &shared.queue {
        q.close();
    }
    let projection = session.embeddings().and_then(|z| project_2d(&z));
    {
        let mut s = shared.snap();
        s.budget.spent = session.budget().spent;
        s.answers = session.store().answer_count();
        s.step = session.step();
        if let Ok(p) = projection {
            s.projection = p;
        }
        match &outcome {
            Ok(summary) => {
                s.assignments = summary.assignments.clone();
                s.stopped_early = summary.stopped_early;
                if shared.has_labels {
                    s.metrics = Some(summary.metrics.clone());
                    s.holdout_metrics = summary.holdout_metrics.clone();
                }
            }
            Err(e) => s.error = Some(e.to_string()),
        }
    }
    match outcome {
        Ok(summary) => {
            if shared.has_labels {
                shared.events.push(
                    EventKind::Metrics,
                    json!({ "epoch": session.epoch(), "metrics": summary.metrics }),
                );
            }
            shared.set_status(Status::Done);
            shared.events.finish(
                json!({ "spent": summary.spent, "answers": summary.answers, "steps": summary.steps, "stopped_early": summary.stopped_early }),
            );
        }
        Err(e) => {
            shared
                .events
                .push(EventKind::Error, json!({ "message": e.to_string() }));
            shared.set_status(Status::Done);
            shared.events.finish(json!({ "error": e.to_string() }));
        }
    }
}
