//! One task per session owns its engine. Commands arrive over a channel and
//! are answered in order; frames fan out through a broadcast channel whose
//! slow subscribers lose the oldest frames first.

use std::sync::Arc;
use std::time::Duration;

use ballbot_core::harness::Platform;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::clock::{Clock, Pacer};
use crate::engine::{CommandLog, LogEntry, SessionEngine};
use crate::protocol::{ClientMessage, ControlAction, ServerMessage, SessionStatus, TelemetryFrame};
use crate::ServiceError;

/// Wall-clock period of the pacing loop.
pub const PACING_TICK: Duration = Duration::from_millis(5);

/// Frames buffered per subscriber before the oldest are dropped.
pub const FRAME_BUFFER: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub platform: Platform,
    pub status: SessionStatus,
    /// Sim time since the last reset, s.
    pub t: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub real_time_factor: f64,
    pub frames: u64,
    /// Sim seconds behind the pacing target.
    pub lag: f64,
}

enum Request {
    Message(ClientMessage, oneshot::Sender<ServerMessage>),
    Info(oneshot::Sender<SessionInfo>),
    Log(oneshot::Sender<CommandLog>),
}

/// Cloneable access to a running session.
#[derive(Clone)]
pub struct SessionLink {
    id: String,
    inbox: mpsc::Sender<Request>,
    // weak so that feeds end when the session task does
    frames: broadcast::WeakSender<TelemetryFrame>,
}

impl SessionLink {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Applies a message in order with everything else sent to the session.
    pub async fn send(&self, msg: ClientMessage) -> Result<ServerMessage, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.inbox
            .send(Request::Message(msg, tx))
            .await
            .map_err(|_| ServiceError::SessionClosed)?;
        rx.await.map_err(|_| ServiceError::SessionClosed)
    }

    pub async fn info(&self) -> Result<SessionInfo, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.inbox.send(Request::Info(tx)).await.map_err(|_| ServiceError::SessionClosed)?;
        rx.await.map_err(|_| ServiceError::SessionClosed)
    }

    /// Every message applied so far with the step it landed on.
    pub async fn log(&self) -> Result<CommandLog, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.inbox.send(Request::Log(tx)).await.map_err(|_| ServiceError::SessionClosed)?;
        rx.await.map_err(|_| ServiceError::SessionClosed)
    }

    /// Frames from now on. The feed of a closed session is already over.
    pub fn subscribe(&self) -> FrameFeed {
        let rx = match self.frames.upgrade() {
            Some(tx) => tx.subscribe(),
            None => broadcast::channel(1).1,
        };
        FrameFeed { rx, dropped: 0 }
    }
}

/// One subscriber's view of the frame stream. When it falls more than
/// [`FRAME_BUFFER`] frames behind, the oldest are skipped and the count
/// rides on the next frame it gets.
pub struct FrameFeed {
    rx: broadcast::Receiver<TelemetryFrame>,
    dropped: u64,
}

impl FrameFeed {
    /// Next frame in order, or `None` once the session is gone.
    pub async fn next(&mut self) -> Option<TelemetryFrame> {
        loop {
            match self.rx.recv().await {
                Ok(f) => {
                    return Some(TelemetryFrame {
                        dropped: std::mem::take(&mut self.dropped),
                        ..f
                    })
                }
                Err(broadcast::error::RecvError::Lagged(n)) => self.dropped += n,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

/// A session task; dropping the handle leaves it running, [`Session::close`]
/// stops it.
pub struct Session {
    link: SessionLink,
    task: JoinHandle<()>,
}

impl Session {
    /// Starts the task that paces `engine` against `clock`.
    pub fn spawn(id: String, engine: SessionEngine, clock: Arc<dyn Clock>) -> Self {
        let (inbox, rx) = mpsc::channel(64);
        let (frames, _) = broadcast::channel(FRAME_BUFFER);
        let link = SessionLink {
            id: id.clone(),
            inbox,
            frames: frames.downgrade(),
        };
        let task = tokio::spawn(run(id, engine, clock, rx, frames));
        Self { link, task }
    }

    pub fn link(&self) -> SessionLink {
        self.link.clone()
    }

    pub fn close(self) {
        self.task.abort();
    }
}

async fn run(
    id: String,
    mut engine: SessionEngine,
    clock: Arc<dyn Clock>,
    mut rx: mpsc::Receiver<Request>,
    frames: broadcast::Sender<TelemetryFrame>,
) {
    let mut pacer = Pacer::new(engine.limits().real_time_factor, engine.dt());
    let mut entries = Vec::new();
    let mut sent = 0u64;
    let mut ticker = tokio::time::interval(PACING_TICK);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let publish = |f: TelemetryFrame, lag: f64, sent: &mut u64| {
        *sent += 1;
        // no subscribers is fine
        let _ = frames.send(TelemetryFrame { lag: Some(lag), ..f });
    };
    tracing::info!(session = %id, platform = ?engine.platform(), "session created");
    loop {
        tokio::select! {
            req = rx.recv() => {
                let Some(req) = req else { break };
                match req {
                    Request::Message(msg, reply) => {
                        let before = (engine.status(), engine.limits().real_time_factor);
                        entries.push(LogEntry { at: engine.total_steps(), message: msg.clone() });
                        let (answer, produced) = engine.apply(&msg);
                        let now = clock.now();
                        let after = (engine.status(), engine.limits().real_time_factor);
                        if after.0 == SessionStatus::Running && !pacer.is_running() {
                            pacer.resume(now, engine.total_steps());
                        } else if after.0 != SessionStatus::Running {
                            pacer.pause();
                        }
                        if after.1 != before.1 {
                            pacer.set_factor(after.1, now, engine.total_steps());
                        }
                        if let ClientMessage::Control(c) = &msg {
                            if matches!(c.action, ControlAction::Reset) {
                                tracing::info!(session = %id, "session reset");
                            }
                        }
                        for f in produced {
                            publish(f, 0.0, &mut sent);
                        }
                        let _ = reply.send(answer);
                    }
                    Request::Info(reply) => {
                        let _ = reply.send(SessionInfo {
                            id: id.clone(),
                            platform: engine.platform(),
                            status: engine.status(),
                            t: engine.time(),
                            total_steps: engine.total_steps(),
                            seed: engine.seed(),
                            real_time_factor: pacer.factor(),
                            frames: sent,
                            lag: pacer.lag(clock.now(), engine.total_steps()),
                        });
                    }
                    Request::Log(reply) => {
                        let _ = reply.send(CommandLog {
                            seed: engine.seed(),
                            entries: entries.clone(),
                            end: engine.total_steps(),
                        });
                    }
                }
            }
            _ = ticker.tick() => {
                let now = clock.now();
                let Some(target) = pacer.target(now) else { continue };
                let due = target.saturating_sub(engine.total_steps());
                let batch = due.min(engine.limits().max_batch as u64);
                let produced = engine.advance(batch);
                let lag = pacer.lag(now, engine.total_steps());
                for f in produced {
                    publish(f, lag, &mut sent);
                }
                if engine.status() == SessionStatus::Failed {
                    tracing::warn!(session = %id, t = engine.time(), "balance failure; torques cut");
                    pacer.pause();
                }
            }
        }
    }
    tracing::info!(session = %id, "session closed");
}
