use std::net::SocketAddr;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime};

use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use super::api::{self, ApiState};
use super::config::{ControllerConfig, NodeEndpoint};
use super::dispatch::AlertDispatcher;
use super::email::Mailer;
use super::event::{CommandSource, PipelineState, SurveillanceEvent, Trigger};
use super::frames::FrameSource;
use super::mjpeg::FrameHub;
use super::pipeline::{run_fire, Executor, PipelineMsg, Services, Shared};
use super::poll::{poll_node, EdgeTrigger};
use super::recorder::Recorder;
use super::storage::{LogEntry, Storage};
use super::{now_ms, CommandRejection, ControllerError, ControllerState, NodeView, UserAction};
use crate::fisherface::FisherModel;
use crate::node_sim::NodeKind;
use crate::vision::CascadeModel;

/// State shared by the handle and the HTTP servers.
pub(crate) struct Inner {
    pub config: Arc<ControllerConfig>,
    pub shared: Shared,
    pub storage: Storage,
    pub hub: FrameHub,
    pub pipeline: mpsc::UnboundedSender<PipelineMsg>,
}

impl Inner {
    pub fn snapshot(&self) -> ControllerState {
        self.shared.read().unwrap().clone()
    }

    /// Applies an owner decision; rejected unless an event is ACTIVE.
    pub async fn command(
        &self,
        action: UserAction,
        source: CommandSource,
    ) -> Result<SurveillanceEvent, CommandRejection> {
        {
            let st = self.shared.read().unwrap();
            let state = st.pipeline_state();
            if state != PipelineState::Active {
                return Err(CommandRejection::NotActive {
                    state,
                    active_event: st.active_event.clone(),
                });
            }
        }
        let (reply, rx) = oneshot::channel();
        self.pipeline
            .send(PipelineMsg::Command {
                action,
                source,
                reply,
            })
            .map_err(|_| CommandRejection::Unavailable)?;
        rx.await.map_err(|_| CommandRejection::Unavailable)?
    }

    /// Removes expired recordings and marks their events.
    pub fn sweep(&self, now: SystemTime) -> std::io::Result<Vec<String>> {
        let removed = self.storage.sweep(now)?;
        if removed.is_empty() {
            return Ok(removed);
        }
        let mut st = self.shared.write().unwrap();
        for ev in st
            .events
            .iter_mut()
            .filter(|e| removed.contains(&e.event_id))
        {
            if let Some(rec) = ev.recording.as_mut() {
                rec.deleted = true;
            }
            ev.note(now_ms(), "recording removed after its retention period");
            let n = ev.notes.last().expect("just pushed").clone();
            if let Err(e) = self.storage.append_log(&ev.event_id, &LogEntry::Note(n)) {
                tracing::error!(event = %ev.event_id, "cannot append to event log: {e}");
            }
        }
        Ok(removed)
    }
}

/// A running controller.
pub struct ControllerHandle {
    inner: Arc<Inner>,
    api_addr: SocketAddr,
    stream_addr: SocketAddr,
    recorder: Recorder,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ControllerHandle {
    pub fn api_addr(&self) -> SocketAddr {
        self.api_addr
    }

    pub fn stream_addr(&self) -> SocketAddr {
        self.stream_addr
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.inner.config
    }

    pub fn storage(&self) -> &Storage {
        &self.inner.storage
    }

    pub fn snapshot(&self) -> ControllerState {
        self.inner.snapshot()
    }

    pub fn events(&self) -> Vec<SurveillanceEvent> {
        self.snapshot().events
    }

    pub fn event(&self, id: &str) -> Option<SurveillanceEvent> {
        self.snapshot().event(id).cloned()
    }

    /// Frames published on the live stream since start.
    pub fn frames_published(&self) -> u64 {
        self.inner.hub.published()
    }

    pub fn hub(&self) -> &FrameHub {
        &self.inner.hub
    }

    pub async fn command(
        &self,
        action: UserAction,
        source: CommandSource,
    ) -> Result<SurveillanceEvent, CommandRejection> {
        self.inner.command(action, source).await
    }

    /// Runs the retention sweep as if the clock read `now`.
    pub fn sweep_at(&self, now: SystemTime) -> std::io::Result<Vec<String>> {
        self.inner.sweep(now)
    }

    /// Stops recording, closes the servers and ends every task.
    pub async fn shutdown(self) {
        self.recorder.stop().await;
        let _ = self.stop.send(true);
        for t in &self.tasks {
            t.abort();
        }
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

fn load_assets(
    cfg: &ControllerConfig,
) -> Result<(CascadeModel, Option<FisherModel>), ControllerError> {
    let cascade = CascadeModel::load(&cfg.recognition.cascade).map_err(|e| {
        ControllerError::Assets(format!("{}: {e}", cfg.recognition.cascade.display()))
    })?;
    let model = match &cfg.recognition.model {
        Some(p) => Some(
            FisherModel::load(p)
                .map_err(|e| ControllerError::Assets(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    Ok((cascade, model))
}

async fn bind(what: &'static str, addr: SocketAddr) -> Result<TcpListener, ControllerError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ControllerError::Bind { what, addr, source })
}

fn serve(
    listener: TcpListener,
    app: axum::Router,
    mut stop: watch::Receiver<bool>,
) -> JoinHandle<()> {
    tokio::spawn(async move {
        let shutdown = async move {
            let _ = stop.wait_for(|s| *s).await;
        };
        if let Err(e) = axum::serve(listener, app)
            .with_graceful_shutdown(shutdown)
            .await
        {
            tracing::error!("http server failed: {e}");
        }
    })
}

/// Starts every controller task. `modem` is the byte stream to the GSM
/// modem (a serial device or a mock).
pub async fn start<S>(
    config: ControllerConfig,
    modem: S,
) -> Result<ControllerHandle, ControllerError>
where
    S: AsyncRead + AsyncWrite + Send + 'static,
{
    config.validate()?;
    let config = Arc::new(config);
    let storage = Storage::new(
        &config.storage.dir,
        Duration::from_secs(config.storage.retention_s),
    )?;
    let (cascade, model) = load_assets(&config)?;
    let frames = Arc::new(FrameSource::from_config(&config.camera)?);
    let mailer = Mailer::new(&config.email)?;
    let api_listener = bind("dashboard API", config.api_addr).await?;
    let stream_listener = bind("MJPEG stream", config.stream.addr).await?;
    let api_addr = api_listener.local_addr()?;
    let stream_addr = stream_listener.local_addr()?;

    let shared: Shared = Arc::new(RwLock::new(ControllerState {
        nodes: config
            .nodes
            .iter()
            .map(|n| NodeView {
                node_id: n.id.clone(),
                kind: n.kind,
                url: n.url.clone(),
                reachable: false,
                status: None,
                error: None,
                polls: 0,
            })
            .collect(),
        ..Default::default()
    }));
    let hub = FrameHub::default();
    let mut tasks = Vec::new();

    let (recorder, t) = Recorder::spawn(
        frames.clone(),
        hub.clone(),
        storage.clone(),
        config.stream.fps,
    );
    tasks.push(t);

    let (pipe_tx, pipe_rx) = mpsc::unbounded_channel();
    let (sms_tx, mut sms_rx) = mpsc::unbounded_channel();
    let (dispatcher, t) = AlertDispatcher::spawn(
        modem,
        Duration::from_millis(config.modem.timeout_ms),
        sms_tx,
    );
    tasks.push(t);
    let fwd = pipe_tx.clone();
    tasks.push(tokio::spawn(async move {
        while let Some(sms) = sms_rx.recv().await {
            if fwd.send(PipelineMsg::UserSms(sms)).is_err() {
                return;
            }
        }
    }));

    let svc = Arc::new(Services {
        config: config.clone(),
        shared: shared.clone(),
        storage: storage.clone(),
        mailer,
        dispatcher,
        recorder: recorder.clone(),
        frames,
        cascade: Arc::new(cascade),
        model: model.map(Arc::new),
        seq: AtomicU64::new(0),
    });
    tasks.push(tokio::spawn(Executor::new(svc.clone()).run(pipe_rx)));

    let (fire_tx, mut fire_rx) = mpsc::unbounded_channel::<Trigger>();
    let fire_svc = svc.clone();
    tasks.push(tokio::spawn(async move {
        while let Some(t) = fire_rx.recv().await {
            run_fire(fire_svc.clone(), t).await;
        }
    }));

    let client = reqwest::Client::new();
    for (i, ep) in config.nodes.iter().enumerate() {
        tasks.push(tokio::spawn(poll_loop(
            i,
            ep.clone(),
            config.poll_period(),
            Duration::from_millis(config.rearm_lockout_ms),
            client.clone(),
            shared.clone(),
            pipe_tx.clone(),
            fire_tx.clone(),
        )));
    }

    let inner = Arc::new(Inner {
        config: config.clone(),
        shared,
        storage,
        hub,
        pipeline: pipe_tx,
    });

    let sweeper = inner.clone();
    let every = Duration::from_secs(config.storage.sweep_interval_s.max(1));
    tasks.push(tokio::spawn(async move {
        let mut ticker = tokio::time::interval(every);
        loop {
            ticker.tick().await;
            match sweeper.sweep(SystemTime::now()) {
                Ok(ids) if !ids.is_empty() => tracing::info!(?ids, "expired recordings removed"),
                Ok(_) => {}
                Err(e) => tracing::warn!("retention sweep failed: {e}"),
            }
        }
    }));

    let (stop, stop_rx) = watch::channel(false);
    let state = ApiState {
        inner: inner.clone(),
    };
    tasks.push(serve(
        api_listener,
        api::router(state.clone()),
        stop_rx.clone(),
    ));
    tasks.push(serve(stream_listener, api::stream_router(state), stop_rx));
    tracing::info!(%api_addr, %stream_addr, nodes = config.nodes.len(), "controller started");

    Ok(ControllerHandle {
        inner,
        api_addr,
        stream_addr,
        recorder,
        stop,
        tasks,
    })
}

#[allow(clippy::too_many_arguments)]
async fn poll_loop(
    slot: usize,
    ep: NodeEndpoint,
    period: Duration,
    lockout: Duration,
    client: reqwest::Client,
    shared: Shared,
    intruder: mpsc::UnboundedSender<PipelineMsg>,
    fire: mpsc::UnboundedSender<Trigger>,
) {
    let mut edge = EdgeTrigger::new(lockout);
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        ticker.tick().await;
        let result = poll_node(&client, &ep.id, ep.kind, &ep.url, period).await;
        let fired = match &result {
            Ok(st) => edge.observe(st.value, st.connected, tokio::time::Instant::now()),
            Err(e) => {
                tracing::debug!(node = %ep.id, "poll failed: {e}");
                false
            }
        };
        {
            let mut st = shared.write().unwrap();
            let view = &mut st.nodes[slot];
            view.polls += 1;
            match result {
                Ok(status) => {
                    view.reachable = true;
                    view.status = Some(status);
                    view.error = None;
                }
                Err(e) => {
                    view.reachable = false;
                    view.error = Some(e.to_string());
                }
            }
        }
        if fired {
            let trigger = Trigger {
                node_id: ep.id.clone(),
                kind: ep.kind,
                at_ms: now_ms(),
            };
            tracing::info!(node = %ep.id, kind = %ep.kind, "sensor edge");
            let sent = match ep.kind {
                NodeKind::Pir => intruder.send(PipelineMsg::Trigger(trigger)).is_ok(),
                NodeKind::Fire => fire.send(trigger).is_ok(),
            };
            if !sent {
                return;
            }
        }
    }
}
