//! Tokio WebSocket server hosting one session.

use crate::protocol::{parse_client_frame, ClientFrame, ControlInput, ErrorCode, ServerFrame, SessionCommand};
use crate::session::Session;
use crate::{TelemetryError, DEFAULT_DECIMATION, DEFAULT_PORT};
use futures_util::{SinkExt, StreamExt};
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc};
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::{Message, Utf8Bytes};

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub decimation: u32,
    /// Wall-clock time per loop iteration; defaults to the scenario's dt_sim.
    pub tick_interval: Option<Duration>,
    /// Snapshot frames buffered per client before the oldest are dropped.
    pub queue_capacity: usize,
    /// Where the trace CSV is written when the session ends or the last client leaves.
    pub trace_path: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            decimation: DEFAULT_DECIMATION,
            tick_interval: None,
            queue_capacity: 10,
            trace_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionOutcome {
    pub ticks: u64,
    pub finished: bool,
    pub trace_written: Option<PathBuf>,
}

enum Inbound {
    Connected,
    Disconnected,
    Control(ControlInput, mpsc::Sender<Utf8Bytes>),
    Command(SessionCommand, mpsc::Sender<Utf8Bytes>),
    Invalid(ErrorCode, String, mpsc::Sender<Utf8Bytes>),
}

/// Next frame from `rx`, skipping to the newest one buffered; `None` once closed.
pub async fn recv_latest<T: Clone>(rx: &mut broadcast::Receiver<T>) -> Option<T> {
    let mut latest = loop {
        match rx.recv().await {
            Ok(v) => break v,
            Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("client lagged, {n} frames dropped"),
            Err(broadcast::error::RecvError::Closed) => return None,
        }
    };
    loop {
        match rx.try_recv() {
            Ok(v) => latest = v,
            Err(broadcast::error::TryRecvError::Lagged(_)) => {}
            Err(_) => return Some(latest),
        }
    }
}

pub struct Server {
    listener: TcpListener,
    cfg: ServerConfig,
}

impl Server {
    pub async fn bind(cfg: ServerConfig) -> Result<Self, TelemetryError> {
        let listener = TcpListener::bind((cfg.host.as_str(), cfg.port))
            .await
            .map_err(|source| TelemetryError::Bind { port: cfg.port, source })?;
        Ok(Self { listener, cfg })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Runs the session until `shutdown` resolves.
    pub async fn run(self, mut session: Session, shutdown: impl Future<Output = ()>) -> Result<SessionOutcome, TelemetryError> {
        let Server { listener, cfg } = self;
        let (frames_tx, _) = broadcast::channel::<Utf8Bytes>(cfg.queue_capacity.max(1));
        let (inbound_tx, mut inbound_rx) = mpsc::channel::<Inbound>(64);
        let interval = cfg
            .tick_interval
            .unwrap_or_else(|| Duration::from_secs_f64(session.config().dt_sim));
        let mut ticker = tokio::time::interval(interval);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        let mut clients = 0usize;
        let mut trace_written = None;
        let mut finish_saved = false;
        let mut next_client = 1u64;
        tokio::pin!(shutdown);
        log::info!("serving on ws://{}", listener.local_addr()?);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                accepted = listener.accept() => {
                    let (stream, peer) = accepted?;
                    let id = next_client;
                    next_client += 1;
                    log::info!("client {id} connected from {peer}");
                    tokio::spawn(client_task(stream, id, inbound_tx.clone(), frames_tx.subscribe()));
                }
                _ = ticker.tick() => {
                    if let Some(snap) = session.advance() {
                        let _ = frames_tx.send(Utf8Bytes::from(ServerFrame::snapshot(snap).to_json()));
                    }
                    if session.finished() && !finish_saved {
                        finish_saved = true;
                        trace_written = save_trace(&session, &cfg).or(trace_written);
                    }
                }
                Some(msg) = inbound_rx.recv() => match msg {
                    Inbound::Connected => clients += 1,
                    Inbound::Disconnected => {
                        clients = clients.saturating_sub(1);
                        if clients == 0 && session.tick() > 0 {
                            trace_written = save_trace(&session, &cfg).or(trace_written);
                        }
                    }
                    Inbound::Control(input, reply) => {
                        if let Err(e) = session.ingest_control(input) {
                            let _ = reply.try_send(error_frame(session.tick(), e.code(), e.to_string()));
                        }
                    }
                    Inbound::Command(cmd, reply) => {
                        let name = cmd.name();
                        let frame = match session.command(cmd) {
                            Ok(()) => {
                                if name == "reset" || name == "load" {
                                    finish_saved = false;
                                }
                                ServerFrame::ack(session.tick(), name).to_json()
                            }
                            Err(e) => ServerFrame::error(session.tick(), e.code(), e.to_string()).to_json(),
                        };
                        let _ = reply.try_send(Utf8Bytes::from(frame));
                    }
                    Inbound::Invalid(code, message, reply) => {
                        let _ = reply.try_send(error_frame(session.tick(), code, message));
                    }
                },
            }
        }
        if session.tick() > 0 {
            trace_written = save_trace(&session, &cfg).or(trace_written);
        }
        Ok(SessionOutcome {
            ticks: session.tick(),
            finished: session.finished(),
            trace_written,
        })
    }
}

fn error_frame(tick: u64, code: ErrorCode, message: String) -> Utf8Bytes {
    Utf8Bytes::from(ServerFrame::error(tick, code, message).to_json())
}

fn save_trace(session: &Session, cfg: &ServerConfig) -> Option<PathBuf> {
    let path = cfg.trace_path.as_ref()?;
    let csv = session.trace_csv()?;
    match std::fs::write(path, csv) {
        Ok(()) => {
            log::info!("trace written to {} at tick {}", path.display(), session.tick());
            Some(path.clone())
        }
        Err(e) => {
            log::error!("cannot write trace {}: {e}", path.display());
            None
        }
    }
}

async fn client_task(
    stream: TcpStream,
    id: u64,
    inbound: mpsc::Sender<Inbound>,
    mut frames: broadcast::Receiver<Utf8Bytes>,
) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("client {id} handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (reply_tx, mut reply_rx) = mpsc::channel::<Utf8Bytes>(16);
    if inbound.send(Inbound::Connected).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            msg = source.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let item = match parse_client_frame(&text) {
                        Ok(ClientFrame::Control { mut input, .. }) => {
                            input.client_id = id;
                            Inbound::Control(input, reply_tx.clone())
                        }
                        Ok(ClientFrame::Session { command, .. }) => Inbound::Command(command, reply_tx.clone()),
                        Err((code, message)) => Inbound::Invalid(code, message, reply_tx.clone()),
                    };
                    let sent = match item {
                        Inbound::Control(..) => inbound.try_send(item).is_ok() || !inbound.is_closed(),
                        other => inbound.send(other).await.is_ok(),
                    };
                    if !sent {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            frame = recv_latest(&mut frames) => match frame {
                Some(text) => {
                    if sink.send(Message::Text(text)).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
            Some(reply) = reply_rx.recv() => {
                if sink.send(Message::Text(reply)).await.is_err() {
                    break;
                }
            }
        }
    }
    log::info!("client {id} disconnected");
    let _ = inbound.send(Inbound::Disconnected).await;
}
