//! The networked hub: one task per session owns its [`SessionCore`]; connections feed it.
//!
//! A connection is sniffed on its first byte. Frames are JSON objects and start with `{`;
//! anything starting with `G` is treated as an HTTP `GET`, which either upgrades to a
//! websocket carrying the same frames (one frame per text message) or serves a file from
//! the static UI directory.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::{Component, Path, PathBuf};
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, Stream, StreamExt};
use holoproxy_core::protocol::{
    decode, encode, ClientId, Envelope, ErrorCode, MessagePayload, Outbound, Role, SessionId, SessionState,
};
use holoproxy_core::{DataCube, ScreenConfig};
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::time::{sleep_until, Instant};
use tokio_tungstenite::tungstenite::handshake::derive_accept_key;
use tokio_tungstenite::tungstenite::protocol::Role as WsRole;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

use crate::log::{ClosedLog, JitterConfig, LogError};
use crate::session::SessionCore;

/// Largest accepted inbound frame.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Interval between hub heartbeats on every connection.
    pub heartbeat: Duration,
    /// A connection silent for this long is dropped and its client deregistered.
    pub silence: Duration,
    /// Where session logs go; `None` disables logging.
    pub log_dir: Option<PathBuf>,
    /// Static files served over HTTP `GET`.
    pub ui_dir: Option<PathBuf>,
    pub jitter: Option<JitterConfig>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            heartbeat: Duration::from_secs(5),
            silence: Duration::from_secs(15),
            log_dir: None,
            ui_dir: None,
            jitter: None,
        }
    }
}

type Frame = Arc<Vec<u8>>;

enum Command {
    Join { hello: Envelope, conn: u64, role: Role, tx: mpsc::UnboundedSender<Frame>, reply: oneshot::Sender<Result<(), ErrorCode>> },
    Inbound { conn: u64, env: Envelope },
    Leave { conn: u64, client: ClientId },
    Inspect { reply: oneshot::Sender<SessionView> },
    Close { reply: oneshot::Sender<Result<Option<ClosedLog>, LogError>> },
}

/// Point-in-time view of a running session.
#[derive(Debug, Clone)]
pub struct SessionView {
    pub state: SessionState,
    pub applied: u64,
    pub clients: Vec<(ClientId, Role)>,
    pub log: Option<PathBuf>,
}

impl SessionView {
    pub fn digest(&self) -> String {
        self.state.digest()
    }
}

struct Member {
    conn: u64,
    role: Role,
    tx: mpsc::UnboundedSender<Frame>,
}

#[derive(Clone)]
pub struct Hub {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServerConfig,
    sessions: Mutex<HashMap<SessionId, mpsc::UnboundedSender<Command>>>,
    next_conn: AtomicU64,
    next_session: AtomicU64,
}

impl Hub {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                sessions: Mutex::new(HashMap::new()),
                next_conn: AtomicU64::new(1),
                next_session: AtomicU64::new(1),
            }),
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.inner.config
    }

    /// Starts a session over `cube`, logging to `<log_dir>/<id>.log` when a log dir is set.
    pub fn create_session(&self, cube: DataCube, screen: ScreenConfig) -> Result<SessionId, LogError> {
        let n = self.inner.next_session.fetch_add(1, Ordering::Relaxed);
        let id = SessionId::new(format!("s{n}-{}", &cube.digest()[..8])).expect("generated ids are valid");
        let core = match &self.inner.config.log_dir {
            Some(dir) => {
                let path = dir.join(format!("{id}.log"));
                SessionCore::create_logged(id.clone(), cube, screen, self.inner.config.jitter, &path)?
            }
            None => SessionCore::new(id.clone(), cube, screen).with_jitter(self.inner.config.jitter),
        };
        self.install(core);
        Ok(id)
    }

    /// Hosts an existing core, e.g. one rebuilt by [`SessionCore::recover`].
    pub fn install(&self, core: SessionCore) -> SessionId {
        let id = core.id().clone();
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(run_session(core, rx));
        self.inner.sessions.lock().unwrap().insert(id.clone(), tx);
        id
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<_> = self.inner.sessions.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn session(&self, id: &SessionId) -> Option<mpsc::UnboundedSender<Command>> {
        self.inner.sessions.lock().unwrap().get(id).cloned()
    }

    pub async fn inspect(&self, id: &SessionId) -> Option<SessionView> {
        let (reply, rx) = oneshot::channel();
        self.session(id)?.send(Command::Inspect { reply }).ok()?;
        rx.await.ok()
    }

    /// Stops a session and closes its log.
    pub async fn close_session(&self, id: &SessionId) -> Option<Result<Option<ClosedLog>, LogError>> {
        let tx = self.inner.sessions.lock().unwrap().remove(id)?;
        let (reply, rx) = oneshot::channel();
        tx.send(Command::Close { reply }).ok()?;
        rx.await.ok()
    }

    /// Accepts connections until the listener fails.
    pub async fn serve(&self, listener: TcpListener) -> io::Result<()> {
        loop {
            let (stream, peer) = listener.accept().await?;
            let hub = self.clone();
            tokio::spawn(async move {
                if let Err(e) = hub.handle_socket(stream).await {
                    tracing::debug!(%peer, "connection ended: {e}");
                }
            });
        }
    }

    async fn handle_socket(self, stream: TcpStream) -> io::Result<()> {
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream);
        let first = match reader.fill_buf().await?.first() {
            Some(&b) => b,
            None => return Ok(()),
        };
        if first == b'G' {
            return self.handle_http(reader).await;
        }
        let (read, write) = tokio::io::split(reader);
        let (tx, rx) = mpsc::unbounded_channel();
        let writer = tokio::spawn(tcp_writer(write, rx));
        self.run_connection(tcp_frames(read), tx).await;
        let _ = writer.await;
        Ok(())
    }

    async fn handle_http(self, mut reader: BufReader<TcpStream>) -> io::Result<()> {
        let request = read_request(&mut reader).await?;
        let upgrade = request.header("upgrade").is_some_and(|v| v.eq_ignore_ascii_case("websocket"));
        if let (true, Some(key)) = (upgrade, request.header("sec-websocket-key")) {
            let accept = derive_accept_key(key.as_bytes());
            let response = format!(
                "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: {accept}\r\n\r\n"
            );
            reader.get_mut().write_all(response.as_bytes()).await?;
            let ws = WebSocketStream::from_raw_socket(reader, WsRole::Server, None).await;
            let (sink, stream) = ws.split();
            let (tx, rx) = mpsc::unbounded_channel();
            let writer = tokio::spawn(ws_writer(sink, rx));
            self.run_connection(ws_frames(stream), tx).await;
            let _ = writer.await;
            return Ok(());
        }
        let (status, kind, body) = match &self.inner.config.ui_dir {
            Some(dir) => static_file(dir, &request.path).await,
            None => ("404 Not Found", "text/plain", b"no ui configured\n".to_vec()),
        };
        let head = format!(
            "HTTP/1.1 {status}\r\nContent-Type: {kind}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            body.len()
        );
        let stream = reader.get_mut();
        stream.write_all(head.as_bytes()).await?;
        stream.write_all(&body).await?;
        stream.shutdown().await
    }

    /// Handshake, then pump frames into the session until the peer leaves or goes silent.
    async fn run_connection(&self, mut frames: FrameSource, tx: mpsc::UnboundedSender<Frame>) {
        let cfg = &self.inner.config;
        let reject = |code: ErrorCode, detail: String| {
            let _ = tx.send(error_frame(code, detail));
        };

        let hello = match tokio::time::timeout(cfg.silence, frames.next()).await {
            Ok(Some(Ok(bytes))) => match decode(&bytes) {
                Ok(env) => env,
                Err(e) => return reject(ErrorCode::BadFrame, e.to_string()),
            },
            _ => return,
        };
        let MessagePayload::Hello { role, .. } = hello.payload else {
            return reject(ErrorCode::HandshakeRequired, format!("expected Hello, got {}", hello.payload.tag()));
        };
        let Some(session) = self.session(&hello.session_id) else {
            return reject(ErrorCode::UnknownSession, hello.session_id.to_string());
        };
        let client = hello.client_id.clone();
        let session_id = hello.session_id.clone();
        let conn = self.inner.next_conn.fetch_add(1, Ordering::Relaxed);
        let (reply, joined) = oneshot::channel();
        if session.send(Command::Join { hello, conn, role, tx: tx.clone(), reply }).is_err() {
            return reject(ErrorCode::UnknownSession, session_id.to_string());
        }
        match joined.await {
            Ok(Ok(())) => {}
            Ok(Err(code)) => return reject(code, client.to_string()),
            Err(_) => return,
        }
        tracing::info!(%session_id, %client, ?role, "client joined");

        let mut ticker = tokio::time::interval(cfg.heartbeat);
        ticker.tick().await;
        let mut deadline = Instant::now() + cfg.silence;
        loop {
            tokio::select! {
                _ = ticker.tick() => {
                    if tx.send(heartbeat_frame(&session_id)).is_err() {
                        break;
                    }
                }
                _ = sleep_until(deadline) => {
                    tracing::info!(%session_id, %client, "client silent, deregistering");
                    break;
                }
                next = frames.next() => {
                    let bytes = match next {
                        Some(Ok(bytes)) => bytes,
                        _ => break,
                    };
                    deadline = Instant::now() + cfg.silence;
                    let env = match decode(&bytes) {
                        Ok(env) => env,
                        Err(e) => {
                            reject(ErrorCode::BadFrame, e.to_string());
                            break;
                        }
                    };
                    if env.client_id != client || env.session_id != session_id {
                        reject(ErrorCode::BadFrame, "session or client changed mid-connection".into());
                        break;
                    }
                    if matches!(env.payload, MessagePayload::Heartbeat {}) {
                        continue;
                    }
                    if session.send(Command::Inbound { conn, env }).is_err() {
                        break;
                    }
                }
            }
        }
        let _ = session.send(Command::Leave { conn, client });
    }
}

async fn run_session(mut core: SessionCore, mut rx: mpsc::UnboundedReceiver<Command>) {
    let mut members: BTreeMap<ClientId, Member> = BTreeMap::new();
    while let Some(cmd) = rx.recv().await {
        match cmd {
            Command::Join { hello, conn, role, tx, reply } => {
                if members.contains_key(&hello.client_id) {
                    let _ = reply.send(Err(ErrorCode::DuplicateClient));
                    continue;
                }
                let client = hello.client_id.clone();
                members.insert(client.clone(), Member { conn, role, tx: tx.clone() });
                let _ = reply.send(Ok(()));
                ingest(&mut core, &members, hello);
                let _ = tx.send(Arc::new(encode(&core.snapshot())));
            }
            Command::Inbound { conn, env } => {
                if members.get(&env.client_id).is_some_and(|m| m.conn == conn) {
                    ingest(&mut core, &members, env);
                }
            }
            Command::Leave { conn, client } => {
                if members.get(&client).is_some_and(|m| m.conn == conn) {
                    members.remove(&client);
                }
            }
            Command::Inspect { reply } => {
                let _ = reply.send(SessionView {
                    state: core.state().clone(),
                    applied: core.applied(),
                    clients: members.iter().map(|(c, m)| (c.clone(), m.role)).collect(),
                    log: core.log_path().map(Path::to_path_buf),
                });
            }
            Command::Close { reply } => {
                let _ = reply.send(core.close());
                return;
            }
        }
    }
}

fn ingest(core: &mut SessionCore, members: &BTreeMap<ClientId, Member>, env: Envelope) {
    let sender = env.client_id.clone();
    match core.ingest(env) {
        Ok(out) => deliver(members, &sender, out),
        Err(e) => tracing::error!(session = %core.id(), "log write failed, envelope dropped: {e}"),
    }
}

/// Fans outbound envelopes out in reducer order; every member sees the same order.
fn deliver(members: &BTreeMap<ClientId, Member>, sender: &ClientId, out: Vec<Outbound>) {
    for Outbound { route, envelope } in out {
        let frame = Arc::new(encode(&envelope));
        for (id, m) in members {
            if route.reaches(sender, id, m.role) {
                let _ = m.tx.send(frame.clone());
            }
        }
    }
}

fn error_frame(code: ErrorCode, detail: String) -> Frame {
    let session = SessionId::new("none").expect("literal id");
    let env = Envelope::new(session, ClientId::server(), 0, MessagePayload::Error { code, seq: 0, detail });
    Arc::new(encode(&env))
}

fn heartbeat_frame(session: &SessionId) -> Frame {
    Arc::new(encode(&Envelope::new(session.clone(), ClientId::server(), 0, MessagePayload::Heartbeat {})))
}

type FrameSource = Pin<Box<dyn Stream<Item = io::Result<Vec<u8>>> + Send>>;

fn tcp_frames<R: AsyncRead + Unpin + Send + 'static>(read: R) -> FrameSource {
    let reader = BufReader::new(read);
    Box::pin(futures_util::stream::unfold(reader, |mut reader| async move {
        let mut line = Vec::new();
        match (&mut reader).take(MAX_FRAME as u64 + 1).read_until(b'\n', &mut line).await {
            Ok(0) => None,
            Ok(_) if line.len() > MAX_FRAME => {
                Some((Err(io::Error::new(io::ErrorKind::InvalidData, "frame too long")), reader))
            }
            Ok(_) => Some((Ok(line), reader)),
            Err(e) => Some((Err(e), reader)),
        }
    }))
}

fn ws_frames<S>(stream: S) -> FrameSource
where
    S: Stream<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Send + 'static,
{
    let frames = stream.filter_map(|msg| async move {
        let mut bytes = match msg {
            Ok(Message::Text(text)) => text.into_bytes(),
            Ok(Message::Binary(bytes)) => bytes,
            Ok(Message::Close(_)) => return Some(Err(io::ErrorKind::ConnectionAborted.into())),
            Ok(_) => return None,
            Err(e) => return Some(Err(io::Error::other(e))),
        };
        if bytes.last() != Some(&b'\n') {
            bytes.push(b'\n');
        }
        Some(Ok(bytes))
    });
    Box::pin(frames)
}

async fn tcp_writer<W: AsyncWrite + Unpin>(mut write: W, mut rx: mpsc::UnboundedReceiver<Frame>) {
    while let Some(frame) = rx.recv().await {
        if write.write_all(&frame).await.is_err() {
            return;
        }
    }
    let _ = write.shutdown().await;
}

async fn ws_writer<S>(mut sink: S, mut rx: mpsc::UnboundedReceiver<Frame>)
where
    S: futures_util::Sink<Message> + Unpin,
{
    while let Some(frame) = rx.recv().await {
        let text = String::from_utf8_lossy(frame.strip_suffix(b"\n").unwrap_or(&frame)).into_owned();
        if sink.send(Message::Text(text)).await.is_err() {
            return;
        }
    }
    let _ = sink.close().await;
}

struct Request {
    path: String,
    headers: Vec<(String, String)>,
}

impl Request {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

async fn read_request<R: tokio::io::AsyncBufRead + Unpin>(reader: &mut R) -> io::Result<Request> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut line = String::new();
    (&mut *reader).take(8192).read_line(&mut line).await?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some("GET") {
        return Err(bad("only GET is served"));
    }
    let path = parts.next().ok_or_else(|| bad("missing request target"))?.to_string();
    let mut headers = Vec::new();
    for _ in 0..100 {
        line.clear();
        (&mut *reader).take(8192).read_line(&mut line).await?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            return Ok(Request { path, headers });
        }
        if let Some((k, v)) = trimmed.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Err(bad("too many headers"))
}

async fn static_file(dir: &Path, target: &str) -> (&'static str, &'static str, Vec<u8>) {
    let not_found = ("404 Not Found", "text/plain", b"not found\n".to_vec());
    let path = target.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return not_found;
    }
    let mut file = dir.join(rel);
    if path.ends_with('/') || path.is_empty() {
        file = file.join("index.html");
    }
    match tokio::fs::read(&file).await {
        Ok(body) => ("200 OK", content_type(&file), body),
        Err(_) => not_found,
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}
