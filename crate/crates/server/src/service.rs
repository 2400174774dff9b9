//! HTTP surface: world documents, assets, health, and the `/sync` socket.

use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use axum_server::accept::NoDelayAcceptor;
use axum_server::tls_rustls::{RustlsAcceptor, RustlsConfig};
use axum_server::Handle;
use futures_util::{SinkExt, StreamExt};
use openverse_core::protocol::{admit, decode_str, encode, AdmissionPolicy, ErrorCode, ProtocolError, WireMessage};
use openverse_core::{emit_world_document_with, ValidationOptions, WorldError};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;
use tracing::{info, warn};

use crate::config::{ServerConfig, StartupError};
use crate::hub::{Command, Hub};
use crate::persist::{Store, WorldLoadError};
use crate::room::Inbound;
use crate::seed::seed_hello_world;

#[derive(Clone)]
struct AppState {
    hub: Arc<Hub>,
    local_addr: SocketAddr,
}

pub struct RunningServer {
    local_addr: SocketAddr,
    tls: bool,
    hub: Arc<Hub>,
    handle: Handle,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Address clients on this host should dial.
    fn dial_addr(&self) -> SocketAddr {
        let mut addr = self.local_addr;
        if addr.ip().is_unspecified() {
            addr.set_ip(IpAddr::V4(Ipv4Addr::LOCALHOST));
        }
        addr
    }

    pub fn http_url(&self) -> String {
        let scheme = if self.tls { "https" } else { "http" };
        format!("{scheme}://{}", self.dial_addr())
    }

    pub fn sync_url(&self) -> String {
        let scheme = if self.tls { "wss" } else { "ws" };
        format!("{scheme}://{}/sync", self.dial_addr())
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Flushes dirty rooms to disk, then stops accepting connections.
    pub async fn shutdown(self) {
        self.hub.shutdown().await;
        self.handle.graceful_shutdown(Some(Duration::from_secs(2)));
        let _ = self.task.await;
    }
}

/// Prepares storage, binds the listener and starts serving.
pub async fn start(config: ServerConfig) -> Result<RunningServer, StartupError> {
    config.validate()?;
    install_crypto_provider();

    let store = Store::new(&config.persist_dir);
    store
        .prepare()
        .map_err(|e| StartupError::PersistDir(e.to_string()))?;
    seed_hello_world(&store).map_err(|e| StartupError::PersistDir(e.to_string()))?;

    let tls = if config.dev_plaintext {
        None
    } else {
        Some(load_tls(&config).await?)
    };

    let listener = TcpListener::bind((config.bind, config.port)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            StartupError::PortBusy { port: config.port }
        } else {
            StartupError::Config(format!("cannot bind {}:{}: {e}", config.bind, config.port))
        }
    })?;
    listener
        .set_nonblocking(true)
        .map_err(|e| StartupError::Config(e.to_string()))?;
    let local_addr = listener
        .local_addr()
        .map_err(|e| StartupError::Config(e.to_string()))?;

    let assets = store.assets_dir();
    let hub = Hub::new(store, config);
    let app = router(
        AppState {
            hub: hub.clone(),
            local_addr,
        },
        assets,
    );

    let handle = Handle::new();
    let is_tls = tls.is_some();
    let task = match tls {
        None => tokio::spawn(
            axum_server::from_tcp(listener)
                .acceptor(NoDelayAcceptor::new())
                .handle(handle.clone())
                .serve(app.into_make_service()),
        ),
        Some(tls) => tokio::spawn(
            axum_server::from_tcp(listener)
                .acceptor(RustlsAcceptor::new(tls).acceptor(NoDelayAcceptor::new()))
                .handle(handle.clone())
                .serve(app.into_make_service()),
        ),
    };
    info!(addr = %local_addr, tls = is_tls, "listening");
    Ok(RunningServer {
        local_addr,
        tls: is_tls,
        hub,
        handle,
        task,
    })
}

/// Selects the ring provider once per process; both rustls backends are
/// linked in through dependencies, so rustls cannot pick one by itself.
pub fn install_crypto_provider() {
    let _ = rustls::crypto::ring::default_provider().install_default();
}

async fn load_tls(config: &ServerConfig) -> Result<RustlsConfig, StartupError> {
    let (Some(cert), Some(key)) = (&config.cert, &config.key) else {
        return Err(StartupError::Tls("missing certificate or key".into()));
    };
    let cert_pem = std::fs::read(cert)
        .map_err(|e| StartupError::Tls(format!("unreadable cert {}: {e}", cert.display())))?;
    let key_pem = std::fs::read(key)
        .map_err(|e| StartupError::Tls(format!("unreadable key {}: {e}", key.display())))?;
    RustlsConfig::from_pem(cert_pem, key_pem)
        .await
        .map_err(|e| StartupError::Tls(e.to_string()))
}

fn router(state: AppState, assets: std::path::PathBuf) -> Router {
    Router::new()
        .route("/sync", get(sync_upgrade))
        .route("/w/{world_id}", get(world_document))
        .route("/healthz", get(healthz))
        .nest_service("/assets", ServeDir::new(assets))
        .fallback(|| async { StatusCode::NOT_FOUND })
        .with_state(state)
}

fn is_world_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

async fn world_document(
    State(state): State<AppState>,
    Path(world_id): Path<String>,
    headers: HeaderMap,
) -> Response {
    if !is_world_id(&world_id) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let world = match state.hub.world(&world_id) {
        Ok(w) => w,
        Err(WorldLoadError::NotFound(_)) => return StatusCode::NOT_FOUND.into_response(),
        Err(e) => {
            warn!(world = %world_id, error = %e, "world unavailable");
            return StatusCode::INTERNAL_SERVER_ERROR.into_response();
        }
    };
    let host = headers
        .get(header::HOST)
        .and_then(|h| h.to_str().ok())
        .map(str::to_owned)
        .unwrap_or_else(|| state.local_addr.to_string());
    let scheme = if state.hub.config().dev_plaintext { "ws" } else { "wss" };
    let opts = ValidationOptions {
        allow_http_portals: state.hub.config().dev_plaintext,
    };
    match emit_world_document_with(&world, &format!("{scheme}://{host}/sync"), &opts) {
        Ok(doc) => Html(doc).into_response(),
        Err(WorldError::InvalidEndpoint(_)) => StatusCode::BAD_REQUEST.into_response(),
        Err(e) => {
            warn!(world = %world_id, error = %e, "world document emission failed");
            StatusCode::INTERNAL_SERVER_ERROR.into_response()
        }
    }
}

async fn healthz(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.hub.health())
}

async fn sync_upgrade(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state.hub))
}

async fn send_error(socket: &mut WebSocket, room: &str, err: ProtocolError) {
    let frame = encode(&err.to_message(room));
    let _ = socket.send(Message::Text(frame.into())).await;
    let _ = socket.send(Message::Close(None)).await;
}

async fn first_message(socket: &mut WebSocket, wait: Duration) -> Option<Result<WireMessage, ProtocolError>> {
    let next = tokio::time::timeout(wait, async {
        while let Some(Ok(msg)) = socket.recv().await {
            match msg {
                Message::Text(text) => return Some(decode_str(&text).map_err(ProtocolError::from)),
                Message::Binary(_) => {
                    return Some(Err(ProtocolError::new(
                        ErrorCode::SyntaxError,
                        "binary frames are not accepted",
                    )))
                }
                Message::Close(_) => return None,
                Message::Ping(_) | Message::Pong(_) => {}
            }
        }
        None
    });
    next.await.ok().flatten()
}

/// One client socket: Hello, admission, then a reader and a writer that
/// run until either side ends.
async fn connection(mut socket: WebSocket, hub: Arc<Hub>) {
    let wait = Duration::from_millis(hub.config().hello_timeout_ms);
    let hello = match first_message(&mut socket, wait).await {
        Some(Ok(hello)) => hello,
        Some(Err(err)) => return send_error(&mut socket, "", err).await,
        None => return,
    };

    let room = match hub.room(&hello.room) {
        Ok(room) => room,
        Err(e) => {
            if !matches!(e, WorldLoadError::NotFound(_)) {
                warn!(room = %hello.room, error = %e, "room unavailable");
            }
            let policy = AdmissionPolicy {
                auto_create: false,
                ..hub.policy().clone()
            };
            let err = match admit(&hello, None, &policy, hub.ids()) {
                Err(err) => err,
                Ok(_) => ProtocolError::new(ErrorCode::RoomUnknown, format!("no world {}", hello.room)),
            };
            return send_error(&mut socket, &hello.room.clone(), err).await;
        }
    };

    let (out_tx, mut out_rx) = mpsc::channel(hub.config().outbound_queue);
    let (reply_tx, reply_rx) = oneshot::channel();
    let room_id = hello.room.clone();
    let join = Command::Join {
        hello,
        outbound: out_tx,
        reply: reply_tx,
    };
    if room.tx.send(join).await.is_err() {
        return;
    }
    let session = match reply_rx.await {
        Ok(Ok(session)) => session,
        Ok(Err(err)) => return send_error(&mut socket, &room_id, err).await,
        Err(_) => return,
    };

    let (mut sink, mut stream) = socket.split();
    let writer = async {
        while let Some(frame) = out_rx.recv().await {
            if sink.send(Message::Text(frame)).await.is_err() {
                return;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    };
    let reader = async {
        while let Some(Ok(msg)) = stream.next().await {
            let cmd = match msg {
                Message::Text(text) => match decode_str(&text) {
                    Ok(msg) => Command::Inbound(Inbound::new(session.clone(), msg, hub.now_ms())),
                    Err(e) => Command::Malformed {
                        session: session.clone(),
                        error: e.into(),
                    },
                },
                Message::Binary(_) => Command::Malformed {
                    session: session.clone(),
                    error: ProtocolError::new(ErrorCode::SyntaxError, "binary frames are not accepted"),
                },
                Message::Close(_) => return,
                Message::Ping(_) | Message::Pong(_) => continue,
            };
            if room.tx.send(cmd).await.is_err() {
                return;
            }
        }
    };
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    let _ = room.tx.send(Command::Disconnected(session)).await;
}
