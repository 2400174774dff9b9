use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use openverse_core::protocol::{
    create_body, decode_str, encode, snapshot_entities, update_body, ErrorCode, Kind, ProtocolError,
    WireMessage,
};
use openverse_core::{ComponentState, EntityRecord, Owner, Transform};
use openverse_server::{start, RunningServer, ServerConfig, StartupError};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

const ROOM: &str = "hello-world";
const WAIT: Duration = Duration::from_secs(5);

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Client {
    ws: Ws,
    session: String,
    snapshot: Vec<EntityRecord>,
}

async fn connect(url: &str) -> Ws {
    tokio_tungstenite::connect_async(url).await.expect("websocket connect").0
}

async fn send(ws: &mut Ws, msg: &WireMessage) {
    ws.send(Message::text(encode(msg))).await.unwrap();
}

/// Next protocol frame, or `None` once the server closed the socket.
async fn recv(ws: &mut Ws) -> Option<WireMessage> {
    loop {
        let next = tokio::time::timeout(WAIT, ws.next()).await.expect("frame within timeout");
        match next? {
            Ok(Message::Text(text)) => return Some(decode_str(&text).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

async fn recv_kind(ws: &mut Ws, kind: Kind) -> WireMessage {
    loop {
        let msg = recv(ws).await.unwrap_or_else(|| panic!("closed while waiting for {kind}"));
        if msg.kind == kind {
            return msg;
        }
    }
}

fn hello(room: &str, version: u64) -> WireMessage {
    WireMessage::new(Kind::Hello, room).with_field("version", version)
}

async fn try_join(server: &RunningServer, room: &str, version: u64) -> Result<Client, ProtocolError> {
    let mut ws = connect(&server.sync_url()).await;
    send(&mut ws, &hello(room, version)).await;
    let first = recv(&mut ws).await.expect("admission answer");
    if let Some(err) = ProtocolError::from_message(&first) {
        return Err(err);
    }
    assert_eq!(first.kind, Kind::Welcome);
    let snapshot = recv(&mut ws).await.unwrap();
    assert_eq!(snapshot.kind, Kind::Snapshot);
    Ok(Client {
        session: first.body_str("session").unwrap().to_owned(),
        snapshot: snapshot_entities(&snapshot).unwrap(),
        ws,
    })
}

async fn join(server: &RunningServer) -> Client {
    try_join(server, ROOM, 1).await.expect("admitted")
}

fn create(id: &str, persistent: bool, avatar: bool) -> WireMessage {
    let mut comps = vec![ComponentState::transform(&Transform::at(1.0, 0.0, 2.0))];
    if avatar {
        comps.push(ComponentState::new("avatar", Default::default()));
    }
    let mut rec = EntityRecord::new(id, Owner::Server, 1, comps).unwrap();
    rec.persistent = persistent;
    WireMessage::new(Kind::EntityCreate, ROOM)
        .for_entity(id, 1)
        .with_body(create_body(&rec))
}

async fn dev_server(dir: &std::path::Path, tweak: impl FnOnce(&mut ServerConfig)) -> RunningServer {
    let mut cfg = ServerConfig::dev(dir);
    tweak(&mut cfg);
    start(cfg).await.expect("server starts")
}

#[tokio::test]
async fn serves_documents_assets_and_health() {
    let dir = tempfile::tempdir().unwrap();
    let server = dev_server(dir.path(), |_| {}).await;
    let http = reqwest::Client::new();
    let base = server.http_url();

    let doc = http.get(format!("{base}/w/hello-world")).send().await.unwrap();
    assert_eq!(doc.status(), 200);
    assert!(doc.headers()["content-type"].to_str().unwrap().starts_with("text/html"));
    let body = doc.text().await.unwrap();
    assert!(body.contains(r#"position="0 1.5 -5""#));
    assert!(body.contains(&format!("ws://{}/sync", server.local_addr())));

    for path in ["/w/atlantis", "/w/..%2Fhello-world", "/nope", "/assets/textures/none.png"] {
        let resp = http.get(format!("{base}{path}")).send().await.unwrap();
        assert_eq!(resp.status(), 404, "{path}");
        assert!(resp.bytes().await.unwrap().is_empty(), "{path} leaked a body");
    }

    let png = http
        .get(format!("{base}/assets/textures/globe.png"))
        .send()
        .await
        .unwrap();
    assert_eq!(png.status(), 200);
    assert_eq!(png.headers()["content-type"], "image/png");
    assert_eq!(&png.bytes().await.unwrap()[..4], b"\x89PNG");

    let health: serde_json::Value = http
        .get(format!("{base}/healthz"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["sessions"], 0);
    server.shutdown().await;
}

#[tokio::test]
async fn two_clients_replicate_without_echo() {
    let dir = tempfile::tempdir().unwrap();
    let server = dev_server(dir.path(), |_| {}).await;
    let mut a = join(&server).await;
    let mut b = join(&server).await;
    assert!(b.snapshot.iter().any(|e| e.entity_id == "globe"));

    send(&mut a.ws, &create("a-avatar", false, true)).await;
    let created = recv_kind(&mut b.ws, Kind::EntityCreate).await;
    assert_eq!(created.sender, a.session);
    assert_eq!(created.entity.as_deref(), Some("a-avatar"));

    let moved = ComponentState::transform(&Transform::at(4.0, 0.0, 2.0));
    send(
        &mut a.ws,
        &WireMessage::new(Kind::EntityUpdate, ROOM)
            .for_entity("a-avatar", 2)
            .with_body(update_body(&moved)),
    )
    .await;
    let update = recv_kind(&mut b.ws, Kind::EntityUpdate).await;
    assert_eq!(update.seq, Some(2));
    assert_eq!(update.body["px"], 4.0);

    send(&mut a.ws, &WireMessage::new(Kind::Ping, ROOM).at(42)).await;
    // A saw B join, then gets its Pong; its own create and update never come back.
    let mut seen = Vec::new();
    loop {
        let msg = recv(&mut a.ws).await.unwrap();
        if msg.kind == Kind::Pong {
            assert_eq!(msg.ts_ms, 42);
            break;
        }
        seen.push(msg.kind);
    }
    assert_eq!(seen, vec![Kind::Presence]);

    send(&mut a.ws, &WireMessage::new(Kind::Bye, ROOM)).await;
    let delete = recv_kind(&mut b.ws, Kind::EntityDelete).await;
    assert_eq!(delete.entity.as_deref(), Some("a-avatar"));
    let leave = recv_kind(&mut b.ws, Kind::Presence).await;
    assert_eq!(leave.body_str("state"), Some("leave"));
    assert_eq!(leave.body_str("session"), Some(a.session.as_str()));
    assert!(recv(&mut a.ws).await.is_none(), "server closes after Bye");
    server.shutdown().await;
}

#[tokio::test]
async fn admission_errors_are_reported_then_closed() {
    let dir = tempfile::tempdir().unwrap();
    let server = dev_server(dir.path(), |c| c.max_room_size = 2).await;

    let err = try_join(&server, ROOM, 2).await.err().unwrap();
    assert_eq!(err.code, ErrorCode::VersionMismatch);
    let err = try_join(&server, "atlantis", 1).await.err().unwrap();
    assert_eq!(err.code, ErrorCode::RoomUnknown);

    let mut ws = connect(&server.sync_url()).await;
    ws.send(Message::text("{not json")).await.unwrap();
    let reply = recv(&mut ws).await.unwrap();
    assert_eq!(ProtocolError::from_message(&reply).unwrap().code, ErrorCode::SyntaxError);
    assert!(recv(&mut ws).await.is_none());

    let _a = join(&server).await;
    let _b = join(&server).await;
    let err = try_join(&server, ROOM, 1).await.err().unwrap();
    assert_eq!(err.code, ErrorCode::RoomFull);
    server.shutdown().await;
}

#[tokio::test]
async fn bad_frames_get_errors_and_session_survives() {
    let dir = tempfile::tempdir().unwrap();
    let server = dev_server(dir.path(), |_| {}).await;
    let mut a = join(&server).await;

    a.ws.send(Message::text("[1,2")).await.unwrap();
    let e = recv_kind(&mut a.ws, Kind::Error).await;
    assert_eq!(ProtocolError::from_message(&e).unwrap().code, ErrorCode::SyntaxError);

    let teleport = r#"{"kind":"Teleport","room":"hello-world","sender":"x","body":{},"ts":0}"#;
    a.ws.send(Message::text(teleport)).await.unwrap();
    let e = recv_kind(&mut a.ws, Kind::Error).await;
    assert_eq!(ProtocolError::from_message(&e).unwrap().code, ErrorCode::UnknownKind);

    let ghost = WireMessage::new(Kind::EntityUpdate, ROOM)
        .for_entity("ghost", 3)
        .with_body(update_body(&ComponentState::transform(&Transform::default())));
    send(&mut a.ws, &ghost).await;
    let e = recv_kind(&mut a.ws, Kind::Error).await;
    assert_eq!(ProtocolError::from_message(&e).unwrap().code, ErrorCode::NoSuchEntity);

    send(&mut a.ws, &WireMessage::new(Kind::Ping, ROOM).at(7)).await;
    assert_eq!(recv_kind(&mut a.ws, Kind::Pong).await.ts_ms, 7);
    server.shutdown().await;
}

#[tokio::test]
async fn silent_sessions_are_evicted() {
    let dir = tempfile::tempdir().unwrap();
    let server = dev_server(dir.path(), |c| {
        c.tick_ms = 20;
        c.heartbeat_timeout_ms = 300;
    })
    .await;
    let mut a = join(&server).await;
    let mut b = join(&server).await;
    send(&mut a.ws, &create("a-avatar", false, true)).await;
    recv_kind(&mut b.ws, Kind::EntityCreate).await;

    let mut deleted = false;
    let deadline = tokio::time::Instant::now() + WAIT;
    while tokio::time::Instant::now() < deadline {
        send(&mut b.ws, &WireMessage::new(Kind::Ping, ROOM)).await;
        let msg = recv(&mut b.ws).await.unwrap();
        if msg.kind == Kind::EntityDelete {
            assert_eq!(msg.entity.as_deref(), Some("a-avatar"));
            deleted = true;
        }
        if msg.kind == Kind::Presence && msg.body_str("state") == Some("leave") {
            assert_eq!(msg.body_str("session"), Some(a.session.as_str()));
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert!(deleted);
    let health = server.hub().health();
    assert_eq!(health.sessions, 1);
    assert_eq!(health.room_stats[ROOM].evictions, 1);
    server.shutdown().await;
}

#[tokio::test]
async fn persistent_entities_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let server = dev_server(dir.path(), |_| {}).await;
    let mut a = join(&server).await;
    send(&mut a.ws, &create("whiteboard", true, false)).await;
    send(&mut a.ws, &create("a-avatar", false, true)).await;
    send(&mut a.ws, &WireMessage::new(Kind::Ping, ROOM)).await;
    recv_kind(&mut a.ws, Kind::Pong).await;
    server.shutdown().await;

    assert!(dir.path().join("rooms/hello-world.snapshot.json").exists());
    let server = dev_server(dir.path(), |_| {}).await;
    let b = join(&server).await;
    let ids: Vec<&str> = b.snapshot.iter().map(|e| e.entity_id.as_str()).collect();
    assert_eq!(ids, vec!["globe", "whiteboard"]);
    let board = &b.snapshot[1];
    assert_eq!(board.owner, Owner::Server);
    assert_eq!(board.transform().pz, 2.0);
    server.shutdown().await;
}

#[tokio::test]
async fn serves_tls_with_given_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cert = rcgen::generate_simple_self_signed(vec!["localhost".into()]).unwrap();
    let cert_path = dir.path().join("cert.pem");
    let key_path = dir.path().join("key.pem");
    std::fs::write(&cert_path, cert.cert.pem()).unwrap();
    std::fs::write(&key_path, cert.key_pair.serialize_pem()).unwrap();

    let mut cfg = ServerConfig::dev(dir.path().join("data"));
    cfg.dev_plaintext = false;
    cfg.cert = Some(cert_path);
    cfg.key = Some(key_path);
    let server = start(cfg).await.expect("tls server starts");
    assert!(server.http_url().starts_with("https://"));
    assert!(server.sync_url().starts_with("wss://"));

    let http = reqwest::Client::builder()
        .danger_accept_invalid_certs(true)
        .build()
        .unwrap();
    let doc = http
        .get(format!("{}/w/hello-world", server.http_url()))
        .send()
        .await
        .unwrap();
    assert_eq!(doc.status(), 200);
    assert!(doc.text().await.unwrap().contains("wss://"));

    let plain = reqwest::get(format!("http://{}/healthz", server.local_addr())).await;
    assert!(plain.map(|r| !r.status().is_success()).unwrap_or(true));
    server.shutdown().await;
}

#[tokio::test]
async fn startup_failures_have_distinct_causes() {
    let dir = tempfile::tempdir().unwrap();

    let mut prod = ServerConfig::dev(dir.path());
    prod.dev_plaintext = false;
    let err = start(prod.clone()).await.err().unwrap();
    assert!(matches!(err, StartupError::Tls(_)));
    assert_eq!(err.exit_code(), 4);

    prod.cert = Some(dir.path().join("missing-cert.pem"));
    prod.key = Some(dir.path().join("missing-key.pem"));
    assert_eq!(start(prod).await.err().unwrap().exit_code(), 4);

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut busy = ServerConfig::dev(dir.path());
    busy.port = taken.local_addr().unwrap().port();
    let err = start(busy).await.err().unwrap();
    assert!(matches!(err, StartupError::PortBusy { .. }));
    assert_eq!(err.exit_code(), 3);

    let file = dir.path().join("not-a-dir");
    std::fs::write(&file, b"x").unwrap();
    let err = start(ServerConfig::dev(&file)).await.err().unwrap();
    assert!(matches!(err, StartupError::PersistDir(_)));
    assert_eq!(err.exit_code(), 5);
}
