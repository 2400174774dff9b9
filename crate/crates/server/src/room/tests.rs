use super::*;
use openverse_core::protocol::{update_body, Kind};
use openverse_core::{hello_world, ComponentState, Transform};

const ROOM: &str = "hello-world";

fn sid(s: &str) -> SessionId {
    SessionId::from(s)
}

fn room_with(sessions: &[&str]) -> RoomState {
    let mut room = RoomState::from_world(Arc::new(hello_world()), None);
    for s in sessions {
        room.add_session(sid(s), 0);
    }
    room
}

fn create(id: &str, seq: u64, persistent: bool) -> WireMessage {
    let mut rec = EntityRecord::new(
        id,
        Owner::Server,
        seq,
        [ComponentState::transform(&Transform::default())],
    )
    .unwrap();
    rec.persistent = persistent;
    WireMessage::new(Kind::EntityCreate, ROOM)
        .for_entity(id, seq)
        .with_body(create_body(&rec))
}

fn avatar(id: &str) -> WireMessage {
    let rec = EntityRecord::new(
        id,
        Owner::Server,
        1,
        [
            ComponentState::transform(&Transform::default()),
            ComponentState::new("avatar", Default::default()),
        ],
    )
    .unwrap();
    WireMessage::new(Kind::EntityCreate, ROOM)
        .for_entity(id, 1)
        .with_body(create_body(&rec))
}

fn update(id: &str, seq: u64, px: f64) -> WireMessage {
    WireMessage::new(Kind::EntityUpdate, ROOM)
        .for_entity(id, seq)
        .with_body(update_body(&ComponentState::transform(&Transform::at(px, 0.0, 0.0))))
}

fn inb(from: &str, msg: WireMessage) -> Inbound {
    Inbound::new(sid(from), msg, 10)
}

fn step(room: &mut RoomState, batch: Vec<Inbound>) -> (FanoutPlan, StepStats) {
    room.step(batch, &StepOptions::default())
}

#[test]
fn update_skips_its_originator() {
    let mut room = room_with(&["a", "b", "c"]);
    step(&mut room, vec![inb("a", create("e1", 1, false))]);
    let (plan, stats) = step(&mut room, vec![inb("a", update("e1", 2, 5.0))]);
    assert_eq!(stats.applied, 1);
    assert_eq!(plan.deliveries.len(), 1);
    assert_eq!(plan.deliveries[0].to, vec![sid("b"), sid("c")]);
    assert_eq!(plan.deliveries[0].msg.sender, "a");
}

#[test]
fn stale_update_in_same_batch_is_dropped() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", create("e1", 1, false))]);
    let (plan, stats) = room.step(
        vec![inb("a", update("e1", 3, 3.0)), inb("a", update("e1", 2, 2.0))],
        &StepOptions { coalesce: false },
    );
    assert_eq!(room.entities["e1"].seq, 3);
    assert_eq!(room.entities["e1"].transform().px, 3.0);
    assert_eq!(stats.stale, 1);
    assert_eq!(plan.deliveries.len(), 1);
    assert_eq!(plan.deliveries[0].msg.seq, Some(3));
}

#[test]
fn empty_batch_changes_nothing() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", create("e1", 1, false))]);
    let before = room.clone();
    let (plan, stats) = step(&mut room, vec![]);
    assert!(plan.is_empty());
    assert_eq!(stats, StepStats::default());
    assert_eq!(room, before);
}

#[test]
fn transform_updates_coalesce_per_tick() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", create("e1", 1, false))]);
    let batch = vec![
        inb("a", update("e1", 2, 2.0)),
        inb("a", update("e1", 3, 3.0)),
        inb("a", update("e1", 4, 4.0)),
    ];
    let (plan, stats) = room.clone().step(batch.clone(), &StepOptions { coalesce: true });
    assert_eq!(stats.applied, 3);
    assert_eq!(stats.coalesced, 2);
    assert_eq!(plan.deliveries.len(), 1);
    assert_eq!(plan.deliveries[0].msg.seq, Some(4));

    let (plan, _) = room.step(batch, &StepOptions { coalesce: false });
    assert_eq!(plan.deliveries.len(), 3);
}

#[test]
fn coalescing_never_crosses_an_ownership_change() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", create("e1", 1, false))]);
    let request = WireMessage::new(Kind::OwnershipRequest, ROOM).with_entity("e1");
    let (plan, _) = step(
        &mut room,
        vec![
            inb("a", update("e1", 2, 2.0)),
            inb("b", request),
            inb("b", update("e1", 4, 4.0)),
        ],
    );
    let kinds: Vec<_> = plan.deliveries.iter().map(|d| (d.msg.kind, d.msg.seq)).collect();
    assert_eq!(
        kinds,
        vec![
            (Kind::EntityUpdate, Some(2)),
            (Kind::OwnershipGrant, Some(3)),
            (Kind::EntityUpdate, Some(4)),
        ]
    );
}

#[test]
fn ownership_moves_and_old_owner_goes_stale() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", create("ball", 1, false)), inb("a", update("ball", 2, 2.0))]);
    let request = WireMessage::new(Kind::OwnershipRequest, ROOM).with_entity("ball");
    // A's update seq 3 was queued before it learned about the grant.
    let (plan, stats) = step(
        &mut room,
        vec![
            inb("b", request),
            inb("a", update("ball", 3, 30.0)),
            inb("b", update("ball", 4, 40.0)),
        ],
    );
    assert_eq!(room.entities["ball"].owner, Owner::Session(sid("b")));
    assert_eq!(room.ownership["ball"].owner, Owner::Session(sid("b")));
    assert_eq!(room.ownership["ball"].granted_seq, 2);
    assert_eq!(room.entities["ball"].transform().px, 40.0);
    assert_eq!(stats.stale, 1);
    let grant = &plan.deliveries[0];
    assert_eq!(grant.msg.kind, Kind::OwnershipGrant);
    assert_eq!(grant.msg.seq, Some(3));
    assert_eq!(grant.to, vec![sid("a"), sid("b")]);
}

#[test]
fn non_owner_newer_update_is_forbidden() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", create("e1", 1, false))]);
    let (plan, stats) = step(&mut room, vec![inb("b", update("e1", 9, 9.0))]);
    assert_eq!(stats.rejected, 1);
    assert_eq!(plan.deliveries.len(), 1);
    assert_eq!(plan.deliveries[0].to, vec![sid("b")]);
    let err = ProtocolError::from_message(&plan.deliveries[0].msg).unwrap();
    assert_eq!(err.code, ErrorCode::Forbidden);
    assert_eq!(room.entities["e1"].seq, 1);
}

#[test]
fn static_furniture_cannot_be_taken() {
    let mut room = room_with(&["a"]);
    let request = WireMessage::new(Kind::OwnershipRequest, ROOM).with_entity("globe");
    let (plan, _) = step(&mut room, vec![inb("a", request)]);
    let err = ProtocolError::from_message(&plan.deliveries[0].msg).unwrap();
    assert_eq!(err.code, ErrorCode::Forbidden);
    assert_eq!(room.entities["globe"].owner, Owner::Server);
}

#[test]
fn errors_continue_the_batch() {
    let mut room = room_with(&["a", "b"]);
    let (plan, stats) = step(
        &mut room,
        vec![
            inb("a", update("ghost", 1, 0.0)),
            inb("a", create("e1", 1, false)),
        ],
    );
    assert_eq!(stats.rejected, 1);
    assert_eq!(stats.applied, 1);
    assert_eq!(plan.deliveries.len(), 2);
    assert_eq!(
        ProtocolError::from_message(&plan.deliveries[0].msg).unwrap().code,
        ErrorCode::NoSuchEntity
    );
    assert!(room.entities.contains_key("e1"));
}

#[test]
fn wrong_room_is_rejected() {
    let mut room = room_with(&["a", "b"]);
    let mut msg = create("e1", 1, false);
    msg.room = "elsewhere".into();
    let (plan, _) = step(&mut room, vec![inb("a", msg)]);
    assert!(!room.entities.contains_key("e1"));
    assert_eq!(plan.deliveries[0].to, vec![sid("a")]);
}

#[test]
fn duplicate_create_and_bad_transform_are_rejected() {
    let mut room = room_with(&["a"]);
    let mut bad = update("e1", 2, 0.0);
    bad.body.insert("sx".into(), serde_json::json!(0.0));
    let (plan, stats) = step(
        &mut room,
        vec![
            inb("a", create("e1", 1, false)),
            inb("a", create("e1", 5, false)),
            inb("a", bad),
        ],
    );
    assert_eq!(stats.rejected, 2);
    let codes: Vec<_> = plan
        .deliveries
        .iter()
        .filter_map(|d| ProtocolError::from_message(&d.msg))
        .map(|e| e.code)
        .collect();
    assert_eq!(codes, vec![ErrorCode::Forbidden, ErrorCode::SyntaxError]);
}

#[test]
fn ping_answers_only_the_sender() {
    let mut room = room_with(&["a", "b"]);
    let (plan, _) = step(
        &mut room,
        vec![Inbound::new(sid("a"), WireMessage::new(Kind::Ping, ROOM).at(77), 500)],
    );
    assert_eq!(plan.deliveries.len(), 1);
    assert_eq!(plan.deliveries[0].msg.kind, Kind::Pong);
    assert_eq!(plan.deliveries[0].msg.ts_ms, 77);
    assert_eq!(plan.deliveries[0].to, vec![sid("a")]);
    assert_eq!(room.sessions[&sid("a")].last_heartbeat_ms, 500);
}

#[test]
fn bye_cleans_up_avatar() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", avatar("a-avatar"))]);
    assert_eq!(room.sessions[&sid("a")].avatar_entity.as_deref(), Some("a-avatar"));
    let (plan, _) = step(&mut room, vec![inb("a", WireMessage::new(Kind::Bye, ROOM))]);
    assert!(!room.sessions.contains_key(&sid("a")));
    assert!(!room.entities.contains_key("a-avatar"));
    let kinds: Vec<_> = plan.deliveries.iter().map(|d| d.msg.kind).collect();
    assert_eq!(kinds, vec![Kind::EntityDelete, Kind::Presence]);
    assert!(plan.deliveries.iter().all(|d| d.to == vec![sid("b")]));
}

#[test]
fn messages_from_departed_sessions_are_ignored() {
    let mut room = room_with(&["a", "b"]);
    let (plan, _) = step(
        &mut room,
        vec![
            inb("a", WireMessage::new(Kind::Bye, ROOM)),
            inb("a", create("late", 1, false)),
        ],
    );
    assert!(!room.entities.contains_key("late"));
    assert_eq!(plan.deliveries.len(), 1);
}

#[test]
fn stale_session_avatar_is_deleted() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", avatar("a-avatar"))]);
    room.sessions.get_mut(&sid("b")).unwrap().last_heartbeat_ms = 40_000;
    let (evicted, plan) = room.heartbeat_sweep(40_000, 30_000);
    assert_eq!(evicted, vec![sid("a")]);
    assert!(!room.entities.contains_key("a-avatar"));
    let delete = &plan.deliveries[0];
    assert_eq!(delete.msg.kind, Kind::EntityDelete);
    assert_eq!(delete.msg.seq, Some(2));
    assert_eq!(delete.to, vec![sid("b")]);
}

#[test]
fn stale_session_whiteboard_reverts_to_server() {
    let mut room = room_with(&["a", "b"]);
    step(&mut room, vec![inb("a", create("whiteboard", 1, true))]);
    room.sessions.get_mut(&sid("b")).unwrap().last_heartbeat_ms = 40_000;
    let (_, plan) = room.heartbeat_sweep(40_000, 30_000);
    let board = &room.entities["whiteboard"];
    assert_eq!(board.owner, Owner::Server);
    assert_eq!(board.seq, 2);
    assert_eq!(room.ownership["whiteboard"].owner, Owner::Server);
    assert_eq!(plan.deliveries[0].msg.kind, Kind::OwnershipGrant);
}

#[test]
fn everyone_stale_empties_room_but_keeps_persistent() {
    let mut room = room_with(&["a", "b", "c"]);
    step(
        &mut room,
        vec![
            inb("a", avatar("a-avatar")),
            inb("b", avatar("b-avatar")),
            inb("c", create("whiteboard", 1, true)),
        ],
    );
    room.dirty = false;
    let (evicted, _) = room.heartbeat_sweep(30_011, 30_000);
    assert_eq!(evicted.len(), 3);
    assert!(room.sessions.is_empty());
    assert!(room.dirty);
    let left: Vec<_> = room.entities.keys().cloned().collect();
    assert_eq!(left, vec!["globe", "whiteboard"]);
    assert!(room.entities.values().all(|e| e.owner == Owner::Server));
}

#[test]
fn heartbeat_at_exact_timeout_survives() {
    let mut room = room_with(&["a"]);
    let (evicted, _) = room.heartbeat_sweep(30_000, 30_000);
    assert!(evicted.is_empty());
}

#[test]
fn step_is_deterministic() {
    let mut room = room_with(&["a", "b", "c"]);
    step(&mut room, vec![inb("a", create("e1", 1, false))]);
    let batch = vec![
        inb("a", update("e1", 2, 1.0)),
        inb("b", WireMessage::new(Kind::OwnershipRequest, ROOM).with_entity("e1")),
        inb("a", update("e1", 3, 2.0)),
        inb("c", WireMessage::new(Kind::Ping, ROOM)),
    ];
    let (r1, p1) = room_step(room.clone(), batch.clone(), &StepOptions::default());
    let (r2, p2) = room_step(room, batch, &StepOptions::default());
    assert_eq!(r1, r2);
    assert_eq!(p1, p2);
}

#[test]
fn admission_adds_session_and_announces_it() {
    let mut room = room_with(&["a"]);
    let ids = SessionIdAllocator::with_prefix("t");
    let hello = WireMessage::new(Kind::Hello, ROOM).with_field("version", 1u64);
    let (admission, plan) = room.admit(&hello, &AdmissionPolicy::default(), &ids, 5).unwrap();
    assert!(room.sessions.contains_key(&admission.session));
    assert_eq!(plan.deliveries[0].to, vec![sid("a")]);
    assert_eq!(plan.deliveries[0].msg.kind, Kind::Presence);
    let entities = openverse_core::protocol::snapshot_entities(&admission.snapshot).unwrap();
    assert_eq!(entities.len(), 1);
}

#[test]
fn room_full_is_enforced() {
    let names: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut room = room_with(&refs);
    let hello = WireMessage::new(Kind::Hello, ROOM).with_field("version", 1u64);
    let err = room
        .admit(&hello, &AdmissionPolicy::default(), &SessionIdAllocator::new(), 0)
        .unwrap_err();
    assert_eq!(err.code, ErrorCode::RoomFull);
    assert_eq!(room.sessions.len(), 20);
}
