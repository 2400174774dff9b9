//! Emits a world description as a self-contained spatial web app page.

use std::fmt::Write as _;

use serde_json::json;

use crate::component::{signed_degrees, ComponentData, Scalar, Transform, TRANSFORM};
use crate::protocol::PROTOCOL_VERSION;
use crate::world::{validate_world_with, OpenMode, ValidationOptions, WorldDescription};
use crate::WorldError;

/// Scene framework bundle. Loaded from its own CDN and cached separately
/// from the world payload.
pub const FRAMEWORK_SCRIPT: &str = "https://aframe.io/releases/1.6.0/aframe.min.js";

/// URL prefix under which world assets are served.
pub const ASSET_PREFIX: &str = "/assets/";

/// Keys written first in multi-property attributes, in this order.
const LEADING_KEYS: [&str; 6] = ["property", "from", "to", "loop", "dur", "easing"];

pub fn emit_world_document(world: &WorldDescription, sync_endpoint: &str) -> Result<String, WorldError> {
    emit_world_document_with(world, sync_endpoint, &ValidationOptions::default())
}

pub fn emit_world_document_with(
    world: &WorldDescription,
    sync_endpoint: &str,
    opts: &ValidationOptions,
) -> Result<String, WorldError> {
    let violations = validate_world_with(world, opts);
    if !violations.is_empty() {
        return Err(WorldError::InvalidWorld(violations));
    }
    let scheme_ok = ["ws://", "wss://"]
        .iter()
        .any(|p| sync_endpoint.starts_with(p) && sync_endpoint.len() > p.len());
    if !scheme_ok || sync_endpoint.chars().any(|c| c.is_whitespace() || c == '"' || c == '<') {
        return Err(WorldError::InvalidEndpoint(sync_endpoint.to_owned()));
    }

    let mut doc = String::with_capacity(8 * 1024);
    let title = escape_text(&world.title);
    let config = json!({
        "protocol": PROTOCOL_VERSION,
        "room": world.world_id,
        "spawn": world.spawn,
        "sync": sync_endpoint,
        "world": world.world_id,
    });

    doc.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    doc.push_str("<meta name=\"viewport\" content=\"width=device-width, initial-scale=1\">\n");
    let _ = writeln!(doc, "<title>{title}</title>");
    let _ = writeln!(doc, "<script src=\"{FRAMEWORK_SCRIPT}\"></script>");
    let _ = writeln!(
        doc,
        "<script type=\"application/json\" id=\"openverse-config\">{}</script>",
        script_safe(&config.to_string())
    );
    doc.push_str(STYLE);
    doc.push_str("</head>\n<body>\n");
    doc.push_str("<a-scene vr-mode-ui=\"enabled: true\" renderer=\"colorManagement: true\">\n");

    if !world.assets.is_empty() {
        doc.push_str("<a-assets>\n");
        for a in &world.assets {
            let src = escape_attr(&format!("{ASSET_PREFIX}{}", a.path));
            let id = escape_attr(&a.asset_id);
            let line = match a.media_type.split('/').next().unwrap_or("") {
                "image" => format!("<img id=\"{id}\" src=\"{src}\" crossorigin=\"anonymous\">"),
                "audio" => format!("<audio id=\"{id}\" src=\"{src}\" preload=\"auto\"></audio>"),
                "video" => format!("<video id=\"{id}\" src=\"{src}\" preload=\"auto\"></video>"),
                _ => format!("<a-asset-item id=\"{id}\" src=\"{src}\"></a-asset-item>"),
            };
            let _ = writeln!(doc, "{line}");
        }
        doc.push_str("</a-assets>\n");
    }

    for entity in &world.static_entities {
        emit_entity(&mut doc, world, &entity.entity_id, &entity.components);
    }

    for portal in &world.portals {
        let label = portal.title.as_deref().unwrap_or(&portal.target_url);
        let mode = match portal.open_mode {
            OpenMode::Replace => "replace",
            OpenMode::NewWindow => "new_window",
        };
        let _ = writeln!(
            doc,
            "<a-entity id=\"{}\" class=\"openverse-portal clickable\" {} geometry=\"primitive: torus; radius: 0.8; radiusTubular: 0.05\" material=\"color: #66ccff; emissive: #2288aa\" data-href=\"{}\" data-open-mode=\"{mode}\"><a-text value=\"{}\" align=\"center\" position=\"0 1.1 0\"></a-text></a-entity>",
            escape_attr(&portal.portal_id),
            transform_attrs(&portal.position),
            escape_attr(&portal.target_url),
            escape_attr(label),
        );
    }

    let _ = writeln!(
        doc,
        "<a-entity id=\"openverse-rig\" {}><a-camera><a-cursor raycaster=\"objects: .clickable\"></a-cursor></a-camera></a-entity>",
        transform_attrs(&world.spawn)
    );
    doc.push_str("</a-scene>\n");

    if !world.portals.is_empty() {
        doc.push_str("<nav class=\"openverse-portals\">\n");
        for portal in &world.portals {
            let label = escape_text(portal.title.as_deref().unwrap_or(&portal.target_url));
            let href = escape_attr(&portal.target_url);
            let _ = match portal.open_mode {
                OpenMode::Replace => writeln!(doc, "<a href=\"{href}\">{label}</a>"),
                OpenMode::NewWindow => writeln!(
                    doc,
                    "<a href=\"{href}\" target=\"_blank\" rel=\"noopener\">{label}</a>"
                ),
            };
        }
        doc.push_str("</nav>\n");
    }

    doc.push_str("<div id=\"openverse-status\"></div>\n");
    let _ = writeln!(doc, "<script>{BOOTSTRAP}</script>");
    doc.push_str("</body>\n</html>\n");
    Ok(doc)
}

fn emit_entity(
    doc: &mut String,
    world: &WorldDescription,
    entity_id: &str,
    components: &std::collections::BTreeMap<String, ComponentData>,
) {
    let template = components.get("template");
    let primitive = template
        .and_then(|t| t.get("primitive"))
        .and_then(Scalar::as_str)
        .unwrap_or("entity");
    let tag = format!("a-{primitive}");

    let mut attrs = format!("id=\"{}\"", escape_attr(entity_id));
    if let Some(t) = components.get(TRANSFORM).and_then(|d| Transform::from_data(d).ok()) {
        attrs.push(' ');
        attrs.push_str(&transform_attrs(&t));
    }
    if let Some(template) = template {
        for (key, value) in template.iter().filter(|(k, _)| k.as_str() != "primitive") {
            let _ = write!(attrs, " {key}=\"{}\"", escape_attr(&field_value(world, key, value)));
        }
    }
    for (name, data) in components
        .iter()
        .filter(|(n, _)| n.as_str() != TRANSFORM && n.as_str() != "template")
    {
        let _ = write!(attrs, " {name}=\"{}\"", escape_attr(&multi_property(world, data)));
    }
    let _ = writeln!(doc, "<{tag} {attrs}></{tag}>");
}

fn transform_attrs(t: &Transform) -> String {
    let t = t.normalized();
    format!(
        "position=\"{} {} {}\" rotation=\"{} {} {}\" scale=\"{} {} {}\"",
        num(t.px),
        num(t.py),
        num(t.pz),
        num(signed_degrees(t.rx)),
        num(signed_degrees(t.ry)),
        num(signed_degrees(t.rz)),
        num(t.sx),
        num(t.sy),
        num(t.sz),
    )
}

/// `key: value; key: value` with animation-style keys first.
fn multi_property(world: &WorldDescription, data: &ComponentData) -> String {
    let leading = LEADING_KEYS
        .iter()
        .filter_map(|k| data.get_key_value(*k));
    let rest = data
        .iter()
        .filter(|(k, _)| !LEADING_KEYS.contains(&k.as_str()));
    leading
        .chain(rest)
        .map(|(k, v)| format!("{k}: {}", field_value(world, k, v)))
        .collect::<Vec<_>>()
        .join("; ")
}

fn field_value(world: &WorldDescription, key: &str, value: &Scalar) -> String {
    match value {
        Scalar::Text(s) if key == "src" && world.asset(s).is_some() => format!("#{s}"),
        Scalar::Text(s) => s.clone(),
        Scalar::Number(n) => num(*n),
        Scalar::Bool(b) => b.to_string(),
    }
}

fn num(v: f64) -> String {
    if v == 0.0 {
        "0".to_owned()
    } else {
        format!("{v}")
    }
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn escape_text(s: &str) -> String {
    escape_attr(s)
}

/// Keeps embedded JSON from closing its `<script>` element.
fn script_safe(json: &str) -> String {
    json.replace("</", "<\\/").replace("<!--", "<\\!--")
}

const STYLE: &str = "<style>\
#openverse-status{position:fixed;left:8px;bottom:8px;font:12px sans-serif;color:#fff;background:#0008;padding:2px 6px;border-radius:3px;z-index:10}\
.openverse-portals{position:fixed;top:8px;left:8px;z-index:10;font:14px sans-serif}\
.openverse-portals a{display:block;color:#fff;background:#0008;padding:4px 8px;margin-bottom:4px;border-radius:3px}\
</style>\n";

/// Minimal networking bootstrap: joins the room, replicates the local
/// avatar and applies peer updates with the same last-writer-wins rule as
/// the server.
const BOOTSTRAP: &str = r##"
(() => {
  const cfg = JSON.parse(document.getElementById("openverse-config").textContent);
  const scene = document.querySelector("a-scene");
  const status = document.getElementById("openverse-status");
  const seqs = new Map();
  let ws = null, session = null, seq = 0, backoff = 500, timers = [], terminal = false;
  const norm = (d) => { const r = ((d % 360) + 360) % 360; return r >= 360 ? 0 : r; };
  const show = (s) => { status.textContent = s; };
  const send = (m) => {
    if (ws && ws.readyState === 1) {
      ws.send(JSON.stringify(Object.assign({ room: cfg.room, sender: session || "", ts: Date.now(), body: {} }, m)));
    }
  };
  const place = (el, t) => {
    if (!t) return;
    el.setAttribute("position", `${t.px} ${t.py} ${t.pz}`);
    el.setAttribute("rotation", `${norm(t.rx)} ${norm(t.ry)} ${norm(t.rz)}`);
    el.setAttribute("scale", `${t.sx} ${t.sy} ${t.sz}`);
  };
  const node = (id, avatar) => {
    let el = document.getElementById(id);
    if (!el) {
      el = document.createElement("a-entity");
      el.id = id;
      el.dataset.remote = "1";
      el.innerHTML = avatar
        ? '<a-sphere radius="0.2" position="0 0.55 0" color="#ffcc66"></a-sphere><a-cylinder radius="0.18" height="0.7" color="#5588ff"></a-cylinder>'
        : '<a-box width="0.5" height="0.5" depth="0.5" color="#aaaaaa"></a-box>';
      scene.appendChild(el);
    }
    return el;
  };
  const flat = (c) => (c && c.data ? c.data : c);
  const upsert = (id, s, components) => {
    seqs.set(id, s);
    place(node(id, components && components.avatar), flat(components && components.transform));
  };
  const apply = (m) => {
    const last = seqs.has(m.entity) ? seqs.get(m.entity) : -1;
    switch (m.kind) {
      case "Welcome":
        session = m.body.session; seq = 0; backoff = 500; show("live");
        send({ kind: "EntityCreate", entity: `${session}-avatar`, seq: ++seq,
               body: { components: { transform: pose(), avatar: { label: session } }, persistent: false } });
        break;
      case "Snapshot":
        (m.body.entities || []).forEach((r) => upsert(r.entity_id, r.seq, r.components));
        break;
      case "EntityCreate":
        if (m.seq > last) upsert(m.entity, m.seq, m.body.components);
        break;
      case "EntityUpdate":
        if (m.seq > last && (m.body.component || "transform") === "transform") {
          seqs.set(m.entity, m.seq);
          place(node(m.entity, false), m.body);
        }
        break;
      case "OwnershipGrant":
        if (m.body.record) upsert(m.entity, m.seq, m.body.record.components);
        break;
      case "EntityDelete": {
        const el = document.getElementById(m.entity);
        if (el && el.dataset.remote) el.remove();
        seqs.delete(m.entity);
        break;
      }
      case "Error":
        show(`error: ${m.body.code}`);
        if (m.body.code === "VersionMismatch") terminal = true;
        break;
    }
  };
  const pose = () => {
    const cam = document.querySelector("[camera]");
    const p = new THREE.Vector3(), q = new THREE.Quaternion();
    cam.object3D.getWorldPosition(p);
    cam.object3D.getWorldQuaternion(q);
    const e = new THREE.Euler().setFromQuaternion(q, "YXZ");
    const deg = THREE.MathUtils.radToDeg;
    return { px: p.x, py: p.y - 0.6, pz: p.z, rx: norm(deg(e.x)), ry: norm(deg(e.y)), rz: norm(deg(e.z)), sx: 1, sy: 1, sz: 1 };
  };
  const connect = () => {
    show("connecting");
    ws = new WebSocket(cfg.sync);
    ws.onopen = () => ws.send(JSON.stringify({ kind: "Hello", room: cfg.room, sender: "", ts: Date.now(), body: { version: cfg.protocol } }));
    ws.onmessage = (ev) => { try { apply(JSON.parse(ev.data)); } catch (err) { console.warn(err); } };
    ws.onclose = () => {
      timers.forEach(clearInterval); timers = []; session = null;
      if (terminal) return;
      show("reconnecting");
      setTimeout(connect, backoff);
      backoff = Math.min(backoff * 2, 10000);
    };
    timers.push(setInterval(() => session && send({ kind: "EntityUpdate", entity: `${session}-avatar`, seq: ++seq, body: pose() }), 100));
    timers.push(setInterval(() => send({ kind: "Ping" }), 10000));
  };
  document.querySelectorAll(".openverse-portal").forEach((el) => el.addEventListener("click", () => {
    if (el.dataset.openMode === "new_window") window.open(el.dataset.href, "_blank", "noopener");
    else window.location.assign(el.dataset.href);
  }));
  if (scene.hasLoaded) connect(); else scene.addEventListener("loaded", connect);
})();
"##;
