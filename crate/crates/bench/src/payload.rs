//! First-load byte count of a world document and the assets it pulls in.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::BenchError;

pub const PAYLOAD_BUDGET_BYTES: u64 = 512 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetBytes {
    pub url: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadReport {
    pub world_id: String,
    pub document_url: String,
    pub document_bytes: u64,
    pub assets: Vec<AssetBytes>,
    /// Same-origin references that did not resolve.
    pub missing: Vec<String>,
    /// Third-party references, not counted.
    pub excluded: Vec<String>,
    pub total_bytes: u64,
    /// Every same-origin reference was fetched.
    pub complete: bool,
    pub budget_bytes: u64,
    pub within_budget: bool,
}

impl PayloadReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

fn src_attr() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"\bsrc="([^"]*)""#).unwrap())
}

fn unescape(s: &str) -> String {
    s.replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

/// Every distinct `src` in document order; fragment references are dropped.
pub fn asset_references(document: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    src_attr()
        .captures_iter(document)
        .map(|c| unescape(&c[1]))
        .filter(|s| !s.is_empty() && !s.starts_with('#'))
        .filter(|s| seen.insert(s.clone()))
        .collect()
}

fn same_origin(a: &Url, b: &Url) -> bool {
    a.scheme() == b.scheme() && a.host_str() == b.host_str() && a.port_or_known_default() == b.port_or_known_default()
}

/// Fetches `/w/<world_id>` from `http_base` and every same-origin asset it
/// references, summing body sizes.
pub async fn payload_budget(http_base: &str, world_id: &str) -> Result<PayloadReport, BenchError> {
    crate::install_crypto_provider();
    let base = Url::parse(http_base).map_err(|e| BenchError::Config(format!("bad url {http_base:?}: {e}")))?;
    let doc_url = base
        .join(&format!("/w/{world_id}"))
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let client = reqwest::Client::builder()
        .danger_accept_invalid_certs(true)
        .timeout(Duration::from_secs(10))
        .build()
        .map_err(|e| BenchError::Http(e.to_string()))?;

    let resp = client
        .get(doc_url.clone())
        .send()
        .await
        .map_err(|e| BenchError::Http(format!("{doc_url}: {e}")))?;
    if !resp.status().is_success() {
        return Err(BenchError::Http(format!("{doc_url}: status {}", resp.status())));
    }
    let document = resp.text().await.map_err(|e| BenchError::Http(e.to_string()))?;
    let document_bytes = document.len() as u64;

    let mut assets = Vec::new();
    let mut missing = Vec::new();
    let mut excluded = Vec::new();
    for reference in asset_references(&document) {
        let Ok(url) = doc_url.join(&reference) else {
            missing.push(reference);
            continue;
        };
        if !same_origin(&url, &doc_url) {
            excluded.push(url.to_string());
            continue;
        }
        match client.get(url.clone()).send().await {
            Ok(r) if r.status().is_success() => match r.bytes().await {
                Ok(body) => assets.push(AssetBytes {
                    url: url.to_string(),
                    bytes: body.len() as u64,
                }),
                Err(_) => missing.push(url.to_string()),
            },
            _ => missing.push(url.to_string()),
        }
    }

    let total_bytes = document_bytes + assets.iter().map(|a| a.bytes).sum::<u64>();
    Ok(PayloadReport {
        world_id: world_id.to_owned(),
        document_url: doc_url.to_string(),
        document_bytes,
        complete: missing.is_empty(),
        assets,
        missing,
        excluded,
        total_bytes,
        budget_bytes: PAYLOAD_BUDGET_BYTES,
        within_budget: total_bytes <= PAYLOAD_BUDGET_BYTES,
    })
}
