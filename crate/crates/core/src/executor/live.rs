//! Submission to a running ComfyUI server.
//!
//! The prompt is POSTed to `/prompt`; the returned `prompt_id` is then polled
//! at `/history/<id>` until the run finishes or the timeout expires.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Artifact, ExecutionTrace, NodeFailure, PortArtifacts, TraceStatus};
use crate::ir::Modality;

pub const ENDPOINT_ENV: &str = "AFLOW_COMFY_URL";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub endpoint: String,
    pub poll_interval: Duration,
    pub timeout: Duration,
    pub client_id: String,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| "http://127.0.0.1:8188".to_string()),
            poll_interval: Duration::from_secs(1),
            timeout: Duration::from_secs(600),
            client_id: "aflow".to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("network error: {0}")]
    Network(String),
    #[error("no result after {0:?}")]
    Timeout(Duration),
    #[error("unexpected server response: {0}")]
    Protocol(String),
}

fn net(e: reqwest::Error) -> LiveError {
    LiveError::Network(e.to_string())
}

/// Runs a prompt document (as produced by `export_comfy_with`) on a live
/// server. Server-side failures come back as a `Failed` trace, not an error.
pub fn submit_live(doc: &str, cfg: &LiveConfig) -> Result<ExecutionTrace, LiveError> {
    let prompt: Value =
        serde_json::from_str(doc).map_err(|e| LiveError::Protocol(format!("prompt is not JSON: {e}")))?;
    let order: Vec<String> = prompt
        .as_object()
        .ok_or_else(|| LiveError::Protocol("prompt must be an object".into()))?
        .keys()
        .cloned()
        .collect();
    let base = cfg.endpoint.trim_end_matches('/');
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(net)?;

    let resp = client
        .post(format!("{base}/prompt"))
        .json(&json!({"prompt": prompt, "client_id": cfg.client_id}))
        .send()
        .map_err(net)?;
    let status = resp.status();
    let body: Value = resp
        .json()
        .map_err(|e| LiveError::Protocol(format!("/prompt body: {e}")))?;
    if !status.is_success() {
        return match rejected_node(&body) {
            Some(failure) => Ok(failed(order, BTreeMap::new(), failure)),
            None => Err(LiveError::Protocol(format!("/prompt returned {status}: {body}"))),
        };
    }
    let id = body
        .get("prompt_id")
        .and_then(Value::as_str)
        .ok_or_else(|| LiveError::Protocol("missing prompt_id".into()))?
        .to_string();

    let started = Instant::now();
    loop {
        let history: Value = client
            .get(format!("{base}/history/{id}"))
            .send()
            .map_err(net)?
            .json()
            .map_err(|e| LiveError::Protocol(format!("/history body: {e}")))?;
        if let Some(entry) = history.get(&id) {
            if let Some(trace) = finished(&order, entry)? {
                return Ok(trace);
            }
        }
        if started.elapsed() >= cfg.timeout {
            return Err(LiveError::Timeout(cfg.timeout));
        }
        std::thread::sleep(cfg.poll_interval);
    }
}

fn failed(
    order: Vec<String>,
    outputs: BTreeMap<String, PortArtifacts>,
    failure: NodeFailure,
) -> ExecutionTrace {
    ExecutionTrace {
        order,
        outputs,
        status: TraceStatus::Failed,
        failure: Some(failure),
    }
}

/// `/prompt` rejects invalid prompts with a `node_errors` map.
fn rejected_node(body: &Value) -> Option<NodeFailure> {
    let (node, err) = body.get("node_errors")?.as_object()?.iter().next()?;
    let message = err
        .pointer("/errors/0/message")
        .or_else(|| err.pointer("/errors/0/details"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| err.to_string());
    Some(NodeFailure {
        node: node.clone(),
        message,
    })
}

fn finished(order: &[String], entry: &Value) -> Result<Option<ExecutionTrace>, LiveError> {
    let status = entry.get("status");
    let done = status
        .and_then(|s| s.get("completed"))
        .and_then(Value::as_bool)
        .unwrap_or(false);
    let status_str = status
        .and_then(|s| s.get("status_str"))
        .and_then(Value::as_str)
        .unwrap_or("");

    // Node outputs are opaque (file names, previews); each one is reduced to
    // a content hash so traces from the live and simulated paths share a shape.
    let mut outputs = BTreeMap::new();
    if let Some(map) = entry.get("outputs").and_then(Value::as_object) {
        for (node, value) in map {
            let digest = Sha256::digest(value.to_string().as_bytes());
            let token: String = digest[..16].iter().map(|b| format!("{b:02x}")).collect();
            let mut ports = PortArtifacts::new();
            ports.insert(
                "RESULT".to_string(),
                Artifact {
                    modality: Modality::Any,
                    token,
                },
            );
            outputs.insert(node.clone(), ports);
        }
    }

    if status_str == "error" {
        let msg = status
            .and_then(|s| s.get("messages"))
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .find(|m| m.get(0).and_then(Value::as_str) == Some("execution_error"))
            .and_then(|m| m.get(1));
        let failure = match msg {
            Some(m) => NodeFailure {
                node: m
                    .get("node_id")
                    .and_then(Value::as_str)
                    .unwrap_or("<unknown>")
                    .to_string(),
                message: m
                    .get("exception_message")
                    .and_then(Value::as_str)
                    .unwrap_or("execution error")
                    .trim()
                    .to_string(),
            },
            None => {
                return Err(LiveError::Protocol(
                    "run failed without an execution_error message".into(),
                ))
            }
        };
        return Ok(Some(failed(order.to_vec(), outputs, failure)));
    }
    if !done {
        return Ok(None);
    }
    Ok(Some(ExecutionTrace {
        order: order.to_vec(),
        outputs,
        status: TraceStatus::Completed,
        failure: None,
    }))
}
