//! Language-model backends.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error("LM backend error: {0}")]
    Backend(String),
    #[error("LM returned an empty response")]
    EmptyResponse,
    #[error("script exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("LM configuration: {0}")]
    Config(String),
}

/// The two capabilities the pipeline needs. Implementations must be safe to
/// call from several sessions at once.
pub trait LmBackend: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, LmError>;
    fn embed(&self, text: &str) -> Result<Vec<f32>, LmError>;
}

pub const HASH_DIM: usize = 256;

/// Bag-of-words embedding: lowercase alphanumeric tokens hashed (FNV-1a)
/// into `dim` buckets, then L2-normalised. Empty text maps to the zero vector.
pub fn hashing_embed(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0.0f32; dim];
    for token in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.to_lowercase().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        v[(h % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedPrompt {
    pub system: String,
    pub user: String,
}

/// On-disk script: responses are played back in order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    pub responses: Vec<String>,
}

/// Plays back a fixed response sequence and records every prompt. Embeddings
/// come from [`hashing_embed`]. Never touches the network.
#[derive(Debug, Default)]
pub struct ScriptedLm {
    state: Mutex<ScriptState>,
}

#[derive(Debug, Default)]
struct ScriptState {
    queue: VecDeque<String>,
    served: usize,
    prompts: Vec<RecordedPrompt>,
}

impl ScriptedLm {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedLm {
            state: Mutex::new(ScriptState {
                queue: responses.into_iter().map(Into::into).collect(),
                ..ScriptState::default()
            }),
        }
    }

    /// Accepts either `{"responses": [...]}` or a bare array of strings.
    pub fn from_json(text: &str) -> Result<Self, LmError> {
        let v: Value = serde_json::from_str(text).map_err(|e| LmError::Config(format!("script: {e}")))?;
        let script: Script = if v.is_array() {
            Script {
                responses: serde_json::from_value(v).map_err(|e| LmError::Config(format!("script: {e}")))?,
            }
        } else {
            serde_json::from_value(v).map_err(|e| LmError::Config(format!("script: {e}")))?
        };
        Ok(ScriptedLm::new(script.responses))
    }

    pub fn prompts(&self) -> Vec<RecordedPrompt> {
        self.state.lock().unwrap().prompts.clone()
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }
}

impl LmBackend for ScriptedLm {
    fn complete(&self, system: &str, user: &str) -> Result<String, LmError> {
        let mut st = self.state.lock().unwrap();
        st.prompts.push(RecordedPrompt {
            system: system.to_string(),
            user: user.to_string(),
        });
        let served = st.served;
        let next = st.queue.pop_front().ok_or(LmError::ScriptExhausted(served))?;
        st.served += 1;
        Ok(next)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, LmError> {
        Ok(hashing_embed(text, HASH_DIM))
    }
}

pub const LM_URL_ENV: &str = "AFLOW_LM_URL";
pub const LM_MODEL_ENV: &str = "AFLOW_LM_MODEL";
pub const LM_KEY_ENV: &str = "AFLOW_LM_KEY";
pub const EMBED_MODEL_ENV: &str = "AFLOW_EMBED_MODEL";

/// Client for OpenAI-compatible `/chat/completions` and `/embeddings`.
#[derive(Debug, Clone)]
pub struct OpenAiLm {
    pub base_url: String,
    pub model: String,
    pub embed_model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl OpenAiLm {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        OpenAiLm {
            base_url: base_url.into(),
            model: model.into(),
            embed_model: "text-embedding-3-large".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads `AFLOW_LM_URL` and `AFLOW_LM_MODEL` (both required) plus the
    /// optional `AFLOW_LM_KEY` and `AFLOW_EMBED_MODEL`.
    pub fn from_env() -> Result<Self, LmError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let url = var(LM_URL_ENV).ok_or_else(|| LmError::Config(format!("{LM_URL_ENV} is not set")))?;
        let model = var(LM_MODEL_ENV).ok_or_else(|| LmError::Config(format!("{LM_MODEL_ENV} is not set")))?;
        let mut lm = OpenAiLm::new(url, model);
        lm.api_key = var(LM_KEY_ENV);
        if let Some(m) = var(EMBED_MODEL_ENV) {
            lm.embed_model = m;
        }
        Ok(lm)
    }

    fn post(&self, path: &str, body: Value) -> Result<Value, LmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| LmError::Backend(e.to_string()))?;
        let mut req = client
            .post(format!("{}/{path}", self.base_url.trim_end_matches('/')))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LmError::Backend(e.to_string()))?;
        let status = resp.status();
        let v: Value = resp
            .json()
            .map_err(|e| LmError::Backend(format!("{path}: {e}")))?;
        if !status.is_success() {
            return Err(LmError::Backend(format!("{path} returned {status}: {v}")));
        }
        Ok(v)
    }
}

impl LmBackend for OpenAiLm {
    fn complete(&self, system: &str, user: &str) -> Result<String, LmError> {
        let v = self.post(
            "chat/completions",
            json!({
                "model": self.model,
                "temperature": 0,
                "messages": [
                    {"role": "system", "content": system},
                    {"role": "user", "content": user},
                ],
            }),
        )?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| LmError::Backend(format!("no message content in {v}")))?;
        if text.trim().is_empty() {
            return Err(LmError::EmptyResponse);
        }
        Ok(text.to_string())
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, LmError> {
        let v = self.post("embeddings", json!({"model": self.embed_model, "input": text}))?;
        let data = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LmError::Backend(format!("no embedding in {v}")))?;
        data.iter()
            .map(|x| {
                x.as_f64()
                    .map(|f| f as f32)
                    .ok_or_else(|| LmError::Backend("non-numeric embedding".into()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::wire_mock;

    #[test]
    fn hashing_embedding_is_normalised_and_deterministic() {
        let a = hashing_embed("Blend two prompts, then sample", HASH_DIM);
        assert_eq!(a, hashing_embed("blend TWO prompts then sample", HASH_DIM));
        let norm: f32 = a.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-5);
        assert!(hashing_embed("  ", HASH_DIM).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn cosine_by_hand() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]) - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn script_plays_back_and_records() {
        let lm = ScriptedLm::from_json(r#"{"responses": ["one", "two"]}"#).unwrap();
        assert_eq!(lm.complete("s", "u1").unwrap(), "one");
        assert_eq!(lm.complete("s", "u2").unwrap(), "two");
        assert_eq!(lm.complete("s", "u3"), Err(LmError::ScriptExhausted(2)));
        let prompts = lm.prompts();
        assert_eq!(prompts.len(), 3);
        assert_eq!(prompts[1].user, "u2");
        assert_eq!(ScriptedLm::from_json(r#"["x"]"#).unwrap().remaining(), 1);
        assert!(ScriptedLm::from_json("{").is_err());
    }

    #[test]
    fn openai_wire_format() {
        let (url, log) = wire_mock(|line, body| {
            let v: Value = serde_json::from_str(body).unwrap();
            if line.starts_with("POST /v1/chat/completions") {
                assert_eq!(v["model"], "m");
                assert_eq!(v["messages"][0]["role"], "system");
                (
                    200,
                    r#"{"choices": [{"message": {"role": "assistant", "content": "hi"}}]}"#.into(),
                )
            } else {
                assert_eq!(v["model"], "e");
                (200, r#"{"data": [{"embedding": [0.5, -0.25]}]}"#.into())
            }
        });
        let mut lm = OpenAiLm::new(format!("{url}/v1"), "m");
        lm.embed_model = "e".into();
        lm.api_key = Some("k".into());
        assert_eq!(lm.complete("sys", "user").unwrap(), "hi");
        assert_eq!(lm.embed("x").unwrap(), vec![0.5, -0.25]);
        assert_eq!(log.lock().unwrap().len(), 2);
    }

    #[test]
    fn openai_errors_are_typed() {
        let (url, _) = wire_mock(|_, _| (200, r#"{"choices": [{"message": {"content": "  "}}]}"#.into()));
        assert_eq!(
            OpenAiLm::new(url, "m").complete("s", "u"),
            Err(LmError::EmptyResponse)
        );
        let (url, _) = wire_mock(|_, _| (500, r#"{"error": "boom"}"#.into()));
        assert!(matches!(
            OpenAiLm::new(url, "m").complete("s", "u"),
            Err(LmError::Backend(_))
        ));
    }
}
