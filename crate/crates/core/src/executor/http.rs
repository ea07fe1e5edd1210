use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ModelBackend, ModelError, ModelRequest, ModelResponse};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    /// Overrides the default endpoint for this model.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Environment variable holding the API key for this model's provider.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Chat-completions URL.
    pub endpoint: String,
    pub api_key_env: String,
    pub models: BTreeMap<String, ModelEntry>,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_concurrent: usize,
    pub timeout_secs: u64,
    /// Tokens the whole run may spend.
    pub token_budget: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            api_key_env: "FLOWSMITH_API_KEY".into(),
            models: BTreeMap::new(),
            max_retries: 3,
            backoff_ms: 500,
            max_concurrent: 4,
            timeout_secs: 120,
            token_budget: 2_000_000,
        }
    }
}

/// Run-wide token allowance shared by every worker.
#[derive(Debug)]
pub struct TokenBudget {
    limit: u64,
    used: AtomicU64,
}

impl TokenBudget {
    pub fn new(limit: u64) -> Self {
        TokenBudget { limit, used: AtomicU64::new(0) }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    fn check(&self) -> Result<(), ModelError> {
        let used = self.used();
        if used >= self.limit {
            Err(ModelError::Budget { used, limit: self.limit })
        } else {
            Ok(())
        }
    }

    fn charge(&self, tokens: u64) {
        self.used.fetch_add(tokens, Ordering::SeqCst);
    }
}

/// Counting semaphore capping in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-style chat-completions client.
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    budget: Arc<TokenBudget>,
    gate: Gate,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, ModelError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(HttpBackend {
            budget: Arc::new(TokenBudget::new(config.token_budget)),
            gate: Gate { free: Mutex::new(config.max_concurrent.max(1)), cv: Condvar::new() },
            config,
            client,
        })
    }

    pub fn budget(&self) -> Arc<TokenBudget> {
        Arc::clone(&self.budget)
    }

    fn send(&self, url: &str, key: Option<&str>, body: &Value) -> Result<ModelResponse, ModelError> {
        let mut attempt = 0;
        loop {
            let mut req = self.client.post(url).json(body);
            if let Some(k) = key {
                req = req.bearer_auth(k);
            }
            let resp = {
                let _permit = self.gate.acquire();
                req.send()
            };
            let resp = resp.map_err(|e| ModelError::Execution { detail: e.to_string(), raw: None })?;
            let status = resp.status();
            let raw = resp.text().unwrap_or_default();
            let retryable = status.as_u16() == 429 || status.is_server_error();
            if retryable && attempt < self.config.max_retries {
                let wait = self.config.backoff_ms.saturating_mul(1 << attempt);
                tracing::warn!(status = status.as_u16(), attempt, wait_ms = wait, "retrying model call");
                std::thread::sleep(Duration::from_millis(wait));
                attempt += 1;
                continue;
            }
            if !status.is_success() {
                return Err(ModelError::Execution { detail: format!("HTTP {status}"), raw: Some(raw) });
            }
            return parse_completion(&raw);
        }
    }
}

/// Reads `choices[0].message.content` and the `usage` token counts.
fn parse_completion(raw: &str) -> Result<ModelResponse, ModelError> {
    let malformed = |what: &str| ModelError::Execution { detail: format!("malformed response: {what}"), raw: Some(raw.to_string()) };
    let v: Value = serde_json::from_str(raw).map_err(|_| malformed("not JSON"))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("no message content"))?;
    let count = |p: &str| v.pointer(p).and_then(Value::as_u64).ok_or_else(|| malformed("no token usage"));
    Ok(ModelResponse {
        text: text.to_string(),
        tokens_in: count("/usage/prompt_tokens")?,
        tokens_out: count("/usage/completion_tokens")?,
    })
}

impl ModelBackend for HttpBackend {
    fn invoke(&self, req: &ModelRequest<'_>) -> Result<ModelResponse, ModelError> {
        self.budget.check()?;
        let model = &req.node.model;
        let entry = self
            .config
            .models
            .get(model)
            .ok_or_else(|| ModelError::Config(format!("model '{model}' is not in the model table")))?;
        let url = entry.endpoint.as_deref().unwrap_or(&self.config.endpoint);
        let key_env = entry.api_key_env.as_deref().unwrap_or(&self.config.api_key_env);
        let key = std::env::var(key_env).ok();
        let body = json!({
            "model": model,
            "temperature": req.node.temperature,
            "messages": [{"role": "user", "content": req.prompt}],
        });
        tracing::debug!(model = %model, node = %req.node.id, prompt_bytes = req.prompt.len(), "model request");
        let resp = self.send(url, key.as_deref(), &body)?;
        self.budget.charge(resp.tokens_in + resp.tokens_out);
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{InvocationNode, OperatorKind};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::AtomicUsize;

    /// Serves the given (status, body) pairs in order, repeating the last.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&hits);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let i = counter.fetch_add(1, Ordering::SeqCst);
                let (status, text) = &replies[i.min(replies.len() - 1)];
                let msg = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                stream.write_all(msg.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), hits)
    }

    fn backend(endpoint: String, budget: u64) -> HttpBackend {
        let mut models = BTreeMap::new();
        models.insert("coder-small".to_string(), ModelEntry { endpoint: None, api_key_env: None });
        HttpBackend::new(HttpConfig { endpoint, models, backoff_ms: 1, token_budget: budget, ..HttpConfig::default() })
            .unwrap()
    }

    fn call(b: &HttpBackend) -> Result<ModelResponse, ModelError> {
        let node = InvocationNode::of_kind("g", OperatorKind::Generate, "coder-small");
        b.invoke(&ModelRequest { task_id: "t", node: &node, prompt: "hi" })
    }

    const OK: &str = r#"{"choices":[{"message":{"content":"```verilog\nmodule m;\nendmodule\n```"}}],"usage":{"prompt_tokens":120,"completion_tokens":300}}"#;

    #[test]
    fn records_provider_token_counts() {
        let (url, _) = serve(vec![(200, OK.into())]);
        let b = backend(url, 10_000);
        let r = call(&b).unwrap();
        assert_eq!((r.tokens_in, r.tokens_out), (120, 300));
        assert_eq!(b.budget().used(), 420);
    }

    #[test]
    fn zero_budget_fails_without_network() {
        let (url, hits) = serve(vec![(200, OK.into())]);
        let b = backend(url, 0);
        assert!(matches!(call(&b), Err(ModelError::Budget { .. })));
        assert_eq!(hits.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn malformed_body_is_preserved() {
        let (url, _) = serve(vec![(200, "{\"nope\":1}".into())]);
        match call(&backend(url, 10_000)) {
            Err(ModelError::Execution { raw: Some(raw), .. }) => assert_eq!(raw, "{\"nope\":1}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rate_limits_retry_then_give_up() {
        let (url, hits) = serve(vec![(429, "{}".into()), (429, "{}".into()), (200, OK.into())]);
        assert!(call(&backend(url, 10_000)).is_ok());
        assert_eq!(hits.load(Ordering::SeqCst), 3);

        let (url, hits) = serve(vec![(429, "{}".into())]);
        assert!(matches!(call(&backend(url, 10_000)), Err(ModelError::Execution { .. })));
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn unknown_model_is_a_config_error() {
        let b = backend("http://127.0.0.1:9/".into(), 10);
        let node = InvocationNode::of_kind("g", OperatorKind::Generate, "mystery");
        let e = b.invoke(&ModelRequest { task_id: "t", node: &node, prompt: "hi" }).unwrap_err();
        assert!(matches!(e, ModelError::Config(_)));
    }
}
