//! Blocking HTTP client for chat-completion endpoints, with bounded
//! exponential-backoff retry and a sequential fallback for servers that
//! ignore the `n` sampling parameter.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::lm::{ChatRequest, LmClient, LmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Endpoint root; `/chat/completions` is appended.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. The key
    /// itself never appears in configuration files.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Extra attempts after the first, on transient failures only.
    pub retries: u32,
    /// Base delay; attempt k sleeps `backoff_ms << k`.
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: None,
            timeout_secs: 120,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

pub struct HttpLm {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: ApiMessage,
}

#[derive(Deserialize)]
struct ApiMessage {
    content: serde_json::Value,
}

fn content_text(content: &serde_json::Value) -> Result<String, LmError> {
    match content {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| {
                (p["type"] == "text").then(|| p["text"].as_str().unwrap_or_default())
            })
            .collect()),
        other => Err(LmError::Malformed(format!("unsupported content value: {other}"))),
    }
}

impl HttpLm {
    pub fn new(config: HttpConfig) -> Result<Self, LmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LmError::Transport(e.to_string()))?;
        Ok(HttpLm { config, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn api_key(&self) -> Option<String> {
        self.config.api_key_env.as_ref().and_then(|name| std::env::var(name).ok())
    }

    /// One POST without retry.
    fn send_once(&self, request: &ChatRequest) -> Result<Vec<String>, LmError> {
        let mut builder = self.client.post(self.endpoint()).json(request);
        if let Some(key) = self.api_key() {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| LmError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| LmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LmError::Status { status: status.as_u16(), message: body });
        }
        let parsed: ApiResponse =
            serde_json::from_str(&body).map_err(|e| LmError::Malformed(e.to_string()))?;
        if parsed.choices.is_empty() {
            return Err(LmError::Malformed("response carried no choices".into()));
        }
        parsed.choices.iter().map(|c| content_text(&c.message.content)).collect()
    }

    /// POST with bounded exponential backoff on transient failures.
    fn send_with_retry(&self, request: &ChatRequest) -> Result<Vec<String>, LmError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.config.backoff_ms << (attempt - 1),
                ));
            }
            match self.send_once(request) {
                Ok(texts) => return Ok(texts),
                Err(e) if e.is_transient() => last = e.to_string(),
                Err(e) => return Err(e),
            }
        }
        Err(LmError::Exhausted { attempts, last })
    }
}

impl LmClient for HttpLm {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LmError> {
        let mut texts = self.send_with_retry(request)?;
        // Servers that ignore `n` return a single choice; top up with
        // sequential single-sample requests so callers always get n texts.
        while texts.len() < request.params.n {
            let mut single = request.clone();
            single.params.n = 1;
            let mut more = self.send_with_retry(&single)?;
            texts.append(&mut more);
        }
        Ok(texts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ChatMessage, SamplingParams};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Minimal one-thread HTTP server that answers a fixed script of
    /// `(status, body)` responses and captures raw requests.
    fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let captured = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in script {
                let (mut stream, _) = match listener.accept() {
                    Ok(s) => s,
                    Err(_) => return,
                };
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let raw = loop {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        break String::from_utf8_lossy(&buf).into_owned();
                    }
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf).into_owned();
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let content_length = text
                            .lines()
                            .find_map(|l| {
                                let (k, v) = l.split_once(':')?;
                                k.eq_ignore_ascii_case("content-length")
                                    .then(|| v.trim().parse::<usize>().ok())?
                            })
                            .unwrap_or(0);
                        if buf.len() >= head_end + 4 + content_length {
                            break text;
                        }
                    }
                };
                captured.lock().unwrap().push(raw);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\n\
                     Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        (base, seen)
    }

    fn ok_body(texts: &[&str]) -> String {
        let choices: Vec<serde_json::Value> = texts
            .iter()
            .map(|t| serde_json::json!({"message": {"role": "assistant", "content": t}}))
            .collect();
        serde_json::json!({"choices": choices}).to_string()
    }

    fn fast_client(base_url: String) -> HttpLm {
        HttpLm::new(HttpConfig {
            base_url,
            api_key_env: None,
            timeout_secs: 5,
            retries: 2,
            backoff_ms: 1,
        })
        .unwrap()
    }

    fn request(n: usize) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user("ping")],
            params: SamplingParams { n, ..SamplingParams::default() },
        }
    }

    #[test]
    fn returns_choice_texts_in_order() {
        let (base, seen) = serve(vec![(200, ok_body(&["first", "second"]))]);
        let lm = fast_client(base);
        assert_eq!(lm.complete(&request(2)).unwrap(), vec!["first", "second"]);
        let raw = seen.lock().unwrap();
        assert!(raw[0].starts_with("POST /v1/chat/completions"));
        assert!(raw[0].contains("\"n\":2"));
    }

    #[test]
    fn parses_parts_array_content() {
        let body = serde_json::json!({"choices": [{"message": {"content":
            [{"type": "text", "text": "hello "}, {"type": "text", "text": "world"}]}}]})
        .to_string();
        let (base, _) = serve(vec![(200, body)]);
        let lm = fast_client(base);
        assert_eq!(lm.complete(&request(1)).unwrap(), vec!["hello world"]);
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let (base, seen) = serve(vec![
            (500, "boom".into()),
            (429, "slow down".into()),
            (200, ok_body(&["ok"])),
        ]);
        let lm = fast_client(base);
        assert_eq!(lm.complete(&request(1)).unwrap(), vec!["ok"]);
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn permanent_client_error_fails_fast() {
        let (base, seen) = serve(vec![(400, "bad request".into()), (200, ok_body(&["never"]))]);
        let lm = fast_client(base);
        let err = lm.complete(&request(1));
        assert!(matches!(err, Err(LmError::Status { status: 400, .. })));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn malformed_body_is_not_retried() {
        let (base, seen) = serve(vec![(200, "{not json".into()), (200, ok_body(&["never"]))]);
        let lm = fast_client(base);
        assert!(matches!(lm.complete(&request(1)), Err(LmError::Malformed(_))));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn exhausts_after_configured_attempts() {
        let (base, seen) =
            serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into())]);
        let lm = fast_client(base);
        let err = lm.complete(&request(1));
        assert!(matches!(err, Err(LmError::Exhausted { attempts: 3, .. })));
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn tops_up_when_server_ignores_n() {
        let (base, seen) = serve(vec![
            (200, ok_body(&["a"])),
            (200, ok_body(&["b"])),
            (200, ok_body(&["c"])),
        ]);
        let lm = fast_client(base);
        assert_eq!(lm.complete(&request(3)).unwrap(), vec!["a", "b", "c"]);
        let raw = seen.lock().unwrap();
        assert_eq!(raw.len(), 3);
        assert!(raw[1].contains("\"n\":1"));
    }

    #[test]
    fn bearer_token_comes_from_named_env_var() {
        std::env::set_var("TEST_LM_KEY_8231", "sk-test-abc");
        let (base, seen) = serve(vec![(200, ok_body(&["ok"]))]);
        let lm = HttpLm::new(HttpConfig {
            base_url: base,
            api_key_env: Some("TEST_LM_KEY_8231".into()),
            timeout_secs: 5,
            retries: 0,
            backoff_ms: 1,
        })
        .unwrap();
        lm.complete(&request(1)).unwrap();
        let raw = seen.lock().unwrap();
        assert!(raw[0].to_ascii_lowercase().contains("authorization: bearer sk-test-abc"));
    }
}
