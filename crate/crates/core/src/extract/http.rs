//! Chat-completions client over blocking HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    #[default]
    User,
    System,
}

impl MessageRole {
    fn as_str(self) -> &'static str {
        match self {
            MessageRole::User => "user",
            MessageRole::System => "system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full URL of the chat-completions endpoint.
    pub url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    /// Extra attempts after the first one.
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Role of the single message carrying the rendered prompt.
    pub prompt_role: MessageRole,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "llama-3.2-3b-instruct".into(),
            api_key: None,
            timeout_ms: 30_000,
            max_retries: 2,
            backoff_ms: 200,
            prompt_role: MessageRole::User,
        }
    }
}

pub struct HttpBackend {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

const BODY_EXCERPT: usize = 200;

impl HttpBackend {
    /// Builds the client. Must not be called from inside an async runtime.
    pub fn new(config: EndpointConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport { message: e.to_string() })?;
        Ok(HttpBackend { config, client })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": self.config.prompt_role.as_str(), "content": request.prompt}],
            "temperature": request.settings.temperature,
            "max_tokens": request.settings.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.config.url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| self.transport(e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| self.transport(e))?;
        if !status.is_success() {
            return Err(BackendError::HttpStatus {
                code: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT).collect(),
            });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidResponse { message: format!("response is not JSON: {e}") })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::InvalidResponse {
                message: "missing choices[0].message.content".into(),
            })
    }

    fn transport(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::timeout(Duration::from_millis(self.config.timeout_ms))
        } else {
            BackendError::Transport { message: e.to_string() }
        }
    }
}

impl ChatBackend for HttpBackend {
    /// Retries retryable failures with exponential backoff; 4xx responses
    /// are returned at once.
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = self.body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    std::thread::sleep(Duration::from_millis(self.config.backoff_ms) * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// One-connection-per-response HTTP stub. Returns the address and the
    /// captured request bodies.
    fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for (code, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                let mut head = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut req_body = vec![0; len];
                reader.read_exact(&mut req_body).unwrap();
                log.lock().unwrap().push(format!("{head}{}", String::from_utf8(req_body).unwrap()));
                let resp = format!(
                    "HTTP/1.1 {code} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                reader.get_mut().write_all(resp.as_bytes()).unwrap();
            }
        });
        (addr, seen)
    }

    fn completion(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn backend(url: String) -> HttpBackend {
        HttpBackend::new(EndpointConfig {
            url,
            model: "m".into(),
            api_key: Some("secret".into()),
            timeout_ms: 2_000,
            max_retries: 2,
            backoff_ms: 1,
            ..Default::default()
        })
        .unwrap()
    }

    fn request() -> ChatRequest {
        ChatRequest::new("Query: hi\nJSON:", Default::default()).unwrap()
    }

    #[test]
    fn returns_content_verbatim_and_speaks_the_wire_format() {
        let canned = "{\"make\": \"Toyota\"}";
        let (url, seen) = stub(vec![(200, completion(canned))]);
        assert_eq!(backend(url).send(&request()).unwrap(), canned);
        let raw = seen.lock().unwrap()[0].clone();
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer secret"));
        let body: Value = serde_json::from_str(&raw[raw.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(
            body,
            json!({"model": "m", "messages": [{"role": "user", "content": "Query: hi\nJSON:"}],
                   "temperature": 0.01, "max_tokens": 1024})
        );
    }

    #[test]
    fn retries_server_errors() {
        let (url, seen) = stub(vec![(500, "{}".into()), (500, "{}".into()), (200, completion("ok"))]);
        assert_eq!(backend(url).send(&request()).unwrap(), "ok");
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let (url, seen) = stub(vec![(503, "busy".into()), (503, "busy".into()), (503, "busy".into())]);
        let err = backend(url).send(&request()).unwrap_err();
        assert_eq!(err, BackendError::HttpStatus { code: 503, body: "busy".into() });
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = stub(vec![(401, "{\"error\": \"bad key\"}".into()), (200, completion("late"))]);
        let err = backend(url).send(&request()).unwrap_err();
        assert!(matches!(err, BackendError::HttpStatus { code: 401, .. }));
        assert!(!err.is_retryable());
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn malformed_response_is_invalid() {
        let (url, _) = stub(vec![(200, "{\"choices\": []}".into())]);
        assert!(matches!(backend(url).send(&request()), Err(BackendError::InvalidResponse { .. })));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let b = HttpBackend::new(EndpointConfig {
            url: format!("http://127.0.0.1:{port}/x"),
            max_retries: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(b.send(&request()), Err(BackendError::Transport { .. })));
    }

    #[test]
    fn slow_endpoint_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/x", listener.local_addr().unwrap());
        std::thread::spawn(move || {
            let (_s, _) = listener.accept().unwrap();
            std::thread::sleep(Duration::from_millis(500));
        });
        let b = HttpBackend::new(EndpointConfig { url, timeout_ms: 50, max_retries: 0, ..Default::default() }).unwrap();
        assert_eq!(b.send(&request()), Err(BackendError::Timeout { after_ms: 50 }));
    }
}
