use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, ExpertBackend};

pub const URL_VAR: &str = "BYTECOMPOSER_LLM_URL";
pub const KEY_VAR: &str = "BYTECOMPOSER_LLM_KEY";
pub const MODEL_VAR: &str = "BYTECOMPOSER_LLM_MODEL";

const TIMEOUT: Duration = Duration::from_secs(30);
const ATTEMPTS: usize = 2;

/// Chat-completion client. Sends
/// `{"model", "messages": [{"role": "user", "content"}], "max_tokens"}` and
/// reads `choices[0].message.content` from the reply.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    url: String,
    key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(TIMEOUT))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            url: url.into(),
            key,
            model: model.into(),
            agent,
        }
    }

    /// Reads the endpoint from the environment. `None` when no URL is set.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(URL_VAR).ok().filter(|u| !u.trim().is_empty())?;
        let key = std::env::var(KEY_VAR).ok().filter(|k| !k.is_empty());
        let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| "gpt-3.5-turbo".to_string());
        Some(HttpBackend::new(url, key, model))
    }

    fn attempt(&self, body: &str) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.url).content_type("application/json");
        if let Some(key) = &self.key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| BackendError(format!("request failed: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError(format!("reading reply: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(BackendError(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        parse_reply(&text)
    }
}

pub fn request_body(model: &str, prompt: &str, max_length: usize) -> String {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "max_tokens": max_length,
        "temperature": 0,
    })
    .to_string()
}

pub fn parse_reply(text: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BackendError(format!("reply is not JSON: {e}")))?;
    let content = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| BackendError("reply has no choices[0].message.content".into()))?;
    if content.trim().is_empty() {
        return Err(BackendError("empty completion".into()));
    }
    Ok(content.to_string())
}

impl ExpertBackend for HttpBackend {
    fn complete(&self, prompt: &str, max_length: usize) -> Result<String, BackendError> {
        let body = request_body(&self.model, prompt, max_length);
        let mut last = BackendError("no attempt made".into());
        for _ in 0..ATTEMPTS {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn name(&self) -> &str {
        &self.model
    }

    fn deterministic(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format() {
        let body: Value = serde_json::from_str(&request_body("m", "hi", 64)).unwrap();
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["max_tokens"], 64);
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"ok"}}]}"#;
        assert_eq!(parse_reply(reply).unwrap(), "ok");
        assert!(parse_reply(r#"{"choices":[]}"#).is_err());
        assert!(parse_reply("<html>").is_err());
    }

    #[test]
    fn unreachable_endpoint_fails() {
        let b = HttpBackend::new("http://127.0.0.1:9/v1/chat/completions", None, "m");
        assert!(b.complete("hi", 8).is_err());
    }
}
