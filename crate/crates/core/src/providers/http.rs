//! Blocking JSON-over-HTTP client for the provider wire contract.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{check_llm_args, EmbedInput, Embedder, Llm, ProviderEndpoint, Vqa};
use crate::error::{Error, Result};
use crate::model::Embedding;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, failed_attempts: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(failed_attempts.saturating_sub(1))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Serialize)]
pub struct VqaRequest<'a> {
    pub image_b64: String,
    pub prompt: &'a str,
}

#[derive(Debug, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

#[derive(Debug, Serialize)]
pub struct EmbedRequest<'a> {
    pub kind: super::EmbedKind,
    pub payload: std::borrow::Cow<'a, str>,
}

#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f32>,
    pub dim: usize,
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub prompt: &'a str,
    pub temperature: f64,
    pub n: usize,
}

#[derive(Debug, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<String>,
}

enum Failure {
    Retryable(Error),
    Terminal(Error),
}

pub struct HttpProvider {
    endpoint: ProviderEndpoint,
    agent: ureq::Agent,
    bearer: Option<String>,
    retry: RetryPolicy,
    permits: Permits,
}

impl HttpProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            permits: Permits::new(endpoint.max_concurrency),
            agent: config.into(),
            endpoint,
            bearer: None,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.bearer = token;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &ProviderEndpoint {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path)
    }

    fn post_once<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        url: &str,
        body: &Req,
    ) -> std::result::Result<Resp, Failure> {
        let _permit = self.permits.acquire();
        let mut req = self.agent.post(url);
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Failure::Retryable(Error::Transport(format!("{url}: {e}"))))?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            let err = Error::Rejected { status, body };
            // 429 is a rate limit, not a malformed request
            return Err(if status >= 500 || status == 429 {
                Failure::Retryable(err)
            } else {
                Failure::Terminal(err)
            });
        }
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| Failure::Terminal(Error::Provider(format!("{url}: bad response body: {e}"))))
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp> {
        let url = self.url(path);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(&url, body) {
                Ok(r) => return Ok(r),
                Err(Failure::Terminal(e)) => return Err(e),
                Err(Failure::Retryable(e)) if attempt >= self.retry.attempts => return Err(e),
                Err(Failure::Retryable(e)) => {
                    let delay = self.retry.delay(attempt);
                    log::warn!("{url}: attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

impl Vqa for HttpProvider {
    fn model_name(&self) -> &str {
        &self.endpoint.model_name
    }

    fn answer(&self, image: &[u8], prompt: &str) -> Result<String> {
        let req = VqaRequest {
            image_b64: base64::engine::general_purpose::STANDARD.encode(image),
            prompt,
        };
        let resp: VqaResponse = self.post("/v1/vqa", &req)?;
        Ok(resp.answer.trim().to_string())
    }
}

impl Llm for HttpProvider {
    fn model_name(&self) -> &str {
        &self.endpoint.model_name
    }

    fn complete(&self, prompt: &str, temperature: f64, n: usize) -> Result<Vec<String>> {
        check_llm_args(temperature, n)?;
        let resp: ChatResponse = self.post(
            "/v1/chat",
            &ChatRequest {
                prompt,
                temperature,
                n,
            },
        )?;
        Ok(resp.choices)
    }
}

impl Embedder for HttpProvider {
    fn model_name(&self) -> &str {
        &self.endpoint.model_name
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Embedding> {
        let payload = match input {
            EmbedInput::Image(b) => base64::engine::general_purpose::STANDARD.encode(b).into(),
            EmbedInput::Text(t) | EmbedInput::Sentence(t) => t.into(),
        };
        let resp: EmbedResponse = self.post(
            "/v1/embed",
            &EmbedRequest {
                kind: input.kind(),
                payload,
            },
        )?;
        if resp.vector.len() != resp.dim {
            return Err(Error::Provider(format!(
                "declared dim {} but sent {} values",
                resp.dim,
                resp.vector.len()
            )));
        }
        Embedding::from_f32(&resp.vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1), Duration::from_secs(1));
        assert_eq!(p.delay(2), Duration::from_secs(2));
        assert_eq!(p.delay(3), Duration::from_secs(4));
    }
}
