use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    self, DetectRequest, DetectResponse, ProposeRequest, ProposeResponse, SegmentRequest,
    SegmentResponse,
};
use super::{
    BackendError, BackendKind, Detector, EndpointSpec, Frame, Proposer, RawDetection, Reply, Role,
    Segmenter,
};
use crate::geometry::{BBox, BinaryMask};
use crate::proposal::{ProposalList, RawProposal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff: Duration,
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.backoff.saturating_mul(1 << attempt.min(6))
    }
}

/// HTTP client for one remote endpoint. Serves whichever roles it is
/// registered for; each role posts to its own route.
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    bearer: Option<String>,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            retry,
            bearer: None,
        }
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.bearer = token;
        self
    }

    /// Builds a client from a remote endpoint spec. Panics on mock specs.
    pub fn from_spec(spec: &EndpointSpec) -> Self {
        let BackendKind::Remote {
            url,
            bearer_token,
            bearer_token_env,
        } = &spec.kind
        else {
            panic!("RemoteBackend::from_spec called with a mock endpoint");
        };
        let token = bearer_token.clone().or_else(|| {
            bearer_token_env
                .as_ref()
                .and_then(|v| std::env::var(v).ok())
        });
        Self::new(
            url.clone(),
            Duration::from_millis(spec.timeout_ms),
            RetryPolicy {
                retries: spec.retries,
                backoff: Duration::from_millis(spec.backoff_ms),
            },
        )
        .with_bearer(token)
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        role: Role,
        route: &str,
        body: &Req,
    ) -> Result<Reply<Resp>, BackendError> {
        let url = format!("{}{}", self.base_url, route);
        let payload = serde_json::to_string(body).map_err(|e| BackendError::Protocol {
            role,
            detail: e.to_string(),
        })?;
        let mut last = String::new();
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let mut req = self
                .agent
                .post(&url)
                .set("Content-Type", "application/json");
            if let Some(token) = &self.bearer {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            match req.send_string(&payload) {
                Ok(resp) if resp.status() == 200 => {
                    let text = resp.into_string().map_err(|e| BackendError::Protocol {
                        role,
                        detail: format!("reading body: {e}"),
                    })?;
                    let value =
                        serde_json::from_str(&text).map_err(|e| BackendError::Protocol {
                            role,
                            detail: format!("malformed response: {e}"),
                        })?;
                    return Ok(Reply {
                        value,
                        retries: attempt,
                    });
                }
                Ok(resp) => last = format!("HTTP {}", resp.status()),
                Err(ureq::Error::Status(code, _)) => last = format!("HTTP {code}"),
                Err(e) => last = e.to_string(),
            }
            tracing::warn!(%role, attempt, %last, "backend request failed");
        }
        Err(BackendError::Unavailable {
            role,
            attempts: self.retry.retries + 1,
            last,
        })
    }
}

impl Segmenter for RemoteBackend {
    fn segment(&self, frame: &Frame<'_>, bbox: &BBox) -> Result<Reply<BinaryMask>, BackendError> {
        let req = SegmentRequest {
            image_png_b64: wire::encode_png_b64(frame.image),
            bbox: bbox.to_array(),
        };
        let reply: Reply<SegmentResponse> =
            self.post(Role::Segmenter, wire::SEGMENT_ROUTE, &req)?;
        let protocol = |e: crate::geometry::GeometryError| BackendError::Protocol {
            role: Role::Segmenter,
            detail: e.to_string(),
        };
        let bytes = wire::decode_b64(&reply.value.mask_png_b64).map_err(protocol)?;
        let mask = BinaryMask::decode_png(&bytes).map_err(protocol)?;
        Ok(Reply {
            value: mask,
            retries: reply.retries,
        })
    }
}

impl Proposer for RemoteBackend {
    fn propose(&self, frame: &Frame<'_>, prompt: &str) -> Result<Reply<RawProposal>, BackendError> {
        let req = ProposeRequest {
            image_png_b64: wire::encode_png_b64(frame.image),
            prompt: prompt.to_string(),
        };
        let reply: Reply<ProposeResponse> = self.post(Role::Proposer, wire::PROPOSE_ROUTE, &req)?;
        Ok(Reply {
            value: RawProposal {
                text: reply.value.text,
                source: self.base_url.clone(),
            },
            retries: reply.retries,
        })
    }
}

impl Detector for RemoteBackend {
    fn detect(
        &self,
        frame: &Frame<'_>,
        labels: &ProposalList,
        tau: f64,
    ) -> Result<Reply<Vec<RawDetection>>, BackendError> {
        let req = DetectRequest {
            image_png_b64: wire::encode_png_b64(frame.image),
            labels: labels.labels().to_vec(),
            tau,
        };
        let reply: Reply<DetectResponse> = self.post(Role::Detector, wire::DETECT_ROUTE, &req)?;
        Ok(Reply {
            value: reply.value.detections,
            retries: reply.retries,
        })
    }
}
