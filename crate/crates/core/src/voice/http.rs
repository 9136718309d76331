use std::thread;
use std::time::Duration;

use serde::Serialize;

use super::{VoiceBackend, VoiceError};
use crate::audio::{decode_wav, encode_wav, AudioClip};
use crate::multipart::{self, Part};

#[derive(Serialize)]
struct ReferenceRequest<'a> {
    style: &'a str,
    seed: u64,
    sample_rate: u32,
}

/// Client for a speech service speaking the `/v1/reference` + `/v1/speak`
/// protocol. 503 responses (queue full) are retried with exponential backoff.
#[derive(Debug, Clone)]
pub struct HttpVoice {
    base_url: String,
    agent: ureq::Agent,
    busy_retries: u32,
    backoff: Duration,
}

impl HttpVoice {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            busy_retries: 5,
            backoff: Duration::from_millis(250),
        }
    }

    pub fn with_busy_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.busy_retries = retries;
        self.backoff = backoff;
        self
    }

    fn post(
        &self,
        path: &str,
        send: impl Fn(ureq::RequestBuilder<ureq::typestate::WithBody>) -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<Vec<u8>, VoiceError> {
        let url = format!("{}{path}", self.base_url);
        let mut delay = self.backoff;
        for attempt in 0..=self.busy_retries {
            let mut response = send(self.agent.post(&url))
                .map_err(|e| VoiceError::Backend(format!("{url}: {e}")))?;
            let status = response.status().as_u16();
            let body = response
                .body_mut()
                .with_config()
                .limit(512 * 1024 * 1024)
                .read_to_vec()
                .map_err(|e| VoiceError::Backend(format!("{url}: {e}")))?;
            if status == 503 && attempt < self.busy_retries {
                log::debug!("{url} busy, retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
                continue;
            }
            if !(200..300).contains(&status) {
                return Err(VoiceError::Http {
                    status,
                    body: String::from_utf8_lossy(&body).into_owned(),
                });
            }
            return Ok(body);
        }
        unreachable!("loop returns on its last iteration")
    }
}

impl VoiceBackend for HttpVoice {
    fn reference(
        &self,
        style: &str,
        seed: u64,
        sample_rate: u32,
    ) -> Result<AudioClip, VoiceError> {
        let request = ReferenceRequest {
            style,
            seed,
            sample_rate,
        };
        let bytes = self.post("/v1/reference", |r| r.send_json(&request))?;
        Ok(decode_wav(&bytes)?)
    }

    fn speak(
        &self,
        reference: &AudioClip,
        text: &str,
        sample_rate: u32,
    ) -> Result<AudioClip, VoiceError> {
        let parts = [
            Part::file("reference", "reference.wav", "audio/wav", encode_wav(reference)),
            Part::text("text", text),
            Part::text("sample_rate", &sample_rate.to_string()),
        ];
        let (content_type, body) = multipart::encode(&parts);
        let bytes = self.post("/v1/speak", |r| {
            r.header("Content-Type", &content_type).send(&body[..])
        })?;
        Ok(decode_wav(&bytes)?)
    }
}
