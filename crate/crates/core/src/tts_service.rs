//! HTTP service speaking the speech protocol (`/v1/reference`, `/v1/speak`)
//! over any [`VoiceBackend`], plus a black-box conformance check usable
//! against any server that claims the protocol.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::audio::{decode_wav, encode_wav, SUPPORTED_SAMPLE_RATES};
use crate::multipart::{self, Part};
use crate::seed::stable_hash;
use crate::voice::{make_reference, VoiceBackend, VoiceError, MIN_REFERENCE_SECONDS};

pub const REFERENCE_PATH: &str = "/v1/reference";
pub const SPEAK_PATH: &str = "/v1/speak";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceBody {
    style: String,
    seed: u64,
    sample_rate: u32,
}

struct Reply {
    status: u16,
    body: Vec<u8>,
    wav: bool,
}

impl Reply {
    fn wav(body: Vec<u8>) -> Self {
        Self {
            status: 200,
            body,
            wav: true,
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        let body = serde_json::json!({ "error": message.into() }).to_string();
        Self {
            status,
            body: body.into_bytes(),
            wav: false,
        }
    }
}

struct Shared {
    backend: Arc<dyn VoiceBackend>,
    max_concurrent: usize,
    in_flight: AtomicUsize,
    reference_cache: Mutex<HashMap<u64, Vec<u8>>>,
}

fn header<'a>(req: &'a Request, name: &str) -> Option<&'a str> {
    req.headers()
        .iter()
        .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case(name))
        .map(|h| h.value.as_str())
}

fn backend_reply(e: VoiceError) -> Reply {
    match e {
        VoiceError::EmptyStyle | VoiceError::EmptyText => Reply::error(422, e.to_string()),
        other => Reply::error(500, other.to_string()),
    }
}

fn check_rate(rate: u32) -> Result<(), Reply> {
    if SUPPORTED_SAMPLE_RATES.contains(&rate) {
        Ok(())
    } else {
        Err(Reply::error(
            400,
            format!("sample_rate {rate} is not one of {SUPPORTED_SAMPLE_RATES:?}"),
        ))
    }
}

fn reference(shared: &Shared, body: &[u8]) -> Reply {
    let req: ReferenceBody = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return Reply::error(400, format!("malformed JSON body: {e}")),
    };
    if req.style.trim().is_empty() {
        return Reply::error(422, "style must not be empty");
    }
    if let Err(r) = check_rate(req.sample_rate) {
        return r;
    }
    let key = stable_hash(body);
    if let Some(hit) = shared.reference_cache.lock().unwrap().get(&key) {
        return Reply::wav(hit.clone());
    }
    let clip = match make_reference(shared.backend.as_ref(), &req.style, req.seed, req.sample_rate) {
        Ok(c) => c,
        Err(e) => return backend_reply(e),
    };
    let mut cache = shared.reference_cache.lock().unwrap();
    Reply::wav(cache.entry(key).or_insert_with(|| encode_wav(&clip)).clone())
}

fn speak(shared: &Shared, content_type: Option<&str>, body: &[u8]) -> Reply {
    let Some(ct) = content_type else {
        return Reply::error(400, "missing Content-Type");
    };
    let parts = match multipart::decode(ct, body) {
        Ok(p) => p,
        Err(e) => return Reply::error(400, format!("malformed multipart body: {e}")),
    };
    let field = |name: &str| parts.iter().find(|p| p.name == name);
    let (Some(reference), Some(text), Some(rate)) = (field("reference"), field("text"), field("sample_rate")) else {
        return Reply::error(400, "reference, text and sample_rate parts are required");
    };
    let Ok(text) = std::str::from_utf8(&text.data) else {
        return Reply::error(400, "text is not UTF-8");
    };
    let Some(rate) = std::str::from_utf8(&rate.data).ok().and_then(|s| s.trim().parse::<u32>().ok()) else {
        return Reply::error(400, "sample_rate is not an integer");
    };
    if let Err(r) = check_rate(rate) {
        return r;
    }
    let reference = match decode_wav(&reference.data) {
        Ok(c) => c,
        Err(e) => return Reply::error(400, format!("reference is not a readable WAV: {e}")),
    };
    if text.trim().is_empty() {
        return Reply::error(422, "text must not be empty");
    }
    match shared.backend.speak(&reference, text, rate) {
        Ok(clip) if clip.sample_rate() != rate => Reply::error(
            500,
            format!("backend produced {} Hz, asked for {rate} Hz", clip.sample_rate()),
        ),
        Ok(clip) if clip.is_empty() => Reply::error(500, "backend produced no audio"),
        Ok(clip) => Reply::wav(encode_wav(&clip)),
        Err(e) => backend_reply(e),
    }
}

fn handle(shared: &Shared, mut req: Request) {
    let mut body = Vec::new();
    let reply = if let Err(e) = req.as_reader().read_to_end(&mut body) {
        Reply::error(400, format!("unreadable body: {e}"))
    } else {
        let path = req.url().split('?').next().unwrap_or("");
        match (req.method(), path) {
            (Method::Post, REFERENCE_PATH) => reference(shared, &body),
            (Method::Post, SPEAK_PATH) => speak(shared, header(&req, "Content-Type"), &body),
            (_, REFERENCE_PATH | SPEAK_PATH) => Reply::error(405, "use POST"),
            _ => Reply::error(404, "not found"),
        }
    };
    respond(req, reply);
}

fn respond(req: Request, reply: Reply) {
    let ct = if reply.wav { "audio/wav" } else { "application/json" };
    let response = Response::from_data(reply.body)
        .with_status_code(reply.status)
        .with_header(Header::from_bytes("Content-Type", ct).expect("static header"));
    if let Err(e) = req.respond(response) {
        log::debug!("client went away: {e}");
    }
}

/// A running speech service. Stops when dropped.
pub struct TtsServer {
    server: Arc<Server>,
    addr: SocketAddr,
    accept: Option<JoinHandle<()>>,
}

impl TtsServer {
    /// Bind `addr` (port 0 picks a free port). At most `max_concurrent`
    /// syntheses run at once; further requests get 503.
    pub fn start(
        addr: &str,
        backend: Arc<dyn VoiceBackend>,
        max_concurrent: usize,
    ) -> Result<Self, String> {
        let server = Arc::new(Server::http(addr).map_err(|e| format!("cannot bind {addr}: {e}"))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| "server is not listening on TCP".to_string())?;
        let shared = Arc::new(Shared {
            backend,
            max_concurrent: max_concurrent.max(1),
            in_flight: AtomicUsize::new(0),
            reference_cache: Mutex::new(HashMap::new()),
        });
        let accept_server = Arc::clone(&server);
        let accept = thread::spawn(move || {
            while let Ok(req) = accept_server.recv() {
                let taken = shared.in_flight.fetch_add(1, Ordering::SeqCst);
                if taken >= shared.max_concurrent {
                    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
                    respond(req, Reply::error(503, "synthesis queue is full"));
                    continue;
                }
                let shared = Arc::clone(&shared);
                thread::spawn(move || {
                    handle(&shared, req);
                    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        Ok(Self {
            server,
            addr,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TtsServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

const CHECK_STYLE: &str = "A woman speaks at a slow pace with very clear audio.";
const CHECK_RATE: u32 = 24_000;

struct Raw {
    status: u16,
    content_type: String,
    body: Vec<u8>,
}

fn post(agent: &ureq::Agent, url: &str, content_type: &str, body: &[u8]) -> Result<Raw, String> {
    let mut resp = agent
        .post(url)
        .header("Content-Type", content_type)
        .send(body)
        .map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let content_type = resp
        .headers()
        .get("Content-Type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let body = resp
        .body_mut()
        .with_config()
        .limit(512 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| e.to_string())?;
    Ok(Raw {
        status,
        content_type,
        body,
    })
}

fn speak_body(reference: &[u8], text: &str, rate: &str) -> (String, Vec<u8>) {
    multipart::encode(&[
        Part::file("reference", "reference.wav", "audio/wav", reference.to_vec()),
        Part::text("text", text),
        Part::text("sample_rate", rate),
    ])
}

/// Run the protocol conformance suite against `base_url`: status codes,
/// WAV validity, reference duration floor and repeat-call byte identity.
pub fn check_tts_endpoint(base_url: &str, timeout: Duration) -> Vec<ConformanceCheck> {
    let base = base_url.trim_end_matches('/');
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let ref_url = format!("{base}{REFERENCE_PATH}");
    let speak_url = format!("{base}{SPEAK_PATH}");
    let mut out = Vec::new();
    let mut record = |name: &str, result: Result<String, String>| {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        out.push(ConformanceCheck {
            name: name.into(),
            passed,
            detail,
        });
    };
    let expect_status = |raw: Result<Raw, String>, want: u16| -> Result<String, String> {
        let raw = raw?;
        if raw.status == want {
            Ok(format!("status {want}"))
        } else {
            Err(format!("expected status {want}, got {}", raw.status))
        }
    };

    let body = serde_json::json!({"style": CHECK_STYLE, "seed": 7, "sample_rate": CHECK_RATE}).to_string();
    let first = post(&agent, &ref_url, "application/json", body.as_bytes());
    let reference_bytes = match &first {
        Ok(r) if r.status == 200 => Some(r.body.clone()),
        _ => None,
    };
    record(
        "reference returns a WAV at the requested rate",
        first.and_then(|r| {
            if r.status != 200 {
                return Err(format!("status {}: {}", r.status, String::from_utf8_lossy(&r.body)));
            }
            if !r.content_type.starts_with("audio/") {
                return Err(format!("content type {:?}", r.content_type));
            }
            let clip = decode_wav(&r.body).map_err(|e| e.to_string())?;
            if clip.sample_rate() != CHECK_RATE {
                return Err(format!("sample rate {}", clip.sample_rate()));
            }
            Ok(format!("{:.2} s at {} Hz", clip.duration_s(), clip.sample_rate()))
        }),
    );
    record(
        "reference is at least the duration floor",
        match &reference_bytes {
            Some(b) => decode_wav(b).map_err(|e| e.to_string()).and_then(|c| {
                if c.duration_s() >= MIN_REFERENCE_SECONDS {
                    Ok(format!("{:.2} s", c.duration_s()))
                } else {
                    Err(format!("{:.2} s < {MIN_REFERENCE_SECONDS} s", c.duration_s()))
                }
            }),
            None => Err("no reference available".into()),
        },
    );
    record(
        "repeated reference request is byte-identical",
        post(&agent, &ref_url, "application/json", body.as_bytes()).and_then(|r| {
            match (&reference_bytes, r.status) {
                (Some(b), 200) if *b == r.body => Ok(format!("{} bytes", b.len())),
                (Some(_), 200) => Err("bodies differ".into()),
                (_, s) => Err(format!("status {s}")),
            }
        }),
    );
    let empty_style = serde_json::json!({"style": "", "seed": 7, "sample_rate": CHECK_RATE}).to_string();
    record(
        "empty style is rejected with 422",
        expect_status(post(&agent, &ref_url, "application/json", empty_style.as_bytes()), 422),
    );
    record(
        "malformed reference body is rejected with 400",
        expect_status(post(&agent, &ref_url, "application/json", b"{\"style\":"), 400),
    );

    match &reference_bytes {
        Some(reference) => {
            let (ct, body) = speak_body(reference, "Did you guys hear about the new comedy club?", &CHECK_RATE.to_string());
            record(
                "speak returns non-empty WAV at the requested rate",
                post(&agent, &speak_url, &ct, &body).and_then(|r| {
                    if r.status != 200 {
                        return Err(format!("status {}: {}", r.status, String::from_utf8_lossy(&r.body)));
                    }
                    let clip = decode_wav(&r.body).map_err(|e| e.to_string())?;
                    if clip.sample_rate() != CHECK_RATE || clip.is_empty() {
                        return Err(format!("{} samples at {} Hz", clip.len(), clip.sample_rate()));
                    }
                    Ok(format!("{:.2} s", clip.duration_s()))
                }),
            );
            let (ct, body) = speak_body(reference, "", &CHECK_RATE.to_string());
            record(
                "empty text is rejected with 422",
                expect_status(post(&agent, &speak_url, &ct, &body), 422),
            );
        }
        None => {
            for name in [
                "speak returns non-empty WAV at the requested rate",
                "empty text is rejected with 422",
            ] {
                record(name, Err("no reference available".into()));
            }
        }
    }
    record(
        "malformed speak body is rejected with 400",
        expect_status(post(&agent, &speak_url, "application/json", b"{}"), 400),
    );
    out
}
