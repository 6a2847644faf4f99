//! Local HTTP server that answers generation requests from a canned table.
//! Used to exercise the HTTP backend without network access.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tiny_http::{Header, Response, Server};

use super::{load_canned, FinishReason, GenerationRequest, GenerationResponse};
use crate::error::{Error, Result};

pub struct StubServer {
    url: String,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Serves `canned` on an ephemeral localhost port, sleeping `delay`
    /// before each reply. Unknown request ids get `finish_reason: error`.
    pub fn start(canned: HashMap<String, String>, delay: Duration) -> Result<Self> {
        let server = Server::http("127.0.0.1:0")
            .map_err(|e| Error::Backend(format!("cannot start stub server: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Backend("stub server has no IP address".into()))?;
        let url = format!("http://{addr}/generate");
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let canned = Arc::new(canned);

        let (req_count, stop_flag) = (requests.clone(), stop.clone());
        let handle = thread::spawn(move || {
            while !stop_flag.load(Ordering::SeqCst) {
                let Ok(Some(mut request)) = server.recv_timeout(Duration::from_millis(20)) else {
                    continue;
                };
                req_count.fetch_add(1, Ordering::SeqCst);
                let canned = canned.clone();
                thread::spawn(move || {
                    let mut body = String::new();
                    let reply = match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => answer(&body, &canned),
                        Err(e) => Err(e.to_string()),
                    };
                    thread::sleep(delay);
                    let response = match reply {
                        Ok(line) => Response::from_string(line).with_header(
                            Header::from_bytes("Content-Type", "application/x-ndjson")
                                .expect("static header"),
                        ),
                        Err(msg) => Response::from_string(msg).with_status_code(400),
                    };
                    // The client may have timed out and closed the connection.
                    let _ = request.respond(response);
                });
            }
        });
        Ok(StubServer {
            url,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    pub fn from_file(path: &Path, delay: Duration) -> Result<Self> {
        Self::start(load_canned(path)?, delay)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Number of requests received so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn answer(body: &str, canned: &HashMap<String, String>) -> std::result::Result<String, String> {
    let line = body.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let req: GenerationRequest = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let resp = match canned.get(&req.request_id) {
        Some(text) => GenerationResponse {
            request_id: req.request_id,
            text: Some(text.clone()),
            finish_reason: FinishReason::Stop,
        },
        None => GenerationResponse {
            request_id: req.request_id,
            text: None,
            finish_reason: FinishReason::Error,
        },
    };
    Ok(serde_json::to_string(&resp).expect("response serializes") + "\n")
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
