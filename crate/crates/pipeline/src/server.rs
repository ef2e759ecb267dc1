//! HTTP front for the deterministic model. Serves the native completion
//! dialect plus a health probe and a stats endpoint that exposes observed
//! request concurrency, which is what the load tests assert on.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use crate::core::guideline::RuleSet;
use crate::core::mock::{MockModel, MockPolicy};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot bind {bind}: {reason}")]
    Bind { bind: String, reason: String },
    #[error("invalid mock policy: {0}")]
    Policy(String),
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    rejected: AtomicU64,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

pub struct ServeOptions {
    pub bind: String,
    pub policy: MockPolicy,
    pub workers: usize,
    pub delay_ms: u64,
}

/// A running server. Dropping it unblocks the accept loop and joins the
/// workers, so tests cannot leak listeners.
pub struct MockServer {
    server: Arc<Server>,
    counters: Arc<Counters>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl MockServer {
    pub fn start(opts: ServeOptions) -> Result<MockServer, ServerError> {
        let model = MockModel::new(opts.policy, RuleSet::builtin())
            .map_err(|e| ServerError::Policy(e.to_string()))?;
        let server = Server::http(&opts.bind)
            .map_err(|e| ServerError::Bind { bind: opts.bind.clone(), reason: e.to_string() })?;
        let addr = server
            .server_addr()
            .to_ip()
            .expect("tcp listener has an ip address");
        let server = Arc::new(server);
        let counters = Arc::new(Counters::default());
        let model = Arc::new(model);

        let mut workers = Vec::new();
        for _ in 0..opts.workers.max(1) {
            let server = Arc::clone(&server);
            let counters = Arc::clone(&counters);
            let model = Arc::clone(&model);
            let delay_ms = opts.delay_ms;
            workers.push(std::thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    let live = counters.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    counters.peak_in_flight.fetch_max(live, Ordering::SeqCst);
                    counters.requests.fetch_add(1, Ordering::SeqCst);
                    if delay_ms > 0 {
                        std::thread::sleep(std::time::Duration::from_millis(delay_ms));
                    }
                    handle(&model, &counters, request);
                    counters.in_flight.fetch_sub(1, Ordering::SeqCst);
                }
            }));
        }

        Ok(MockServer { server, counters, workers, addr })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests_served(&self) -> u64 {
        self.counters.requests.load(Ordering::SeqCst)
    }

    pub fn peak_concurrency(&self) -> usize {
        self.counters.peak_in_flight.load(Ordering::SeqCst)
    }

    /// Blocks until the accept loop exits, which never happens on its own;
    /// this is the foreground mode behind `mock-serve`.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        // unblock wakes a single blocked recv call, so once per worker
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn handle(model: &MockModel, counters: &Counters, mut request: Request) {
    let method = request.method().clone();
    let url = request.url().to_string();
    let response = match (method, url.as_str()) {
        (Method::Get, "/healthz") => Response::from_string("ok").with_status_code(200),
        (Method::Get, "/debug/stats") => {
            let body = format!(
                "{{\"requests\":{},\"rejected\":{},\"peak_in_flight\":{}}}",
                counters.requests.load(Ordering::SeqCst),
                counters.rejected.load(Ordering::SeqCst),
                counters.peak_in_flight.load(Ordering::SeqCst)
            );
            Response::from_string(body).with_status_code(200).with_header(json_header())
        }
        (Method::Post, "/v1/complete") => {
            let mut body = Vec::new();
            match request.as_reader().read_to_end(&mut body) {
                Ok(_) => match model.respond(&body) {
                    Ok(bytes) => Response::from_data(bytes)
                        .with_status_code(200)
                        .with_header(json_header()),
                    Err(e) => {
                        counters.rejected.fetch_add(1, Ordering::SeqCst);
                        Response::from_string(format!("{{\"error\":{:?}}}", e.to_string()))
                            .with_status_code(400)
                            .with_header(json_header())
                    }
                },
                Err(e) => {
                    counters.rejected.fetch_add(1, Ordering::SeqCst);
                    Response::from_string(format!("{{\"error\":{:?}}}", e.to_string()))
                        .with_status_code(400)
                        .with_header(json_header())
                }
            }
        }
        _ => {
            counters.rejected.fetch_add(1, Ordering::SeqCst);
            Response::from_string("{\"error\":\"no such endpoint\"}")
                .with_status_code(404)
                .with_header(json_header())
        }
    };
    // a client hanging up mid-response is its problem, not ours
    let _ = request.respond(response);
}
