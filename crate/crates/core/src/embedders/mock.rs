//! A small in-process embedding service for tests and offline demos.
//!
//! Speaks the same wire protocol as [`super::RemoteEmbedder`] over plain
//! HTTP/1.1 on a loopback port. Every request is logged so tests can check
//! batching and ordering.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct MockRequest {
    /// Zero-based arrival order.
    pub index: usize,
    pub model: String,
    pub texts: Vec<String>,
    pub authorization: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn json(body: Value) -> Self {
        MockResponse {
            status: 200,
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        MockResponse {
            status,
            body: json!({"error": "mock failure"}).to_string(),
        }
    }
}

type Handler = dyn Fn(&MockRequest) -> MockResponse + Send + Sync;

/// Deterministic pseudo-embedding of a text: SHA-256 bytes mapped to [-1, 1].
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut counter = 0u32;
    while out.len() < dim {
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update(counter.to_le_bytes());
        for b in h.finalize() {
            if out.len() == dim {
                break;
            }
            out.push(b as f64 / 127.5 - 1.0);
        }
        counter += 1;
    }
    out
}

pub struct MockEmbedServer {
    addr: SocketAddr,
    log: Arc<Mutex<Vec<MockRequest>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockEmbedServer {
    /// Starts a server answering every request with `handler`.
    pub fn start<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&MockRequest) -> MockResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let log = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = Arc::new(AtomicUsize::new(0));

        let (log2, stop2) = (log.clone(), stop.clone());
        let thread = thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (handler, log, counter) = (handler.clone(), log2.clone(), counter.clone());
                thread::spawn(move || {
                    let _ = serve(stream, &*handler, &log, &counter);
                });
            }
        });
        Ok(MockEmbedServer {
            addr,
            log,
            stop,
            thread: Some(thread),
        })
    }

    /// Answers with [`hash_embedding`] rows of width `dim`.
    pub fn deterministic(dim: usize) -> std::io::Result<Self> {
        MockEmbedServer::start(move |req| {
            let rows: Vec<Vec<f64>> = req.texts.iter().map(|t| hash_embedding(t, dim)).collect();
            MockResponse::json(json!({ "embeddings": rows }))
        })
    }

    /// Fails every request with `status`.
    pub fn failing(status: u16) -> std::io::Result<Self> {
        MockEmbedServer::start(move |_| MockResponse::status(status))
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/embed", self.addr)
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        let mut log = self.log.lock().unwrap().clone();
        log.sort_by_key(|r| r.index);
        log
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl Drop for MockEmbedServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn serve(
    stream: TcpStream,
    handler: &Handler,
    log: &Mutex<Vec<MockRequest>>,
    counter: &AtomicUsize,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let response = match serde_json::from_slice::<Value>(&body) {
        Ok(v) if request_line.starts_with("POST ") => {
            let texts = v["texts"]
                .as_array()
                .map(|a| a.iter().filter_map(|t| t.as_str().map(String::from)).collect())
                .unwrap_or_default();
            let req = MockRequest {
                index: counter.fetch_add(1, Ordering::SeqCst),
                model: v["model"].as_str().unwrap_or_default().to_string(),
                texts,
                authorization,
            };
            let resp = handler(&req);
            log.lock().unwrap().push(req);
            resp
        }
        _ => MockResponse::status(400),
    };

    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason(response.status),
        response.body.len(),
        response.body
    )?;
    stream.flush()
}
