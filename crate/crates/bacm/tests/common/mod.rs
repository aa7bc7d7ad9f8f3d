#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use bacm::io::write_jsonl;
use bacm_core::environment::generate_synthetic_corpus;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bacm"));
    c.env_remove("BACM_API_KEY");
    c
}

pub fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn bacm")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a small synthetic corpus and pool; returns their paths.
pub fn write_corpus(dir: &Path, filler: usize) -> (PathBuf, PathBuf) {
    let (corpus, pool) = generate_synthetic_corpus(3, 60, filler);
    let c = dir.join("corpus.jsonl");
    let p = dir.join("pool.jsonl");
    write_jsonl(&c, &corpus.docs).unwrap();
    write_jsonl(&p, &pool).unwrap();
    (c, p)
}

pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn ok_content(content: &str) -> Self {
        let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
        Reply { status: 200, body: body.to_string() }
    }

    pub fn status(status: u16) -> Self {
        Reply { status, body: "{\"error\":\"unavailable\"}".into() }
    }
}

/// Minimal HTTP/1.1 server answering queued replies in order, recording
/// every request body.
pub struct FakeServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<(String, String)>>>,
    handle: Option<JoinHandle<()>>,
}

impl FakeServer {
    pub fn start(replies: Vec<Reply>) -> Self {
        Self::start_slow(replies, std::time::Duration::ZERO)
    }

    /// Like [`start`](Self::start), sleeping `delay` before each reply.
    pub fn start_slow(replies: Vec<Reply>, delay: std::time::Duration) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let handle = std::thread::spawn(move || {
            for reply in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    headers.push_str(&line);
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push((headers, String::from_utf8(body).unwrap()));
                std::thread::sleep(delay);
                let mut stream = stream;
                let reason = if reply.status == 200 { "OK" } else { "Error" };
                let resp = format!(
                    "HTTP/1.1 {} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    reply.status,
                    reply.body.len(),
                    reply.body
                );
                stream.write_all(resp.as_bytes()).unwrap();
                stream.flush().unwrap();
            }
        });
        FakeServer { url, requests, handle: Some(handle) }
    }

    pub fn bodies(&self) -> Vec<String> {
        self.requests.lock().unwrap().iter().map(|(_, b)| b.clone()).collect()
    }

    pub fn headers(&self) -> Vec<String> {
        self.requests.lock().unwrap().iter().map(|(h, _)| h.clone()).collect()
    }

    /// Number of requests handled so far.
    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        // unblock a pending accept so the thread can exit
        if let Some(addr) = self.url.strip_prefix("http://").and_then(|s| s.strip_suffix("/v1")) {
            let _ = std::net::TcpStream::connect(addr);
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
