#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use itemsel::annotator::closing_sentence;
use itemsel_core::DIMENSION_NAMES;

/// Chat-completions stand-in. `reply` maps the prompt to the assistant text,
/// or `None` for an HTTP 500.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start<F>(reply: F) -> Self
    where
        F: Fn(&str, usize) -> Option<String> + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        let reply = Arc::new(reply);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let counter = counter.clone();
                let reply = reply.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    let mut request_line = String::new();
                    reader.read_line(&mut request_line).unwrap();
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        if line == "\r\n" || line.is_empty() {
                            break;
                        }
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap();
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let n = counter.fetch_add(1, Ordering::SeqCst);
                    let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let prompt = req["messages"][0]["content"].as_str().unwrap_or_default().to_string();
                    let (status, payload) = match reply(&prompt, n) {
                        Some(text) => (
                            "200 OK",
                            serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string(),
                        ),
                        None => ("500 Internal Server Error", "{}".to_string()),
                    };
                    let resp = format!(
                        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        MockServer { url, requests }
    }

    pub fn count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

/// Dimension named in the prompt's `*Name*` markers.
pub fn dimension_in(prompt: &str) -> usize {
    DIMENSION_NAMES
        .iter()
        .position(|n| prompt.contains(&format!("*{n}*")))
        .expect("prompt names a dimension")
}

/// Well-behaved annotator: level = (dimension + text length) mod 6.
pub fn honest_reply(prompt: &str, _: usize) -> Option<String> {
    let d = dimension_in(prompt);
    let level = (d + prompt.len()) % 6;
    Some(format!("Step 1: consider the task.\n{}", closing_sentence(DIMENSION_NAMES[d], level as i64)))
}

pub fn write_rubrics(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    for d in 0..16 {
        let stem = DIMENSION_NAMES[d].to_lowercase().replace(' ', "_");
        std::fs::write(
            dir.join(format!("{stem}.md")),
            format!("Level 0: none.\nLevel 5: extreme {}.\n", DIMENSION_NAMES[d]),
        )
        .unwrap();
    }
}
