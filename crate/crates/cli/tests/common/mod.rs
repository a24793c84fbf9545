#![allow(dead_code)]

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};
use std::thread;

use sentinel_core::imaging::{encode_pgm, Frame};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sentinel"))
}

pub fn run_cli(args: &[&str]) -> Output {
    bin().args(args).env_remove("SENTINEL_TOKEN").output().expect("spawn sentinel")
}

pub fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

pub fn intensity_manifest() -> PathBuf {
    models_dir().join("intensity.json")
}

/// Writes `levels.len()` 16x16 grayscale frames named `frame_0000.pgm`, ...
pub fn write_frames(dir: &Path, levels: &[f64]) {
    fs::create_dir_all(dir).unwrap();
    for (i, &v) in levels.iter().enumerate() {
        let bytes = encode_pgm(&Frame::filled(16, 16, 1, v));
        fs::write(dir.join(format!("frame_{i:04}.pgm")), bytes).unwrap();
    }
}

/// 40 frames, bright on 10..=20, dark elsewhere.
pub fn incident_levels() -> Vec<f64> {
    (0..40).map(|i| if (10..=20).contains(&i) { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug, Clone)]
pub struct Received {
    pub path: String,
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Local HTTP receiver answering POSTs with a scripted status sequence; the
/// last status repeats.
pub struct MockWebhook {
    pub url: String,
    received: Arc<Mutex<Vec<Received>>>,
}

impl MockWebhook {
    pub fn start(statuses: Vec<u16>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/alert", listener.local_addr().unwrap());
        let received = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&received);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let n = log.lock().unwrap().len();
                let status = statuses[n.min(statuses.len() - 1)];
                if let Some(req) = handle(stream, status) {
                    log.lock().unwrap().push(req);
                }
            }
        });
        Self { url, received }
    }

    pub fn requests(&self) -> Vec<Received> {
        self.received.lock().unwrap().clone()
    }
}

fn handle(mut stream: TcpStream, status: u16) -> Option<Received> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let path = request_line.split_whitespace().nth(1)?.to_string();
    let mut length = 0;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().ok()?,
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    let response = format!("HTTP/1.1 {status} Scripted\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
    stream.write_all(response.as_bytes()).ok()?;
    Some(Received {
        path,
        authorization,
        body: serde_json::from_slice(&body).ok()?,
    })
}

/// An address nothing listens on.
pub fn closed_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/alert")
}

pub fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).expect("valid JSON line"))
        .collect()
}

pub fn write_prediction(dir: &Path, name: &str, s: usize, b: usize, c: usize, values: &[f64]) {
    fs::create_dir_all(dir).unwrap();
    let doc = serde_json::json!({"S": s, "B": b, "C": c, "values": values});
    fs::write(dir.join(name), doc.to_string()).unwrap();
}
