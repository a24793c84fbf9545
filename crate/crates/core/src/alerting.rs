//! Alert events, cooldown debouncing, webhook delivery with exponential
//! backoff, and the JSONL event log.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const TOKEN_ENV: &str = "SENTINEL_TOKEN";
pub const ALERT_KIND: &str = "crime_alert";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    /// Seconds since the start of the sequence (frame index / fps).
    #[serde(rename = "ts")]
    pub timestamp: f64,
    #[serde(rename = "type")]
    pub kind: String,
    pub frame: usize,
    pub probability: f64,
    pub message: String,
}

impl AlertEvent {
    pub fn new(frame: usize, fps: f64, probability: f64) -> Self {
        let mut event = Self {
            timestamp: frame as f64 / fps,
            kind: ALERT_KIND.to_string(),
            frame,
            probability: probability.clamp(0.0, 1.0),
            message: String::new(),
        };
        event.message = format_message(&event);
        event
    }

    /// JSON body posted to the webhook.
    pub fn body(&self) -> String {
        serde_json::to_string(self).expect("event serialises")
    }
}

pub fn format_message(event: &AlertEvent) -> String {
    format!(
        "{} frame={} p={:.3} t={}s",
        event.kind, event.frame, event.probability, event.timestamp
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatchPolicy {
    pub cooldown_s: f64,
    pub max_retries: u32,
    pub backoff_base_s: f64,
}

impl Default for DispatchPolicy {
    fn default() -> Self {
        Self {
            cooldown_s: 60.0,
            max_retries: 3,
            backoff_base_s: 1.0,
        }
    }
}

impl DispatchPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cooldown_s >= 0.0 && self.cooldown_s.is_finite()) {
            return Err(format!("cooldown_s must be >= 0, got {}", self.cooldown_s));
        }
        if !(self.backoff_base_s >= 0.0 && self.backoff_base_s.is_finite()) {
            return Err(format!(
                "backoff_base_s must be >= 0, got {}",
                self.backoff_base_s
            ));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (0-based): `backoff_base_s * 2^retry`.
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base_s * 2f64.powi(retry as i32))
    }
}

/// True when nothing was sent yet or the cooldown has fully elapsed.
pub fn should_dispatch(last_sent: Option<f64>, now: f64, policy: &DispatchPolicy) -> bool {
    match last_sent {
        None => true,
        Some(last) => now - last >= policy.cooldown_s,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeliveryResult {
    pub delivered: bool,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DeliveryResult {
    pub fn not_attempted(reason: impl Into<String>) -> Self {
        Self {
            delivered: false,
            attempts: 0,
            error: Some(reason.into()),
        }
    }
}

/// Something that can POST a JSON body and report the HTTP status.
pub trait Transport {
    fn post(&mut self, endpoint: &str, token: Option<&str>, body: &str) -> Result<u16, String>;
}

#[cfg(feature = "http")]
pub struct HttpTransport {
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

#[cfg(feature = "http")]
impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

#[cfg(feature = "http")]
impl Transport for HttpTransport {
    fn post(&mut self, endpoint: &str, token: Option<&str>, body: &str) -> Result<u16, String> {
        let mut request = self
            .agent
            .post(endpoint)
            .header("Content-Type", "application/json");
        if let Some(token) = token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        request
            .send(body)
            .map(|resp| resp.status().as_u16())
            .map_err(|e| e.to_string())
    }
}

pub fn endpoint_is_well_formed(endpoint: &str) -> bool {
    ["http://", "https://"].iter().any(|scheme| {
        endpoint
            .strip_prefix(scheme)
            .is_some_and(|rest| !rest.is_empty() && !rest.starts_with('/'))
    })
}

/// Posts `event` until a 2xx arrives or `1 + max_retries` attempts are spent,
/// sleeping `policy.backoff(n)` before retry `n`. Failures are returned, not raised.
pub fn dispatch_with(
    event: &AlertEvent,
    endpoint: &str,
    token: Option<&str>,
    policy: &DispatchPolicy,
    transport: &mut dyn Transport,
    sleep: &mut dyn FnMut(Duration),
) -> DeliveryResult {
    if !endpoint_is_well_formed(endpoint) {
        return DeliveryResult::not_attempted(format!("malformed endpoint {endpoint:?}"));
    }
    let body = event.body();
    let mut attempts = 0;
    let error = loop {
        attempts += 1;
        let error = match transport.post(endpoint, token, &body) {
            Ok(status) if (200..300).contains(&status) => {
                return DeliveryResult {
                    delivered: true,
                    attempts,
                    error: None,
                }
            }
            Ok(status) => format!("HTTP {status}"),
            Err(e) => e,
        };
        let retry = attempts - 1;
        if retry >= policy.max_retries {
            break error;
        }
        sleep(policy.backoff(retry));
    };
    DeliveryResult {
        delivered: false,
        attempts,
        error: Some(error),
    }
}

/// [`dispatch_with`] over HTTP, sleeping on the current thread.
#[cfg(feature = "http")]
pub fn dispatch(
    event: &AlertEvent,
    endpoint: &str,
    token: Option<&str>,
    policy: &DispatchPolicy,
) -> DeliveryResult {
    dispatch_with(
        event,
        endpoint,
        token,
        policy,
        &mut HttpTransport::default(),
        &mut std::thread::sleep,
    )
}

#[derive(Debug, Serialize)]
struct LogLine<'a> {
    #[serde(flatten)]
    event: &'a AlertEvent,
    delivered: bool,
    attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Appends one JSON line per event.
pub fn append_event(path: &Path, event: &AlertEvent, result: &DeliveryResult) -> io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    write_event(&mut file, event, result)
}

fn write_event(out: &mut impl Write, event: &AlertEvent, result: &DeliveryResult) -> io::Result<()> {
    let line = LogLine {
        event,
        delivered: result.delivered,
        attempts: result.attempts,
        error: result.error.as_deref(),
    };
    let mut bytes = serde_json::to_vec(&line).map_err(io::Error::other)?;
    bytes.push(b'\n');
    out.write_all(&bytes)?;
    out.flush()
}

/// Event log for one run. Truncates on open and rejects events whose frame
/// index goes backwards.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    last_frame: Option<usize>,
}

impl EventLog {
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = File::create(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_frame: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &AlertEvent, result: &DeliveryResult) -> io::Result<()> {
        if let Some(last) = self.last_frame {
            if event.frame <= last {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!("event for frame {} logged after frame {last}", event.frame),
                ));
            }
        }
        write_event(&mut self.file, event, result)?;
        self.last_frame = Some(event.frame);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        statuses: Vec<Result<u16, String>>,
        calls: Vec<(String, Option<String>, String)>,
    }

    impl Transport for Scripted {
        fn post(&mut self, endpoint: &str, token: Option<&str>, body: &str) -> Result<u16, String> {
            self.calls
                .push((endpoint.into(), token.map(Into::into), body.into()));
            let i = (self.calls.len() - 1).min(self.statuses.len() - 1);
            self.statuses[i].clone()
        }
    }

    fn scripted(statuses: Vec<Result<u16, String>>) -> Scripted {
        Scripted {
            statuses,
            calls: Vec::new(),
        }
    }

    #[test]
    fn cooldown_boundary() {
        let p = DispatchPolicy::default();
        assert!(should_dispatch(None, 0.0, &p));
        assert!(!should_dispatch(Some(0.0), 30.0, &p));
        assert!(should_dispatch(Some(0.0), 60.0, &p));
        let zero = DispatchPolicy {
            cooldown_s: 0.0,
            ..p
        };
        assert!(should_dispatch(Some(5.0), 5.0, &zero));
    }

    #[test]
    fn message_format() {
        let e = AlertEvent::new(12, 10.0, 0.91);
        assert_eq!(e.message, "crime_alert frame=12 p=0.910 t=1.2s");
        assert_eq!(format_message(&e), e.message);
        let sure = AlertEvent::new(3, 1.0, 1.0);
        assert!(sure.message.contains("p=1.000"));
    }

    #[test]
    fn body_schema() {
        let e = AlertEvent::new(12, 10.0, 0.91);
        let v: serde_json::Value = serde_json::from_str(&e.body()).unwrap();
        assert_eq!(v["ts"], 1.2);
        assert_eq!(v["type"], "crime_alert");
        assert_eq!(v["frame"], 12);
        assert_eq!(v["probability"], 0.91);
        assert_eq!(v["message"], e.message);
        assert_eq!(v.as_object().unwrap().len(), 5);
    }

    #[test]
    fn delivered_first_try() {
        let e = AlertEvent::new(1, 10.0, 0.9);
        let mut t = scripted(vec![Ok(200)]);
        let mut sleeps = Vec::new();
        let r = dispatch_with(
            &e,
            "http://127.0.0.1:9/hook",
            Some("abc"),
            &DispatchPolicy::default(),
            &mut t,
            &mut |d| sleeps.push(d),
        );
        assert_eq!((r.delivered, r.attempts), (true, 1));
        assert!(sleeps.is_empty());
        assert_eq!(t.calls[0].1.as_deref(), Some("abc"));
    }

    #[test]
    fn persistent_failure_exhausts_retries_with_doubling_delays() {
        let e = AlertEvent::new(1, 10.0, 0.9);
        let mut t = scripted(vec![Ok(500)]);
        let mut sleeps = Vec::new();
        let r = dispatch_with(
            &e,
            "http://localhost/hook",
            None,
            &DispatchPolicy::default(),
            &mut t,
            &mut |d| sleeps.push(d),
        );
        assert_eq!((r.delivered, r.attempts), (false, 4));
        assert_eq!(r.error.as_deref(), Some("HTTP 500"));
        assert_eq!(
            sleeps,
            [1, 2, 4].map(Duration::from_secs).to_vec()
        );
    }

    #[test]
    fn recovers_after_one_failure() {
        let e = AlertEvent::new(1, 10.0, 0.9);
        let mut t = scripted(vec![Err("connection refused".into()), Ok(204)]);
        let r = dispatch_with(
            &e,
            "https://example.invalid/x",
            None,
            &DispatchPolicy::default(),
            &mut t,
            &mut |_| {},
        );
        assert_eq!((r.delivered, r.attempts), (true, 2));
    }

    #[test]
    fn zero_retries_means_one_attempt() {
        let e = AlertEvent::new(1, 10.0, 0.9);
        let mut t = scripted(vec![Ok(404)]);
        let policy = DispatchPolicy {
            max_retries: 0,
            ..Default::default()
        };
        let r = dispatch_with(&e, "http://h/", None, &policy, &mut t, &mut |_| {});
        assert_eq!(r.attempts, 1);
    }

    #[test]
    fn malformed_endpoint_is_not_attempted() {
        let e = AlertEvent::new(1, 10.0, 0.9);
        let mut t = scripted(vec![Ok(200)]);
        for bad in ["", "localhost:80", "ftp://x", "http://"] {
            let r = dispatch_with(&e, bad, None, &DispatchPolicy::default(), &mut t, &mut |_| {});
            assert_eq!((r.delivered, r.attempts), (false, 0));
        }
        assert!(t.calls.is_empty());
    }

    #[test]
    fn event_log_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::create(&path).unwrap();
        let ok = DeliveryResult {
            delivered: true,
            attempts: 1,
            error: None,
        };
        log.append(&AlertEvent::new(12, 10.0, 0.9), &ok).unwrap();
        log.append(&AlertEvent::new(700, 10.0, 0.8), &DeliveryResult::not_attempted("x"))
            .unwrap();
        assert!(log.append(&AlertEvent::new(5, 10.0, 0.8), &ok).is_err());

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["frame"], 12);
        assert_eq!(lines[1]["frame"], 700);
        for key in ["ts", "type", "frame", "probability", "message", "delivered", "attempts"] {
            assert!(lines[0].get(key).is_some(), "missing {key}");
        }
        assert_eq!(lines[1]["delivered"], false);
    }

    #[test]
    fn append_event_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let r = DeliveryResult::not_attempted("no endpoint");
        append_event(&path, &AlertEvent::new(1, 1.0, 0.5), &r).unwrap();
        append_event(&path, &AlertEvent::new(2, 1.0, 0.5), &r).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }
}
