//! JSONL transcript: one event per line with a sequence number and a
//! timestamp from a pluggable clock.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;
use serde_json::{json, Value};

use crate::model::{AgentId, Task, TaskId};

pub trait Clock: Send + Sync {
    /// Milliseconds since an arbitrary epoch.
    fn now_ms(&self) -> u64;
}

/// Wall clock (Unix epoch).
#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Deterministic clock advancing by a fixed step on every read.
#[derive(Debug)]
pub struct LogicalClock {
    next: AtomicU64,
    step: u64,
}

impl LogicalClock {
    pub fn new(start: u64, step: u64) -> Self {
        Self {
            next: AtomicU64::new(start),
            step,
        }
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self::new(0, 1)
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.next.fetch_add(self.step, Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    UserTurn { index: u32, text: String },
    AgentTurn { index: u32, text: String, injected_tasks: Vec<TaskId> },
    TaskCreated { task: Task },
    TaskExpired { id: TaskId, origin: AgentId },
    TaskConsumed { id: TaskId, origin: AgentId },
    StateTransition { what: String, from: String, to: String },
    BackendTimeout { agent: AgentId, timeout_ms: u64 },
    BackendFailure { agent: String, error: String },
    Finding { finding: Value },
    Handoff { origin: AgentId, reason: String },
    CallEnded { phase: String, reason: Option<String> },
}

/// In-memory transcript with an optional JSONL file sink.
pub struct Transcript {
    clock: Box<dyn Clock>,
    lines: Vec<String>,
    sink: Option<std::io::BufWriter<std::fs::File>>,
    seq: u64,
}

impl Transcript {
    pub fn new(clock: Box<dyn Clock>) -> Self {
        Self {
            clock,
            lines: Vec::new(),
            sink: None,
            seq: 0,
        }
    }

    pub fn with_file(mut self, path: &Path) -> std::io::Result<Self> {
        self.sink = Some(std::io::BufWriter::new(std::fs::File::create(path)?));
        Ok(self)
    }

    pub fn record(&mut self, turn: u32, event: &Event) {
        let mut obj = json!({"seq": self.seq, "ts_ms": self.clock.now_ms(), "turn": turn});
        if let (Value::Object(o), Value::Object(e)) = (&mut obj, serde_json::to_value(event).unwrap_or(Value::Null)) {
            o.extend(e);
        }
        self.seq += 1;
        let line = obj.to_string();
        if let Some(s) = &mut self.sink {
            // A failing sink must not stop the call; the in-memory copy stays.
            let _ = writeln!(s, "{line}");
        }
        self.lines.push(line);
    }

    pub fn flush(&mut self) {
        if let Some(s) = &mut self.sink {
            let _ = s.flush();
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = self.lines.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }
}

impl Drop for Transcript {
    fn drop(&mut self) {
        self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_is_replayable() {
        let run = || {
            let mut t = Transcript::new(Box::new(LogicalClock::default()));
            t.record(1, &Event::UserTurn { index: 1, text: "hi".into() });
            t.record(1, &Event::CallEnded { phase: "terminated".into(), reason: None });
            t.to_jsonl()
        };
        assert_eq!(run(), run());
        assert!(run().starts_with(r#"{"seq":0,"ts_ms":0,"turn":1,"event":"user_turn""#));
    }
}
