//! Machine-readable audit log: one JSON object per line, ordered by a
//! logical sequence number rather than wall-clock time.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub event: String,
    pub detail: Value,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    sink: Option<File>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> io::Result<Self> {
        Ok(AuditLog { records: Vec::new(), sink: Some(File::create(path)?) })
    }

    pub fn record(&mut self, event: &str, detail: Value) {
        let rec = AuditRecord { seq: self.records.len() as u64 + 1, event: event.to_string(), detail };
        if let Some(f) = self.sink.as_mut() {
            let line = serde_json::to_string(&rec).expect("audit record serializes");
            if let Err(e) = writeln!(f, "{line}") {
                log::error!("audit sink write failed: {e}");
            }
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn events<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a AuditRecord> + 'a {
        self.records.iter().filter(move |r| r.event == event)
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("audit record serializes") + "\n").collect()
    }
}
