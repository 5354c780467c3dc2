//! Record once against a live backend, then replay offline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_window, ChatTurn, LlmBackend, LlmError, RemoteBackend, ToolSchema};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    messages: Vec<ChatTurn>,
    tools: Vec<ToolSchema>,
    response: ChatTurn,
}

pub struct CassetteBackend {
    path: PathBuf,
    entries: Vec<Entry>,
    recorder: Option<RemoteBackend>,
    window: usize,
}

impl CassetteBackend {
    /// With a recorder, misses are forwarded and stored; without one the
    /// cassette is replay-only.
    pub fn open(path: &Path, recorder: Option<RemoteBackend>, window: usize) -> Result<Self, LlmError> {
        let entries = if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| LlmError::Cassette(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| LlmError::Cassette(e.to_string()))?
        } else if recorder.is_some() {
            Vec::new()
        } else {
            return Err(LlmError::Cassette(format!("{} does not exist", path.display())));
        };
        Ok(CassetteBackend { path: path.to_path_buf(), entries, recorder, window })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn save(&self) -> Result<(), LlmError> {
        let text = serde_json::to_string_pretty(&self.entries).map_err(|e| LlmError::Cassette(e.to_string()))?;
        fs::write(&self.path, text).map_err(|e| LlmError::Cassette(e.to_string()))
    }
}

impl LlmBackend for CassetteBackend {
    fn complete(&mut self, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError> {
        check_window(messages, self.window)?;
        if let Some(hit) = self.entries.iter().find(|e| e.messages == messages && e.tools == tools) {
            return Ok(hit.response.clone());
        }
        let recorder = self
            .recorder
            .as_mut()
            .ok_or_else(|| LlmError::Cassette("no recorded response for this request".into()))?;
        let response = recorder.complete(messages, tools)?;
        self.entries.push(Entry { messages: messages.to_vec(), tools: tools.to_vec(), response: response.clone() });
        self.save()?;
        Ok(response)
    }

    fn context_window(&self) -> usize {
        self.window
    }
}
