//! Long-term and working memory for the hub and for spokes.
//!
//! Store layout: `log/<seq>` interaction records, `entities/<entity>/<attribution>`
//! entity pairs, `summaries/<scope>` summarized knowledge.

pub mod kv;

use std::fmt;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::llm::{estimate_text_tokens, sim, ChatTurn, LlmBackend, LlmError};
pub use kv::KvStore;

/// Attribution for records not produced on behalf of an app.
pub const SYSTEM: &str = "system";

pub const DEFAULT_RECENT_WINDOW: usize = 10;
pub const DEFAULT_SUMMARY_EVERY: u64 = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "app", rename_all = "snake_case")]
pub enum RecordRole {
    User,
    Hub,
    Spoke(String),
}

impl fmt::Display for RecordRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordRole::User => f.write_str("user"),
            RecordRole::Hub => f.write_str("hub"),
            RecordRole::Spoke(app) => write!(f, "spoke({app})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub seq: u64,
    pub role: RecordRole,
    pub text: String,
    pub attribution: String,
    pub private: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPair {
    pub entity: String,
    pub value: String,
    pub attribution: String,
    pub updated_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "app", rename_all = "snake_case")]
pub enum Scope {
    Global,
    Spoke(String),
}

impl Scope {
    fn key(&self) -> String {
        match self {
            Scope::Global => "global".into(),
            Scope::Spoke(app) => format!("spoke:{app}"),
        }
    }

    fn covers(&self, record: &InteractionRecord) -> bool {
        match self {
            Scope::Global => true,
            Scope::Spoke(app) => record.attribution == *app || record.role == RecordRole::Spoke(app.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizedKnowledge {
    pub scope: Scope,
    pub text: String,
    pub covers_up_to_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingMemory {
    pub recent: Vec<InteractionRecord>,
    pub summaries: Vec<SummarizedKnowledge>,
    pub entities_available: Vec<String>,
}

impl WorkingMemory {
    pub fn is_empty(&self) -> bool {
        self.recent.is_empty() && self.summaries.is_empty() && self.entities_available.is_empty()
    }

    /// Text block placed in backend prompts. Entity values are never inlined.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.summaries.is_empty() {
            out.push_str("Summaries:\n");
            for s in &self.summaries {
                out.push_str(&format!("* [{}] {}\n", s.scope.key(), s.text));
            }
        }
        if !self.recent.is_empty() {
            out.push_str("Recent:\n");
            for r in &self.recent {
                out.push_str(&format!("* {}: {}\n", r.role, r.text));
            }
        }
        if !self.entities_available.is_empty() {
            out.push_str(&format!("Entities available: {}\n", self.entities_available.join(", ")));
        }
        out
    }

    pub fn tokens(&self) -> usize {
        estimate_text_tokens(&self.render())
    }
}

/// Result of a hub lookup for an entity a spoke asked for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lookup {
    pub value: String,
    pub attribution: String,
    /// The value was attributed to the requesting app itself.
    pub same_app: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("store unavailable: {0}")]
    StoreUnavailable(#[from] std::io::Error),
    #[error("record {seq} alone exceeds the backend window")]
    ContextWindowExceeded { seq: u64 },
    #[error("backend: {0}")]
    Backend(#[from] LlmError),
}

/// Lowercase with underscores.
pub fn canonical_entity(name: &str) -> String {
    let mut out = String::new();
    for c in name.trim().chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

#[derive(Debug)]
pub struct MemoryStore {
    kv: KvStore,
    next_seq: u64,
}

fn encode<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("memory values serialize")
}

impl MemoryStore {
    pub fn in_memory() -> Self {
        MemoryStore { kv: KvStore::in_memory(), next_seq: 1 }
    }

    pub fn open(path: &Path) -> Result<Self, MemoryError> {
        Ok(Self::from_kv(KvStore::open(path)?))
    }

    pub fn from_file(file: File) -> Result<Self, MemoryError> {
        Ok(Self::from_kv(KvStore::from_file(file)?))
    }

    fn from_kv(kv: KvStore) -> Self {
        let last = kv.scan("log/").last().and_then(|(k, _)| k["log/".len()..].parse::<u64>().ok()).unwrap_or(0);
        MemoryStore { kv, next_seq: last + 1 }
    }

    pub fn max_seq(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn append(&mut self, role: RecordRole, text: &str, attribution: &str, private: bool) -> Result<u64, MemoryError> {
        let seq = self.next_seq;
        let record = InteractionRecord { seq, role, text: text.to_string(), attribution: attribution.to_string(), private };
        self.kv.put(&format!("log/{seq:012}"), encode(&record))?;
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn records(&self) -> Vec<InteractionRecord> {
        self.kv.scan("log/").filter_map(|(_, v)| serde_json::from_str(v).ok()).collect()
    }

    pub fn records_in(&self, scope: &Scope) -> Vec<InteractionRecord> {
        self.records().into_iter().filter(|r| !r.private && scope.covers(r)).collect()
    }

    /// Replaces the live value for (entity, attribution).
    pub fn upsert_entity(&mut self, entity: &str, value: &str, attribution: &str) -> Result<EntityPair, MemoryError> {
        let pair = EntityPair {
            entity: canonical_entity(entity),
            value: value.to_string(),
            attribution: attribution.to_string(),
            updated_seq: self.max_seq(),
        };
        self.kv.put(&format!("entities/{}/{}", pair.entity, pair.attribution), encode(&pair))?;
        Ok(pair)
    }

    pub fn entities(&self) -> Vec<EntityPair> {
        self.kv.scan("entities/").filter_map(|(_, v)| serde_json::from_str(v).ok()).collect()
    }

    pub fn entity(&self, entity: &str, attribution: &str) -> Option<EntityPair> {
        let key = format!("entities/{}/{}", canonical_entity(entity), attribution);
        self.kv.get(&key).and_then(|v| serde_json::from_str(v).ok())
    }

    /// Hub-side lookup for consent presentation. Never shares anything by
    /// itself; the caller decides based on `same_app`.
    pub fn cross_spoke_lookup(&self, entity: &str, requesting_app: &str) -> Option<Lookup> {
        let name = canonical_entity(entity);
        let pairs: Vec<EntityPair> = self.entities().into_iter().filter(|p| p.entity == name).collect();
        let pick = pairs.iter().find(|p| p.attribution == requesting_app).or_else(|| pairs.first())?;
        Some(Lookup { value: pick.value.clone(), attribution: pick.attribution.clone(), same_app: pick.attribution == requesting_app })
    }

    pub fn summary(&self, scope: &Scope) -> Option<SummarizedKnowledge> {
        self.kv.get(&format!("summaries/{}", scope.key())).and_then(|v| serde_json::from_str(v).ok())
    }

    pub fn summaries(&self) -> Vec<SummarizedKnowledge> {
        self.kv.scan("summaries/").filter_map(|(_, v)| serde_json::from_str(v).ok()).collect()
    }

    /// Folds every not-yet-covered non-private record of `scope` into the
    /// scope's summary, in chunks that fit the backend window.
    pub fn summarize(&mut self, scope: &Scope, backend: &mut dyn LlmBackend) -> Result<SummarizedKnowledge, MemoryError> {
        let previous = self.summary(scope);
        let mut text = previous.as_ref().map(|s| s.text.clone()).unwrap_or_default();
        let from = previous.as_ref().map(|s| s.covers_up_to_seq).unwrap_or(0);
        let pending: Vec<InteractionRecord> = self.records_in(scope).into_iter().filter(|r| r.seq > from).collect();
        let mut covered = from;
        let budget = backend.context_window().saturating_sub(64);
        let system = format!("{}\nFold the records into the running summary.", sim::marker(sim::SUMMARIZE));
        let base = estimate_text_tokens(&system);
        let mut i = 0;
        while i < pending.len() {
            let mut chunk = Vec::new();
            let mut used = base + estimate_text_tokens(&text) + 8;
            while i < pending.len() {
                let cost = estimate_text_tokens(&pending[i].text) + 2;
                if used + cost > budget {
                    break;
                }
                used += cost;
                chunk.push(&pending[i]);
                i += 1;
            }
            if chunk.is_empty() {
                return Err(MemoryError::ContextWindowExceeded { seq: pending[i].seq });
            }
            let mut input = format!("Summary so far: {text}\nRecords:\n");
            for r in &chunk {
                input.push_str(&format!("- {}\n", r.text.replace('\n', " ")));
            }
            let turn = backend.complete(&[ChatTurn::system(system.clone()), ChatTurn::user(input)], &[])?;
            text = turn.content.trim().to_string();
            covered = chunk.last().map(|r| r.seq).unwrap_or(covered);
        }
        let knowledge = SummarizedKnowledge { scope: scope.clone(), text, covers_up_to_seq: covered };
        self.kv.put(&format!("summaries/{}", scope.key()), encode(&knowledge))?;
        Ok(knowledge)
    }

    /// Asks the backend for entity pairs in `records` and stores them
    /// attributed to `attribution`, the app active at extraction time.
    pub fn extract_entities(
        &mut self,
        records: &[InteractionRecord],
        attribution: &str,
        backend: &mut dyn LlmBackend,
    ) -> Result<Vec<EntityPair>, MemoryError> {
        let texts: Vec<&str> = records.iter().filter(|r| r.role == RecordRole::User).map(|r| r.text.as_str()).collect();
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let system = format!("{}\nList entity/value pairs as a JSON array of pairs.", sim::marker(sim::EXTRACT_ENTITIES));
        let turn = backend.complete(&[ChatTurn::system(system), ChatTurn::user(texts.join("\n"))], &[])?;
        let pairs: Vec<(String, String)> = serde_json::from_str(&turn.content).unwrap_or_default();
        let mut out = Vec::new();
        for (entity, value) in pairs {
            if canonical_entity(&entity).is_empty() {
                continue;
            }
            out.push(self.upsert_entity(&entity, &value, attribution)?);
        }
        Ok(out)
    }

    /// Bounded context: the last `k` non-private records of `scope`, the
    /// applicable summaries (oldest dropped first when over `budget`
    /// tokens), and entity names. Private assembly is empty.
    pub fn build_working_memory(&self, scope: &Scope, k: usize, private: bool, budget: usize) -> WorkingMemory {
        if private {
            return WorkingMemory::default();
        }
        let records = self.records_in(scope);
        let recent = records[records.len().saturating_sub(k)..].to_vec();
        let mut summaries: Vec<SummarizedKnowledge> = match scope {
            Scope::Global => self.summaries(),
            Scope::Spoke(_) => self.summary(scope).into_iter().collect(),
        };
        summaries.retain(|s| !s.text.is_empty());
        summaries.sort_by_key(|s| s.covers_up_to_seq);
        let mut entities_available: Vec<String> = self
            .entities()
            .into_iter()
            .filter(|p| match scope {
                Scope::Global => true,
                Scope::Spoke(app) => p.attribution == *app,
            })
            .map(|p| p.entity)
            .collect();
        entities_available.dedup();
        let mut wm = WorkingMemory { recent, summaries, entities_available };
        while wm.tokens() > budget && !wm.summaries.is_empty() {
            let dropped = wm.summaries.remove(0);
            log::info!("working memory over budget; dropped summary for {}", dropped.scope.key());
        }
        while wm.tokens() > budget && !wm.recent.is_empty() {
            wm.recent.remove(0);
        }
        wm
    }

    /// Structured text for inspection.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.kv.scan("") {
            out.push_str(&format!("{k}\t{v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;

    fn sim() -> ScriptedBackend {
        ScriptedBackend::from_table("sim", 0, 8192).unwrap()
    }

    #[test]
    fn seqs_are_monotone_and_durable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hub.log");
        {
            let mut m = MemoryStore::open(&path).unwrap();
            for i in 1..=1000u64 {
                assert_eq!(m.append(RecordRole::User, "x", SYSTEM, false).unwrap(), i);
            }
        }
        let mut m = MemoryStore::open(&path).unwrap();
        assert_eq!(m.append(RecordRole::Hub, "y", SYSTEM, false).unwrap(), 1001);
    }

    #[test]
    fn recent_window_index_arithmetic() {
        let mut m = MemoryStore::in_memory();
        for i in 1..=25 {
            m.append(RecordRole::User, &format!("r{i}"), SYSTEM, false).unwrap();
        }
        let wm = m.build_working_memory(&Scope::Global, 10, false, usize::MAX);
        let seqs: Vec<u64> = wm.recent.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, (16..=25).collect::<Vec<_>>());
        assert!(m.build_working_memory(&Scope::Global, 0, false, usize::MAX).recent.is_empty());
        assert!(m.build_working_memory(&Scope::Global, 10, true, usize::MAX).is_empty());
    }

    #[test]
    fn private_records_are_excluded() {
        let mut m = MemoryStore::in_memory();
        m.append(RecordRole::User, "public", SYSTEM, false).unwrap();
        m.append(RecordRole::User, "secret", SYSTEM, true).unwrap();
        let wm = m.build_working_memory(&Scope::Global, 10, false, usize::MAX);
        assert_eq!(wm.recent.len(), 1);
        assert!(!wm.render().contains("secret"));
    }

    #[test]
    fn summaries_fold_first_sentences_per_scope() {
        let mut m = MemoryStore::in_memory();
        let mut b = sim();
        assert_eq!(m.summarize(&Scope::Global, &mut b).unwrap().text, "");
        m.append(RecordRole::User, "Book a ride. Quickly please.", "metro_hail", false).unwrap();
        m.append(RecordRole::Spoke("metro_hail".into()), "Metro Hail: $25.00", "metro_hail", false).unwrap();
        m.append(RecordRole::User, "Type abc! Now.", "typewriter", false).unwrap();
        let s = m.summarize(&Scope::Global, &mut b).unwrap();
        assert_eq!(s.text, "Book a ride. Metro Hail: $25.00 Type abc!");
        assert_eq!(s.covers_up_to_seq, 3);
        let spoke = m.summarize(&Scope::Spoke("metro_hail".into()), &mut b).unwrap();
        assert_eq!(spoke.text, "Book a ride. Metro Hail: $25.00");
        assert!(s.covers_up_to_seq <= m.max_seq());
    }

    #[test]
    fn oversize_record_is_reported() {
        let mut m = MemoryStore::in_memory();
        m.append(RecordRole::User, &"w ".repeat(500), SYSTEM, false).unwrap();
        let mut small = ScriptedBackend::from_table("sim", 0, 200).unwrap();
        assert!(matches!(m.summarize(&Scope::Global, &mut small), Err(MemoryError::ContextWindowExceeded { seq: 1 })));
    }

    #[test]
    fn extraction_attributes_to_active_app() {
        let mut m = MemoryStore::in_memory();
        m.append(RecordRole::User, "My symptoms are fever and cough. My passport number is P1234567.", "health_companion", false)
            .unwrap();
        let recs = m.records();
        let pairs = m.extract_entities(&recs, "health_companion", &mut sim()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.attribution == "health_companion"));
        let hit = m.cross_spoke_lookup("Passport Number", "travel_mate").unwrap();
        assert_eq!(hit, Lookup { value: "P1234567".into(), attribution: "health_companion".into(), same_app: false });
        m.upsert_entity("passport_number", "P1234567", "travel_mate").unwrap();
        assert!(m.cross_spoke_lookup("passport_number", "travel_mate").unwrap().same_app);
        assert_eq!(m.cross_spoke_lookup("shoe_size", "travel_mate"), None);
        let none = m.extract_entities(&[], "x", &mut sim()).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn budget_truncates_oldest_summary_first() {
        let mut m = MemoryStore::in_memory();
        let mut b = sim();
        m.append(RecordRole::User, "Alpha beta gamma.", "a", false).unwrap();
        m.summarize(&Scope::Spoke("a".into()), &mut b).unwrap();
        m.append(RecordRole::User, "Delta epsilon.", "b", false).unwrap();
        m.summarize(&Scope::Spoke("b".into()), &mut b).unwrap();
        let full = m.build_working_memory(&Scope::Global, 0, false, usize::MAX);
        assert_eq!(full.summaries.len(), 2);
        let budget = full.tokens() - 1;
        let cut = m.build_working_memory(&Scope::Global, 0, false, budget);
        assert_eq!(cut.summaries.len(), 1);
        assert_eq!(cut.summaries[0].scope, Scope::Spoke("b".into()));
        assert!(cut.tokens() <= budget);
    }

    #[test]
    fn canonical_names() {
        assert_eq!(canonical_entity("Passport Number"), "passport_number");
        assert_eq!(canonical_entity(" home-city "), "home_city");
    }
}
