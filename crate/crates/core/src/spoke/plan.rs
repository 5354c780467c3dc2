use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutionStep {
    ToolCall {
        tool: String,
        #[serde(default)]
        args: Value,
    },
    LlmTransform {
        instruction: String,
    },
    UserDataRequest {
        entity: String,
    },
    IscRequest {
        functionality: String,
        #[serde(default)]
        args: Value,
    },
    FinalAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpokePlan {
    pub steps: Vec<ExecutionStep>,
    #[serde(default)]
    pub data_needed: Vec<String>,
    #[serde(default)]
    pub functionalities_needed: Vec<String>,
}

impl SpokePlan {
    /// Parses backend output, tolerating prose around a single JSON object.
    pub fn parse(text: &str) -> Option<SpokePlan> {
        let start = text.find('{')?;
        let end = text.rfind('}')?;
        serde_json::from_str(text.get(start..=end)?).ok()
    }

    /// Enforces the plan invariants: steps use only own tools or broadcast
    /// functionalities, and exactly one final answer closes the plan.
    pub fn sanitize(mut self, tools: &[String], broadcast: &[String]) -> (SpokePlan, Vec<String>) {
        let mut dropped = Vec::new();
        self.steps.retain(|s| match s {
            ExecutionStep::ToolCall { tool, .. } if !tools.contains(tool) => {
                dropped.push(format!("tool {tool}"));
                false
            }
            ExecutionStep::IscRequest { functionality, .. } if !broadcast.contains(functionality) => {
                dropped.push(format!("functionality {functionality}"));
                false
            }
            ExecutionStep::FinalAnswer => false,
            _ => true,
        });
        self.steps.push(ExecutionStep::FinalAnswer);
        self.functionalities_needed.retain(|f| broadcast.contains(f));
        for s in &self.steps {
            if let ExecutionStep::IscRequest { functionality, .. } = s {
                if !self.functionalities_needed.contains(functionality) {
                    self.functionalities_needed.push(functionality.clone());
                }
            }
        }
        (self, dropped)
    }
}

/// Replaces `"$<step>.<field>"` strings with earlier step results.
pub fn resolve_refs(value: &Value, results: &BTreeMap<usize, Map<String, Value>>) -> Value {
    match value {
        Value::String(s) => match parse_ref(s) {
            Some((step, field)) => results
                .get(&step)
                .and_then(|r| r.get(field))
                .cloned()
                .unwrap_or_else(|| Value::String(String::new())),
            None => value.clone(),
        },
        Value::Array(items) => Value::Array(items.iter().map(|v| resolve_refs(v, results)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), resolve_refs(v, results))).collect()),
        other => other.clone(),
    }
}

fn parse_ref(s: &str) -> Option<(usize, &str)> {
    let (step, field) = s.strip_prefix('$')?.split_once('.')?;
    let ok = !field.is_empty() && field.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_');
    ok.then_some(())?;
    Some((step.parse().ok()?, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sanitize_strips_unknown_functionality_and_fixes_final() {
        let plan = SpokePlan::parse(
            r#"{"steps":[{"kind":"final_answer"},{"kind":"tool_call","tool":"a","args":{}},{"kind":"isc_request","functionality":"teleport","args":{}}],"functionalities_needed":["teleport"]}"#,
        )
        .unwrap();
        let (plan, dropped) = plan.sanitize(&["a".into()], &["file_retrieval".into()]);
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.steps[1], ExecutionStep::FinalAnswer);
        assert!(plan.functionalities_needed.is_empty());
        assert_eq!(dropped, vec!["functionality teleport"]);
    }

    #[test]
    fn references_resolve_against_results() {
        let mut results = BTreeMap::new();
        results.insert(1, json!({"user_id": "1"}).as_object().cloned().unwrap());
        let args = json!({"user_id": "$1.user_id", "other": "$9.x", "plain": "$5"});
        assert_eq!(resolve_refs(&args, &results), json!({"user_id": "1", "other": "", "plain": "$5"}));
    }
}
