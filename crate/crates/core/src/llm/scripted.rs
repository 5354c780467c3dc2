use super::{check_window, filter_tool_calls, sim, ChatTurn, LlmBackend, LlmError, ToolSchema};

pub type Matcher = fn(&[ChatTurn]) -> bool;
pub type Responder = fn(&[ChatTurn], &[ToolSchema]) -> ChatTurn;

/// One table row. Among matching rows the highest priority wins; ties are
/// broken by the seed.
#[derive(Clone, Copy)]
pub struct Rule {
    pub name: &'static str,
    pub priority: i32,
    pub matcher: Matcher,
    pub responder: Responder,
}

/// Deterministic backend: a pure function of (messages, seed).
#[derive(Clone)]
pub struct ScriptedBackend {
    table: String,
    rules: Vec<Rule>,
    seed: u64,
    window: usize,
}

fn fnv1a(seed: u64, text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ScriptedBackend {
    pub fn new(table: &str, rules: Vec<Rule>, seed: u64, window: usize) -> Self {
        ScriptedBackend { table: table.to_string(), rules, seed, window }
    }

    pub fn from_table(table: &str, seed: u64, window: usize) -> Result<Self, LlmError> {
        match table {
            "sim" => Ok(Self::new(table, sim::rules(), seed, window)),
            other => Err(LlmError::UnknownTable(other.to_string())),
        }
    }

    pub fn table(&self) -> &str {
        &self.table
    }

    fn select(&self, messages: &[ChatTurn]) -> Option<&Rule> {
        let matching: Vec<&Rule> = self.rules.iter().filter(|r| (r.matcher)(messages)).collect();
        let top = matching.iter().map(|r| r.priority).max()?;
        let tied: Vec<&Rule> = matching.into_iter().filter(|r| r.priority == top).collect();
        let key = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let pick = (fnv1a(self.seed, key) % tied.len() as u64) as usize;
        Some(tied[pick])
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&mut self, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError> {
        check_window(messages, self.window)?;
        let rule = self.select(messages).ok_or(LlmError::NoRule)?;
        let mut turn = (rule.responder)(messages, tools);
        filter_tool_calls(&mut turn, tools);
        Ok(turn)
    }

    fn context_window(&self) -> usize {
        self.window
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ToolCall;
    use serde_json::json;

    fn hello(_: &[ChatTurn]) -> bool {
        true
    }

    fn say_a(_: &[ChatTurn], _: &[ToolSchema]) -> ChatTurn {
        ChatTurn::assistant("a")
    }

    fn say_b(_: &[ChatTurn], _: &[ToolSchema]) -> ChatTurn {
        ChatTurn::assistant("b")
    }

    fn call_ghost(_: &[ChatTurn], _: &[ToolSchema]) -> ChatTurn {
        ChatTurn::assistant_calls(vec![ToolCall { name: "ghost".into(), arguments: json!({}) }])
    }

    fn rule(name: &'static str, priority: i32, responder: Responder) -> Rule {
        Rule { name, priority, matcher: hello, responder }
    }

    #[test]
    fn priority_then_seeded_tie_break() {
        let rules = vec![rule("a", 1, say_a), rule("b", 1, say_b), rule("low", 0, call_ghost)];
        let msgs = [ChatTurn::user("hi")];
        let picks: std::collections::HashSet<String> = (0..32)
            .map(|seed| ScriptedBackend::new("t", rules.clone(), seed, 100).complete(&msgs, &[]).unwrap().content)
            .collect();
        assert_eq!(picks.len(), 2);
        let mut b = ScriptedBackend::new("t", rules, 5, 100);
        let first = b.complete(&msgs, &[]).unwrap();
        for _ in 0..100 {
            assert_eq!(b.complete(&msgs, &[]).unwrap(), first);
        }
    }

    #[test]
    fn tool_closure_is_enforced() {
        let mut b = ScriptedBackend::new("t", vec![rule("g", 0, call_ghost)], 0, 100);
        let turn = b.complete(&[ChatTurn::user("x")], &[]).unwrap();
        assert!(turn.tool_calls.is_empty());
    }

    #[test]
    fn unknown_table_and_empty_messages() {
        assert!(matches!(ScriptedBackend::from_table("nope", 0, 10), Err(LlmError::UnknownTable(_))));
        let mut b = ScriptedBackend::from_table("sim", 0, 100).unwrap();
        assert_eq!(b.complete(&[], &[]), Err(LlmError::EmptyMessages));
    }
}
