use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispatch {
    /// Run one app, picked by the user when several qualify.
    #[default]
    Choose,
    /// Run every primary app, then compose their answers in a vanilla spoke.
    Compare,
    /// Run the listed tasks in order and concatenate the answers.
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub app: String,
    pub query: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubPlan {
    pub needs_app: bool,
    #[serde(rename = "primary", default)]
    pub primary_apps: Vec<String>,
    #[serde(rename = "secondary", default)]
    pub secondary_apps: Vec<String>,
    #[serde(default)]
    pub dispatch: Dispatch,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub rationale: String,
}

impl HubPlan {
    pub fn no_app(rationale: &str) -> Self {
        HubPlan { rationale: rationale.into(), ..Default::default() }
    }

    /// Parses backend output, tolerating prose around a single JSON object.
    pub fn parse(text: &str) -> Option<HubPlan> {
        let start = text.find('{')?;
        let end = text.rfind('}')?;
        serde_json::from_str(text.get(start..=end)?).ok()
    }

    /// Drops apps outside `known`, removes duplicates and overlaps, and
    /// restores the invariants. Returns the dropped identifiers.
    pub fn validate(mut self, known: &[&str], query: &str) -> (HubPlan, Vec<String>) {
        let mut dropped = Vec::new();
        let mut keep = |apps: Vec<String>, seen: &mut Vec<String>| -> Vec<String> {
            let mut out = Vec::new();
            for a in apps {
                if !known.contains(&a.as_str()) {
                    if !dropped.contains(&a) {
                        dropped.push(a);
                    }
                } else if !seen.contains(&a) {
                    seen.push(a.clone());
                    out.push(a);
                }
            }
            out
        };
        let mut seen = Vec::new();
        self.primary_apps = keep(std::mem::take(&mut self.primary_apps), &mut seen);
        self.secondary_apps = keep(std::mem::take(&mut self.secondary_apps), &mut seen);
        let primary = self.primary_apps.clone();
        self.tasks.retain(|t| primary.contains(&t.app));
        if self.primary_apps.is_empty() {
            self.needs_app = false;
        }
        if !self.needs_app {
            self.primary_apps.clear();
            self.secondary_apps.clear();
            self.tasks.clear();
            self.dispatch = Dispatch::Choose;
        } else if self.dispatch == Dispatch::Sequence && self.tasks.is_empty() {
            self.tasks = self.primary_apps.iter().map(|a| Task { app: a.clone(), query: query.to_string() }).collect();
        }
        if self.dispatch == Dispatch::Compare && self.primary_apps.len() < 2 {
            self.dispatch = Dispatch::Choose;
        }
        (self, dropped)
    }

    pub fn mentions(&self, app: &str) -> bool {
        self.primary_apps.iter().chain(&self.secondary_apps).any(|a| a == app)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Expected,
    Unexpected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollabAssessment {
    pub verdict: Verdict,
    pub reason: String,
}

impl CollabAssessment {
    pub fn text(&self) -> String {
        let label = match self.verdict {
            Verdict::Expected => "Expected",
            Verdict::Unexpected => "Unexpected",
        };
        format!("{label}: {}", self.reason)
    }
}

/// Expected iff some installed provider other than the requester is named
/// by the current plan.
pub fn assess_collaboration(requester: &str, functionality: &str, providers: &[String], plan: &HubPlan) -> CollabAssessment {
    let others: Vec<&String> = providers.iter().filter(|p| p.as_str() != requester).collect();
    if others.is_empty() {
        return CollabAssessment {
            verdict: Verdict::Unexpected,
            reason: format!("no other installed app provides {functionality}"),
        };
    }
    match others.iter().find(|p| plan.mentions(p)) {
        Some(p) => CollabAssessment {
            verdict: Verdict::Expected,
            reason: format!("the plan for this query already involves {p}, which provides {functionality}"),
        },
        None => CollabAssessment {
            verdict: Verdict::Unexpected,
            reason: format!("the plan for this query did not anticipate {functionality}; no app providing it was selected"),
        },
    }
}
