//! Line-oriented chat over any reader and writer.

use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use crate::apps::Registry;
use crate::config::HubConfig;
use crate::hub::{AppChoiceRequest, DataConsentRequest, Hub, HubError, UiEvent, UiEventKind, User, UserDataRequest};
use crate::permission::{PromptOption, PromptRequest};

type Io = (Box<dyn BufRead + Send>, Box<dyn Write + Send>);

/// Accepts `once`, `session`, `always` or `deny` and their first letters.
pub fn parse_option(answer: &str) -> Option<PromptOption> {
    match answer.trim().to_ascii_lowercase().as_str() {
        "o" | "once" => Some(PromptOption::AllowOnce),
        "s" | "session" => Some(PromptOption::AllowSession),
        "a" | "always" => Some(PromptOption::AllowAlways),
        "d" | "deny" | "n" | "no" => Some(PromptOption::Deny),
        _ => None,
    }
}

fn label(o: PromptOption) -> &'static str {
    match o {
        PromptOption::AllowOnce => "once",
        PromptOption::AllowSession => "session",
        PromptOption::AllowAlways => "always",
        PromptOption::Deny => "deny",
    }
}

/// Dialogs rendered as text. End of input answers every question with a
/// refusal.
pub struct TerminalUser {
    io: Arc<Mutex<Io>>,
}

impl TerminalUser {
    fn say(&self, text: &str) {
        let mut io = self.io.lock().unwrap_or_else(|e| e.into_inner());
        let _ = writeln!(io.1, "{text}");
        let _ = io.1.flush();
    }

    /// Prints `prompt` and reads one line; `None` at end of input.
    fn ask(&self, prompt: &str) -> Option<String> {
        let mut io = self.io.lock().unwrap_or_else(|e| e.into_inner());
        let _ = write!(io.1, "{prompt} ");
        let _ = io.1.flush();
        let mut line = String::new();
        match io.0.read_line(&mut line) {
            Ok(0) | Err(_) => {
                let _ = writeln!(io.1);
                None
            }
            Ok(_) => Some(line.trim().to_string()),
        }
    }

    fn choose_option(&self, options: &[PromptOption]) -> PromptOption {
        let offered: Vec<&str> = options.iter().map(|o| label(*o)).collect();
        loop {
            let Some(line) = self.ask(&format!("[{}]>", offered.join("/"))) else { return PromptOption::Deny };
            match parse_option(&line) {
                Some(o) if options.contains(&o) => return o,
                _ => self.say(&format!("answer one of: {}", offered.join(", "))),
            }
        }
    }
}

impl User for TerminalUser {
    fn permission(&mut self, request: &PromptRequest) -> PromptOption {
        self.say(&format!("permission: {}", request.human_text));
        if let Some(a) = &request.assessment {
            self.say(&format!("  assessment: {a}"));
        }
        if request.scope.irreversible {
            self.say("  this action cannot be undone");
        }
        self.choose_option(&request.options)
    }

    fn choose_app(&mut self, request: &AppChoiceRequest) -> Option<(String, PromptOption)> {
        self.say("several apps can handle this:");
        for (i, c) in request.candidates.iter().enumerate() {
            self.say(&format!("  {}. {c}", i + 1));
        }
        let app = loop {
            let line = self.ask("app number (empty to decline)>")?;
            if line.is_empty() {
                return None;
            }
            match line.parse::<usize>().ok().and_then(|n| n.checked_sub(1)).and_then(|i| request.candidates.get(i)) {
                Some(app) => break app.clone(),
                None => self.say("not a listed number"),
            }
        };
        match self.choose_option(&request.options) {
            PromptOption::Deny => None,
            o => Some((app, o)),
        }
    }

    fn data_consent(&mut self, request: &DataConsentRequest) -> Vec<String> {
        self.say(&format!("{} would receive:", request.app));
        let mut approved = Vec::new();
        for item in &request.items {
            let prompt = format!("  {} = {} (from {}) share? [y/n]>", item.entity, item.value, item.source_app);
            match self.ask(&prompt) {
                Some(a) if matches!(a.to_ascii_lowercase().as_str(), "y" | "yes") => approved.push(item.entity.clone()),
                Some(_) => {}
                None => break,
            }
        }
        approved
    }

    fn provide_data(&mut self, request: &UserDataRequest) -> Option<String> {
        let v = self.ask(&format!("{} needs your {} (empty to decline)>", request.app, request.entity))?;
        (!v.is_empty()).then_some(v)
    }

    fn notify(&mut self, event: UiEvent) {
        if event.kind == UiEventKind::Status {
            if let Some(m) = event.payload.get("message").and_then(|m| m.as_str()) {
                self.say(&format!("· {m}"));
            }
        }
    }
}

const HELP: &str = "commands: /private <query>, /grants, /revoke <id>, /apps, /install <app>, /end, /quit";

/// Runs a chat until `/quit` or end of input, then closes the session.
pub fn run_repl(
    config: HubConfig,
    registry: Registry,
    input: Box<dyn BufRead + Send>,
    output: Box<dyn Write + Send>,
) -> Result<(), HubError> {
    let io = Arc::new(Mutex::new((input, output)));
    let term = TerminalUser { io: io.clone() };
    let user = TerminalUser { io };
    let mut hub = Hub::with_registry(config, registry, Box::new(user))?;
    term.say(HELP);
    while let Some(line) = term.ask(">") {
        let line = line.trim();
        let (cmd, rest) = line.split_once(' ').unwrap_or((line, ""));
        match cmd {
            "" => {}
            "/quit" => break,
            "/help" => term.say(HELP),
            "/end" => {
                hub.end_session();
                term.say("session closed");
            }
            "/apps" => {
                for m in hub.registry().store() {
                    let mark = if hub.registry().is_installed(&m.app_id) { "*" } else { " " };
                    term.say(&format!("{mark} {} - {}", m.app_id, m.description));
                }
            }
            "/install" => match hub.install(rest.trim()) {
                Ok(()) => term.say(&format!("installed {}", rest.trim())),
                Err(e) => term.say(&format!("error: {e}")),
            },
            "/grants" => {
                let perms = hub.permissions();
                let grants = perms.lock().unwrap_or_else(|e| e.into_inner()).grants();
                if grants.is_empty() {
                    term.say("no grants");
                }
                for g in grants {
                    term.say(&format!("{} {:?} {:?} {}", g.id, g.duration, g.scope.kind, g.scope.subjects.join(" -> ")));
                }
            }
            "/revoke" => {
                let revoked = rest.trim().parse().ok().map(|id| hub.permissions().lock().unwrap_or_else(|e| e.into_inner()).revoke_id(id));
                term.say(if revoked == Some(true) { "revoked" } else { "no such grant" });
            }
            "/private" => answer(&term, hub.handle_private_query(rest)),
            _ => answer(&term, hub.handle_user_query(line)),
        }
    }
    hub.end_session();
    Ok(())
}

fn answer(term: &TerminalUser, result: Result<crate::hub::FinalResponse, HubError>) {
    match result {
        Ok(r) => term.say(&r.text),
        Err(e) => term.say(&format!("error: {e}")),
    }
}
