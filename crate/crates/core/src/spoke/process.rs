//! Spoke process main loop: open the store, confine, then serve the hub.

use std::fs::OpenOptions;
use std::os::unix::net::UnixStream;

use serde_json::Value;

use super::engine::{BackendSlot, Engine, Negotiated, SpokeHost};
use crate::channel::{read_frame, write_frame, ChannelError, Control, FailureKind, Frame, Pending, SpokeMode, SpokeOutcome};
use crate::isc::{FailureCode, IscEnvelope, Payload, SpokeSid};
use crate::llm::{self, BackendKind, ChatTurn, LlmError, ToolSchema};
use crate::memory::MemoryStore;
use crate::sandbox::{self, Isolation};

/// Host side of the engine inside a sandboxed spoke: every call is a frame
/// to the hub followed by a blocking wait for its answer.
pub struct ChannelHost {
    stream: UnixStream,
}

impl ChannelHost {
    pub fn new(stream: UnixStream) -> Self {
        ChannelHost { stream }
    }

    fn send(&mut self, frame: Frame) -> Result<(), ChannelError> {
        write_frame(&mut self.stream, &frame)
    }

    fn control(&mut self, c: Control) -> Result<(), ChannelError> {
        self.send(Frame::Control(c))
    }

    fn recv(&mut self) -> Result<Frame, ChannelError> {
        read_frame(&mut self.stream)
    }

    fn fatal(&self, what: &str, err: impl std::fmt::Display) -> ! {
        eprintln!("spoke channel failure while {what}: {err}");
        std::process::exit(3)
    }
}

impl SpokeHost for ChannelHost {
    fn probe(&mut self, functionality: &str) -> Result<Negotiated, FailureCode> {
        // The requester names no counterparty yet; the hub fills in the sid.
        let sid = SpokeSid::parse(&"0".repeat(32)).expect("zero sid");
        let env = IscEnvelope::Probe { sid, functionality: functionality.to_string() };
        if let Err(e) = self.send(Frame::Isc(env)) {
            self.fatal("probing", e);
        }
        match self.recv() {
            Ok(Frame::Isc(IscEnvelope::FormatResponse { sid, request_format, response_format })) => {
                Ok(Negotiated { sid, request_format, response_format })
            }
            Ok(Frame::Control(Control::IscFailure { code })) => Err(code),
            Ok(_) => Err(FailureCode::Malformed),
            Err(e) => self.fatal("probing", e),
        }
    }

    fn isc_request(&mut self, counterparty: &SpokeSid, functionality: &str, payload: Payload) -> Result<Payload, FailureCode> {
        let env = IscEnvelope::Request { sid: counterparty.clone(), functionality: functionality.to_string(), payload };
        if let Err(e) = self.send(Frame::Isc(env)) {
            self.fatal("requesting", e);
        }
        match self.recv() {
            Ok(Frame::Isc(IscEnvelope::Response { sid, payload })) if &sid == counterparty => Ok(payload),
            Ok(Frame::Control(Control::IscFailure { code })) => Err(code),
            Ok(_) => Err(FailureCode::Malformed),
            Err(e) => self.fatal("requesting", e),
        }
    }

    fn user_data(&mut self, entity: &str) -> Option<String> {
        if let Err(e) = self.control(Control::NeedUserData { entity: entity.to_string() }) {
            self.fatal("asking for data", e);
        }
        match self.recv() {
            Ok(Frame::Control(Control::UserData { value, .. })) => value,
            Ok(_) => None,
            Err(e) => self.fatal("asking for data", e),
        }
    }

    fn confirm(&mut self, tool: &str, preview: &str) -> bool {
        if let Err(e) = self.control(Control::Confirm { tool: tool.to_string(), preview: preview.to_string() }) {
            self.fatal("confirming", e);
        }
        match self.recv() {
            Ok(Frame::Control(Control::ConfirmResult { approved })) => approved,
            Ok(_) => false,
            Err(e) => self.fatal("confirming", e),
        }
    }

    fn tool_event(&mut self, tool: &str, args: &Value, ok: bool) {
        if let Err(e) = self.control(Control::ToolEvent { tool: tool.to_string(), args: args.clone(), ok }) {
            self.fatal("reporting a tool call", e);
        }
    }

    fn prompt(&mut self, phase: &str, text: &str, micros: u64) {
        if let Err(e) = self.control(Control::Prompt { phase: phase.to_string(), text: text.to_string(), micros }) {
            self.fatal("reporting a prompt", e);
        }
    }

    fn egress(&mut self, url: &str, body: &str) -> Result<String, String> {
        if let Err(e) = self.control(Control::Egress { url: url.to_string(), body: body.to_string() }) {
            self.fatal("requesting egress", e);
        }
        match self.recv() {
            Ok(Frame::Control(Control::EgressResult { ok: true, body })) => Ok(body),
            Ok(Frame::Control(Control::EgressResult { ok: false, body })) => Err(body),
            Ok(_) => Err("unexpected reply".into()),
            Err(e) => self.fatal("requesting egress", e),
        }
    }

    fn remote_complete(&mut self, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError> {
        if let Err(e) = self.control(Control::Llm { messages: messages.to_vec(), tools: tools.to_vec() }) {
            self.fatal("calling the backend", e);
        }
        match self.recv() {
            Ok(Frame::Control(Control::LlmResult { turn: Some(turn), .. })) => Ok(turn),
            Ok(Frame::Control(Control::LlmResult { error, .. })) => Err(LlmError::Remote(error.unwrap_or_default())),
            Ok(_) => Err(LlmError::Remote("unexpected reply".into())),
            Err(e) => self.fatal("calling the backend", e),
        }
    }
}

pub enum StoreArg {
    Path(String),
    Private,
}

fn parse_args(args: &[String]) -> Result<StoreArg, String> {
    match args {
        [flag, path] if flag == "--store" => Ok(StoreArg::Path(path.clone())),
        [flag] if flag == "--private" => Ok(StoreArg::Private),
        [] => Ok(StoreArg::Private),
        _ => Err(format!("usage: hubspoke-spoke [--store <path> | --private], got {args:?}")),
    }
}

/// Entry point of the spoke executable. Returns the process exit code.
pub fn spoke_main(args: &[String]) -> i32 {
    let store = match parse_args(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    // The store is the only file a spoke ever opens, and it must be opened
    // before the syscall filter forbids opening anything.
    let memory = match store {
        StoreArg::Private => MemoryStore::in_memory(),
        StoreArg::Path(p) => {
            let file = OpenOptions::new().read(true).append(true).create(true).open(&p);
            match file.map_err(|e| e.to_string()).and_then(|f| MemoryStore::from_file(f).map_err(|e| e.to_string())) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("cannot open spoke store {p}: {e}");
                    return 2;
                }
            }
        }
    };
    llm::sim::warm_up();
    let isolation = sandbox::confine_self();
    // SAFETY: called once, in a process started by the sandbox launcher.
    let stream = unsafe { sandbox::inherited_channel() };
    let mut host = ChannelHost::new(stream);
    if host.control(Control::Ready { isolation }).is_err() {
        return 3;
    }
    let mut engine = match host.recv() {
        Ok(Frame::Control(Control::Init { app, mode, broadcast, backend, rules })) => {
            let slot = match &backend.kind {
                BackendKind::Scripted { .. } => match llm::build(&backend) {
                    Ok(b) => BackendSlot::Local(b),
                    Err(e) => {
                        let _ = host.control(Control::Failed { kind: FailureKind::Backend, message: e.to_string() });
                        return 4;
                    }
                },
                _ => BackendSlot::ViaHost,
            };
            let memory = if mode == SpokeMode::Private { MemoryStore::in_memory() } else { memory };
            Engine::new(app.map(|a| *a), mode, broadcast, slot, memory, rules)
        }
        Ok(other) => {
            eprintln!("expected init, got {other:?}");
            return 3;
        }
        Err(e) => {
            eprintln!("no init: {e}");
            return 3;
        }
    };
    if isolation == Isolation::Reduced {
        eprintln!("running with reduced isolation");
    }
    serve_loop(&mut engine, &mut host)
}

fn serve_loop(engine: &mut Engine, host: &mut ChannelHost) -> i32 {
    loop {
        let frame = match host.recv() {
            Ok(f) => f,
            Err(ChannelError::Closed) => return 0,
            Err(e) => {
                eprintln!("channel error: {e}");
                return 3;
            }
        };
        let reply = match frame {
            Frame::Control(Control::Shutdown) => return 0,
            Frame::Control(Control::Invoke { query, bootstrap, context }) => {
                match engine.handle_invocation(host, &query, &bootstrap, &context) {
                    Ok(outcome) => Frame::Control(Control::Outcome { outcome }),
                    Err(f) => Frame::Control(Control::Failed { kind: f.kind, message: f.message }),
                }
            }
            Frame::Control(Control::Synthesize { query, responses }) => match engine.synthesize(host, &query, &responses) {
                Ok(response) => Frame::Control(Control::Outcome {
                    outcome: SpokeOutcome { response, tool_trace: Vec::new(), pending: Pending::None },
                }),
                Err(f) => Frame::Control(Control::Failed { kind: f.kind, message: f.message }),
            },
            Frame::Isc(IscEnvelope::Request { sid, functionality, payload }) => {
                match engine.serve(host, &functionality, &payload) {
                    Ok(payload) => Frame::Isc(IscEnvelope::Response { sid, payload }),
                    Err(code) => Frame::Control(Control::IscFailure { code }),
                }
            }
            other => Frame::Control(Control::Failed {
                kind: FailureKind::Protocol,
                message: format!("unexpected frame {}", frame_kind(&other)),
            }),
        };
        if host.send(reply).is_err() {
            return 3;
        }
    }
}

fn frame_kind(frame: &Frame) -> &'static str {
    match frame {
        Frame::Isc(env) => env.kind(),
        Frame::Control(_) => "control",
        Frame::Garbled(_) => "garbled",
    }
}
