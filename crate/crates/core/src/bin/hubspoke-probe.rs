//! Stand-in spoke that attempts one forbidden action when invoked. Used by
//! the sandbox tests in place of the real spoke executable.
//!
//! usage: hubspoke-probe <action> [target] [--unconfined] (--store <path> | --private)
//!
//! actions: read-file <path>, egress <url>, socket, hog

use std::io::Read;
use std::os::unix::net::UnixStream;

use hubspoke::channel::{read_frame, write_frame, Control, Frame, Pending, SpokeOutcome};
use hubspoke::sandbox::{self, Isolation};

fn send(stream: &mut UnixStream, c: Control) {
    if write_frame(stream, &Frame::Control(c)).is_err() {
        std::process::exit(3);
    }
}

fn attempt(stream: &mut UnixStream, action: &str, target: &str) -> String {
    match action {
        "read-file" => match std::fs::File::open(target) {
            Ok(mut f) => {
                let mut text = String::new();
                let _ = f.read_to_string(&mut text);
                format!("read {} bytes: {text}", text.len())
            }
            Err(e) => format!("open failed: {e}"),
        },
        "egress" => {
            send(stream, Control::Egress { url: target.to_string(), body: "{\"probe\":true}".into() });
            match read_frame(stream) {
                Ok(Frame::Control(Control::EgressResult { ok, body })) => format!("egress ok={ok}: {body}"),
                other => format!("egress reply {other:?}"),
            }
        }
        "socket" => {
            let fd = unsafe { libc::socket(libc::AF_INET, libc::SOCK_STREAM, 0) };
            format!("socket returned {fd}")
        }
        "hog" => {
            let mut blocks: Vec<Vec<u8>> = Vec::new();
            for _ in 0..64 {
                blocks.push(vec![1u8; 64 * 1024 * 1024]);
            }
            format!("allocated {} MiB", blocks.len() * 64)
        }
        other => format!("unknown action {other}"),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let action = args.first().cloned().unwrap_or_default();
    let target = args.get(1).filter(|a| !a.starts_with("--")).cloned().unwrap_or_default();
    let unconfined = args.iter().any(|a| a == "--unconfined");
    let isolation = if unconfined { Isolation::Reduced } else { sandbox::confine_self() };
    // SAFETY: called once, in a process started by the sandbox launcher.
    let mut stream = unsafe { sandbox::inherited_channel() };
    send(&mut stream, Control::Ready { isolation });
    loop {
        match read_frame(&mut stream) {
            Ok(Frame::Control(Control::Init { .. })) => {}
            Ok(Frame::Control(Control::Invoke { .. })) => {
                let response = attempt(&mut stream, &action, &target);
                let outcome = SpokeOutcome { response, tool_trace: Vec::new(), pending: Pending::None };
                send(&mut stream, Control::Outcome { outcome });
            }
            _ => return,
        }
    }
}
