//! Process confinement for spokes: resource limits, a syscall allowlist, a
//! single inherited channel, and the egress guard.

pub mod egress;
pub mod psl;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io;
use std::os::fd::{AsRawFd, FromRawFd, IntoRawFd, RawFd};
use std::os::unix::net::UnixStream;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};

pub use egress::{host_of, BlockReason, EgressDecision, EgressGuard, EgressRecord};
pub use psl::{etld_plus_one, PslError, PublicSuffixList};

/// Descriptor number of the hub channel inside a spoke.
pub const CHANNEL_FD: RawFd = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    pub cpu_seconds: u64,
    pub max_virtual_memory_bytes: u64,
    pub max_created_file_bytes: u64,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        SandboxPolicy {
            cpu_seconds: 60,
            max_virtual_memory_bytes: 512 * 1024 * 1024,
            max_created_file_bytes: 16 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Isolation {
    Full,
    Reduced,
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("launch failed: {0}")]
    Launch(#[from] io::Error),
    #[error("syscall filter unavailable: {0}")]
    Filter(String),
}

/// System calls a confined spoke may make. Everything else, including
/// open/openat, socket and connect, kills the process.
pub fn allowed_syscalls() -> Vec<(&'static str, i64)> {
    #[allow(unused_mut)]
    let mut list = vec![
        ("read", libc::SYS_read),
        ("write", libc::SYS_write),
        ("readv", libc::SYS_readv),
        ("writev", libc::SYS_writev),
        ("recvfrom", libc::SYS_recvfrom),
        ("sendto", libc::SYS_sendto),
        ("recvmsg", libc::SYS_recvmsg),
        ("sendmsg", libc::SYS_sendmsg),
        ("close", libc::SYS_close),
        ("fcntl", libc::SYS_fcntl),
        ("fstat", libc::SYS_fstat),
        ("lseek", libc::SYS_lseek),
        ("fsync", libc::SYS_fsync),
        ("brk", libc::SYS_brk),
        ("mmap", libc::SYS_mmap),
        ("munmap", libc::SYS_munmap),
        ("mremap", libc::SYS_mremap),
        ("madvise", libc::SYS_madvise),
        ("mprotect", libc::SYS_mprotect),
        ("futex", libc::SYS_futex),
        ("getrandom", libc::SYS_getrandom),
        ("clock_gettime", libc::SYS_clock_gettime),
        ("sched_yield", libc::SYS_sched_yield),
        ("exit", libc::SYS_exit),
        ("exit_group", libc::SYS_exit_group),
        ("rt_sigreturn", libc::SYS_rt_sigreturn),
        ("rt_sigaction", libc::SYS_rt_sigaction),
        ("rt_sigprocmask", libc::SYS_rt_sigprocmask),
        ("sigaltstack", libc::SYS_sigaltstack),
        ("getpid", libc::SYS_getpid),
        ("gettid", libc::SYS_gettid),
        ("tgkill", libc::SYS_tgkill),
    ];
    list
}

/// Installs the allowlist in the calling process. Sets no-new-privs first.
pub fn install_syscall_filter() -> Result<(), SandboxError> {
    use seccompiler::{BpfProgram, SeccompAction, SeccompFilter, TargetArch};
    let arch = TargetArch::try_from(std::env::consts::ARCH).map_err(|e| SandboxError::Filter(e.to_string()))?;
    let rules: BTreeMap<i64, Vec<seccompiler::SeccompRule>> =
        allowed_syscalls().into_iter().map(|(_, nr)| (nr, Vec::new())).collect();
    let filter = SeccompFilter::new(rules, SeccompAction::KillProcess, SeccompAction::Allow, arch)
        .map_err(|e| SandboxError::Filter(e.to_string()))?;
    let program: BpfProgram = filter.try_into().map_err(|e: seccompiler::BackendError| SandboxError::Filter(e.to_string()))?;
    seccompiler::apply_filter(&program).map_err(|e| SandboxError::Filter(e.to_string()))
}

/// Enters confinement, reporting the level reached. A platform without
/// syscall filtering degrades to reduced isolation rather than failing.
pub fn confine_self() -> Isolation {
    match install_syscall_filter() {
        Ok(()) => Isolation::Full,
        Err(err) => {
            eprintln!("syscall filter unavailable, running with reduced isolation: {err}");
            Isolation::Reduced
        }
    }
}

/// The spoke's end of the hub channel.
///
/// # Safety
/// Must be called at most once, in a process started by [`launch`].
pub unsafe fn inherited_channel() -> UnixStream {
    unsafe { UnixStream::from_raw_fd(CHANNEL_FD) }
}

pub struct LaunchedProcess {
    pub child: Child,
    pub channel: UnixStream,
    pub scratch_dir: PathBuf,
}

fn rlimit(resource: libc::__rlimit_resource_t, value: u64) -> io::Result<()> {
    let lim = libc::rlimit { rlim_cur: value as libc::rlim_t, rlim_max: value as libc::rlim_t };
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

/// Starts `program` confined by `policy`: resource limits, a private working
/// directory, no environment, and exactly one inherited descriptor besides
/// stdio (the channel, as fd 3). The program is expected to install its
/// syscall filter before running app code.
pub fn launch(program: &Path, args: &[String], policy: &SandboxPolicy, scratch_dir: &Path) -> Result<LaunchedProcess, SandboxError> {
    fs::create_dir_all(scratch_dir)?;
    let stderr = File::create(scratch_dir.join("stderr.log"))?;
    let (hub_end, spoke_end) = UnixStream::pair()?;
    let child_fd = spoke_end.into_raw_fd();
    let limits = policy.clone();
    let mut cmd = Command::new(program);
    cmd.args(args)
        .env_clear()
        .current_dir(scratch_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::from(stderr));
    unsafe {
        cmd.pre_exec(move || {
            if child_fd == CHANNEL_FD {
                if libc::fcntl(CHANNEL_FD, libc::F_SETFD, 0) != 0 {
                    return Err(io::Error::last_os_error());
                }
            } else if libc::dup2(child_fd, CHANNEL_FD) < 0 {
                return Err(io::Error::last_os_error());
            }
            if libc::syscall(libc::SYS_close_range, CHANNEL_FD as u32 + 1, u32::MAX, 0u32) != 0 {
                return Err(io::Error::last_os_error());
            }
            rlimit(libc::RLIMIT_CPU, limits.cpu_seconds)?;
            rlimit(libc::RLIMIT_AS, limits.max_virtual_memory_bytes)?;
            rlimit(libc::RLIMIT_FSIZE, limits.max_created_file_bytes)?;
            if libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL) != 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        });
    }
    let spawned = cmd.spawn();
    unsafe { libc::close(child_fd) };
    let child = spawned?;
    Ok(LaunchedProcess { child, channel: hub_end, scratch_dir: scratch_dir.to_path_buf() })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorAudit {
    pub descriptors: Vec<(i32, String)>,
    pub sockets: usize,
    pub pipes: usize,
    pub listening: usize,
}

impl DescriptorAudit {
    pub fn ipc_channels(&self) -> usize {
        self.sockets + self.pipes
    }
}

fn listening_inodes(pid: u32) -> HashSet<String> {
    let mut out = HashSet::new();
    if let Ok(text) = fs::read_to_string(format!("/proc/{pid}/net/unix")) {
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split_whitespace().collect();
            // Flags column carries __SO_ACCEPTCON (0x10000) for listeners.
            if cols.len() >= 7 && u32::from_str_radix(cols[3], 16).is_ok_and(|f| f & 0x10000 != 0) {
                out.insert(cols[6].to_string());
            }
        }
    }
    for table in ["tcp", "tcp6"] {
        if let Ok(text) = fs::read_to_string(format!("/proc/{pid}/net/{table}")) {
            for line in text.lines().skip(1) {
                let cols: Vec<&str> = line.split_whitespace().collect();
                if cols.len() >= 10 && cols[3] == "0A" {
                    out.insert(cols[9].to_string());
                }
            }
        }
    }
    out
}

/// Lists a process's open descriptors and classifies the IPC-capable ones.
pub fn audit_descriptors(pid: u32) -> io::Result<DescriptorAudit> {
    let listening = listening_inodes(pid);
    let mut audit = DescriptorAudit::default();
    for entry in fs::read_dir(format!("/proc/{pid}/fd"))? {
        let entry = entry?;
        let Ok(fd) = entry.file_name().to_string_lossy().parse::<i32>() else { continue };
        let target = fs::read_link(entry.path()).map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(inode) = target.strip_prefix("socket:[").and_then(|s| s.strip_suffix(']')) {
            audit.sockets += 1;
            if listening.contains(inode) {
                audit.listening += 1;
            }
        } else if target.starts_with("pipe:[") {
            audit.pipes += 1;
        }
        audit.descriptors.push((fd, target));
    }
    audit.descriptors.sort();
    Ok(audit)
}

/// Raw descriptor of a stream, for diagnostics.
pub fn raw(stream: &UnixStream) -> RawFd {
    stream.as_raw_fd()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allowlist_excludes_file_and_network_calls() {
        let names: Vec<&str> = allowed_syscalls().iter().map(|(n, _)| *n).collect();
        for denied in ["open", "openat", "socket", "connect", "execve", "fork", "clone"] {
            assert!(!names.contains(&denied), "{denied}");
        }
        assert!(names.contains(&"exit") && names.contains(&"rt_sigreturn") && names.contains(&"read"));
    }

    #[test]
    fn audit_sees_own_socket() {
        let (_a, _b) = UnixStream::pair().unwrap();
        let audit = audit_descriptors(std::process::id()).unwrap();
        assert!(audit.sockets >= 2);
    }
}
