//! Text reports: correctness tables, attack verdicts, backend-call counts
//! and the per-phase timing breakdown. Everything except the timing table is
//! a pure function of the seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{run_attack, run_benchmark, AttackCase, AttackVerdict, BenchReport, CaseTranscript, HarnessConfig, Mode, Suite};
use crate::trace::{principal_class, CallCategory, Trace};

/// Backend time and call counts per (principal class, category).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingTable {
    pub cells: BTreeMap<(String, CallCategory), (f64, usize)>,
    pub wall_seconds: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub principal: String,
    pub planning: f64,
    pub execution: f64,
    pub memory: f64,
}

impl TimingRow {
    pub fn total(&self) -> f64 {
        self.planning + self.execution + self.memory
    }
}

impl TimingTable {
    pub fn add(&mut self, trace: &Trace, wall_seconds: f64, queries: usize) {
        for p in &trace.prompts {
            let cell = self
                .cells
                .entry((principal_class(&p.principal).to_string(), CallCategory::of_phase(&p.phase)))
                .or_default();
            cell.0 += p.micros as f64 / 1e6;
            cell.1 += 1;
        }
        self.wall_seconds += wall_seconds;
        self.queries += queries;
    }

    /// Mean seconds per query for each principal class.
    pub fn rows(&self) -> Vec<TimingRow> {
        let per = self.queries.max(1) as f64;
        let mut rows: BTreeMap<String, TimingRow> = BTreeMap::new();
        for ((principal, category), (secs, _)) in &self.cells {
            let row = rows.entry(principal.clone()).or_insert_with(|| TimingRow {
                principal: principal.clone(),
                planning: 0.0,
                execution: 0.0,
                memory: 0.0,
            });
            let v = secs / per;
            match category {
                CallCategory::Planning => row.planning += v,
                CallCategory::Execution => row.execution += v,
                CallCategory::Memory => row.memory += v,
            }
        }
        rows.into_values().collect()
    }

    pub fn calls(&self, category: CallCategory) -> usize {
        self.cells.iter().filter(|((_, c), _)| *c == category).map(|(_, (_, n))| n).sum()
    }

    pub fn wall_per_query(&self) -> f64 {
        self.wall_seconds / self.queries.max(1) as f64
    }
}

pub fn render_bench(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "## bench {} mode={} cases={} steps={:.2} overall={:.2}",
        report.suite.name(),
        report.mode.name(),
        report.rows.len(),
        report.steps_score,
        report.overall_score
    );
    let _ = writeln!(out, "{:<26} {:>4} {:>5} {:>7} {:>6} {:>6}  observed_steps | output", "case", "apps", "steps", "overall", "dist", "score");
    for r in &report.rows {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<26} {:>4} {:>5} {:>7} {:>6} {:>6}  {} | {}",
            r.id,
            r.apps_installed,
            if r.step_correct { "ok" } else { "FAIL" },
            if r.overall_correct { "ok" } else { "FAIL" },
            num(r.edit_distance),
            num(r.string_score),
            r.observed_steps.join(","),
            r.error.as_deref().unwrap_or(&r.output).replace('\n', " ")
        );
    }
    out
}

pub fn render_attacks(verdicts: &[AttackVerdict]) -> String {
    let mut out = String::from("## attacks\n");
    let _ = writeln!(out, "{:<5} {:<9} {:<9}  evidence", "case", "mode", "succeeded");
    for v in verdicts {
        let _ = writeln!(out, "{:<5} {:<9} {:<9}  {}", v.case_id.name(), v.mode.name(), v.attack_succeeded, v.evidence.first().cloned().unwrap_or_default());
        for e in v.evidence.iter().skip(1) {
            let _ = writeln!(out, "{:<25}  {e}", "");
        }
        if let Some(f) = &v.fare {
            let _ = writeln!(out, "{:<25}  benign fare raw={} reported={}", "", f.raw, f.reported.as_deref().unwrap_or("-"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub case: String,
    pub isolated_planning: usize,
    pub shared_planning: usize,
    pub isolated_execution: usize,
    pub shared_execution: usize,
    pub isolated_memory: usize,
    pub shared_memory: usize,
}

impl OverheadRow {
    pub fn extra_planning(&self) -> i64 {
        self.isolated_planning as i64 - self.shared_planning as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    pub suite: Suite,
    pub rows: Vec<OverheadRow>,
    pub isolated: TimingTable,
    pub shared: TimingTable,
}

fn count(calls: &[(String, CallCategory, usize)], category: CallCategory) -> usize {
    calls.iter().filter(|(_, c, _)| *c == category).map(|(_, _, n)| n).sum()
}

impl OverheadReport {
    pub fn from_reports(isolated: &BenchReport, shared: &BenchReport) -> Self {
        let rows = isolated
            .rows
            .iter()
            .zip(&shared.rows)
            .map(|(i, s)| OverheadRow {
                case: i.id.clone(),
                isolated_planning: count(&i.calls, CallCategory::Planning),
                shared_planning: count(&s.calls, CallCategory::Planning),
                isolated_execution: count(&i.calls, CallCategory::Execution),
                shared_execution: count(&s.calls, CallCategory::Execution),
                isolated_memory: count(&i.calls, CallCategory::Memory),
                shared_memory: count(&s.calls, CallCategory::Memory),
            })
            .collect();
        OverheadReport { suite: isolated.suite, rows, isolated: isolated.timing.clone(), shared: shared.timing.clone() }
    }
}

/// Runs `suite` in both modes and compares backend usage.
pub fn measure_overhead(suite: Suite, cfg: &HarnessConfig) -> OverheadReport {
    let isolated = run_benchmark(suite, Mode::Isolated, cfg);
    let shared = run_benchmark(suite, Mode::Shared, cfg);
    OverheadReport::from_reports(&isolated, &shared)
}

/// Backend-call counts per case. Deterministic.
pub fn render_call_counts(report: &OverheadReport) -> String {
    let mut out = format!("## backend calls {} (isolated vs shared)\n", report.suite.name());
    let _ = writeln!(out, "{:<26} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>6}", "case", "plan.iso", "plan.sh", "exec.iso", "exec.sh", "mem.iso", "mem.sh", "extra");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<26} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>+6}",
            r.case,
            r.isolated_planning,
            r.shared_planning,
            r.isolated_execution,
            r.shared_execution,
            r.isolated_memory,
            r.shared_memory,
            r.extra_planning()
        );
    }
    out
}

/// Per-phase backend time per query, one block per mode, followed by the
/// wall-clock comparison.
pub fn render_overhead(report: &OverheadReport) -> String {
    let mut out = format!("## query resolution time {} (seconds per query)\n", report.suite.name());
    let _ = writeln!(out, "{:<9} {:<9} {:>10} {:>10} {:>10} {:>10}", "mode", "principal", "planning", "execution", "memory", "total");
    for (mode, table) in [(Mode::Isolated, &report.isolated), (Mode::Shared, &report.shared)] {
        let rows = table.rows();
        for r in &rows {
            let _ = writeln!(
                out,
                "{:<9} {:<9} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                mode.name(),
                r.principal,
                r.planning,
                r.execution,
                r.memory,
                r.total()
            );
        }
        let (p, e, m) = rows.iter().fold((0.0, 0.0, 0.0), |acc, r| (acc.0 + r.planning, acc.1 + r.execution, acc.2 + r.memory));
        let _ = writeln!(out, "{:<9} {:<9} {:>10.6} {:>10.6} {:>10.6} {:>10.6}", mode.name(), "all", p, e, m, p + e + m);
    }
    let (iso, sh) = (report.isolated.wall_per_query(), report.shared.wall_per_query());
    let ratio = if sh > 0.0 { (iso - sh) / sh * 100.0 } else { 0.0 };
    let _ = writeln!(out, "wall per query: isolated {iso:.4} s, shared {sh:.4} s, overhead {ratio:+.1}%");
    out
}

#[derive(Serialize)]
struct AttackTranscript<'a> {
    case: &'a str,
    mode: Mode,
    responses: &'a [String],
    trace: &'a Trace,
}

/// Output of a complete run: every suite and attack in both modes.
#[derive(Debug, Clone)]
pub struct FullRun {
    pub benches: Vec<BenchReport>,
    pub attacks: Vec<AttackVerdict>,
    pub overhead: OverheadReport,
    /// Correctness tables, verdicts and call counts.
    pub report: String,
    /// One JSON object per case and mode with every observation.
    pub transcript: String,
    /// Wall-clock dependent; excluded from determinism checks.
    pub timing: String,
}

pub fn run_all(cfg: &HarnessConfig) -> FullRun {
    let mut benches = Vec::new();
    for mode in Mode::ALL {
        for suite in Suite::ALL {
            benches.push(run_benchmark(suite, mode, cfg));
        }
    }
    let mut attacks = Vec::new();
    for case in AttackCase::ALL {
        for mode in Mode::ALL {
            attacks.push(run_attack(case, mode, cfg));
        }
    }
    let find = |suite: Suite, mode: Mode| benches.iter().find(|b| b.suite == suite && b.mode == mode).expect("suite ran");
    let overhead = OverheadReport::from_reports(find(Suite::SingleApp, Mode::Isolated), find(Suite::SingleApp, Mode::Shared));

    let mut report = format!("# harness report seed={}\n", cfg.seed);
    for b in &benches {
        report.push_str(&render_bench(b));
    }
    report.push_str(&render_attacks(&attacks));
    report.push_str(&render_call_counts(&overhead));

    let mut transcript = String::new();
    for b in &benches {
        for t in &b.transcripts {
            transcript.push_str(&serde_json::to_string::<CaseTranscript>(t).expect("transcript serializes"));
            transcript.push('\n');
        }
    }
    for v in &attacks {
        let t = AttackTranscript { case: v.case_id.name(), mode: v.mode, responses: &v.responses, trace: &v.trace };
        transcript.push_str(&serde_json::to_string(&t).expect("transcript serializes"));
        transcript.push('\n');
    }

    let mut timing = String::new();
    for suite in Suite::ALL {
        timing.push_str(&render_overhead(&OverheadReport::from_reports(find(suite, Mode::Isolated), find(suite, Mode::Shared))));
    }
    FullRun { benches, attacks, overhead, report, transcript, timing }
}
