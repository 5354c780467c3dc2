//! Functionality benchmark suites: query, installed apps, expected tool
//! trace and expected output for every case.

use serde::{Deserialize, Serialize};

use super::{HarnessConfig, Mode, Runtime};
use crate::hub::ScriptedUser;
use crate::trace::{CallCategory, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    SingleApp,
    MultipleApps,
    MultiAppCollab,
    NoApps,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::SingleApp, Suite::MultipleApps, Suite::MultiAppCollab, Suite::NoApps];

    pub fn name(self) -> &'static str {
        match self {
            Suite::SingleApp => "single_app",
            Suite::MultipleApps => "multiple_apps",
            Suite::MultiAppCollab => "multi_app_collab",
            Suite::NoApps => "no_apps",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    Exact(String),
    ContainsAll(Vec<String>),
    /// Normalized edit distance at most `NO_APPS_MAX_DISTANCE`.
    Similar(String),
}

/// Acceptance threshold for similarity-scored outputs.
pub const NO_APPS_MAX_DISTANCE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub installed: Vec<String>,
    pub query: String,
    pub expected_steps: Vec<String>,
    pub ordered: bool,
    pub expect: Expect,
}

fn case(id: &str, installed: &[&str], query: &str, steps: &[&str], expect: Expect) -> Case {
    Case {
        id: id.into(),
        installed: installed.iter().map(|s| s.to_string()).collect(),
        query: query.into(),
        expected_steps: steps.iter().map(|s| s.to_string()).collect(),
        ordered: true,
        expect,
    }
}

fn exact(s: &str) -> Expect {
    Expect::Exact(s.into())
}

fn contains(items: &[&str]) -> Expect {
    Expect::ContainsAll(items.iter().map(|s| s.to_string()).collect())
}

fn letters(range: std::ops::RangeInclusive<char>) -> Vec<String> {
    range.map(|c| format!("type_{c}")).collect()
}

const MIXED: &[&str] = &["rel_users", "typewriter", "metro_hail", "symptom_solver", "health_companion"];

pub fn cases(suite: Suite) -> Vec<Case> {
    match suite {
        Suite::SingleApp => vec![
            case(
                "relational_alice_email",
                &["rel_users"],
                "what is alice's email address?",
                &["find_users_by_name", "get_user_email"],
                contains(&["alice@gmail.com"]),
            ),
            case(
                "relational_charlie_email",
                &["rel_users"],
                "what is charlie's email address?",
                &["find_users_by_name", "get_user_email"],
                contains(&["charlie@yahoo.com"]),
            ),
            case("typewriter_abc", &["typewriter"], "type 'abc'", &["type_letter"; 3], exact("abc")),
            case("typewriter_hello", &["typewriter"], "type 'hello'", &["type_letter"; 5], exact("hello")),
            case("letter_q", &["type_q"], "type 'q'", &["type_q"], exact("q")),
            case(
                "ride_fare",
                &["metro_hail"],
                "how much is a ride from downtown to the airport?",
                &["metro_fare"],
                exact("Metro Hail: $25.00"),
            ),
            case(
                "symptom_causes",
                &["symptom_solver"],
                "what are the causes of a headache?",
                &["lookup_conditions"],
                contains(&["tension headache, dehydration, eye strain"]),
            ),
            case(
                "symptom_diary",
                &["health_companion"],
                "My symptoms are a sore throat.",
                &["log_symptoms"],
                contains(&["Rest, drink fluids"]),
            ),
        ],
        Suite::MultipleApps => {
            let a_m = letters('a'..='m');
            let n_z = letters('n'..='z');
            let a_m: Vec<&str> = a_m.iter().map(String::as_str).collect();
            let n_z: Vec<&str> = n_z.iter().map(String::as_str).collect();
            vec![
                case("letters_mad", &a_m, "type 'mad'", &["type_m", "type_a", "type_d"], exact("mad")),
                case("letters_face", &a_m, "type 'face'", &["type_f", "type_a", "type_c", "type_e"], exact("face")),
                case("letters_zoo", &n_z, "type 'zoo'", &["type_z", "type_o", "type_o"], exact("zoo")),
                case("letters_two_apps", &["type_h", "type_i"], "type 'hi'", &["type_h", "type_i"], exact("hi")),
                case(
                    "mixed_email",
                    MIXED,
                    "what is bob's email address?",
                    &["find_users_by_name", "get_user_email"],
                    contains(&["bob@gmail.com"]),
                ),
                case("mixed_typing", MIXED, "type 'hi'", &["type_letter", "type_letter"], exact("hi")),
                case(
                    "mixed_causes",
                    MIXED,
                    "what are the causes of a cough?",
                    &["lookup_conditions"],
                    contains(&["common cold, allergies, bronchitis"]),
                ),
                case(
                    "mixed_fare",
                    MIXED,
                    "price a ride from the station to the museum",
                    &["metro_fare"],
                    exact("Metro Hail: $25.00"),
                ),
            ]
        }
        Suite::MultiAppCollab => vec![
            case(
                "city_of_bob",
                &["rel_users", "rel_locations"],
                "what city does bob live in?",
                &["find_users_by_name", "get_user_location", "get_city_for_location"],
                contains(&["bob lives in Tokyo."]),
            ),
            case(
                "weather_for_alice",
                &["rel_users", "rel_locations", "rel_weather"],
                "what is the weather where alice lives?",
                &["find_users_by_name", "get_user_location", "get_city_for_location", "get_weather"],
                contains(&["sunny, 21C"]),
            ),
            case(
                "time_for_charlie",
                &["rel_users", "rel_locations", "rel_clock"],
                "what time is it where charlie lives?",
                &["find_users_by_name", "get_user_location", "get_city_for_location", "get_current_time"],
                contains(&["08:00"]),
            ),
            case(
                "calories_for_dana",
                &["rel_users", "rel_foods"],
                "how many calories are in dana's favorite food?",
                &["find_users_by_name", "get_user_favorite_food", "get_food_calories"],
                contains(&["pasta, has 221 calories"]),
            ),
            case(
                "five_apps",
                &["rel_users", "rel_locations", "rel_weather", "rel_clock", "rel_foods"],
                "what is the weather and local time where bob lives?",
                &["find_users_by_name", "get_user_location", "get_city_for_location", "get_weather", "get_current_time"],
                contains(&["rainy, 17C", "21:00"]),
            ),
            case(
                "send_report",
                &["gmail_like", "gdrive_like"],
                "send the quarterly report to Bob",
                &["get_file", "send_email"],
                exact("Sent the quarterly report to Bob."),
            ),
        ],
        Suite::NoApps => vec![
            case("capital_france", &[], "what is the capital of France?", &[], Expect::Similar("The capital of France is Paris.".into())),
            case("capital_japan", &[], "what is the capital of Japan?", &[], Expect::Similar("The capital of Japan is Tokyo.".into())),
            case(
                "extract_two",
                &[],
                "extract the email addresses from: reach alice@gmail.com or ops@corp.example today",
                &[],
                Expect::Similar("alice@gmail.com, ops@corp.example".into()),
            ),
            case(
                "extract_list",
                &[],
                "please extract every address in: kim@gmail.com, carol@uni.edu",
                &[],
                Expect::Similar("kim@gmail.com, carol@uni.edu".into()),
            ),
            case(
                "poem",
                &[],
                "write a poem about the sea",
                &[],
                Expect::Similar("A poem about sea: the sea hums in silver light, and dreams drift softly into night.".into()),
            ),
        ],
    }
}

/// Levenshtein distance over characters divided by the longer length.
pub fn edit_distance(a: &str, b: &str) -> f64 {
    1.0 - strsim::normalized_levenshtein(a, b)
}

/// Token-overlap F1 between whitespace-separated lowercase tokens.
pub fn string_score(output: &str, reference: &str) -> f64 {
    let tokens = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_lowercase).collect() };
    let (out, reference) = (tokens(output), tokens(reference));
    if out.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let mut pool = reference.clone();
    let mut common = 0usize;
    for t in &out {
        if let Some(i) = pool.iter().position(|r| r == t) {
            pool.swap_remove(i);
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / out.len() as f64;
    let recall = common as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub id: String,
    pub query: String,
    pub apps_installed: usize,
    pub expected_steps: Vec<String>,
    pub observed_steps: Vec<String>,
    pub step_correct: bool,
    pub output: String,
    pub overall_correct: bool,
    pub edit_distance: Option<f64>,
    pub string_score: Option<f64>,
    pub error: Option<String>,
    /// Backend calls as (principal class, category, count).
    pub calls: Vec<(String, CallCategory, usize)>,
}

/// Everything observed while one case ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTranscript {
    pub suite: String,
    pub mode: Mode,
    pub case: String,
    pub responses: Vec<String>,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: Suite,
    pub mode: Mode,
    pub rows: Vec<CaseRow>,
    pub steps_score: f64,
    pub overall_score: f64,
    #[serde(skip)]
    pub timing: super::TimingTable,
    #[serde(skip)]
    pub transcripts: Vec<CaseTranscript>,
}

impl BenchReport {
    /// Aggregates recomputed from the rows.
    pub fn scores(rows: &[CaseRow]) -> (f64, f64) {
        if rows.is_empty() {
            return (1.0, 1.0);
        }
        let n = rows.len() as f64;
        let steps = rows.iter().filter(|r| r.step_correct).count() as f64 / n;
        let overall = rows.iter().filter(|r| r.overall_correct).count() as f64 / n;
        (steps, overall)
    }
}

fn steps_match(case: &Case, observed: &[String]) -> bool {
    if case.ordered {
        return observed == case.expected_steps.as_slice();
    }
    let mut a = observed.to_vec();
    let mut b = case.expected_steps.clone();
    a.sort();
    b.sort();
    a == b
}

fn output_match(expect: &Expect, output: &str) -> (bool, Option<f64>, Option<f64>) {
    match expect {
        Expect::Exact(s) => (output == s, None, None),
        Expect::ContainsAll(items) => (items.iter().all(|i| output.contains(i.as_str())), None, None),
        Expect::Similar(reference) => {
            let d = edit_distance(output, reference);
            (d <= NO_APPS_MAX_DISTANCE, Some(d), Some(string_score(output, reference)))
        }
    }
}

/// Runs every case of `suite` in a fresh runtime. Failures become rows.
pub fn run_benchmark(suite: Suite, mode: Mode, cfg: &HarnessConfig) -> BenchReport {
    let mut rows = Vec::new();
    let mut transcripts = Vec::new();
    let mut timing = super::TimingTable::default();
    for case in cases(suite) {
        let installed: Vec<&str> = case.installed.iter().map(String::as_str).collect();
        let (result, trace, wall) = match Runtime::start(mode, &installed, ScriptedUser::approving(), cfg) {
            Ok(mut rt) => {
                let (result, wall) = rt.timed_query(&case.query);
                (result, rt.trace().clone(), wall)
            }
            Err(e) => (Err(e), Trace::default(), 0.0),
        };
        timing.add(&trace, wall, 1);
        let observed = trace.tools_for_query(0);
        let step_correct = steps_match(&case, &observed);
        let (output, error) = match result {
            Ok(text) => (text, None),
            Err(e) => (String::new(), Some(e)),
        };
        let (output_ok, dist, score) = output_match(&case.expect, &output);
        rows.push(CaseRow {
            id: case.id.clone(),
            query: case.query.clone(),
            apps_installed: case.installed.len(),
            expected_steps: case.expected_steps.clone(),
            observed_steps: observed,
            step_correct,
            overall_correct: error.is_none() && step_correct && output_ok,
            output: output.clone(),
            edit_distance: dist,
            string_score: score,
            error,
            calls: trace.call_counts(None),
        });
        transcripts.push(CaseTranscript { suite: suite.name().into(), mode, case: case.id, responses: vec![output], trace });
    }
    let (steps_score, overall_score) = BenchReport::scores(&rows);
    BenchReport { suite, mode, rows, steps_score, overall_score, timing, transcripts }
}
