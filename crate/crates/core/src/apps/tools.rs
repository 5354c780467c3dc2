//! Built-in tool handlers over fixture state.
//!
//! Every handler is a pure function of its arguments and the fixture state,
//! so a direct call gives the ground truth the attack predicates compare
//! against. Results are flat objects of string values.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::{json, Map, Value};

const MAILBOX: &str = include_str!("../../apps/fixtures/mailbox.json");
const DRIVE: &str = include_str!("../../apps/fixtures/drive.json");
const USERDB: &str = include_str!("../../apps/fixtures/userdb.json");
const SERVICES: &str = include_str!("../../apps/fixtures/services.json");

#[derive(Debug, Clone, Deserialize)]
pub struct Email {
    pub id: String,
    pub from: String,
    pub subject: String,
    pub body: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DriveFile {
    pub filename: String,
    pub link: String,
    pub content: String,
}

#[derive(Debug, Clone, Deserialize)]
struct User {
    name: String,
    user_id: String,
    email: String,
    location_id: String,
    food: String,
}

#[derive(Debug, Clone, Deserialize)]
struct Mailbox {
    inbox: Vec<Email>,
}

#[derive(Debug, Clone, Deserialize)]
struct Drive {
    files: Vec<DriveFile>,
}

#[derive(Debug, Clone, Deserialize)]
struct UserDb {
    users: Vec<User>,
    locations: BTreeMap<String, String>,
    weather: BTreeMap<String, String>,
    clock: BTreeMap<String, String>,
    calories: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
struct Services {
    fares: BTreeMap<String, BTreeMap<String, String>>,
    flights: BTreeMap<String, String>,
    conditions: BTreeMap<String, String>,
    advice: String,
}

pub type ToolOutput = Result<Map<String, Value>, String>;

/// Fixture state for all built-in apps. Each spoke holds its own copy.
#[derive(Debug, Clone)]
pub struct World {
    inbox: Vec<Email>,
    sent: Vec<Email>,
    files: Vec<DriveFile>,
    userdb: UserDb,
    services: Services,
    counter: u64,
}

fn arg<'a>(args: &'a Map<String, Value>, name: &str) -> Result<&'a str, String> {
    args.get(name).and_then(Value::as_str).ok_or_else(|| format!("missing argument {name}"))
}

fn obj(value: Value) -> ToolOutput {
    Ok(value.as_object().cloned().expect("object literal"))
}

impl Default for World {
    fn default() -> Self {
        Self::builtin()
    }
}

impl World {
    pub fn builtin() -> Self {
        let parse = |text: &str, what: &str| -> serde_json::Value {
            serde_json::from_str(text).unwrap_or_else(|e| panic!("bundled {what} fixture: {e}"))
        };
        let mailbox: Mailbox = serde_json::from_value(parse(MAILBOX, "mailbox")).expect("mailbox shape");
        let drive: Drive = serde_json::from_value(parse(DRIVE, "drive")).expect("drive shape");
        World {
            inbox: mailbox.inbox,
            sent: Vec::new(),
            files: drive.files,
            userdb: serde_json::from_value(parse(USERDB, "userdb")).expect("userdb shape"),
            services: serde_json::from_value(parse(SERVICES, "services")).expect("services shape"),
            counter: 0,
        }
    }

    pub fn drive_files(&self) -> &[DriveFile] {
        &self.files
    }

    pub fn inbox(&self) -> &[Email] {
        &self.inbox
    }

    pub fn sent(&self) -> &[Email] {
        &self.sent
    }

    fn next_id(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}-{}", self.counter)
    }

    fn user(&self, args: &Map<String, Value>) -> Result<&User, String> {
        let id = arg(args, "user_id")?;
        self.userdb.users.iter().find(|u| u.user_id == id).ok_or_else(|| format!("no user {id}"))
    }

    fn lookup(table: &BTreeMap<String, String>, key: &str) -> Result<String, String> {
        table
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.clone())
            .ok_or_else(|| format!("unknown {key}"))
    }

    /// Runs the handler bound to `handler`.
    pub fn call(&mut self, handler: &str, args: &Map<String, Value>) -> ToolOutput {
        if let Some(letter) = handler.strip_prefix("type_").filter(|l| l.len() == 1) {
            return obj(json!({ "typed": letter }));
        }
        match handler {
            "type_letter" => {
                let letter = arg(args, "letter")?;
                if letter.chars().count() != 1 {
                    return Err("letter must be a single character".into());
                }
                obj(json!({ "typed": letter }))
            }
            "metro_fare" | "quick_fare" => {
                arg(args, "pickup")?;
                arg(args, "dropoff")?;
                let fare = &self.services.fares[handler];
                obj(json!({ "service": fare["service"], "fare": fare["fare"] }))
            }
            "book_metro_ride" | "book_quick_ride" => {
                arg(args, "pickup")?;
                arg(args, "dropoff")?;
                obj(json!({ "booking": self.next_id("ride") }))
            }
            "read_latest_email" => {
                let e = self.inbox.last().ok_or("inbox is empty")?;
                obj(json!({ "id": e.id, "from": e.from, "subject": e.subject, "body": e.body }))
            }
            "send_email" => {
                let email = Email {
                    id: self.next_id("s"),
                    from: "me@mail.example".into(),
                    subject: arg(args, "subject")?.to_string(),
                    body: arg(args, "body")?.to_string(),
                };
                arg(args, "to")?;
                let id = email.id.clone();
                self.sent.push(email);
                obj(json!({ "sent_id": id }))
            }
            "delete_email" => {
                let id = arg(args, "id")?;
                let before = self.inbox.len() + self.sent.len();
                self.inbox.retain(|e| e.id != id);
                self.sent.retain(|e| e.id != id);
                if before == self.inbox.len() + self.sent.len() {
                    return Err(format!("no message {id}"));
                }
                obj(json!({ "deleted": id }))
            }
            "get_file" => {
                let name = arg(args, "filename")?;
                let f = self
                    .files
                    .iter()
                    .find(|f| f.filename.eq_ignore_ascii_case(name))
                    .ok_or_else(|| format!("no document {name}"))?;
                obj(json!({ "filename": f.filename, "link": f.link, "content": f.content }))
            }
            "list_files" => {
                let names: Vec<&str> = self.files.iter().map(|f| f.filename.as_str()).collect();
                obj(json!({ "files": names.join(", ") }))
            }
            "delete_file" => {
                let name = arg(args, "filename")?;
                let before = self.files.len();
                self.files.retain(|f| f.filename != name);
                if before == self.files.len() {
                    return Err(format!("no document {name}"));
                }
                obj(json!({ "deleted": name }))
            }
            "log_symptoms" => {
                arg(args, "symptoms")?;
                obj(json!({ "logged": "yes", "advice": self.services.advice }))
            }
            "search_flights" => {
                let destination = arg(args, "destination")?;
                if arg(args, "passport_number")?.is_empty() {
                    return Err("passport number required".into());
                }
                let flights = self.services.flights.get(&destination.to_lowercase()).unwrap_or(&self.services.flights["default"]);
                obj(json!({ "destination": destination, "flights": flights }))
            }
            "book_flight" => {
                arg(args, "flight")?;
                arg(args, "passport_number")?;
                obj(json!({ "booking": self.next_id("trip") }))
            }
            "lookup_conditions" => {
                let symptom = arg(args, "symptom")?.to_lowercase();
                let conditions = Self::lookup(&self.services.conditions, &symptom)?;
                obj(json!({ "symptom": symptom, "conditions": conditions }))
            }
            "find_users_by_name" => {
                let name = arg(args, "name")?;
                let u = self
                    .userdb
                    .users
                    .iter()
                    .find(|u| u.name.eq_ignore_ascii_case(name))
                    .ok_or_else(|| format!("no user named {name}"))?;
                obj(json!({ "user_id": u.user_id }))
            }
            "get_user_email" => obj(json!({ "email": self.user(args)?.email })),
            "get_user_location" => obj(json!({ "location_id": self.user(args)?.location_id })),
            "get_user_favorite_food" => obj(json!({ "food": self.user(args)?.food })),
            "get_city_for_location" => {
                let id = arg(args, "location_id")?;
                obj(json!({ "city": Self::lookup(&self.userdb.locations, id)? }))
            }
            "get_weather" => obj(json!({ "forecast": Self::lookup(&self.userdb.weather, arg(args, "city")?)? })),
            "get_current_time" => obj(json!({ "time": Self::lookup(&self.userdb.clock, arg(args, "city")?)? })),
            "get_food_calories" => obj(json!({ "calories": Self::lookup(&self.userdb.calories, arg(args, "food")?)? })),
            other => Err(format!("no handler {other}")),
        }
    }
}
