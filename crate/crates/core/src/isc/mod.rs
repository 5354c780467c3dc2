//! Inter-spoke communication.
//!
//! Spokes never talk to each other directly. A spoke probes the hub for a
//! functionality, receives the request/response formats tagged with an
//! ephemeral counterparty identifier, and then exchanges typed messages that
//! the hub relays after validation and user consent.

mod validate;
mod wire;

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use validate::{check_value, validate_message, validate_payload, Malformed, ValidationRules, DEFAULT_STRING_LIMIT};
pub use wire::{decode, encode, WireError, TAG_FORMAT_RESPONSE, TAG_PROBE, TAG_REQUEST, TAG_RESPONSE};

/// Ephemeral spoke identifier: 128 random bits rendered as lowercase hex.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SpokeSid(String);

impl SpokeSid {
    pub fn mint<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        SpokeSid(hex::encode(bytes))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let ok = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        ok.then(|| SpokeSid(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SpokeSid {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        SpokeSid::parse(&value).ok_or_else(|| format!("invalid spoke sid {value:?}"))
    }
}

impl From<SpokeSid> for String {
    fn from(sid: SpokeSid) -> Self {
        sid.0
    }
}

impl fmt::Display for SpokeSid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for SpokeSid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpokeSid({})", self.0)
    }
}

/// The closed set of value types a collaboration message may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Date,
    Integer,
    Url,
    BoundedString,
}

impl FieldType {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldType::Date => "date",
            FieldType::Integer => "integer",
            FieldType::Url => "url",
            FieldType::BoundedString => "bounded_string",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "date" => Some(FieldType::Date),
            "integer" => Some(FieldType::Integer),
            "url" => Some(FieldType::Url),
            "bounded_string" => Some(FieldType::BoundedString),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: FieldType,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, ty: FieldType) -> Self {
        FieldSpec { name: name.into(), ty }
    }
}

/// Named, schema-typed capability an app offers for collaboration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalityDescriptor {
    pub name: String,
    pub request_fields: Vec<FieldSpec>,
    pub response_fields: Vec<FieldSpec>,
}

impl FunctionalityDescriptor {
    pub fn new(name: &str, request: &[(&str, FieldType)], response: &[(&str, FieldType)]) -> Self {
        let fields = |specs: &[(&str, FieldType)]| {
            specs.iter().map(|(n, t)| FieldSpec::new(*n, *t)).collect()
        };
        FunctionalityDescriptor {
            name: name.to_string(),
            request_fields: fields(request),
            response_fields: fields(response),
        }
    }
}

/// Lowercase snake-case token: `[a-z][a-z0-9_]*`.
pub fn is_snake_token(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(b'a'..=b'z'))
        && bytes.all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_'))
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("functionality {0:?} is already defined")]
    Duplicate(String),
    #[error("functionality name {0:?} is not a snake-case token")]
    BadName(String),
}

/// Every functionality known to the store, installed or not.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Catalog {
    descriptors: BTreeMap<String, FunctionalityDescriptor>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, descriptor: FunctionalityDescriptor) -> Result<(), CatalogError> {
        if !is_snake_token(&descriptor.name) {
            return Err(CatalogError::BadName(descriptor.name));
        }
        if self.descriptors.contains_key(&descriptor.name) {
            return Err(CatalogError::Duplicate(descriptor.name));
        }
        self.descriptors.insert(descriptor.name.clone(), descriptor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FunctionalityDescriptor> {
        self.descriptors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.descriptors.contains_key(name)
    }

    /// Broadcast list handed to spokes: names only, no schemas, no providers,
    /// no installation status.
    pub fn list_functionalities(&self) -> Vec<String> {
        self.descriptors.keys().cloned().collect()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &FunctionalityDescriptor> {
        self.descriptors.values()
    }
}

/// Ordered `(field, value)` pairs. Values travel as strings and are typed by
/// the descriptor they are validated against.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload(pub Vec<(String, String)>);

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, field: &str, value: impl Into<String>) -> Self {
        self.0.push((field.to_string(), value.into()));
        self
    }

    pub fn get(&self, field: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == field).map(|(_, v)| v.as_str())
    }

    pub fn to_json(&self) -> String {
        let pairs: Vec<[&str; 2]> = self.0.iter().map(|(k, v)| [k.as_str(), v.as_str()]).collect();
        serde_json::to_string(&pairs).expect("string pairs serialize")
    }

    pub fn from_json(text: &str) -> Option<Self> {
        let pairs: Vec<(String, String)> = serde_json::from_str(text).ok()?;
        Some(Payload(pairs))
    }
}

pub(crate) fn format_to_json(fields: &[FieldSpec]) -> String {
    let pairs: Vec<[&str; 2]> = fields.iter().map(|f| [f.name.as_str(), f.ty.as_str()]).collect();
    serde_json::to_string(&pairs).expect("string pairs serialize")
}

pub(crate) fn format_from_json(text: &str) -> Option<Vec<FieldSpec>> {
    let pairs: Vec<(String, String)> = serde_json::from_str(text).ok()?;
    pairs
        .into_iter()
        .map(|(name, ty)| FieldType::parse(&ty).map(|ty| FieldSpec { name, ty }))
        .collect()
}

/// The four message shapes exchanged between spoke operators and the hub.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IscEnvelope {
    Probe {
        sid: SpokeSid,
        functionality: String,
    },
    FormatResponse {
        sid: SpokeSid,
        request_format: Vec<FieldSpec>,
        response_format: Vec<FieldSpec>,
    },
    Request {
        sid: SpokeSid,
        functionality: String,
        payload: Payload,
    },
    Response {
        sid: SpokeSid,
        payload: Payload,
    },
}

impl IscEnvelope {
    pub fn sid(&self) -> &SpokeSid {
        match self {
            IscEnvelope::Probe { sid, .. }
            | IscEnvelope::FormatResponse { sid, .. }
            | IscEnvelope::Request { sid, .. }
            | IscEnvelope::Response { sid, .. } => sid,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            IscEnvelope::Probe { .. } => "probe",
            IscEnvelope::FormatResponse { .. } => "format_response",
            IscEnvelope::Request { .. } => "request",
            IscEnvelope::Response { .. } => "response",
        }
    }

    /// Everything except app-supplied payload values: identifiers, names,
    /// field names and formats.
    pub fn metadata_strings(&self) -> Vec<String> {
        let mut out = vec![self.sid().to_string()];
        match self {
            IscEnvelope::Probe { functionality, .. } => out.push(functionality.clone()),
            IscEnvelope::FormatResponse { request_format, response_format, .. } => {
                out.extend(request_format.iter().chain(response_format).map(|f| f.name.clone()));
            }
            IscEnvelope::Request { functionality, payload, .. } => {
                out.push(functionality.clone());
                out.extend(payload.0.iter().map(|(k, _)| k.clone()));
            }
            IscEnvelope::Response { payload, .. } => {
                out.extend(payload.0.iter().map(|(k, _)| k.clone()));
            }
        }
        out
    }
}

/// Reason codes returned to a requester when the hub refuses a message.
/// They never echo payload content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCode {
    Malformed,
    PermissionDenied,
    NoProvider,
    SelfOnly,
    NoProbe,
    ProviderFailed,
    Timeout,
}
