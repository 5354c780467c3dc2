use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use url::Url;

use super::{FieldSpec, FieldType, FunctionalityDescriptor, IscEnvelope, Payload};

pub const DEFAULT_STRING_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRules {
    /// Maximum length of a `bounded_string` value, in characters.
    pub string_limit: usize,
}

impl Default for ValidationRules {
    fn default() -> Self {
        ValidationRules { string_limit: DEFAULT_STRING_LIMIT }
    }
}

/// Why a message was refused. Carries field names only, never values.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum Malformed {
    #[error("functionality does not match the negotiated descriptor")]
    Functionality,
    #[error("format does not match the descriptor")]
    Format,
    #[error("missing field {0}")]
    MissingField(String),
    #[error("unexpected field {0}")]
    ExtraField(String),
    #[error("field {0} out of order")]
    FieldOrder(String),
    #[error("field {field} is not a valid {ty}")]
    InvalidValue { field: String, ty: String },
    #[error("field {field} exceeds {limit} characters")]
    TooLong { field: String, limit: usize },
    #[error("sid does not match a negotiated counterparty")]
    Sid,
    #[error("message could not be decoded")]
    Encoding,
}

impl Malformed {
    pub fn field(&self) -> Option<&str> {
        match self {
            Malformed::MissingField(f)
            | Malformed::ExtraField(f)
            | Malformed::FieldOrder(f)
            | Malformed::InvalidValue { field: f, .. }
            | Malformed::TooLong { field: f, .. } => Some(f),
            _ => None,
        }
    }
}

fn is_iso_date(value: &str) -> bool {
    let b = value.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter().enumerate().all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
        && NaiveDate::parse_from_str(value, "%Y-%m-%d").is_ok()
}

fn is_i64_decimal(value: &str) -> bool {
    let digits = value.strip_prefix('-').unwrap_or(value);
    !digits.is_empty() && digits.bytes().all(|c| c.is_ascii_digit()) && value.parse::<i64>().is_ok()
}

fn is_web_url(value: &str) -> bool {
    match Url::parse(value) {
        Ok(url) => {
            matches!(url.scheme(), "http" | "https") && url.host_str().is_some_and(|h| !h.is_empty())
        }
        Err(_) => false,
    }
}

/// Value-level predicate for one field type.
pub fn check_value(ty: FieldType, value: &str, rules: &ValidationRules) -> bool {
    match ty {
        FieldType::Date => is_iso_date(value),
        FieldType::Integer => is_i64_decimal(value),
        FieldType::Url => is_web_url(value),
        FieldType::BoundedString => value.chars().count() <= rules.string_limit,
    }
}

/// Checks a payload position by position against the ordered schema and
/// reports the first failing field.
pub fn validate_payload(payload: &Payload, schema: &[FieldSpec], rules: &ValidationRules) -> Result<(), Malformed> {
    let len = payload.0.len().max(schema.len());
    for i in 0..len {
        match (payload.0.get(i), schema.get(i)) {
            (None, Some(spec)) => return Err(Malformed::MissingField(spec.name.clone())),
            (Some((name, _)), None) => return Err(Malformed::ExtraField(name.clone())),
            (Some((name, value)), Some(spec)) => {
                if name != &spec.name {
                    let in_schema = schema.iter().any(|s| &s.name == name);
                    let in_payload = payload.0.iter().any(|(n, _)| n == &spec.name);
                    return Err(if !in_schema {
                        Malformed::ExtraField(name.clone())
                    } else if !in_payload {
                        Malformed::MissingField(spec.name.clone())
                    } else {
                        Malformed::FieldOrder(spec.name.clone())
                    });
                }
                if !check_value(spec.ty, value, rules) {
                    return Err(match spec.ty {
                        FieldType::BoundedString => {
                            Malformed::TooLong { field: name.clone(), limit: rules.string_limit }
                        }
                        ty => Malformed::InvalidValue { field: name.clone(), ty: ty.as_str().to_string() },
                    });
                }
            }
            (None, None) => unreachable!(),
        }
    }
    Ok(())
}

/// Pure verdict for an envelope against the descriptor it claims to follow.
pub fn validate_message(
    env: &IscEnvelope,
    descriptor: &FunctionalityDescriptor,
    rules: &ValidationRules,
) -> Result<(), Malformed> {
    match env {
        IscEnvelope::Probe { functionality, .. } => {
            if functionality != &descriptor.name {
                return Err(Malformed::Functionality);
            }
            Ok(())
        }
        IscEnvelope::FormatResponse { request_format, response_format, .. } => {
            if request_format != &descriptor.request_fields || response_format != &descriptor.response_fields {
                return Err(Malformed::Format);
            }
            Ok(())
        }
        IscEnvelope::Request { functionality, payload, .. } => {
            if functionality != &descriptor.name {
                return Err(Malformed::Functionality);
            }
            validate_payload(payload, &descriptor.request_fields, rules)
        }
        IscEnvelope::Response { payload, .. } => validate_payload(payload, &descriptor.response_fields, rules),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isc::SpokeSid;

    fn sid() -> SpokeSid {
        SpokeSid::parse("0123456789abcdef0123456789abcdef").unwrap()
    }

    fn schema(ty: FieldType) -> Vec<FieldSpec> {
        vec![FieldSpec::new("v", ty)]
    }

    fn check(ty: FieldType, value: &str) -> Result<(), Malformed> {
        validate_payload(&Payload::new().with("v", value), &schema(ty), &ValidationRules::default())
    }

    #[test]
    fn dates() {
        assert!(check(FieldType::Date, "2025-03-01").is_ok());
        assert_eq!(
            check(FieldType::Date, "tomorrow"),
            Err(Malformed::InvalidValue { field: "v".into(), ty: "date".into() })
        );
        assert!(check(FieldType::Date, "2025-3-1").is_err());
        assert!(check(FieldType::Date, "2025-02-30").is_err());
        assert!(check(FieldType::Date, "2024-02-29").is_ok());
    }

    #[test]
    fn integers() {
        assert!(check(FieldType::Integer, "42").is_ok());
        assert!(check(FieldType::Integer, "-9223372036854775808").is_ok());
        assert!(check(FieldType::Integer, "9223372036854775808").is_err());
        assert!(check(FieldType::Integer, "4.2").is_err());
        assert!(check(FieldType::Integer, "+4").is_err());
        assert!(check(FieldType::Integer, "-").is_err());
        assert!(check(FieldType::Integer, "").is_err());
    }

    #[test]
    fn urls() {
        assert!(check(FieldType::Url, "https://drive.example/files/1").is_ok());
        assert!(check(FieldType::Url, "ftp://drive.example/x").is_err());
        assert!(check(FieldType::Url, "/relative").is_err());
        assert!(check(FieldType::Url, "mailto:bob@corp.example").is_err());
    }

    #[test]
    fn string_limit_boundary() {
        let at = "x".repeat(256);
        let over = "x".repeat(257);
        assert!(check(FieldType::BoundedString, &at).is_ok());
        assert_eq!(
            check(FieldType::BoundedString, &over),
            Err(Malformed::TooLong { field: "v".into(), limit: 256 })
        );
        // limit counts characters, not bytes
        assert!(check(FieldType::BoundedString, &"é".repeat(256)).is_ok());
        let rules = ValidationRules { string_limit: 4 };
        let p = Payload::new().with("v", "abcde");
        assert!(validate_payload(&p, &schema(FieldType::BoundedString), &rules).is_err());
    }

    #[test]
    fn structure_errors_name_first_failing_field() {
        let schema = vec![
            FieldSpec::new("a", FieldType::Integer),
            FieldSpec::new("b", FieldType::Integer),
        ];
        let rules = ValidationRules::default();
        let extra = Payload::new().with("a", "1").with("b", "2").with("note", "hi");
        assert_eq!(validate_payload(&extra, &schema, &rules), Err(Malformed::ExtraField("note".into())));
        let missing = Payload::new().with("a", "1");
        assert_eq!(validate_payload(&missing, &schema, &rules), Err(Malformed::MissingField("b".into())));
        let swapped = Payload::new().with("b", "2").with("a", "1");
        assert_eq!(validate_payload(&swapped, &schema, &rules), Err(Malformed::FieldOrder("a".into())));
        let renamed = Payload::new().with("x", "1").with("b", "2");
        assert_eq!(validate_payload(&renamed, &schema, &rules), Err(Malformed::ExtraField("x".into())));
        let dup = Payload::new().with("a", "1").with("a", "1");
        assert_eq!(validate_payload(&dup, &schema, &rules), Err(Malformed::MissingField("b".into())));
    }

    #[test]
    fn envelope_checks() {
        let d = FunctionalityDescriptor::new(
            "file_retrieval",
            &[("filename", FieldType::BoundedString)],
            &[("link", FieldType::Url)],
        );
        let rules = ValidationRules::default();
        let req = IscEnvelope::Request {
            sid: sid(),
            functionality: "file_retrieval".into(),
            payload: Payload::new().with("filename", "Q3-deck.pdf"),
        };
        assert!(validate_message(&req, &d, &rules).is_ok());
        let wrong = IscEnvelope::Request {
            sid: sid(),
            functionality: "web_browsing".into(),
            payload: Payload::new().with("filename", "Q3-deck.pdf"),
        };
        assert_eq!(validate_message(&wrong, &d, &rules), Err(Malformed::Functionality));
        let resp = IscEnvelope::Response { sid: sid(), payload: Payload::new().with("link", "nope") };
        assert!(validate_message(&resp, &d, &rules).is_err());
    }

    #[test]
    fn validation_is_pure() {
        let p = Payload::new().with("v", "2025-13-01");
        let s = schema(FieldType::Date);
        let r = ValidationRules::default();
        let first = validate_payload(&p, &s, &r);
        for _ in 0..10 {
            assert_eq!(validate_payload(&p, &s, &r), first);
        }
    }
}
