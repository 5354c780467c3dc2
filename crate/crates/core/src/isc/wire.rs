//! Bit-exact record encoding.
//!
//! ```text
//! record = u32 length (big-endian, counts tag + fields)
//!        ‖ u8 tag (0 = Probe, 1 = FormatResponse, 2 = Request, 3 = Response)
//!        ‖ fields, each u16 length (big-endian) ‖ UTF-8 bytes
//! ```
//!
//! Field order follows the tuples `<sid, functionality>`,
//! `<sid, request format, response format>`, `<sid, functionality, request>`
//! and `<sid, response>`. Formats and payloads are JSON arrays of string pairs.

use super::{format_from_json, format_to_json, IscEnvelope, Payload, SpokeSid};

pub const TAG_PROBE: u8 = 0;
pub const TAG_FORMAT_RESPONSE: u8 = 1;
pub const TAG_REQUEST: u8 = 2;
pub const TAG_RESPONSE: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("record truncated")]
    Truncated,
    #[error("length prefix {declared} does not match {actual} bytes")]
    Length { declared: usize, actual: usize },
    #[error("unknown tag {0}")]
    Tag(u8),
    #[error("field {0} longer than 65535 bytes")]
    FieldTooLong(usize),
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("field {0} is not valid UTF-8")]
    Utf8(usize),
    #[error("field {0} has invalid content")]
    Content(usize),
}

fn put_field(out: &mut Vec<u8>, index: usize, field: &str) -> Result<(), WireError> {
    let len = u16::try_from(field.len()).map_err(|_| WireError::FieldTooLong(index))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(field.as_bytes());
    Ok(())
}

/// Encodes one envelope as a complete record, length prefix included.
pub fn encode(env: &IscEnvelope) -> Result<Vec<u8>, WireError> {
    let (tag, fields): (u8, Vec<String>) = match env {
        IscEnvelope::Probe { sid, functionality } => (TAG_PROBE, vec![sid.to_string(), functionality.clone()]),
        IscEnvelope::FormatResponse { sid, request_format, response_format } => (
            TAG_FORMAT_RESPONSE,
            vec![sid.to_string(), format_to_json(request_format), format_to_json(response_format)],
        ),
        IscEnvelope::Request { sid, functionality, payload } => {
            (TAG_REQUEST, vec![sid.to_string(), functionality.clone(), payload.to_json()])
        }
        IscEnvelope::Response { sid, payload } => (TAG_RESPONSE, vec![sid.to_string(), payload.to_json()]),
    };
    let mut body = vec![tag];
    for (i, f) in fields.iter().enumerate() {
        put_field(&mut body, i, f)?;
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

fn split_fields(mut rest: &[u8]) -> Result<Vec<String>, WireError> {
    let mut fields = Vec::new();
    while !rest.is_empty() {
        if rest.len() < 2 {
            return Err(WireError::Truncated);
        }
        let len = u16::from_be_bytes([rest[0], rest[1]]) as usize;
        rest = &rest[2..];
        if rest.len() < len {
            return Err(WireError::Truncated);
        }
        let text = std::str::from_utf8(&rest[..len]).map_err(|_| WireError::Utf8(fields.len()))?;
        fields.push(text.to_string());
        rest = &rest[len..];
    }
    Ok(fields)
}

/// Decodes the tag and fields that follow a length prefix.
pub(crate) fn decode_body(body: &[u8]) -> Result<IscEnvelope, WireError> {
    let (&tag, rest) = body.split_first().ok_or(WireError::Truncated)?;
    let expected = match tag {
        TAG_PROBE | TAG_RESPONSE => 2,
        TAG_FORMAT_RESPONSE | TAG_REQUEST => 3,
        other => return Err(WireError::Tag(other)),
    };
    let mut fields = split_fields(rest)?;
    if fields.len() != expected {
        return Err(WireError::FieldCount { expected, found: fields.len() });
    }
    let sid = SpokeSid::parse(&fields[0]).ok_or(WireError::Content(0))?;
    let env = match tag {
        TAG_PROBE => IscEnvelope::Probe { sid, functionality: fields.swap_remove(1) },
        TAG_FORMAT_RESPONSE => IscEnvelope::FormatResponse {
            sid,
            request_format: format_from_json(&fields[1]).ok_or(WireError::Content(1))?,
            response_format: format_from_json(&fields[2]).ok_or(WireError::Content(2))?,
        },
        TAG_REQUEST => IscEnvelope::Request {
            sid,
            payload: Payload::from_json(&fields[2]).ok_or(WireError::Content(2))?,
            functionality: fields.swap_remove(1),
        },
        _ => IscEnvelope::Response { sid, payload: Payload::from_json(&fields[1]).ok_or(WireError::Content(1))? },
    };
    Ok(env)
}

/// Decodes one complete record. Trailing bytes are an error.
pub fn decode(record: &[u8]) -> Result<IscEnvelope, WireError> {
    if record.len() < 4 {
        return Err(WireError::Truncated);
    }
    let declared = u32::from_be_bytes([record[0], record[1], record[2], record[3]]) as usize;
    let body = &record[4..];
    if declared != body.len() {
        return Err(WireError::Length { declared, actual: body.len() });
    }
    decode_body(body)
}
