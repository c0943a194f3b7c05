//! Parsing, validation, and ordering of newline-delimited event records.
//!
//! Each non-blank input line is one JSON object with the keys `player_id`,
//! `ts` (integer milliseconds), `category`, and an optional one-level
//! `fields` object. Scalar keys at the top level are accepted as fields
//! too, so flat records parse the same as nested ones.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::error::{CoreError, Result};
use crate::event::{Category, EventLog, FieldValue, RawEvent, ValueKind};
use crate::schema::EventSchema;

/// Maximum number of per-line errors retained in a [`ParseReport`].
const MAX_REPORTED_ERRORS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Skip and count malformed lines.
    #[default]
    Lenient,
    /// Abort on the first malformed line.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    /// 1-based line number in the input.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParseReport {
    pub log: EventLog,
    /// Non-blank lines seen.
    pub lines: usize,
    pub skipped: usize,
    /// The first malformed lines, capped at 1000 entries.
    pub errors: Vec<LineError>,
}

/// Parses an NDJSON event stream. The returned log is unsorted unless it
/// is empty.
pub fn parse_events(input: &[u8], schema: &EventSchema, mode: ParseMode) -> Result<ParseReport> {
    let lines: Vec<(usize, &[u8])> = input
        .split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix(b"\r").unwrap_or(l)))
        .filter(|(_, l)| !l.iter().all(u8::is_ascii_whitespace))
        .collect();

    let parsed: Vec<(usize, std::result::Result<RawEvent, String>)> = lines
        .par_iter()
        .map(|&(n, l)| (n, parse_line(l, schema)))
        .collect();

    let mut events = Vec::with_capacity(parsed.len());
    let mut errors = Vec::new();
    let mut skipped = 0;
    for (line, outcome) in parsed {
        match outcome {
            Ok(e) => events.push(e),
            Err(reason) => {
                if mode == ParseMode::Strict {
                    return Err(CoreError::Malformed { line, reason });
                }
                skipped += 1;
                if errors.len() < MAX_REPORTED_ERRORS {
                    errors.push(LineError { line, reason });
                }
            }
        }
    }
    Ok(ParseReport {
        log: EventLog::new(events),
        lines: lines.len(),
        skipped,
        errors,
    })
}

fn parse_line(bytes: &[u8], schema: &EventSchema) -> std::result::Result<RawEvent, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| format!("invalid UTF-8: {e}"))?;
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(mut obj) = value else {
        return Err("record is not a JSON object".into());
    };

    let player_id = match obj.remove("player_id") {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(_) => return Err("`player_id` must be a non-empty string".into()),
        None => return Err("missing `player_id`".into()),
    };
    let timestamp = match obj.remove("ts") {
        Some(Value::Number(n)) => match n.as_i64() {
            Some(t) if t >= 0 => t,
            _ => return Err(format!("`ts` must be a non-negative integer, got {n}")),
        },
        Some(_) => return Err("`ts` must be an integer".into()),
        None => return Err("missing `ts`".into()),
    };
    let category: Category = match obj.remove("category") {
        Some(Value::String(s)) => s.parse().map_err(|e: CoreError| e.to_string())?,
        Some(_) => return Err("`category` must be a string".into()),
        None => return Err("missing `category`".into()),
    };

    let mut fields = BTreeMap::new();
    match obj.remove("fields") {
        Some(Value::Object(inner)) => collect_fields(inner, &mut fields)?,
        Some(Value::Null) | None => {}
        Some(_) => return Err("`fields` must be an object".into()),
    }
    collect_fields(obj, &mut fields)?;

    let cat_schema = schema.category(category);
    for (name, value) in fields.iter_mut() {
        if let (Some(spec), FieldValue::Integer(i)) = (cat_schema.field(name), &*value) {
            if spec.kind == ValueKind::Float {
                *value = FieldValue::Float(*i as f64);
            }
        }
    }

    let event = RawEvent {
        player_id,
        timestamp,
        category,
        fields,
    };
    let report = validate_event(&event, schema);
    if !report.is_valid() {
        return Err(format!("schema violation: {report}"));
    }
    Ok(event)
}

fn collect_fields(
    obj: Map<String, Value>,
    out: &mut BTreeMap<String, FieldValue>,
) -> std::result::Result<(), String> {
    for (name, value) in obj {
        let v = match value {
            Value::Null => continue,
            Value::Bool(b) => FieldValue::Boolean(b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => FieldValue::Integer(i),
                None => FieldValue::Float(n.as_f64().ok_or("unrepresentable number")?),
            },
            Value::String(s) => FieldValue::String(s),
            Value::Array(_) | Value::Object(_) => {
                return Err(format!("field `{name}` is nested deeper than one level"));
            }
        };
        if out.insert(name.clone(), v).is_some() {
            return Err(format!("field `{name}` given twice"));
        }
    }
    Ok(())
}

/// Stable sort by `(player_id, timestamp)`; ties keep their input order.
pub fn sort_events(mut log: EventLog) -> EventLog {
    if !log.sorted {
        log.events
            .sort_by(|a, b| (a.player_id.as_str(), a.timestamp).cmp(&(b.player_id.as_str(), b.timestamp)));
        log.sorted = true;
    }
    log
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    MissingRequired(String),
    UnknownField(String),
    KindMismatch {
        field: String,
        expected: ValueKind,
        found: ValueKind,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::MissingRequired(n) => write!(f, "missing required field `{n}`"),
            ValidationIssue::UnknownField(n) => write!(f, "unknown field `{n}`"),
            ValidationIssue::KindMismatch {
                field,
                expected,
                found,
            } => write!(f, "field `{field}` should be {expected}, found {found}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Compares an event's fields against its category schema. Integers are
/// accepted where floats are declared.
pub fn validate_event(e: &RawEvent, schema: &EventSchema) -> ValidationReport {
    let cat = schema.category(e.category);
    let mut issues = Vec::new();
    for spec in &cat.fields {
        match e.fields.get(&spec.name) {
            None if spec.required => issues.push(ValidationIssue::MissingRequired(spec.name.clone())),
            None => {}
            Some(v) => {
                let found = v.kind();
                let compatible =
                    found == spec.kind || (spec.kind == ValueKind::Float && found == ValueKind::Integer);
                if !compatible {
                    issues.push(ValidationIssue::KindMismatch {
                        field: spec.name.clone(),
                        expected: spec.kind,
                        found,
                    });
                }
            }
        }
    }
    for name in e.fields.keys() {
        if cat.field(name).is_none() {
            issues.push(ValidationIssue::UnknownField(name.clone()));
        }
    }
    ValidationReport { issues }
}
