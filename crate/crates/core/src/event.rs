//! Typed in-memory representation of raw interaction events.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// The twelve event categories of the synthetic telemetry schema.
///
/// The names are synthetic stand-ins for a mobile puzzle game's event
/// taxonomy; only their count and rough semantics matter downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    AppStart,
    GameStart,
    GameEnd,
    Purchase,
    CollectReward,
    PopupShown,
    Notification,
    Social,
    Quest,
    BoosterUsed,
    AdView,
    DeviceLog,
}

impl Category {
    pub const COUNT: usize = 12;

    pub const ALL: [Category; Category::COUNT] = [
        Category::AppStart,
        Category::GameStart,
        Category::GameEnd,
        Category::Purchase,
        Category::CollectReward,
        Category::PopupShown,
        Category::Notification,
        Category::Social,
        Category::Quest,
        Category::BoosterUsed,
        Category::AdView,
        Category::DeviceLog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::AppStart => "app_start",
            Category::GameStart => "game_start",
            Category::GameEnd => "game_end",
            Category::Purchase => "purchase",
            Category::CollectReward => "collect_reward",
            Category::PopupShown => "popup_shown",
            Category::Notification => "notification",
            Category::Social => "social",
            Category::Quest => "quest",
            Category::BoosterUsed => "booster_used",
            Category::AdView => "ad_view",
            Category::DeviceLog => "device_log",
        }
    }

    /// Position in [`Category::ALL`]; used for dense per-category tables.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CoreError::UnknownCategory(s.to_string()))
    }
}

/// Kind of a field value as declared by the schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    String,
    Integer,
    Float,
    Boolean,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::String => "string",
            ValueKind::Integer => "integer",
            ValueKind::Float => "float",
            ValueKind::Boolean => "boolean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Boolean(bool),
    Integer(i64),
    Float(f64),
    String(String),
}

impl FieldValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            FieldValue::String(_) => ValueKind::String,
            FieldValue::Integer(_) => ValueKind::Integer,
            FieldValue::Float(_) => ValueKind::Float,
            FieldValue::Boolean(_) => ValueKind::Boolean,
        }
    }

    /// Numeric view for binning; strings and booleans have none.
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            FieldValue::Integer(i) => Some(i as f64),
            FieldValue::Float(x) => Some(x),
            _ => None,
        }
    }
}

impl From<&str> for FieldValue {
    fn from(s: &str) -> Self {
        FieldValue::String(s.to_string())
    }
}

impl From<String> for FieldValue {
    fn from(s: String) -> Self {
        FieldValue::String(s)
    }
}

impl From<i64> for FieldValue {
    fn from(v: i64) -> Self {
        FieldValue::Integer(v)
    }
}

impl From<f64> for FieldValue {
    fn from(v: f64) -> Self {
        FieldValue::Float(v)
    }
}

impl From<bool> for FieldValue {
    fn from(v: bool) -> Self {
        FieldValue::Boolean(v)
    }
}

/// One timestamped interaction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub player_id: String,
    /// Milliseconds since the Unix epoch.
    #[serde(rename = "ts")]
    pub timestamp: i64,
    pub category: Category,
    #[serde(default)]
    pub fields: BTreeMap<String, FieldValue>,
}

impl RawEvent {
    pub fn new(player_id: impl Into<String>, timestamp: i64, category: Category) -> Self {
        Self {
            player_id: player_id.into(),
            timestamp,
            category,
            fields: BTreeMap::new(),
        }
    }

    pub fn with_field(mut self, name: impl Into<String>, value: impl Into<FieldValue>) -> Self {
        self.fields.insert(name.into(), value.into());
        self
    }

    /// Single-line JSON rendering accepted by [`crate::ingest::parse_events`].
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization cannot fail")
    }
}

/// An ordered collection of events plus a flag recording whether it is
/// sorted by `(player_id, timestamp)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub events: Vec<RawEvent>,
    pub sorted: bool,
}

impl EventLog {
    pub fn new(events: Vec<RawEvent>) -> Self {
        let sorted = events.is_empty();
        Self { events, sorted }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks the sort invariant directly rather than trusting the flag.
    pub fn is_ordered(&self) -> bool {
        self.events.windows(2).all(|w| {
            (w[0].player_id.as_str(), w[0].timestamp) <= (w[1].player_id.as_str(), w[1].timestamp)
        })
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_json_line());
            out.push('\n');
        }
        out
    }
}
