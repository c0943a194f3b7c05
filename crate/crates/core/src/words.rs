//! Conversion of sessionized events into whitespace-separated word documents.
//!
//! The pipeline drops non-informative categories and fields, bins the
//! declared numeric fields into labelled intervals, collapses families of
//! similar identifiers into one canonical token, and renders each surviving
//! event as a bare category word followed by `name=value` words.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use crate::error::{CoreError, Result};
use crate::event::{Category, FieldValue, RawEvent, ValueKind};
use crate::schema::EventSchema;
use crate::session::Session;

const DEFAULT_PREP: &str = include_str!("../assets/prep.toml");

/// Labelled half-open intervals `(-inf, b0), [b0, b1), ..., [bn, +inf)`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct BinSpec {
    pub boundaries: Vec<f64>,
    pub labels: Vec<String>,
}

impl BinSpec {
    fn validate(&self, field: &str) -> Result<()> {
        if self.labels.len() != self.boundaries.len() + 1 {
            return Err(CoreError::Config(format!(
                "bins for `{field}`: {} boundaries need {} labels, got {}",
                self.boundaries.len(),
                self.boundaries.len() + 1,
                self.labels.len()
            )));
        }
        if self.boundaries.iter().any(|b| !b.is_finite())
            || self.boundaries.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(CoreError::Config(format!(
                "bins for `{field}`: boundaries must be finite and strictly increasing"
            )));
        }
        if let Some(l) = self.labels.iter().find(|l| !is_word(l)) {
            return Err(CoreError::Config(format!("bin label `{l}` is not a single word")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct GroupRule {
    /// Glob pattern where `*` matches any run of characters.
    pub pattern: String,
    pub token: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct Grouping {
    #[serde(default)]
    pub fields: Vec<String>,
    #[serde(default)]
    pub rules: Vec<GroupRule>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrepFile {
    #[serde(default)]
    drop_categories: Vec<Category>,
    #[serde(default = "default_word_format")]
    word_format: String,
    #[serde(default = "default_marker")]
    session_marker: String,
    #[serde(default)]
    keep: BTreeMap<Category, Vec<String>>,
    #[serde(default)]
    bins: BTreeMap<String, BinSpec>,
    #[serde(default)]
    grouping: Grouping,
}

fn default_word_format() -> String {
    "{name}={value}".into()
}

fn default_marker() -> String {
    "[SEP]".into()
}

/// Resolved preprocessing configuration, checked against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    dropped: [bool; Category::COUNT],
    /// Kept field names per category, in schema order.
    keep: Vec<Vec<String>>,
    pub bins: BTreeMap<String, BinSpec>,
    grouped: HashSet<String>,
    pub rules: Vec<GroupRule>,
    word_format: String,
    pub session_marker: String,
}

impl PreprocessConfig {
    /// The shipped configuration, resolved against the shipped schema.
    pub fn default_config() -> Self {
        Self::from_toml(DEFAULT_PREP, &EventSchema::default_schema())
            .expect("shipped preprocessing config is valid")
    }

    pub fn default_toml() -> &'static str {
        DEFAULT_PREP
    }

    pub fn load(path: impl AsRef<Path>, schema: &EventSchema) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, schema)
    }

    pub fn from_toml(text: &str, schema: &EventSchema) -> Result<Self> {
        let file: PrepFile = toml::from_str(text)?;
        Self::resolve(file, schema)
    }

    fn resolve(file: PrepFile, schema: &EventSchema) -> Result<Self> {
        if !file.word_format.contains("{value}") || !is_word(&file.word_format) {
            return Err(CoreError::Config(format!(
                "word format `{}` must contain {{value}} and no whitespace",
                file.word_format
            )));
        }
        if !is_word(&file.session_marker) {
            return Err(CoreError::Config("session marker must be a single word".into()));
        }
        for (field, spec) in &file.bins {
            spec.validate(field)?;
        }
        for r in &file.grouping.rules {
            if !is_word(&r.token) {
                return Err(CoreError::Config(format!("group token `{}` is not a single word", r.token)));
            }
        }
        let grouped: HashSet<String> = file.grouping.fields.iter().cloned().collect();

        let mut dropped = [false; Category::COUNT];
        for c in &file.drop_categories {
            dropped[c.index()] = true;
        }

        let mut keep = vec![Vec::new(); Category::COUNT];
        for (category, names) in &file.keep {
            let cat = schema.category(*category);
            for name in names {
                let spec = cat.field(name).ok_or_else(|| {
                    CoreError::Config(format!("kept field `{name}` is not declared for `{category}`"))
                })?;
                let binned = file.bins.contains_key(name);
                let ok = match spec.kind {
                    ValueKind::String => true,
                    ValueKind::Boolean | ValueKind::Integer => !grouped.contains(name),
                    ValueKind::Float => binned,
                };
                if !ok || (binned && matches!(spec.kind, ValueKind::String | ValueKind::Boolean)) {
                    return Err(CoreError::Config(format!(
                        "kept field `{category}.{name}` ({}) must be categorical, binned, or grouped",
                        spec.kind
                    )));
                }
            }
            keep[category.index()] = cat
                .fields
                .iter()
                .filter(|f| names.contains(&f.name))
                .map(|f| f.name.clone())
                .collect();
        }

        Ok(Self {
            dropped,
            keep,
            bins: file.bins,
            grouped,
            rules: file.grouping.rules,
            word_format: file.word_format,
            session_marker: file.session_marker,
        })
    }

    pub fn is_dropped(&self, c: Category) -> bool {
        self.dropped[c.index()]
    }

    pub fn kept(&self, c: Category) -> &[String] {
        &self.keep[c.index()]
    }

    /// Number of schema fields that survive filtering.
    pub fn kept_field_count(&self) -> usize {
        Category::ALL
            .iter()
            .filter(|c| !self.is_dropped(**c))
            .map(|c| self.kept(*c).len())
            .sum()
    }

    fn render(&self, name: &str, value: &str) -> String {
        self.word_format.replace("{name}", name).replace("{value}", value)
    }
}

fn is_word(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

/// An event after category and field filtering; fields are in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredEvent {
    pub category: Category,
    pub timestamp: i64,
    pub fields: Vec<(String, FieldValue)>,
}

/// Drops the event if its category is filtered, otherwise projects it onto
/// the kept fields. Missing kept fields are omitted.
pub fn filter_event(e: &RawEvent, cfg: &PreprocessConfig) -> Option<FilteredEvent> {
    if cfg.is_dropped(e.category) {
        return None;
    }
    let fields = cfg
        .kept(e.category)
        .iter()
        .filter_map(|name| e.fields.get(name).map(|v| (name.clone(), v.clone())))
        .collect();
    Some(FilteredEvent {
        category: e.category,
        timestamp: e.timestamp,
        fields,
    })
}

/// Label of the interval containing `value`; values outside the boundary
/// range fall into the edge bins.
pub fn bin_numeric(value: f64, spec: &BinSpec) -> Result<&str> {
    if value.is_nan() {
        return Err(CoreError::NanValue);
    }
    let idx = spec.boundaries.partition_point(|&b| b <= value);
    Ok(&spec.labels[idx])
}

/// Lowercases and replaces whitespace runs with a single underscore.
pub fn normalize(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// Canonical token of the first matching rule, or the normalized input.
pub fn group_identifier(raw: &str, rules: &[GroupRule]) -> String {
    rules
        .iter()
        .find(|r| glob_match(&r.pattern, raw))
        .map(|r| r.token.clone())
        .unwrap_or_else(|| normalize(raw))
}

fn glob_match(pattern: &str, s: &str) -> bool {
    let mut parts = pattern.split('*');
    let first = parts.next().unwrap_or("");
    let Some(mut rest) = s.strip_prefix(first) else {
        return false;
    };
    let tail: Vec<&str> = parts.collect();
    let Some((last, middle)) = tail.split_last() else {
        return rest.is_empty();
    };
    for piece in middle {
        match rest.find(piece) {
            Some(i) => rest = &rest[i + piece.len()..],
            None => return false,
        }
    }
    rest.ends_with(last)
}

/// Bare category word followed by one word per kept field.
pub fn event_to_words(e: &FilteredEvent, cfg: &PreprocessConfig) -> Result<Vec<String>> {
    let mut words = Vec::with_capacity(1 + e.fields.len());
    words.push(e.category.as_str().to_string());
    for (name, value) in &e.fields {
        let rendered = if let Some(spec) = cfg.bins.get(name) {
            let x = value.as_f64().ok_or_else(|| {
                CoreError::Config(format!("binned field `{name}` holds a non-numeric value"))
            })?;
            bin_numeric(x, spec)?.to_string()
        } else {
            match value {
                FieldValue::String(s) if cfg.grouped.contains(name) => group_identifier(s, &cfg.rules),
                FieldValue::String(s) => normalize(s),
                FieldValue::Integer(i) => i.to_string(),
                FieldValue::Boolean(b) => b.to_string(),
                FieldValue::Float(_) => continue,
            }
        };
        if rendered.is_empty() {
            continue;
        }
        words.push(cfg.render(name, &rendered));
    }
    Ok(words)
}

/// One player's event history rendered as words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSequence {
    pub player_id: String,
    /// Offsets of the session marker words, strictly increasing.
    pub boundaries: Vec<usize>,
    pub words: Vec<String>,
}

impl WordSequence {
    /// `player_id<TAB>w1 w2 ...`
    pub fn to_doc_line(&self) -> String {
        format!("{}\t{}", self.player_id, self.words.join(" "))
    }
}

/// Splits a document line into its player id and text.
pub fn parse_doc_line(line: &str) -> Option<(&str, &str)> {
    line.split_once('\t')
}

/// Concatenates a player's sessions into one word document, inserting the
/// session marker between consecutive sessions.
pub fn assemble_document(sessions: &[Session<'_>], cfg: &PreprocessConfig) -> Result<WordSequence> {
    let first = sessions
        .first()
        .ok_or_else(|| CoreError::Config("no sessions to assemble".into()))?;
    let mut words = Vec::new();
    let mut boundaries = Vec::new();
    for (i, s) in sessions.iter().enumerate() {
        if s.player_id != first.player_id {
            return Err(CoreError::MixedPlayers(
                first.player_id.to_string(),
                s.player_id.to_string(),
            ));
        }
        if i > 0 {
            boundaries.push(words.len());
            words.push(cfg.session_marker.clone());
        }
        for e in s.events {
            if let Some(f) = filter_event(e, cfg) {
                words.extend(event_to_words(&f, cfg)?);
            }
        }
    }
    Ok(WordSequence {
        player_id: first.player_id.to_string(),
        boundaries,
        words,
    })
}
