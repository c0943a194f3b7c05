//! Inactivity-based session segmentation.

use serde::Serialize;
use serde_json::Value;

use crate::error::{CoreError, Result};
use crate::event::{EventLog, RawEvent};
use crate::ingest::{parse_events, ParseMode};
use crate::schema::EventSchema;

/// Fifteen minutes.
pub const DEFAULT_GAP_MS: i64 = 900_000;

/// A maximal run of one player's events whose consecutive gaps are all
/// below the inactivity threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Session<'a> {
    pub player_id: &'a str,
    pub start_ts: i64,
    pub end_ts: i64,
    pub events: &'a [RawEvent],
    /// Ordinal of this session among the player's sessions, from 0.
    pub index: u32,
}

impl Session<'_> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Splits a sorted log into sessions. A boundary is placed between two
/// consecutive events of a player exactly when their gap is `>= gap_ms`.
pub fn segment(log: &EventLog, gap_ms: i64) -> Result<Vec<Session<'_>>> {
    if !log.sorted {
        return Err(CoreError::Unsorted);
    }
    debug_assert!(log.is_ordered());
    let events = &log.events;
    let mut sessions = Vec::new();
    let mut start = 0;
    let mut index = 0u32;
    for i in 1..=events.len() {
        let split = i == events.len() || {
            let (prev, cur) = (&events[i - 1], &events[i]);
            if prev.player_id != cur.player_id {
                true
            } else {
                cur.timestamp - prev.timestamp >= gap_ms
            }
        };
        if !split {
            continue;
        }
        let run = &events[start..i];
        sessions.push(Session {
            player_id: &run[0].player_id,
            start_ts: run[0].timestamp,
            end_ts: run[run.len() - 1].timestamp,
            events: run,
            index,
        });
        let new_player = i < events.len() && events[i].player_id != events[i - 1].player_id;
        index = if new_player { 0 } else { index + 1 };
        start = i;
    }
    Ok(sessions)
}

/// Groups consecutive sessions by player, preserving order.
pub fn by_player<'s, 'a>(sessions: &'s [Session<'a>]) -> Vec<&'s [Session<'a>]> {
    sessions
        .chunk_by(|a, b| a.player_id == b.player_id)
        .collect()
}

/// Fixed-width histogram over non-negative integer observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub bin_width: usize,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[usize], bin_width: usize) -> Self {
        assert!(bin_width > 0, "bin width must be positive");
        let mut counts = Vec::new();
        for &v in values {
            let b = v / bin_width;
            if b >= counts.len() {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
        Self { bin_width, counts }
    }

    /// Count of the bin containing `value`.
    pub fn count_at(&self, value: usize) -> u64 {
        self.counts.get(value / self.bin_width).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionStats {
    /// Events per session.
    pub lengths: Histogram,
    /// Sessions per player.
    pub counts: Histogram,
    pub mean_length: f64,
    pub mean_count: f64,
    pub length_p99: usize,
    pub count_p99: usize,
}

/// Nearest-rank percentile of unsorted values; 0 for an empty slice.
pub fn percentile(values: &[usize], p: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

fn mean(values: &[usize]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<usize>() as f64 / values.len() as f64
    }
}

pub fn session_stats(sessions: &[Session<'_>], length_bin: usize, count_bin: usize) -> SessionStats {
    let lengths: Vec<usize> = sessions.iter().map(Session::len).collect();
    let counts: Vec<usize> = by_player(sessions).iter().map(|s| s.len()).collect();
    SessionStats {
        lengths: Histogram::new(&lengths, length_bin),
        counts: Histogram::new(&counts, count_bin),
        mean_length: mean(&lengths),
        mean_count: mean(&counts),
        length_p99: percentile(&lengths, 99.0),
        count_p99: percentile(&counts, 99.0),
    }
}

#[derive(Serialize)]
struct SessionLine<'a> {
    #[serde(flatten)]
    event: &'a RawEvent,
    session: u32,
}

/// Renders sessions as NDJSON: the event record plus a `session` key.
pub fn sessions_to_ndjson(sessions: &[Session<'_>]) -> String {
    let mut out = String::new();
    for s in sessions {
        for event in s.events {
            let line = SessionLine {
                event,
                session: s.index,
            };
            out.push_str(&serde_json::to_string(&line).expect("session line serializes"));
            out.push('\n');
        }
    }
    out
}

/// Reads a sessionized NDJSON file back into a sorted log plus the
/// per-event session indices.
pub fn read_sessions_ndjson(input: &[u8], schema: &EventSchema) -> Result<(EventLog, Vec<u32>)> {
    let mut stripped = Vec::with_capacity(input.len());
    let mut indices = Vec::new();
    for (n, line) in input.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let mut value: Value = serde_json::from_slice(line).map_err(|e| CoreError::Malformed {
            line: n + 1,
            reason: e.to_string(),
        })?;
        let idx = value
            .as_object_mut()
            .and_then(|o| o.remove("session"))
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CoreError::Malformed {
                line: n + 1,
                reason: "missing `session` index".into(),
            })?;
        indices.push(idx as u32);
        serde_json::to_writer(&mut stripped, &value)?;
        stripped.push(b'\n');
    }
    let mut log = parse_events(&stripped, schema, ParseMode::Strict)?.log;
    log.sorted = log.is_ordered();
    if !log.sorted {
        return Err(CoreError::Unsorted);
    }
    Ok((log, indices))
}

/// Rebuilds sessions from a log and recorded per-event indices.
pub fn sessions_from_indices<'a>(log: &'a EventLog, indices: &[u32]) -> Result<Vec<Session<'a>>> {
    if indices.len() != log.len() {
        return Err(CoreError::Malformed {
            line: 0,
            reason: format!("{} session indices for {} events", indices.len(), log.len()),
        });
    }
    let events = &log.events;
    let mut sessions = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        let split = i == events.len()
            || events[i].player_id != events[i - 1].player_id
            || indices[i] != indices[i - 1];
        if split {
            let run = &events[start..i];
            sessions.push(Session {
                player_id: &run[0].player_id,
                start_ts: run[0].timestamp,
                end_ts: run[run.len() - 1].timestamp,
                events: run,
                index: indices[start],
            });
            start = i;
        }
    }
    Ok(sessions)
}
