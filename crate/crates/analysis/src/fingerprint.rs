//! Per-cluster histograms of event categories and session statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use behavior_lm_core::{Category, Session};

use crate::error::{AnalysisError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlayerActivity {
    /// Event counts indexed by [`Category::index`].
    pub categories: [u64; Category::COUNT],
    pub session_lengths: Vec<usize>,
}

/// Collects category counts and session lengths per player.
pub fn activity_by_player(sessions: &[Session<'_>]) -> BTreeMap<String, PlayerActivity> {
    let mut out: BTreeMap<String, PlayerActivity> = BTreeMap::new();
    for s in sessions {
        let a = out.entry(s.player_id.to_string()).or_default();
        for e in s.events {
            a.categories[e.category.index()] += 1;
        }
        a.session_lengths.push(s.len());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFingerprint {
    pub cluster: usize,
    pub players: usize,
    /// Share of each category among the cluster's events; sums to 1.
    pub histogram: [f64; Category::COUNT],
    pub mean_session_length: f64,
    pub mean_sessions: f64,
}

/// One fingerprint per cluster present in `assignments`, in cluster
/// order. Every assigned player must have recorded activity.
pub fn fingerprint(
    assignments: &[(String, usize)],
    activity: &BTreeMap<String, PlayerActivity>,
) -> Result<Vec<ClusterFingerprint>> {
    let mut acc: BTreeMap<usize, (usize, [u64; Category::COUNT], usize, usize)> = BTreeMap::new();
    for (player, cluster) in assignments {
        let a = activity
            .get(player)
            .ok_or_else(|| AnalysisError::Shape(format!("no sessions for player `{player}`")))?;
        let e = acc.entry(*cluster).or_insert((0, [0; Category::COUNT], 0, 0));
        e.0 += 1;
        for (t, c) in e.1.iter_mut().zip(&a.categories) {
            *t += c;
        }
        e.2 += a.session_lengths.iter().sum::<usize>();
        e.3 += a.session_lengths.len();
    }
    Ok(acc
        .into_iter()
        .map(|(cluster, (players, counts, events, sessions))| {
            let total: u64 = counts.iter().sum();
            let mut histogram = [0.0; Category::COUNT];
            if total > 0 {
                for (h, &c) in histogram.iter_mut().zip(&counts) {
                    *h = c as f64 / total as f64;
                }
            }
            ClusterFingerprint {
                cluster,
                players,
                histogram,
                mean_session_length: if sessions > 0 { events as f64 / sessions as f64 } else { 0.0 },
                mean_sessions: sessions as f64 / players as f64,
            }
        })
        .collect())
}

/// Tab-separated table: one row per cluster, one column per category.
pub fn fingerprints_tsv(fps: &[ClusterFingerprint]) -> String {
    let mut out = String::from("cluster\tplayers\tmean_session_length\tmean_sessions");
    for c in Category::ALL {
        write!(out, "\t{c}").unwrap();
    }
    out.push('\n');
    for f in fps {
        write!(out, "{}\t{}\t{:.4}\t{:.4}", f.cluster, f.players, f.mean_session_length, f.mean_sessions).unwrap();
        for h in &f.histogram {
            write!(out, "\t{h:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}
