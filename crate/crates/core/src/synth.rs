//! Synthetic event corpora with planted behavioral personas.
//!
//! Session counts and session lengths are shifted-geometric, matching the
//! shape of real telemetry. Gaps inside a session are always shorter than
//! the 15-minute inactivity threshold and gaps between sessions never are,
//! so sessionization recovers the generated boundaries exactly. All
//! parameters here are synthetic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CoreError, Result};
use crate::event::{Category, EventLog, FieldValue, RawEvent, ValueKind};
use crate::schema::EventSchema;
use crate::session::DEFAULT_GAP_MS;

/// 2023-11-14T22:13:20Z; all synthetic clocks start here.
pub const EPOCH_MS: i64 = 1_700_000_000_000;
const DAY_MS: i64 = 86_400_000;
const HOUR_MS: i64 = 3_600_000;

/// Relative weights of the filler event categories inside a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventWeights {
    pub game: f64,
    pub booster: f64,
    pub popup: f64,
    pub notification: f64,
    pub ad: f64,
    pub quest: f64,
    pub device: f64,
}

/// Per-persona value pools; they make the rendered words persona-specific.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePools {
    pub popups: Vec<String>,
    pub items: Vec<String>,
    pub rewards: Vec<String>,
    pub boosters: Vec<String>,
    pub quests: Vec<String>,
    pub ads: Vec<String>,
    pub notifications: Vec<String>,
    pub social_actions: Vec<String>,
    /// Preferred session start hours (UTC).
    pub hours: Vec<u32>,
    /// Range of starting levels.
    pub levels: (i64, i64),
    /// Upper bound on the gap between consecutive in-session events.
    pub max_event_gap_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub name: String,
    /// Expected sessions per day.
    pub session_frequency: f64,
    /// Expected events per session.
    pub session_length_mean: f64,
    /// Probability that a session contains a purchase.
    pub purchase_rate: f64,
    /// Probability that an event is a reward collection.
    pub collect_rate: f64,
    /// Probability of winning a round.
    pub skill: f64,
    /// Probability that a session contains a social interaction.
    pub social_rate: f64,
    /// Players without gameplay never emit game rounds or boosters.
    pub gameplay: bool,
    pub weights: EventWeights,
    pub pools: ValuePools,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl PersonaProfile {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("purchase_rate", self.purchase_rate),
            ("collect_rate", self.collect_rate),
            ("skill", self.skill),
            ("social_rate", self.social_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(CoreError::GenConfig(format!("{}: {name} = {r} is outside [0, 1]", self.name)));
            }
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.session_length_mean) || !(self.session_frequency.is_finite() && self.session_frequency >= 0.0) {
            return Err(CoreError::GenConfig(format!(
                "{}: session length mean must be positive and frequency non-negative",
                self.name
            )));
        }
        let p = &self.pools;
        let pools = [
            &p.popups,
            &p.items,
            &p.rewards,
            &p.boosters,
            &p.quests,
            &p.ads,
            &p.notifications,
            &p.social_actions,
        ];
        if pools.iter().any(|v| v.is_empty()) || p.hours.is_empty() {
            return Err(CoreError::GenConfig(format!("{}: empty value pool", self.name)));
        }
        if !(1..DEFAULT_GAP_MS).contains(&p.max_event_gap_ms) {
            return Err(CoreError::GenConfig(format!(
                "{}: in-session gaps must stay below the inactivity threshold",
                self.name
            )));
        }
        Ok(())
    }

    /// Looks up one of the built-in personas by name.
    pub fn builtin(name: &str) -> Option<Self> {
        builtin_personas().into_iter().find(|p| p.name == name)
    }
}

/// The seven gameplay personas plus a small no-gameplay group.
pub fn builtin_personas() -> Vec<PersonaProfile> {
    let base_weights = EventWeights {
        game: 0.62,
        booster: 0.08,
        popup: 0.10,
        notification: 0.04,
        ad: 0.04,
        quest: 0.04,
        device: 0.08,
    };
    let w = |f: &dyn Fn(&mut EventWeights)| {
        let mut x = base_weights.clone();
        f(&mut x);
        x
    };
    vec![
        PersonaProfile {
            name: "competitive_devoted".into(),
            session_frequency: 0.8,
            session_length_mean: 60.0,
            purchase_rate: 0.15,
            collect_rate: 0.06,
            skill: 0.85,
            social_rate: 0.1,
            gameplay: true,
            weights: w(&|x| x.booster = 0.12),
            pools: ValuePools {
                popups: strings(&["popup_event_tournament_1", "popup_event_tournament_2", "popup_leaderboard"]),
                items: strings(&["booster_bundle_pro", "booster_bundle_elite"]),
                rewards: strings(&["tournament_chest", "streak_bonus"]),
                boosters: strings(&["color_bomb", "striped_wrapped", "lollipop_hammer"]),
                quests: strings(&["weekly_quest_7", "weekly_quest_8"]),
                ads: strings(&["extra_moves_offer"]),
                notifications: strings(&["tournament_start", "rank_changed"]),
                social_actions: strings(&["challenge_friend", "compare_score"]),
                hours: vec![19, 20, 21, 22],
                levels: (800, 2500),
                max_event_gap_ms: 40_000,
            },
        },
        PersonaProfile {
            name: "casual_devoted".into(),
            session_frequency: 0.6,
            session_length_mean: 50.0,
            purchase_rate: 0.0,
            collect_rate: 0.22,
            skill: 0.5,
            social_rate: 0.3,
            gameplay: true,
            weights: w(&|x| x.quest = 0.18),
            pools: ValuePools {
                popups: strings(&["popup_daily_reward_v1", "popup_quest_board", "popup_free_spin"]),
                items: strings(&["life_refill"]),
                rewards: strings(&["quest_reward", "free_spin_prize", "daily_gift"]),
                boosters: strings(&["free_switch", "lollipop_hammer"]),
                quests: strings(&["daily_quest_1", "daily_quest_2", "team_quest_4"]),
                ads: strings(&["free_spin_ad"]),
                notifications: strings(&["quest_ready", "gift_waiting"]),
                social_actions: strings(&["send_life", "join_team"]),
                hours: vec![12, 13, 17, 18],
                levels: (200, 900),
                max_event_gap_ms: 90_000,
            },
        },
        PersonaProfile {
            name: "persistent_devoted".into(),
            session_frequency: 4.0,
            session_length_mean: 45.0,
            purchase_rate: 0.0,
            collect_rate: 0.05,
            skill: 0.6,
            social_rate: 0.1,
            gameplay: true,
            weights: w(&|x| x.game = 0.70),
            pools: ValuePools {
                popups: strings(&["popup_level_complete", "popup_streak_kept"]),
                items: strings(&["life_refill"]),
                rewards: strings(&["streak_bonus", "level_chest"]),
                boosters: strings(&["free_switch", "extra_moves"]),
                quests: strings(&["daily_quest_5"]),
                ads: strings(&["life_ad"]),
                notifications: strings(&["lives_full", "streak_reminder"]),
                social_actions: strings(&["send_life"]),
                hours: vec![7, 10, 14, 20],
                levels: (1000, 4000),
                max_event_gap_ms: 60_000,
            },
        },
        PersonaProfile {
            name: "lean_in_casual_economy_aware".into(),
            session_frequency: 0.8,
            session_length_mean: 40.0,
            purchase_rate: 0.45,
            collect_rate: 0.05,
            skill: 0.8,
            social_rate: 0.05,
            gameplay: true,
            weights: w(&|x| x.popup = 0.14),
            pools: ValuePools {
                popups: strings(&["popup_shop_offer_3", "popup_shop_offer_9", "popup_bundle_sale"]),
                items: strings(&["gold_bar_pack_10", "gold_bar_pack_50", "season_pass_2"]),
                rewards: strings(&["purchase_bonus"]),
                boosters: strings(&["color_bomb", "fish_booster"]),
                quests: strings(&["weekly_quest_3"]),
                ads: strings(&["shop_banner"]),
                notifications: strings(&["sale_started", "offer_expiring"]),
                social_actions: strings(&["compare_score"]),
                hours: vec![20, 21, 22, 23],
                levels: (500, 2000),
                max_event_gap_ms: 45_000,
            },
        },
        PersonaProfile {
            name: "lean_in_casual".into(),
            session_frequency: 0.8,
            session_length_mean: 40.0,
            purchase_rate: 0.0,
            collect_rate: 0.05,
            skill: 0.8,
            social_rate: 0.05,
            gameplay: true,
            weights: base_weights.clone(),
            pools: ValuePools {
                popups: strings(&["popup_level_complete", "popup_episode_unlocked"]),
                items: strings(&["life_refill"]),
                rewards: strings(&["level_chest"]),
                boosters: strings(&["fish_booster", "extra_moves"]),
                quests: strings(&["weekly_quest_3"]),
                ads: strings(&["extra_moves_offer"]),
                notifications: strings(&["new_episode"]),
                social_actions: strings(&["compare_score"]),
                hours: vec![21, 22, 23, 0],
                levels: (500, 2000),
                max_event_gap_ms: 45_000,
            },
        },
        PersonaProfile {
            name: "persistent_casual".into(),
            session_frequency: 4.0,
            session_length_mean: 8.0,
            purchase_rate: 0.0,
            collect_rate: 0.02,
            skill: 0.3,
            social_rate: 0.01,
            gameplay: true,
            weights: w(&|x| x.ad = 0.10),
            pools: ValuePools {
                popups: strings(&["popup_level_failed", "popup_out_of_lives", "popup_rate_us"]),
                items: strings(&["life_refill"]),
                rewards: strings(&["daily_gift"]),
                boosters: strings(&["extra_moves"]),
                quests: strings(&["daily_quest_1"]),
                ads: strings(&["life_ad", "interstitial"]),
                notifications: strings(&["lives_full"]),
                social_actions: strings(&["ask_life"]),
                hours: vec![7, 8, 12, 13],
                levels: (1, 300),
                max_event_gap_ms: 120_000,
            },
        },
        PersonaProfile {
            name: "persistent_collector".into(),
            session_frequency: 4.0,
            session_length_mean: 10.0,
            purchase_rate: 0.02,
            collect_rate: 0.35,
            skill: 0.5,
            social_rate: 0.05,
            gameplay: true,
            weights: base_weights.clone(),
            pools: ValuePools {
                popups: strings(&["popup_daily_reward_v2", "popup_daily_reward_v3", "popup_collection_album"]),
                items: strings(&["gold_bar_pack_10"]),
                rewards: strings(&["album_card", "daily_gift", "collection_chest"]),
                boosters: strings(&["free_switch"]),
                quests: strings(&["daily_quest_2"]),
                ads: strings(&["reward_ad"]),
                notifications: strings(&["reward_ready", "album_update"]),
                social_actions: strings(&["trade_card"]),
                hours: vec![8, 9, 16, 17],
                levels: (100, 1200),
                max_event_gap_ms: 80_000,
            },
        },
        PersonaProfile {
            name: "no_gameplay".into(),
            session_frequency: 0.3,
            session_length_mean: 3.0,
            purchase_rate: 0.0,
            collect_rate: 0.0,
            skill: 0.0,
            social_rate: 0.0,
            gameplay: false,
            weights: w(&|x| {
                x.game = 0.0;
                x.booster = 0.0;
                x.quest = 0.0;
            }),
            pools: ValuePools {
                popups: strings(&["popup_tutorial", "popup_terms"]),
                items: strings(&["life_refill"]),
                rewards: strings(&["daily_gift"]),
                boosters: strings(&["free_switch"]),
                quests: strings(&["daily_quest_1"]),
                ads: strings(&["interstitial"]),
                notifications: strings(&["come_back"]),
                social_actions: strings(&["ask_life"]),
                hours: vec![10, 15],
                levels: (1, 2),
                max_event_gap_ms: 30_000,
            },
        },
    ]
}

/// Default mixture over the built-in personas; the no-gameplay group is small.
pub fn default_persona_mix() -> Vec<(PersonaProfile, f64)> {
    let personas = builtin_personas();
    let n = personas.len();
    personas
        .into_iter()
        .map(|p| {
            let w = if p.gameplay { 0.97 / (n - 1) as f64 } else { 0.03 };
            (p, w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub players: usize,
    pub days: u32,
    pub persona_mix: Vec<(PersonaProfile, f64)>,
    pub seed: u64,
    pub corruption_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            players: 100,
            days: 15,
            persona_mix: default_persona_mix(),
            seed: 0,
            corruption_rate: 0.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.players == 0 {
            return Err(CoreError::GenConfig("players must be at least 1".into()));
        }
        if self.persona_mix.is_empty() {
            return Err(CoreError::GenConfig("persona mix is empty".into()));
        }
        let total: f64 = self.persona_mix.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 || self.persona_mix.iter().any(|(_, w)| w.is_nan() || *w < 0.0) {
            return Err(CoreError::GenConfig(format!("persona mix weights sum to {total}, not 1")));
        }
        if !(0.0..1.0).contains(&self.corruption_rate) {
            return Err(CoreError::GenConfig("corruption rate must be in [0, 1)".into()));
        }
        for (p, _) in &self.persona_mix {
            p.validate()?;
        }
        Ok(())
    }
}

/// Generated history of one player.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerTrace {
    pub player_id: String,
    pub persona: String,
    pub events: Vec<RawEvent>,
    /// Ground-truth number of events in each generated session.
    pub session_lengths: Vec<usize>,
}

/// Shifted geometric on {1, 2, ...} with the given mean (clamped to >= 1).
fn shifted_geometric(rng: &mut impl Rng, mean: f64) -> usize {
    let mean = mean.max(1.0);
    if mean == 1.0 {
        return 1;
    }
    let g = Geometric::new(1.0 / mean).expect("probability in (0, 1]");
    1 + g.sample(rng) as usize
}

fn pick<'a>(rng: &mut impl Rng, pool: &'a [String]) -> &'a str {
    &pool[rng.random_range(0..pool.len())]
}

fn hex_id(rng: &mut impl Rng, len: usize) -> String {
    let mut s = String::with_capacity(len);
    for _ in 0..len {
        write!(s, "{:x}", rng.random_range(0..16u8)).unwrap();
    }
    s
}

/// Per-player telemetry that stays fixed across a player's events.
struct Device {
    model: &'static str,
    os: &'static str,
    locale: &'static str,
    app_version: &'static str,
    build_id: String,
}

impl Device {
    fn sample(rng: &mut impl Rng) -> Self {
        const MODELS: [&str; 6] = ["pixel_7", "galaxy_s22", "iphone_13", "iphone_14", "redmi_note_11", "ipad_9"];
        const OS: [&str; 4] = ["android_13", "android_14", "ios_16", "ios_17"];
        const LOCALES: [&str; 5] = ["en_us", "en_gb", "de_de", "es_es", "sv_se"];
        const VERSIONS: [&str; 3] = ["1.240.0", "1.241.1", "1.242.0"];
        Self {
            model: MODELS[rng.random_range(0..MODELS.len())],
            os: OS[rng.random_range(0..OS.len())],
            locale: LOCALES[rng.random_range(0..LOCALES.len())],
            app_version: VERSIONS[rng.random_range(0..VERSIONS.len())],
            build_id: hex_id(rng, 8),
        }
    }
}

struct TraceState {
    level: i64,
    in_round: bool,
    gold: i64,
    session_uuid: String,
}

fn hour_of(ts: i64) -> i64 {
    (ts.rem_euclid(DAY_MS)) / HOUR_MS
}

/// Fills every schema field of an event; meaningful fields come from the
/// persona, the rest is plausible device telemetry.
fn fill_fields(
    e: &mut RawEvent,
    p: &PersonaProfile,
    schema: &EventSchema,
    device: &Device,
    state: &mut TraceState,
    rng: &mut impl Rng,
) {
    let pools = &p.pools;
    let won = rng.random_bool(p.skill);
    for spec in &schema.category(e.category).fields {
        let v: FieldValue = match spec.name.as_str() {
            "client_ts" => e.timestamp.into(),
            "hour" => hour_of(e.timestamp).into(),
            "level" => state.level.into(),
            "result" => if won { "win" } else { "lose" }.into(),
            "moves_left" => (if won { rng.random_range(1..=15i64) } else { 0 }).into(),
            "stars" => (if won { rng.random_range(1..=3i64) } else { 0 }).into(),
            "gold_balance" => state.gold.into(),
            "item" => pick(rng, &pools.items).into(),
            "price" => {
                let prices = [0.99, 2.99, 4.99, 9.99, 24.99];
                prices[rng.random_range(0..prices.len())].into()
            }
            "currency" => "usd".into(),
            "reward_type" => pick(rng, &pools.rewards).into(),
            "popup_name" => pick(rng, &pools.popups).into(),
            "kind" => pick(rng, &pools.notifications).into(),
            "action" => pick(rng, &pools.social_actions).into(),
            "quest_id" => pick(rng, &pools.quests).into(),
            "booster" => pick(rng, &pools.boosters).into(),
            "placement" => pick(rng, &pools.ads).into(),
            "app_version" => device.app_version.into(),
            "os_version" => device.os.into(),
            "device_model" => device.model.into(),
            "locale" => device.locale.into(),
            "build_id" => device.build_id.as_str().into(),
            "session_uuid" => state.session_uuid.as_str().into(),
            "network" => ["wifi", "4g", "5g"][rng.random_range(0..3)].into(),
            "transaction_id" | "target_id" => hex_id(rng, 12).into(),
            _ => match spec.kind {
                ValueKind::Integer => rng.random_range(0..1000i64).into(),
                ValueKind::Float => ((rng.random_range(0..100_000) as f64) / 100.0).into(),
                ValueKind::Boolean => rng.random_bool(0.5).into(),
                ValueKind::String => format!("v{}", rng.random_range(0..8)).into(),
            },
        };
        e.fields.insert(spec.name.clone(), v);
    }
    match e.category {
        Category::GameEnd => {
            if won {
                state.level += 1;
                state.gold += rng.random_range(0..3);
            }
        }
        Category::Purchase => state.gold += 50,
        _ => {}
    }
}

fn slot_category(p: &PersonaProfile, state: &TraceState, rng: &mut impl Rng) -> Category {
    if rng.random_bool(p.collect_rate) {
        return Category::CollectReward;
    }
    let w = &p.weights;
    let (game, booster, quest) = if p.gameplay {
        (w.game, w.booster, w.quest)
    } else {
        (0.0, 0.0, 0.0)
    };
    let options = [
        (Category::GameStart, game),
        (Category::BoosterUsed, booster),
        (Category::PopupShown, w.popup),
        (Category::Notification, w.notification),
        (Category::AdView, w.ad),
        (Category::Quest, quest),
        (Category::DeviceLog, w.device),
    ];
    let dist = WeightedIndex::new(options.iter().map(|o| o.1)).unwrap_or_else(|_| {
        WeightedIndex::new([1.0]).expect("single weight")
    });
    match options.get(dist.sample(rng)) {
        Some((Category::GameStart, _)) if state.in_round => Category::GameEnd,
        Some((c, _)) => *c,
        None => Category::PopupShown,
    }
}

/// Samples one player's history over `days` days.
pub fn sample_player_trace(
    player_id: &str,
    p: &PersonaProfile,
    days: u32,
    seed: u64,
    schema: &EventSchema,
) -> PlayerTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = PlayerTrace {
        player_id: player_id.to_string(),
        persona: p.name.clone(),
        events: Vec::new(),
        session_lengths: Vec::new(),
    };
    let expected = days as f64 * p.session_frequency;
    if expected <= 0.0 {
        return trace;
    }
    let n_sessions = shifted_geometric(&mut rng, expected);

    // Candidate starts at preferred hours; pushed later when they would
    // violate the inactivity gap after the previous session.
    let mut starts: Vec<i64> = (0..n_sessions)
        .map(|_| {
            let day = rng.random_range(0..days.max(1)) as i64;
            let hour = p.pools.hours[rng.random_range(0..p.pools.hours.len())] as i64;
            EPOCH_MS + day * DAY_MS + hour * HOUR_MS + rng.random_range(0..HOUR_MS)
        })
        .collect();
    starts.sort_unstable();

    let device = Device::sample(&mut rng);
    let (lo, hi) = p.pools.levels;
    let mut state = TraceState {
        level: rng.random_range(lo..=hi.max(lo)),
        in_round: false,
        gold: rng.random_range(0..200),
        session_uuid: String::new(),
    };
    let mut prev_end: Option<i64> = None;
    for candidate in starts {
        let start = match prev_end {
            Some(end) => candidate.max(end + DEFAULT_GAP_MS + rng.random_range(0..600_000)),
            None => candidate,
        };
        let len = shifted_geometric(&mut rng, p.session_length_mean);
        state.session_uuid = hex_id(&mut rng, 16);
        state.in_round = false;

        let mut cats = vec![Category::AppStart; len];
        let purchase_slot = (len > 1 && rng.random_bool(p.purchase_rate)).then(|| rng.random_range(1..len));
        let social_slot = (len > 1 && rng.random_bool(p.social_rate)).then(|| rng.random_range(1..len));
        let mut ts = start;
        for (i, slot) in cats.iter_mut().enumerate() {
            if i > 0 {
                ts += rng.random_range(1_000..=p.pools.max_event_gap_ms);
                *slot = if Some(i) == purchase_slot {
                    Category::Purchase
                } else if Some(i) == social_slot {
                    Category::Social
                } else {
                    slot_category(p, &state, &mut rng)
                };
                match *slot {
                    Category::GameStart => state.in_round = true,
                    Category::GameEnd => state.in_round = false,
                    _ => {}
                }
            }
            let mut e = RawEvent::new(player_id, ts, *slot);
            fill_fields(&mut e, p, schema, &device, &mut state, &mut rng);
            trace.events.push(e);
        }
        trace.session_lengths.push(len);
        prev_end = Some(ts);
    }
    trace
}

/// A generated corpus: NDJSON text (with injected corruptions), the clean
/// sorted log, and ground-truth persona labels.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub ndjson: String,
    pub log: EventLog,
    /// `(player_id, persona)` in player order.
    pub labels: Vec<(String, String)>,
    /// Ground-truth session lengths per player, in player order.
    pub session_lengths: Vec<Vec<usize>>,
    pub lines: usize,
    pub corrupted: usize,
}

impl Corpus {
    /// Label sidecar: `player_id<TAB>persona` per line.
    pub fn labels_tsv(&self) -> String {
        let mut out = String::new();
        for (p, l) in &self.labels {
            writeln!(out, "{p}\t{l}").unwrap();
        }
        out
    }
}

pub fn player_id(index: usize) -> String {
    format!("p{index:05}")
}

/// Generates a full corpus. Output is identical for identical configs
/// regardless of thread count.
pub fn sample_corpus(cfg: &GenConfig, schema: &EventSchema) -> Result<Corpus> {
    cfg.validate()?;
    let mut assign_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    assign_rng.set_stream(u64::MAX);
    let weights: Vec<f64> = cfg.persona_mix.iter().map(|(_, w)| *w).collect();
    let personas = assign_personas(&weights, cfg.players, &mut assign_rng);

    let traces: Vec<PlayerTrace> = personas
        .par_iter()
        .enumerate()
        .map(|(i, &pi)| {
            let seed = player_seed(cfg.seed, i as u64);
            sample_player_trace(&player_id(i), &cfg.persona_mix[pi].0, cfg.days, seed, schema)
        })
        .collect();

    let labels = traces
        .iter()
        .map(|t| (t.player_id.clone(), t.persona.clone()))
        .collect();
    let session_lengths = traces.iter().map(|t| t.session_lengths.clone()).collect();
    let events: Vec<RawEvent> = traces.into_iter().flat_map(|t| t.events).collect();
    let mut lines: Vec<String> = events.par_iter().map(RawEvent::to_json_line).collect();

    let n_corrupt = (cfg.corruption_rate * lines.len() as f64).round() as usize;
    let mut corrupt_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    corrupt_rng.set_stream(u64::MAX - 1);
    let mut picked = rand::seq::index::sample(&mut corrupt_rng, lines.len(), n_corrupt).into_vec();
    picked.sort_unstable();
    for (k, i) in picked.iter().enumerate() {
        lines[*i] = corrupt_line(&events[*i], k);
    }

    let mut ndjson = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in &lines {
        ndjson.push_str(l);
        ndjson.push('\n');
    }
    let mut log = EventLog::new(events);
    log.sorted = true;
    debug_assert!(log.is_ordered());
    Ok(Corpus {
        ndjson,
        log,
        labels,
        session_lengths,
        lines: lines.len(),
        corrupted: n_corrupt,
    })
}

/// Persona index of every player. Each persona gets `weight * players`
/// players, rounded by largest remainder, and the order is shuffled.
pub fn assign_personas(weights: &[f64], players: usize, rng: &mut impl Rng) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * players as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..weights.len()).collect();
    by_remainder.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let short = players - counts.iter().sum::<usize>();
    for &i in by_remainder.iter().take(short) {
        counts[i] += 1;
    }
    let mut out: Vec<usize> = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect();
    out.shuffle(rng);
    out
}

/// Independent per-player seed (SplitMix64 finalizer over seed and index).
pub fn player_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A record that the lenient parser must reject; `variant` cycles through
/// the failure kinds.
fn corrupt_line(e: &RawEvent, variant: usize) -> String {
    let mut v: Value = serde_json::to_value(e).expect("event serializes");
    let obj = v.as_object_mut().expect("event is an object");
    match variant % 7 {
        0 => {
            let line = e.to_json_line();
            return line[..line.len() / 2].to_string();
        }
        1 => {
            obj.insert("category".into(), Value::from("teleport"));
        }
        2 => {
            obj.remove("ts");
        }
        3 => {
            obj.remove("player_id");
        }
        4 => {
            let fields = obj["fields"].as_object_mut().expect("fields object");
            fields.insert("client_ts".into(), Value::from("yesterday"));
        }
        5 => {
            let fields = obj["fields"].as_object_mut().expect("fields object");
            fields.insert("client_ts".into(), serde_json::json!({ "nested": 1 }));
        }
        _ => return "#### truncated upload ####".to_string(),
    }
    serde_json::to_string(&v).expect("value serializes")
}

/// Counts events per category; used to check planted behavior.
pub fn category_counts(events: &[RawEvent]) -> BTreeMap<Category, usize> {
    let mut m = BTreeMap::new();
    for e in events {
        *m.entry(e.category).or_default() += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{validate_event, ParseMode};

    fn persona(name: &str) -> PersonaProfile {
        PersonaProfile::builtin(name).unwrap()
    }

    #[test]
    fn builtin_personas_are_valid() {
        let all = builtin_personas();
        assert_eq!(all.len(), 8);
        for p in &all {
            p.validate().unwrap();
        }
        GenConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_frequency_means_no_events() {
        let mut p = persona("persistent_casual");
        p.session_frequency = 0.0;
        let t = sample_player_trace("p", &p, 15, 1, &EventSchema::default_schema());
        assert!(t.events.is_empty());
    }

    #[test]
    fn traces_are_deterministic() {
        let schema = EventSchema::default_schema();
        let p = persona("competitive_devoted");
        let a = sample_player_trace("p", &p, 3, 42, &schema);
        let b = sample_player_trace("p", &p, 3, 42, &schema);
        assert_eq!(a, b);
        assert!(!a.events.is_empty());
    }

    #[test]
    fn generated_events_conform_to_schema() {
        let schema = EventSchema::default_schema();
        for p in builtin_personas() {
            let t = sample_player_trace("p", &p, 2, 5, &schema);
            for e in &t.events {
                assert!(validate_event(e, &schema).is_valid(), "{e:?}");
            }
        }
    }

    #[test]
    fn gaps_respect_the_threshold() {
        let schema = EventSchema::default_schema();
        let t = sample_player_trace("p", &persona("persistent_collector"), 5, 9, &schema);
        let mut i = 0;
        for (k, len) in t.session_lengths.iter().enumerate() {
            let s = &t.events[i..i + len];
            assert!(s.windows(2).all(|w| w[1].timestamp - w[0].timestamp < DEFAULT_GAP_MS));
            if k > 0 {
                assert!(s[0].timestamp - t.events[i - 1].timestamp >= DEFAULT_GAP_MS);
            }
            i += len;
        }
        assert_eq!(i, t.events.len());
    }

    #[test]
    fn single_player_single_day() {
        let cfg = GenConfig {
            players: 1,
            days: 1,
            seed: 3,
            ..GenConfig::default()
        };
        let c = sample_corpus(&cfg, &EventSchema::default_schema()).unwrap();
        assert_eq!(c.labels.len(), 1);
        assert!(c.log.events.iter().all(|e| e.player_id == "p00000"));
    }

    #[test]
    fn single_persona_mix() {
        let cfg = GenConfig {
            players: 20,
            days: 1,
            persona_mix: vec![(persona("lean_in_casual"), 1.0)],
            ..GenConfig::default()
        };
        let c = sample_corpus(&cfg, &EventSchema::default_schema()).unwrap();
        assert!(c.labels.iter().all(|(_, l)| l == "lean_in_casual"));
    }

    #[test]
    fn invalid_configs() {
        let bad_mix = GenConfig {
            persona_mix: vec![(persona("lean_in_casual"), 0.5)],
            ..GenConfig::default()
        };
        assert!(bad_mix.validate().is_err());
        let no_players = GenConfig {
            players: 0,
            ..GenConfig::default()
        };
        assert!(no_players.validate().is_err());
        let mut p = persona("lean_in_casual");
        p.skill = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn corruptions_are_all_rejected() {
        let schema = EventSchema::default_schema();
        let e = sample_player_trace("p", &persona("lean_in_casual"), 1, 1, &schema).events[1].clone();
        for k in 0..7 {
            let line = corrupt_line(&e, k);
            let r = crate::ingest::parse_events(line.as_bytes(), &schema, ParseMode::Lenient).unwrap();
            assert_eq!(r.skipped, 1, "variant {k}: {line}");
        }
    }
}
