//! One function per subcommand. Each reads its inputs, writes its outputs,
//! and records a manifest next to them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use log::{info, warn};
use serde::Serialize;

use behavior_lm_analysis::fingerprint::{activity_by_player, fingerprints_tsv};
use behavior_lm_analysis::svg::{fingerprint_svg, scatter_svg};
use behavior_lm_analysis::{adjusted_rand_index, embed as embed_rows, fingerprint, tsne, EmbeddingMatrix, Gmm, GmmConfig, Pca, TsneConfig};
use behavior_lm_core::session::{by_player, read_sessions_ndjson, session_stats, sessions_from_indices, sessions_to_ndjson};
use behavior_lm_core::synth::{default_persona_mix, sample_corpus, GenConfig, PersonaProfile};
use behavior_lm_core::vocab::{read_token_file, write_token_file, TokenSequence};
use behavior_lm_core::words::parse_doc_line;
use behavior_lm_core::{
    assemble_document, build_vocab as build_vocabulary, parse_events, segment, sort_events, EventSchema, ParseMode, PreprocessConfig,
    Vocabulary,
};
use behavior_lm_model::checkpoint::{self, CheckpointMeta};
use behavior_lm_model::masking::window_sequences;
use behavior_lm_model::train::{blocks_from_docs, evaluate, split_by_player, train};
use behavior_lm_model::{AdamConfig, Model, TrainConfig};

use crate::io::{read, read_to_string, write};
use crate::manifest::{beside, ManifestBuilder};
use crate::options::*;
use crate::Context;

/// A strict parse that hit a malformed line; reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("malformed input: {0}")]
pub struct ParseFailure(pub String);

fn load_schema(path: Option<&Path>) -> Result<EventSchema> {
    match path {
        Some(p) => {
            crate::io::require(p)?;
            EventSchema::load(p).with_context(|| format!("invalid schema {}", p.display()))
        }
        None => Ok(EventSchema::default_schema()),
    }
}

fn json(value: &impl Serialize) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn emit(m: &mut ManifestBuilder, path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    write(path, data)?;
    m.output(path);
    Ok(())
}

/// A file named `name` in the directory holding `path`.
fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}


pub fn gen_synth(ctx: &Context, opts: &SynthOptions, events_out: &Path, labels_out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("gen-synth", opts);
    m.seed("seed", ctx.seed);
    let persona_mix = if opts.personas.is_empty() {
        default_persona_mix()
    } else {
        let w = 1.0 / opts.personas.len() as f64;
        opts.personas
            .iter()
            .map(|n| PersonaProfile::builtin(n).map(|p| (p, w)).ok_or_else(|| anyhow!("unknown persona `{n}`")))
            .collect::<Result<_>>()?
    };
    let cfg = GenConfig {
        players: opts.players,
        days: opts.days,
        persona_mix,
        seed: ctx.seed,
        corruption_rate: opts.corruption_rate,
    };
    let corpus = sample_corpus(&cfg, &EventSchema::default_schema())?;
    info!("generated {} events for {} players ({} corrupted)", corpus.lines, opts.players, corpus.corrupted);
    emit(&mut m, events_out, &corpus.ndjson)?;
    emit(&mut m, labels_out, corpus.labels_tsv())?;
    m.finish(&beside(events_out, "gen-synth"), ctx)?;
    Ok(())
}

#[derive(Serialize)]
struct IngestReport {
    lines: usize,
    events: usize,
    skipped: usize,
    first_errors: Vec<(usize, String)>,
}

pub fn ingest(ctx: &Context, opts: &IngestOptions, input: &Path, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("ingest", opts);
    let schema = load_schema(opts.schema.as_deref())?;
    let data = read(input)?;
    m.input(input);
    let mode = if opts.strict { ParseMode::Strict } else { ParseMode::Lenient };
    let report = parse_events(&data, &schema, mode).map_err(|e| ParseFailure(format!("{}: {e}", input.display())))?;
    if report.skipped > 0 {
        warn!("skipped {} malformed lines of {}", report.skipped, report.lines);
    }
    let summary = IngestReport {
        lines: report.lines,
        events: report.log.len(),
        skipped: report.skipped,
        first_errors: report.errors.iter().take(20).map(|e| (e.line, e.reason.clone())).collect(),
    };
    let log = sort_events(report.log);
    emit(&mut m, out, log.to_ndjson())?;
    emit(&mut m, &sibling(out, "ingest_report.json"), json(&summary)?)?;
    m.finish(&beside(out, "ingest"), ctx)?;
    Ok(())
}

pub fn sessionize(ctx: &Context, opts: &SessionizeOptions, input: &Path, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("sessionize", opts);
    let schema = load_schema(opts.schema.as_deref())?;
    let data = read(input)?;
    m.input(input);
    let report = parse_events(&data, &schema, ParseMode::Strict).map_err(|e| ParseFailure(format!("{}: {e}", input.display())))?;
    let log = sort_events(report.log);
    let sessions = segment(&log, opts.gap_ms)?;
    info!("{} events in {} sessions", log.len(), sessions.len());
    emit(&mut m, out, sessions_to_ndjson(&sessions))?;
    emit(&mut m, &sibling(out, "session_stats.json"), json(&session_stats(&sessions, 1, 1))?)?;
    m.finish(&beside(out, "sessionize"), ctx)?;
    Ok(())
}

#[derive(Serialize)]
struct WordsReport {
    documents: usize,
    words: usize,
    schema_fields: usize,
    kept_fields: usize,
    kept_fraction: f64,
}

pub fn words(ctx: &Context, opts: &WordsOptions, input: &Path, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("words", opts);
    let schema = load_schema(opts.schema.as_deref())?;
    let cfg = match &opts.preprocess {
        Some(p) => {
            crate::io::require(p)?;
            m.input(p);
            PreprocessConfig::load(p, &schema).with_context(|| format!("invalid preprocessing config {}", p.display()))?
        }
        None => PreprocessConfig::default_config(),
    };
    let data = read(input)?;
    m.input(input);
    let (log, indices) = read_sessions_ndjson(&data, &schema)?;
    let sessions = sessions_from_indices(&log, &indices)?;
    let mut text = String::new();
    let mut n_words = 0;
    let groups = by_player(&sessions);
    for g in &groups {
        let doc = assemble_document(g, &cfg)?;
        n_words += doc.words.len();
        text.push_str(&doc.to_doc_line());
        text.push('\n');
    }
    emit(&mut m, out, text)?;
    let report = WordsReport {
        documents: groups.len(),
        words: n_words,
        schema_fields: schema.total_fields(),
        kept_fields: cfg.kept_field_count(),
        kept_fraction: cfg.kept_field_count() as f64 / schema.total_fields() as f64,
    };
    emit(&mut m, &sibling(out, "words_report.json"), json(&report)?)?;
    m.finish(&beside(out, "words"), ctx)?;
    Ok(())
}

fn read_docs(path: &Path) -> Result<Vec<(String, String)>> {
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            parse_doc_line(l)
                .map(|(p, t)| (p.to_string(), t.to_string()))
                .ok_or_else(|| anyhow!("{}:{}: expected `player_id<TAB>words`", path.display(), n + 1))
        })
        .collect()
}

pub fn build_vocab(ctx: &Context, opts: &VocabOptions, docs: &Path, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("build-vocab", opts);
    let texts: Vec<String> = read_docs(docs)?.into_iter().map(|(_, t)| t).collect();
    m.input(docs);
    let vocab = build_vocabulary(&texts, opts.min_freq)?;
    info!("vocabulary of {} entries", vocab.len());
    emit(&mut m, out, vocab.to_tsv())?;
    m.finish(&beside(out, "build-vocab"), ctx)?;
    Ok(())
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::from_tsv(&read_to_string(path)?).with_context(|| format!("invalid vocabulary {}", path.display()))
}

pub fn tokenize(ctx: &Context, docs: &Path, vocab: &Path, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("tokenize", &());
    let v = load_vocab(vocab)?;
    let seqs: Vec<TokenSequence> = read_docs(docs)?
        .into_iter()
        .map(|(p, t)| TokenSequence::new(p, v.encode(&t)))
        .collect();
    m.input(docs).input(vocab);
    emit(&mut m, out, write_token_file(&seqs))?;
    m.finish(&beside(out, "tokenize"), ctx)?;
    Ok(())
}

fn load_tokens(path: &Path) -> Result<Vec<TokenSequence>> {
    read_token_file(&read_to_string(path)?).with_context(|| format!("invalid token file {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    crate::io::require(path)?;
    checkpoint::load(path).with_context(|| format!("invalid checkpoint {}", path.display()))
}

#[derive(Serialize)]
struct PretrainConfig<'a> {
    model: &'a ModelOptions,
    train: &'a TrainOptions,
}

/// Splits `data` two-to-one by player, trains on the first part and
/// writes `model.ckpt`, per-epoch checkpoints, the metrics log, the split
/// and the held-out tokens into `out_dir`.
pub fn pretrain(ctx: &Context, model_opts: &ModelOptions, opts: &TrainOptions, data: &Path, vocab: &Path, out_dir: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new(
        "pretrain",
        &PretrainConfig {
            model: model_opts,
            train: opts,
        },
    );
    m.seed("seed", ctx.seed).seed("split_seed", opts.split_seed).seed("eval_seed", opts.eval_seed);
    let docs = load_tokens(data)?;
    let v = load_vocab(vocab)?;
    m.input(data).input(vocab);
    let cfg = model_opts.resolve(v.len(), ctx.seed)?;
    let (train_docs, test_docs) = split_by_player(&docs, opts.split_seed);
    let mut split = String::new();
    for (docs, name) in [(&train_docs, "train"), (&test_docs, "test")] {
        for d in docs {
            writeln!(split, "{}\t{name}", d.player_id)?;
        }
    }
    emit(&mut m, &out_dir.join("split.tsv"), split)?;
    emit(&mut m, &out_dir.join("test.tok"), write_token_file(&test_docs))?;

    let train_blocks = blocks_from_docs(&train_docs, cfg.block_size);
    let test_blocks = blocks_from_docs(&test_docs, cfg.block_size);
    let mut model = Model::<f32>::init(cfg)?;
    info!(
        "training {} parameters on {} blocks ({} held out)",
        model.param_count(),
        train_blocks.len(),
        test_blocks.len()
    );
    let mut train_players: Vec<String> = train_docs.iter().map(|d| d.player_id.clone()).collect();
    train_players.sort();
    train_players.dedup();
    let tc = TrainConfig {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        grad_accum: opts.grad_accum,
        adam: AdamConfig {
            lr: opts.lr,
            ..AdamConfig::default()
        },
        seed: ctx.seed,
        eval_seed: opts.eval_seed,
    };
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).with_context(|| format!("cannot create {}", ckpt_dir.display()))?;
    let mut ckpts = Vec::new();
    let log = train(&mut model, &train_blocks, &test_blocks, &tc, |model, e| {
        let meta = CheckpointMeta {
            epoch: e.epoch,
            seed: ctx.seed,
            train_players: train_players.clone(),
        };
        let path = ckpt_dir.join(format!("epoch-{:03}.ckpt", e.epoch));
        checkpoint::save(&path, model, &meta)?;
        ckpts.push(path);
        match e.heldout {
            Some(h) => info!(
                "epoch {}: train ce {:.4} acc {:.4}, held-out ce {:.4} acc {:.4}",
                e.epoch, e.train.ce, e.train.accuracy, h.ce, h.accuracy
            ),
            None => info!("epoch {}: train ce {:.4} acc {:.4}", e.epoch, e.train.ce, e.train.accuracy),
        }
        Ok(ControlFlow::Continue(()))
    })?;
    for p in &ckpts {
        m.output(p);
    }
    emit(&mut m, &out_dir.join("train_log.tsv"), log.to_tsv())?;
    let meta = CheckpointMeta {
        epoch: opts.epochs,
        seed: ctx.seed,
        train_players,
    };
    emit(&mut m, &out_dir.join("model.ckpt"), checkpoint::to_bytes(&model, &meta))?;
    m.finish(&out_dir.join("pretrain.manifest.json"), ctx)?;
    Ok(())
}

/// A checkpoint argument: a file, or a pretraining directory holding
/// `model.ckpt`.
fn checkpoint_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.ckpt")
    } else {
        path.to_path_buf()
    }
}

/// Held-out metrics for each checkpoint plus their mean and sample
/// standard deviation. Every player in `data` must be unseen by every run.
pub fn eval(ctx: &Context, opts: &TrainOptions, data: &Path, ckpts: &[PathBuf], runs: Option<usize>, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("eval", opts);
    m.seed("eval_seed", opts.eval_seed);
    if ckpts.is_empty() {
        bail!("at least one checkpoint is required");
    }
    if let Some(n) = runs {
        if n != ckpts.len() {
            bail!("--runs {n} given but {} checkpoints supplied", ckpts.len());
        }
    }
    let docs = load_tokens(data)?;
    m.input(data);
    let mut loaded = Vec::new();
    let mut names = Vec::new();
    for p in ckpts {
        let file = checkpoint_file(p);
        loaded.push(load_checkpoint(&file)?);
        m.input(&file);
        names.push(p.display().to_string());
    }
    let runs: Vec<(String, &Model<f32>, &CheckpointMeta)> = names
        .into_iter()
        .zip(&loaded)
        .map(|(name, (model, meta))| (name, model, meta))
        .collect();
    let report = evaluate(&runs, &docs, opts.batch_size, opts.eval_seed)?;
    emit(&mut m, out, report.to_tsv())?;
    m.finish(&beside(out, "eval"), ctx)?;
    Ok(())
}

/// Per-player embeddings (the mean of the player's block embeddings) to
/// `out`, and optionally the per-block embeddings to `blocks_out`.
pub fn embed(ctx: &Context, opts: &EmbedOptions, ckpt: &Path, data: &Path, out: &Path, blocks_out: Option<&Path>) -> Result<()> {
    let mut m = ManifestBuilder::new("embed", opts);
    let docs = load_tokens(data)?;
    let ckpt = checkpoint_file(ckpt);
    let (model, _) = load_checkpoint(&ckpt)?;
    m.input(data).input(&ckpt);
    let mut ids = Vec::new();
    let mut blocks = Vec::new();
    for d in &docs {
        for b in window_sequences(&d.ids, model.config.block_size) {
            ids.push(d.player_id.clone());
            blocks.push(b);
        }
    }
    let per_block = embed_rows(&model, &ids, &blocks, opts.batch_size)?;
    let per_player = per_block.mean_by_id();
    info!("{} blocks pooled into {} player embeddings", per_block.rows(), per_player.rows());
    emit(&mut m, out, per_player.to_bytes())?;
    emit(&mut m, &keys_path(out), per_player.keys_text())?;
    if let Some(b) = blocks_out {
        emit(&mut m, b, per_block.to_bytes())?;
        emit(&mut m, &keys_path(b), per_block.keys_text())?;
    }
    m.finish(&beside(out, "embed"), ctx)?;
    Ok(())
}

/// Sidecar key list of an embeddings file.
pub fn keys_path(embeddings: &Path) -> PathBuf {
    embeddings.with_extension("keys")
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = read(path)?;
    let keys = read_to_string(&keys_path(path))?;
    EmbeddingMatrix::from_bytes(&bytes, &keys).with_context(|| format!("invalid embeddings {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ClusterReport {
    pub rows: usize,
    pub pca_components: usize,
    pub pca_orthonormality_error: f64,
    pub tsne_perplexity: f64,
    pub tsne_initial_kl: f64,
    pub tsne_final_kl: f64,
    pub gmm_iterations: usize,
    pub gmm_converged: bool,
    pub gmm_log_likelihood_monotone: bool,
    pub adjusted_rand_index: Option<f64>,
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('\t')
                .map(|(p, s)| (p.to_string(), s.to_string()))
                .ok_or_else(|| anyhow!("{}: expected `player_id<TAB>label`", path.display()))
        })
        .collect()
}

/// Files read and written by `cluster`.
pub struct ClusterPaths<'a> {
    pub embeddings: &'a Path,
    /// Sessions, for per-cluster behavior fingerprints.
    pub sessions: Option<&'a Path>,
    /// Planted labels, for the adjusted Rand index.
    pub labels: Option<&'a Path>,
    /// Cluster assignments; the other outputs go next to it.
    pub out: &'a Path,
    pub plot: &'a Path,
}

/// PCA, then t-SNE for display and a Gaussian mixture for the clusters.
pub fn cluster(ctx: &Context, opts: &ClusterOptions, paths: &ClusterPaths<'_>) -> Result<ClusterReport> {
    let mut m = ManifestBuilder::new("cluster", opts);
    m.seed("seed", ctx.seed);
    let out = paths.out;
    let emb = load_embeddings(paths.embeddings)?;
    m.input(paths.embeddings).input(&keys_path(paths.embeddings));
    let (rows, dims) = (emb.rows(), emb.dims);
    if rows < 2 {
        bail!("need at least two embeddings, found {rows}");
    }
    let k_pca = opts.pca_components.min(dims).min(rows - 1);
    if k_pca < opts.pca_components {
        warn!("using {k_pca} principal components ({rows} rows, {dims} dims)");
    }
    let pca = Pca::fit(&emb.data, rows, dims, k_pca)?;
    let reduced = pca.transform(&emb.data)?;
    let mut pca_tsv = String::from("component\texplained_variance\n");
    for (i, v) in pca.explained_variance.iter().enumerate() {
        writeln!(pca_tsv, "{i}\t{v:.6e}")?;
    }
    emit(&mut m, &sibling(out, "pca.tsv"), pca_tsv)?;
    let mut comps = String::new();
    for row in pca.components.chunks(dims) {
        let cols: Vec<String> = row.iter().map(f64::to_string).collect();
        comps.push_str(&cols.join("\t"));
        comps.push('\n');
    }
    emit(&mut m, &sibling(out, "pca_components.tsv"), comps)?;

    let max_perp = (rows - 1) as f64 / 3.0;
    let perplexity = opts.perplexity.min(max_perp);
    if perplexity < opts.perplexity {
        warn!("lowering t-SNE perplexity to {perplexity:.2} for {rows} rows");
    }
    let ts = tsne(
        &reduced,
        rows,
        k_pca,
        &TsneConfig {
            perplexity,
            iterations: opts.tsne_iterations,
            seed: ctx.seed,
            ..TsneConfig::default()
        },
    )?;
    let mut tsne_tsv = String::from("player\tx\ty\n");
    for (id, p) in emb.ids.iter().zip(ts.coords.chunks(2)) {
        writeln!(tsne_tsv, "{id}\t{:.6}\t{:.6}", p[0], p[1])?;
    }
    emit(&mut m, &sibling(out, "tsne.tsv"), tsne_tsv)?;

    let (space, space_dims) = match opts.cluster_space {
        ClusterSpace::Pca => (&reduced, k_pca),
        ClusterSpace::Tsne => (&ts.coords, 2),
    };
    let gmm = Gmm::fit(space, rows, space_dims, &GmmConfig::new(opts.k, ctx.seed))?;
    let assign = gmm.predict(space)?;
    let mut trace = String::from("iteration\tmean_log_likelihood\n");
    for (i, ll) in gmm.log_likelihood.iter().enumerate() {
        writeln!(trace, "{i}\t{ll:.10}")?;
    }
    emit(&mut m, &sibling(out, "gmm_trace.tsv"), trace)?;
    let mut assign_tsv = String::from("player\tcluster\n");
    for (id, c) in emb.ids.iter().zip(&assign) {
        writeln!(assign_tsv, "{id}\t{c}")?;
    }
    emit(&mut m, out, assign_tsv)?;
    emit(&mut m, paths.plot, scatter_svg(&ts.coords, &assign))?;

    if let Some(path) = paths.sessions {
        let data = read(path)?;
        m.input(path);
        let (log, idx) = read_sessions_ndjson(&data, &EventSchema::default_schema())?;
        let sessions = sessions_from_indices(&log, &idx)?;
        let activity = activity_by_player(&sessions);
        let pairs: Vec<(String, usize)> = emb.ids.iter().cloned().zip(assign.iter().copied()).collect();
        let fps = fingerprint(&pairs, &activity)?;
        emit(&mut m, &sibling(out, "fingerprints.tsv"), fingerprints_tsv(&fps))?;
        emit(&mut m, &sibling(out, "fingerprints.svg"), fingerprint_svg(&fps))?;
    }

    let ari = match paths.labels {
        Some(path) => {
            let labels = read_labels(path)?;
            m.input(path);
            let mut names: Vec<&String> = labels.values().collect();
            names.sort();
            names.dedup();
            let truth = emb
                .ids
                .iter()
                .map(|id| {
                    let l = labels.get(id).ok_or_else(|| anyhow!("no label for player `{id}`"))?;
                    Ok(names.binary_search(&l).expect("label was collected"))
                })
                .collect::<Result<Vec<usize>>>()?;
            Some(adjusted_rand_index(&truth, &assign))
        }
        None => None,
    };
    let report = ClusterReport {
        rows,
        pca_components: k_pca,
        pca_orthonormality_error: pca.orthonormality_error(),
        tsne_perplexity: perplexity,
        tsne_initial_kl: ts.kl_trace.first().map_or(f64::NAN, |t| t.1),
        tsne_final_kl: ts.kl_trace.last().map_or(f64::NAN, |t| t.1),
        gmm_iterations: gmm.log_likelihood.len(),
        gmm_converged: gmm.converged,
        gmm_log_likelihood_monotone: gmm.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9),
        adjusted_rand_index: ari,
    };
    if let Some(a) = ari {
        info!("adjusted Rand index against labels: {a:.4}");
    }
    emit(&mut m, &sibling(out, "cluster_report.json"), json(&report)?)?;
    m.finish(&beside(out, "cluster"), ctx)?;
    Ok(report)
}
