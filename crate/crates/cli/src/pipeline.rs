//! All stages in order, each writing into its own subdirectory of `out`.

use std::path::Path;

use anyhow::{Context as _, Result};
use log::info;

use crate::manifest::{self, ManifestBuilder};
use crate::options::PipelineConfig;
use crate::stages::{self, ClusterPaths, ClusterReport};
use crate::Context;

/// Stage manifests in run order, relative to the pipeline directory.
pub const STAGE_MANIFESTS: [&str; 10] = [
    "synth/gen-synth.manifest.json",
    "ingest/ingest.manifest.json",
    "sessions/sessionize.manifest.json",
    "words/words.manifest.json",
    "vocab/build-vocab.manifest.json",
    "tokens/tokenize.manifest.json",
    "pretrain/pretrain.manifest.json",
    "eval/eval.manifest.json",
    "embed/embed.manifest.json",
    "cluster/cluster.manifest.json",
];

pub fn run(ctx: &Context, cfg: &PipelineConfig, out: &Path) -> Result<ClusterReport> {
    let mut m = ManifestBuilder::new("pipeline", cfg);
    m.seed("seed", ctx.seed);
    let p = |rel: &str| out.join(rel);

    let events = p("synth/events.ndjson");
    let labels = p("synth/labels.tsv");
    let sorted = p("ingest/events.sorted.ndjson");
    let sessions = p("sessions/sessions.ndjson");
    let docs = p("words/docs.txt");
    let vocab = p("vocab/vocab.tsv");
    let tokens = p("tokens/docs.tok");
    let pretrain_dir = p("pretrain");
    let embeddings = p("embed/players.emb");

    stage("gen-synth", || stages::gen_synth(ctx, &cfg.synth, &events, &labels))?;
    stage("ingest", || stages::ingest(ctx, &cfg.ingest, &events, &sorted))?;
    stage("sessionize", || stages::sessionize(ctx, &cfg.sessionize, &sorted, &sessions))?;
    stage("words", || stages::words(ctx, &cfg.words, &sessions, &docs))?;
    stage("build-vocab", || stages::build_vocab(ctx, &cfg.vocab, &docs, &vocab))?;
    stage("tokenize", || stages::tokenize(ctx, &docs, &vocab, &tokens))?;
    stage("pretrain", || stages::pretrain(ctx, &cfg.model, &cfg.train, &tokens, &vocab, &pretrain_dir))?;
    stage("eval", || {
        let test = pretrain_dir.join("test.tok");
        stages::eval(ctx, &cfg.train, &test, std::slice::from_ref(&pretrain_dir), None, &p("eval/metrics.tsv"))
    })?;
    stage("embed", || stages::embed(ctx, &cfg.embed, &pretrain_dir, &tokens, &embeddings, None))?;
    let report = stage("cluster", || {
        let paths = ClusterPaths {
            embeddings: &embeddings,
            sessions: Some(&sessions),
            labels: Some(&labels),
            out: &p("cluster/clusters.tsv"),
            plot: &p("cluster/tsne.svg"),
        };
        stages::cluster(ctx, &cfg.cluster, &paths)
    })?;

    // Stage manifests carry wall-clock durations, so the pipeline manifest
    // lists the stages' data outputs rather than the manifests themselves.
    for rel in STAGE_MANIFESTS {
        let path = p(rel);
        let dir = path.parent().unwrap_or(out);
        for f in manifest::load(&path)?.outputs {
            m.output(&dir.join(f.path));
        }
    }
    m.finish(&p("pipeline.manifest.json"), ctx)?;
    Ok(report)
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().with_context(|| format!("stage {name} failed"))
}
