//! Command-line front end for the behavior language model pipeline.

pub mod io;
pub mod manifest;
pub mod options;
pub mod pipeline;
pub mod stages;

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::options::*;

/// Exit statuses. Usage and missing-input errors follow BSD sysexits.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 64;
    /// Strict-mode parse failure.
    pub const PARSE: i32 = 2;
    pub const NO_INPUT: i32 = 66;
}

/// What every stage needs to know about the invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub argv: Vec<String>,
    pub threads: usize,
    pub seed: u64,
}

#[derive(Debug, Parser)]
#[command(name = "behavior-lm", version, about = "Player behavior language model pipeline")]
pub struct Cli {
    /// Master seed; overrides the config file and BEHAVIOR_LM_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event log from player personas.
    GenSynth {
        /// Pipeline TOML; the [synth] section and seed are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        players: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
        /// Persona name; repeat for a uniform mix.
        #[arg(long = "persona")]
        personas: Vec<String>,
        #[arg(long)]
        corruption_rate: Option<f64>,
        /// Event log to write (NDJSON).
        #[arg(long)]
        out: PathBuf,
        /// Planted labels, `player_id<TAB>persona`.
        #[arg(long)]
        labels: PathBuf,
    },
    /// Parse, validate and sort an NDJSON event log.
    Ingest {
        /// Pipeline TOML; the [ingest] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail on the first malformed line instead of skipping it.
        #[arg(long)]
        strict: bool,
        /// Event schema TOML (defaults to the built-in schema).
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Split each player's events into sessions.
    Sessionize {
        /// Pipeline TOML; the [sessionize] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inactivity gap, in minutes, that starts a new session.
        #[arg(long)]
        gap_min: Option<u32>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Event schema TOML (defaults to the built-in schema).
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Turn sessions into one word document per player.
    Words {
        /// Preprocessing TOML (filters, bins, grouping rules).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Event schema TOML (defaults to the built-in schema).
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Build the word vocabulary from documents.
    BuildVocab {
        /// Pipeline TOML; the [vocab] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave out words seen fewer times than this.
        #[arg(long)]
        min_freq: Option<u64>,
    },
    /// Map documents to token ids.
    Tokenize {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the encoder with masked language modelling.
    Pretrain {
        /// Pipeline TOML; the [model] and [train] sections and seed are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Token file of all documents; it is split two-to-one by player.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Held-out masked-token metrics for one or more checkpoints.
    Eval {
        /// Pipeline TOML; batch size and eval seed come from [train].
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint file or pretraining directory; repeat for several runs.
        #[arg(long = "ckpt", required = true)]
        ckpts: Vec<PathBuf>,
        /// Held-out token file.
        #[arg(long)]
        data: PathBuf,
        /// Expected number of runs.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Max-pooled player embeddings from a checkpoint.
    Embed {
        /// Pipeline TOML; the [embed] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        batch: Option<usize>,
        /// Per-player embeddings; keys go to the same path with `.keys`.
        #[arg(long)]
        out: PathBuf,
        /// Also write one embedding per block.
        #[arg(long)]
        blocks_out: Option<PathBuf>,
    },
    /// PCA, t-SNE and Gaussian mixture clustering of embeddings.
    Cluster {
        /// Pipeline TOML; the [cluster] section and seed are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Embedding matrix written by `embed`.
        #[arg(long)]
        embeddings: PathBuf,
        /// Number of mixture components.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        pca_components: Option<usize>,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        tsne_iterations: Option<usize>,
        /// Space the mixture is fitted in.
        #[arg(long, value_enum)]
        cluster_space: Option<ClusterSpace>,
        /// Sessions, for per-cluster behavior fingerprints.
        #[arg(long)]
        sessions: Option<PathBuf>,
        /// `player_id<TAB>label` file, for the adjusted Rand index.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Cluster assignments; reports and plots go next to it.
        #[arg(long)]
        out: PathBuf,
        /// t-SNE scatter plot (defaults to tsne.svg next to --out).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run every stage from synthetic generation to clustering.
    Pipeline {
        /// Pipeline TOML with one section per stage.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; each stage writes a subdirectory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// small, medium or large.
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Tokens attended on each side.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sequences per micro-batch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Micro-batches per optimizer update.
    #[arg(long)]
    pub accum: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn set_opt<T>(dst: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *dst = v;
    }
}

impl Command {
    /// The pipeline-format config file, if this subcommand takes one.
    fn pipeline_config(&self) -> Option<&Path> {
        match self {
            Command::GenSynth { config, .. }
            | Command::Ingest { config, .. }
            | Command::Sessionize { config, .. }
            | Command::BuildVocab { config, .. }
            | Command::Pretrain { config, .. }
            | Command::Eval { config, .. }
            | Command::Embed { config, .. }
            | Command::Cluster { config, .. }
            | Command::Pipeline { config, .. } => config.as_deref(),
            Command::Words { .. } | Command::Tokenize { .. } => None,
        }
    }
}

/// The whole program: logging setup, argument parsing, dispatch, and the
/// exit status. `argv[0]` is the program name.
pub fn main_with_args(argv: Vec<String>) -> u8 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::USAGE,
            } as u8;
        }
    };
    match run(cli, argv) {
        Ok(()) => exit::OK as u8,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e) as u8
        }
    }
}

/// Runs one parsed invocation.
pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let mut cfg = PipelineConfig::load_opt(cli.command.pipeline_config())?;
    let seed = resolve_seed(cli.seed, cfg.seed)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = Context {
        argv,
        threads: rayon::current_num_threads(),
        seed,
    };
    match cli.command {
        Command::GenSynth {
            players,
            days,
            personas,
            corruption_rate,
            out,
            labels,
            ..
        } => {
            let o = &mut cfg.synth;
            set(&mut o.players, players);
            set(&mut o.days, days);
            if !personas.is_empty() {
                o.personas = personas;
            }
            set(&mut o.corruption_rate, corruption_rate);
            stages::gen_synth(&ctx, o, &out, &labels)
        }
        Command::Ingest {
            input,
            out,
            strict,
            schema,
            ..
        } => {
            let o = &mut cfg.ingest;
            o.strict |= strict;
            set_opt(&mut o.schema, schema);
            stages::ingest(&ctx, o, &input, &out)
        }
        Command::Sessionize {
            gap_min,
            input,
            out,
            schema,
            ..
        } => {
            let o = &mut cfg.sessionize;
            set(&mut o.gap_ms, gap_min.map(|m| i64::from(m) * 60_000));
            set_opt(&mut o.schema, schema);
            stages::sessionize(&ctx, o, &input, &out)
        }
        Command::Words {
            config,
            input,
            out,
            schema,
        } => {
            let o = WordsOptions {
                preprocess: config,
                schema,
            };
            stages::words(&ctx, &o, &input, &out)
        }
        Command::BuildVocab {
            input, out, min_freq, ..
        } => {
            set(&mut cfg.vocab.min_freq, min_freq);
            stages::build_vocab(&ctx, &cfg.vocab, &input, &out)
        }
        Command::Tokenize { vocab, input, out } => stages::tokenize(&ctx, &input, &vocab, &out),
        Command::Pretrain {
            data,
            vocab,
            out,
            model,
            train,
            ..
        } => {
            let m = &mut cfg.model;
            set_opt(&mut m.preset, model.size);
            set_opt(&mut m.layers, model.layers);
            set_opt(&mut m.heads, model.heads);
            set_opt(&mut m.dims, model.dims);
            set_opt(&mut m.block_size, model.block_size);
            set_opt(&mut m.window, model.window);
            set(&mut m.mask_rate, model.mask_rate);
            let t = &mut cfg.train;
            set(&mut t.epochs, train.epochs);
            set(&mut t.batch_size, train.batch);
            set(&mut t.grad_accum, train.accum);
            set(&mut t.lr, train.lr);
            stages::pretrain(&ctx, &cfg.model, &cfg.train, &data, &vocab, &out)
        }
        Command::Eval {
            ckpts,
            data,
            runs,
            batch,
            out,
            ..
        } => {
            set(&mut cfg.train.batch_size, batch);
            stages::eval(&ctx, &cfg.train, &data, &ckpts, runs, &out)
        }
        Command::Embed {
            ckpt,
            data,
            batch,
            out,
            blocks_out,
            ..
        } => {
            set(&mut cfg.embed.batch_size, batch);
            stages::embed(&ctx, &cfg.embed, &ckpt, &data, &out, blocks_out.as_deref())
        }
        Command::Cluster {
            embeddings,
            k,
            pca_components,
            perplexity,
            tsne_iterations,
            cluster_space,
            sessions,
            labels,
            out,
            plot,
            ..
        } => {
            let o = &mut cfg.cluster;
            set(&mut o.k, k);
            set(&mut o.pca_components, pca_components);
            set(&mut o.perplexity, perplexity);
            set(&mut o.tsne_iterations, tsne_iterations);
            set(&mut o.cluster_space, cluster_space);
            let plot = plot.unwrap_or_else(|| out.parent().unwrap_or(Path::new("")).join("tsne.svg"));
            let paths = stages::ClusterPaths {
                embeddings: &embeddings,
                sessions: sessions.as_deref(),
                labels: labels.as_deref(),
                out: &out,
                plot: &plot,
            };
            stages::cluster(&ctx, o, &paths).map(|_| ())
        }
        Command::Pipeline { out, .. } => pipeline::run(&ctx, &cfg, &out).map(|_| ()),
    }
}

/// Maps an error chain to its exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<io::MissingInput>() {
            return exit::NO_INPUT;
        }
        if cause.is::<stages::ParseFailure>() {
            return exit::PARSE;
        }
    }
    exit::FAILURE
}

/// The path named by a missing-input error, if that is what failed.
pub fn missing_path(err: &anyhow::Error) -> Option<&Path> {
    err.chain().find_map(|c| c.downcast_ref::<io::MissingInput>()).map(|m| m.0.as_path())
}
