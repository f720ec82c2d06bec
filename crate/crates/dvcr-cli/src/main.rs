//! `dvcr` — batch command-line surface for the dual-view pipeline.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 config/usage error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dvcr::{Error, Result};

use config::Settings;

#[derive(Parser)]
#[command(name = "dvcr", version, about = "Dual-view web element ranking and action prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Versioned key=value settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic corpus with planted visual context.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory for corpus, screenshots, and manifest.
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        pages: Option<String>,
        #[arg(long)]
        width: Option<String>,
        #[arg(long)]
        height: Option<String>,
        /// Widget groups per page.
        #[arg(long)]
        widgets: Option<String>,
        /// Same-theme distractor groups per page.
        #[arg(long)]
        distractors: Option<String>,
        /// Labels planted around the ground-truth widget (1-4).
        #[arg(long)]
        m_planted: Option<String>,
        /// crosstask (page split) or crossdomain (disjoint themes).
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Train the ranker (and chooser + op head unless --chooser says otherwise).
    Train {
        #[command(flatten)]
        common: Common,
        /// Training corpus (JSONL).
        #[arg(long)]
        corpus: Option<String>,
        /// Screenshot directory; defaults to the corpus directory.
        #[arg(long)]
        screenshots: Option<String>,
        /// Output directory for weights and the loss trace.
        #[arg(long)]
        out: Option<String>,
        /// paper (full-size) or synth (desk-scale) hyperparameters.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        epochs: Option<String>,
        #[arg(long)]
        lr: Option<String>,
        /// Random negatives per positive in ranker training.
        #[arg(long)]
        negatives: Option<String>,
        /// visual, tree, or random neighbor context.
        #[arg(long)]
        neighbor_source: Option<String>,
        /// trained also fits chooser + op head; anything else trains only the ranker.
        #[arg(long)]
        chooser: Option<String>,
    },
    /// Evaluate weights on a corpus: Recall@K, Ele.Acc, Op.F1, Step SR.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        screenshots: Option<String>,
        /// Ranker weights file.
        #[arg(long)]
        ranker: Option<String>,
        /// Chooser weights file (with --chooser trained).
        #[arg(long)]
        chooser_weights: Option<String>,
        /// Op-head weights file (unless --op-oracle).
        #[arg(long)]
        op_weights: Option<String>,
        /// Write the report as JSON here.
        #[arg(long)]
        report: Option<String>,
        /// Second ranker weights file: prints both reports side by side with deltas.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// trained, lexical, scripted:gt, or scripted:none.
        #[arg(long)]
        chooser: Option<String>,
        /// Use each step's ground-truth operation instead of the op head.
        #[arg(long)]
        op_oracle: bool,
        /// Rank ground truth first instead of using ranker weights.
        #[arg(long)]
        oracle_ranker: bool,
        /// dualvcr (neighbor blocks) or bare (element text only).
        #[arg(long)]
        mode: Option<String>,
        /// Neighbors per option block.
        #[arg(long = "m", visible_alias = "M")]
        m: Option<String>,
        /// Candidates forwarded from the ranker into the election.
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        group_size: Option<String>,
        #[arg(long)]
        neighbor_source: Option<String>,
    },
    /// Rank one step's elements and show each candidate's neighbors.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        screenshots: Option<String>,
        #[arg(long)]
        ranker: Option<String>,
        /// Task id as it appears in the corpus.
        #[arg(long)]
        task: String,
        /// Step index within the task.
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long)]
        oracle_ranker: bool,
        #[arg(long = "m", visible_alias = "M")]
        m: Option<String>,
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        neighbor_source: Option<String>,
    },
    /// Predict one step's action and print the full election transcript.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        screenshots: Option<String>,
        #[arg(long)]
        ranker: Option<String>,
        #[arg(long)]
        chooser_weights: Option<String>,
        #[arg(long)]
        op_weights: Option<String>,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long)]
        chooser: Option<String>,
        #[arg(long)]
        op_oracle: bool,
        #[arg(long)]
        oracle_ranker: bool,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long = "m", visible_alias = "M")]
        m: Option<String>,
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        group_size: Option<String>,
        #[arg(long)]
        max_rounds: Option<String>,
        #[arg(long)]
        neighbor_source: Option<String>,
    },
}

/// Defaults, then the config file, then flag overrides in the given order.
fn build_settings(
    config: Option<&Path>,
    overrides: &[(&str, &str, Option<&String>)],
) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        config::apply_file(&mut s, &text)?;
    }
    for (section, key, value) in overrides {
        if let Some(v) = value {
            config::apply(&mut s, section, key, v)?;
        }
    }
    Ok(s)
}

fn flag(b: bool, v: &'static str) -> Option<String> {
    b.then(|| v.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth { common, out, pages, width, height, widgets, distractors, m_planted, split, seed } => {
            let s = build_settings(
                common.config.as_deref(),
                &[
                    ("paths", "out", out.as_ref()),
                    ("synth", "pages", pages.as_ref()),
                    ("synth", "width", width.as_ref()),
                    ("synth", "height", height.as_ref()),
                    ("synth", "widgets", widgets.as_ref()),
                    ("synth", "distractors", distractors.as_ref()),
                    ("synth", "m_planted", m_planted.as_ref()),
                    ("synth", "split", split.as_ref()),
                    ("synth", "seed", seed.as_ref()),
                ],
            )?;
            commands::cmd_synth(&s)
        }
        Cmd::Train { common, corpus, screenshots, out, preset, seed, epochs, lr, negatives, neighbor_source, chooser } => {
            let s = build_settings(
                common.config.as_deref(),
                &[
                    // Preset first so explicit flags override it.
                    ("train", "preset", preset.as_ref()),
                    ("paths", "corpus", corpus.as_ref()),
                    ("paths", "screenshots", screenshots.as_ref()),
                    ("paths", "out", out.as_ref()),
                    ("train", "seed", seed.as_ref()),
                    ("train", "epochs", epochs.as_ref()),
                    ("train", "lr", lr.as_ref()),
                    ("train", "negatives", negatives.as_ref()),
                    ("train", "neighbor_source", neighbor_source.as_ref()),
                    ("predict", "chooser", chooser.as_ref()),
                ],
            )?;
            commands::cmd_train(&s)
        }
        Cmd::Eval { common, corpus, screenshots, ranker, chooser_weights, op_weights, report, compare, chooser, op_oracle, oracle_ranker, mode, m, k, group_size, neighbor_source } => {
            let s = build_settings(
                common.config.as_deref(),
                &[
                    ("paths", "corpus", corpus.as_ref()),
                    ("paths", "screenshots", screenshots.as_ref()),
                    ("paths", "ranker", ranker.as_ref()),
                    ("paths", "chooser", chooser_weights.as_ref()),
                    ("paths", "op", op_weights.as_ref()),
                    ("paths", "report", report.as_ref()),
                    ("predict", "chooser", chooser.as_ref()),
                    ("predict", "op", flag(op_oracle, "oracle").as_ref()),
                    ("predict", "ranker", flag(oracle_ranker, "oracle").as_ref()),
                    ("predict", "mode", mode.as_ref()),
                    ("predict", "m", m.as_ref()),
                    ("predict", "k", k.as_ref()),
                    ("predict", "group_size", group_size.as_ref()),
                    ("predict", "neighbor_source", neighbor_source.as_ref()),
                ],
            )?;
            commands::cmd_eval(&s, compare.as_deref())
        }
        Cmd::Rank { common, corpus, screenshots, ranker, task, step, oracle_ranker, m, k, neighbor_source } => {
            let s = build_settings(
                common.config.as_deref(),
                &[
                    ("paths", "corpus", corpus.as_ref()),
                    ("paths", "screenshots", screenshots.as_ref()),
                    ("paths", "ranker", ranker.as_ref()),
                    ("predict", "ranker", flag(oracle_ranker, "oracle").as_ref()),
                    ("predict", "m", m.as_ref()),
                    ("predict", "k", k.as_ref()),
                    ("predict", "neighbor_source", neighbor_source.as_ref()),
                ],
            )?;
            commands::cmd_rank(&s, &task, step)
        }
        Cmd::Predict { common, corpus, screenshots, ranker, chooser_weights, op_weights, task, step, chooser, op_oracle, oracle_ranker, mode, m, k, group_size, max_rounds, neighbor_source } => {
            let s = build_settings(
                common.config.as_deref(),
                &[
                    ("paths", "corpus", corpus.as_ref()),
                    ("paths", "screenshots", screenshots.as_ref()),
                    ("paths", "ranker", ranker.as_ref()),
                    ("paths", "chooser", chooser_weights.as_ref()),
                    ("paths", "op", op_weights.as_ref()),
                    ("predict", "chooser", chooser.as_ref()),
                    ("predict", "op", flag(op_oracle, "oracle").as_ref()),
                    ("predict", "ranker", flag(oracle_ranker, "oracle").as_ref()),
                    ("predict", "mode", mode.as_ref()),
                    ("predict", "m", m.as_ref()),
                    ("predict", "k", k.as_ref()),
                    ("predict", "group_size", group_size.as_ref()),
                    ("predict", "max_rounds", max_rounds.as_ref()),
                    ("predict", "neighbor_source", neighbor_source.as_ref()),
                ],
            )?;
            commands::cmd_predict(&s, &task, step)
        }
    }
}

/// Config/usage problems exit 2; anything that went wrong mid-run exits 1.
fn error_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::MissingParentLinks { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
