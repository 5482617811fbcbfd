//! `judgeflow`: run the retrieval, fusion, reward and training pipeline
//! from one config file.
//!
//! Exit status: 0 success, 2 invalid input or configuration, 3 backend
//! failure, 4 internal invariant violation.

mod commands;
mod config;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::*;
use pipeline::{CliError, Env};

#[derive(Parser)]
#[command(name = "judgeflow", version, about = "Hybrid legal-evidence retrieval, rubric rewards and GRPO training")]
struct Cli {
    /// Pipeline config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Out {
    /// Output directory; defaults to `<paths.outputs>/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StoreArgs {
    /// Store snapshot written by `ingest`.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Directory written by `build-index`.
    #[arg(long)]
    index_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic statute corpus and multi-issue cases.
    GenerateFixture {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        statutes: Option<usize>,
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        precedents: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate corpus and case files and write a store snapshot.
    Ingest {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        cases: Option<PathBuf>,
    },
    /// Build the sparse index and, if configured, the dense index.
    BuildIndex {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Rank the corpus for every case (or one ad-hoc query) on a single route.
    Search {
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        inputs: StoreArgs,
        #[arg(long, value_enum, default_value = "standard")]
        route: SearchRoute,
        #[arg(long)]
        top_k: Option<usize>,
        /// Search this text instead of the stored cases.
        #[arg(long)]
        query: Option<String>,
    },
    /// Plan sub-queries, recall, rerank and select evidence for every case.
    AgentRun {
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        inputs: StoreArgs,
    },
    /// Weighted reciprocal rank fusion of the agentic and standard rankings.
    Fuse {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        agentic: Option<PathBuf>,
        #[arg(long)]
        standard: Option<PathBuf>,
        /// For example `agent=2.0,std=1.0`.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        k_rrf: Option<f64>,
        #[arg(long)]
        top_n: Option<usize>,
        /// Fuse statutes and precedents separately (needs the store).
        #[arg(long)]
        per_kind: bool,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Mine K-fold hard-negative training triples.
    MineTriples {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        n_neg: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Write a judgment per case from its top-ranked evidence.
    Generate {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        rankings: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        evidence_n: Option<usize>,
    },
    /// Rubric reward for candidate judgments.
    ScoreJudgment {
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        judgments: JudgmentArgs,
    },
    /// Train the toy categorical policy with group-relative advantages.
    GrpoTrain {
        #[command(flatten)]
        out: Out,
        /// Required: only the built-in toy judgment task is supported.
        #[arg(long)]
        toy: bool,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        group: Option<usize>,
        #[arg(long)]
        kl_beta: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        inputs: Option<usize>,
    },
    /// P@k, R@k and MRR of a ranking file against the gold evidence.
    EvalRetrieval {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        rankings: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Penalty accuracy, charge and statute P/R/F1, and section similarity.
    EvalGeneration {
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        judgments: JudgmentArgs,
    },
    /// Reward groups for the query-planning and selection stages.
    ExportRollouts {
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        inputs: StoreArgs,
        /// `agent_runs.jsonl` written by `agent-run`.
        #[arg(long)]
        agent_runs: Option<PathBuf>,
    },
}

#[derive(Args)]
struct JudgmentArgs {
    /// JSONL with `case_id` and `text`; defaults to the `generate` output.
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Score each case's gold judgment instead of candidates.
    #[arg(long, conflicts_with = "candidates")]
    gold: bool,
}

impl JudgmentArgs {
    fn opts(&self) -> JudgmentOpts<'_> {
        JudgmentOpts {
            candidates: self.candidates.as_deref(),
            store: self.store.as_deref(),
            gold: self.gold,
        }
    }
}

impl StoreArgs {
    fn opts(&self) -> StoreOpts<'_> {
        StoreOpts {
            store: self.store.as_deref(),
            index_dir: self.index_dir.as_deref(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut env = Env::load(cli.config.as_deref())?;
    let dir = |env: &Env, out: &Out, name: &str| env.out_dir(out.out.as_deref(), name);
    match &cli.command {
        Command::GenerateFixture { out, statutes, cases, precedents, seed } => {
            let d = dir(&env, out, "fixture");
            let opts = FixtureOpts {
                statutes: *statutes,
                cases: *cases,
                precedents: *precedents,
                seed: *seed,
            };
            generate_fixture(&mut env, &d, opts)
        }
        Command::Ingest { out, corpus, cases } => {
            env.config.validate()?;
            ingest(&env, &dir(&env, out, "ingest"), corpus.as_deref(), cases.as_deref())
        }
        Command::BuildIndex { out, store } => {
            env.config.validate()?;
            let d = out.out.clone().unwrap_or_else(|| env.index_dir(None));
            build_index(&env, &d, store.as_deref())
        }
        Command::Search { out, inputs, route, top_k, query } => {
            let opts = SearchOpts {
                route: *route,
                top_k: *top_k,
                query: query.as_deref(),
                store: inputs.store.as_deref(),
                index_dir: inputs.index_dir.as_deref(),
            };
            search(&mut env, out.out.as_deref(), opts)
        }
        Command::AgentRun { out, inputs } => {
            env.config.validate()?;
            agent_run(&env, &dir(&env, out, "agent-run"), inputs.opts())
        }
        Command::Fuse { out, agentic, standard, weights, k_rrf, top_n, per_kind, store } => {
            let opts = FuseOpts {
                agentic: agentic.as_deref(),
                standard: standard.as_deref(),
                weights: weights.as_deref(),
                k_rrf: *k_rrf,
                top_n: *top_n,
                per_kind: *per_kind,
                store: store.as_deref(),
            };
            fuse(&mut env, out.out.as_deref(), opts)
        }
        Command::MineTriples { out, store, folds, n_neg, depth } => {
            let opts = MineOpts {
                store: store.as_deref(),
                folds: *folds,
                n_neg: *n_neg,
                depth: *depth,
            };
            mine_triples(&mut env, out.out.as_deref(), opts)
        }
        Command::Generate { out, rankings, store, evidence_n } => {
            let opts = GenerateOpts {
                rankings: rankings.as_deref(),
                store: store.as_deref(),
                evidence_n: *evidence_n,
            };
            generate_judgments(&mut env, out.out.as_deref(), opts)
        }
        Command::ScoreJudgment { out, judgments } => {
            env.config.validate()?;
            score_judgment(&env, &dir(&env, out, "score-judgment"), judgments.opts())
        }
        Command::GrpoTrain { out, toy, iters, group, kl_beta, lr, seed, inputs } => {
            if !toy {
                return Err(CliError::Validation(
                    "grpo-train: pass --toy; fine-tuning a language model is outside this tool".into(),
                ));
            }
            let opts = TrainOpts {
                iterations: *iters,
                group_size: *group,
                kl_beta: *kl_beta,
                learning_rate: *lr,
                seed: *seed,
                inputs: *inputs,
            };
            grpo_train(&mut env, out.out.as_deref(), opts)
        }
        Command::EvalRetrieval { out, rankings, store } => {
            env.config.validate()?;
            eval_retrieval(&env, &dir(&env, out, "eval-retrieval"), rankings.as_deref(), store.as_deref())
        }
        Command::EvalGeneration { out, judgments } => {
            env.config.validate()?;
            eval_generation(&env, &dir(&env, out, "eval-generation"), judgments.opts())
        }
        Command::ExportRollouts { out, inputs, agent_runs } => {
            env.config.validate()?;
            export(&env, &dir(&env, out, "export-rollouts"), agent_runs.as_deref(), inputs.opts())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
