use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dualstream::engine::{DecodeConfig, DecodeMode, Sampling};
use dualstream::layout::{Corpus, TaskKind};
use dualstream::model::Checkpoint;
use dualstream::ops::{self, DecodeFiles, RunConfig, StageSelect};
use dualstream::Result;

#[derive(Parser)]
#[command(name = "dualstream", version, about = "Delayed parallel text+audio token decoding at desk scale")]
struct Cli {
    /// Run config (key = value lines with model., train., decode., data. sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic JSONL corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run training stages, writing checkpoints and metrics.json into --dir.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        /// 1, 2, 3 or all
        #[arg(long, default_value = "all")]
        stage: StageSelect,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode one prompt, streaming text to stdout.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task name, e.g. text_qa or audio_qa_full.
        #[arg(long)]
        task: String,
        /// Prompt words, e.g. "3 + 4" or "echo cat dog".
        #[arg(long)]
        prompt: String,
        #[command(flatten)]
        opts: DecodeOpts,
        /// Output grid (OMNG, undelayed, 8 layers).
        #[arg(long)]
        grid_out: Option<PathBuf>,
        /// Signal dump, one `step value` line per sample.
        #[arg(long)]
        signal_out: Option<PathBuf>,
        /// Metadata JSON with the latency report and truncation flag.
        #[arg(long)]
        meta_out: Option<PathBuf>,
    },
    /// Compare delayed parallel against flattened step counts and time both modes.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        prompts: usize,
        #[command(flatten)]
        opts: DecodeOpts,
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Summarize a grid, checkpoint or corpus file.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct DecodeOpts {
    /// parallel or batch
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, conflicts_with = "top_k")]
    greedy: bool,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, requires = "top_k")]
    temp: Option<f64>,
    #[arg(long)]
    text_advance: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl DecodeOpts {
    fn apply(&self, mut cfg: DecodeConfig) -> Result<DecodeConfig> {
        if let Some(m) = &self.mode {
            cfg.mode = match m.as_str() {
                "parallel" => DecodeMode::Parallel,
                "batch" | "batch_parallel" => DecodeMode::BatchParallel,
                other => {
                    return Err(dualstream::Error::Config(format!(
                        "--mode must be parallel or batch, got {other}"
                    )))
                }
            };
        }
        if self.greedy {
            cfg.sampling = Sampling::Greedy;
        }
        if let Some(k) = self.top_k {
            cfg.sampling = Sampling::TopK {
                k,
                temperature: self.temp.unwrap_or(1.0),
            };
        }
        if let Some(n) = self.text_advance {
            cfg.text_advance = n;
        }
        if let Some(m) = self.max_steps {
            cfg.max_steps = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.cmd {
        Cmd::GenData { out, count, seed } => {
            cfg.data_count = count.unwrap_or(cfg.data_count);
            cfg.data_seed = seed.unwrap_or(cfg.data_seed);
            let corpus = ops::cmd_gen_data(&cfg, &out)?;
            eprintln!("wrote {} examples to {}", corpus.len(), out.display());
        }
        Cmd::Train { data, dir, stage, seed } => {
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let corpus = Corpus::load(&data)?;
            ops::cmd_train(&cfg, &corpus, &dir, stage, |m| {
                eprintln!(
                    "stage {}: {} examples, {} steps, loss {:.4} -> {:.4}",
                    m.stage, m.examples, m.steps, m.initial_loss, m.final_loss
                );
            })?;
        }
        Cmd::Decode {
            checkpoint,
            task,
            prompt,
            opts,
            grid_out,
            signal_out,
            meta_out,
        } => {
            let model = Checkpoint::load(&checkpoint)?.into_model()?;
            let dcfg = opts.apply(cfg.decode.clone())?;
            let task = TaskKind::from_name(&task)?;
            let files = DecodeFiles {
                grid: grid_out.as_deref(),
                stream_grid: None,
                signal: signal_out.as_deref(),
                meta: meta_out.as_deref(),
            };
            let (out, meta) = ops::cmd_decode(&model, task, &prompt, &dcfg, std::io::stdout().lock(), &files)?;
            eprintln!(
                "{} steps, {} audio columns{}",
                out.report.steps,
                meta.audio_columns,
                if out.report.truncated { ", truncated" } else { "" }
            );
        }
        Cmd::Bench {
            checkpoint,
            prompts,
            opts,
            json_out,
        } => {
            let model = Checkpoint::load(&checkpoint)?.into_model()?;
            let dcfg = opts.apply(cfg.decode.clone())?;
            let report = ops::cmd_bench(&model, prompts, dcfg.seed, &dcfg)?;
            print!("{}", report.to_text());
            if let Some(p) = json_out {
                std::fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
            }
        }
        Cmd::Inspect { path } => print!("{}", ops::inspect(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
