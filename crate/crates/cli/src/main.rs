//! `hetquery` command line.

mod render;

use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hetquery::entropy::{OracleMode, ReviewFlag};
use hetquery::gateway::BackendMode;
use hetquery::ingest::load_corpus;
use hetquery::pipeline::{self, Index, Mode, PipelineError};
use hetquery::{CliConfig, Gateway};

const EXIT_OK: u8 = 0;
const EXIT_FATAL: u8 = 1;
const EXIT_NO_ANCHOR: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_REVIEW: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "hetquery", version, about = "Query mixed text and table corpora through an entity graph")]
struct Cli {
    /// JSON configuration file. Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Model backend, overriding the configuration.
    #[arg(long, global = true, value_parser = ["mock", "http"])]
    backend: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the entity graph and tables for a corpus directory.
    Index {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Answer one question.
    Query {
        question: String,
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        #[arg(long, default_value = "auto", value_parser = ["auto", "graph", "table"])]
        mode: String,
        #[arg(long)]
        json: bool,
        /// Print result tables as CSV.
        #[arg(long, conflicts_with = "json")]
        csv: bool,
    },
    /// Sample several answers and report semantic entropy.
    Ask {
        question: String,
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        json: bool,
    },
    /// Read questions from standard input, one per line.
    Repl {
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
    },
    /// Print the corpus manifest as JSON lines.
    Manifest {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SamplingArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    samples: Option<u64>,
    #[arg(long, value_name = "BITS")]
    entropy_threshold: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["exact_normalized", "embedding_cosine"])]
    oracle: Option<String>,
}

/// A failure with its exit code. The message is printed to stderr.
struct Failure {
    code: u8,
    message: String,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure { code: EXIT_FATAL, message: format!("{e:#}") }
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::NoAnchors(_) => Failure { code: EXIT_NO_ANCHOR, message: e.to_string() },
        PipelineError::Validation { plan, violations } => {
            let mut message = format!("plan failed validation: {plan}");
            for v in &violations {
                message.push_str(&format!("\n  - {v}"));
            }
            Failure { code: EXIT_VALIDATION, message }
        }
        other => Failure { code: EXIT_FATAL, message: other.to_string() },
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(b) = &cli.backend {
        cfg.backend.mode = Some(if b == "http" { BackendMode::Http } else { BackendMode::Mock });
    }
    Ok(cfg)
}

fn apply_sampling(cfg: &mut CliConfig, s: &SamplingArgs) -> anyhow::Result<()> {
    if let Some(n) = s.samples {
        cfg.entropy.samples = n as usize;
    }
    if let Some(t) = s.entropy_threshold {
        cfg.entropy.threshold_bits = t;
    }
    if let Some(t) = s.temperature {
        cfg.entropy.temperature = t;
    }
    if let Some(seed) = s.seed {
        cfg.entropy.seed = seed;
    }
    if let Some(o) = &s.oracle {
        cfg.entropy.oracle = o.parse::<OracleMode>().map_err(anyhow::Error::msg)?;
    }
    Ok(())
}

struct Session {
    cfg: CliConfig,
    gateway: Gateway,
    index: Index,
}

impl Session {
    fn open(cfg: CliConfig, graph: &Path) -> anyhow::Result<Self> {
        let gateway = Gateway::from_config(&cfg.backend)?;
        let index = pipeline::load_index(graph).with_context(|| format!("cannot load {}", graph.display()))?;
        Ok(Session { cfg, gateway, index })
    }

    fn query(&self, out: &mut dyn Write, question: &str, mode: Mode, json: bool, csv: bool) -> Result<u8, Failure> {
        let mode = if mode == Mode::Auto { pipeline::route(question) } else { mode };
        match mode {
            Mode::Table => {
                let a = pipeline::answer_table(question, &self.index, &self.cfg, &self.gateway)
                    .map_err(pipeline_failure)?;
                for w in &a.warnings {
                    log::warn!("{w}");
                }
                if json {
                    render::json_line(out, &render::table_record(question, &a))?;
                } else {
                    render::table_text(out, &a, csv)?;
                }
            }
            _ => {
                let a = pipeline::answer_graph(question, &self.index, &self.cfg, &self.gateway)
                    .map_err(pipeline_failure)?;
                if json {
                    render::json_line(out, &render::graph_record(question, &a, &self.index.graph))?;
                } else {
                    render::graph_text(out, &a, &self.index.graph)?;
                }
            }
        }
        Ok(EXIT_OK)
    }

    fn ask(&self, out: &mut dyn Write, question: &str, json: bool) -> Result<u8, Failure> {
        let outcome = pipeline::ask(question, &self.index, &self.cfg, &self.gateway).map_err(pipeline_failure)?;
        if json {
            render::json_line(out, &serde_json::to_value(&outcome).map_err(anyhow::Error::from)?)?;
        } else {
            render::ask_text(out, &outcome.report)?;
        }
        Ok(if outcome.report.flag == ReviewFlag::Review { EXIT_REVIEW } else { EXIT_OK })
    }

    fn repl(&self, input: &mut dyn BufRead, out: &mut dyn Write, interactive: bool) -> Result<u8, Failure> {
        let mut line = String::new();
        loop {
            if interactive {
                write!(out, "hetquery> ").and_then(|_| out.flush()).map_err(anyhow::Error::from)?;
            }
            line.clear();
            if input.read_line(&mut line).map_err(anyhow::Error::from)? == 0 {
                return Ok(EXIT_OK);
            }
            let q = line.trim();
            let result = match q {
                "" => continue,
                ":quit" | ":q" => return Ok(EXIT_OK),
                ":config" => {
                    let text = serde_json::to_string_pretty(&self.cfg).map_err(anyhow::Error::from)?;
                    writeln!(out, "{text}").map_err(anyhow::Error::from)?;
                    Ok(EXIT_OK)
                }
                _ => match q.strip_prefix(":ask") {
                    Some(rest) if rest.is_empty() || rest.starts_with(' ') => self.ask(out, rest.trim(), false),
                    _ => self.query(out, q, Mode::Auto, false, false),
                },
            };
            if let Err(f) = result {
                writeln!(out, "error: {}", f.message).map_err(anyhow::Error::from)?;
            }
            writeln!(out).map_err(anyhow::Error::from)?;
        }
    }
}

fn index(out: &mut dyn Write, cfg: &CliConfig, corpus: &Path, dest: &Path) -> anyhow::Result<u8> {
    let gateway = Gateway::from_config(&cfg.backend)?;
    let (index, report) = pipeline::build_index(corpus, cfg, &gateway)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    pipeline::save_index(&index, dest)?;
    render::index_text(out, &report, &index.graph, dest)?;
    Ok(EXIT_OK)
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, Failure> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Index { corpus, out: dest } => {
            cfg.check().map_err(anyhow::Error::from)?;
            Ok(index(out, &cfg, &corpus, &dest)?)
        }
        Command::Manifest { corpus } => {
            let m = load_corpus(&corpus).map_err(anyhow::Error::from)?;
            write!(out, "{}", m.to_json_lines()).map_err(anyhow::Error::from)?;
            Ok(EXIT_OK)
        }
        Command::Query { question, graph, mode, json, csv } => {
            cfg.check().map_err(anyhow::Error::from)?;
            let mode: Mode = mode.parse().map_err(anyhow::Error::msg)?;
            Session::open(cfg, &graph)?.query(out, &question, mode, json, csv)
        }
        Command::Ask { question, graph, sampling, json } => {
            apply_sampling(&mut cfg, &sampling)?;
            cfg.check().map_err(anyhow::Error::from)?;
            Session::open(cfg, &graph)?.ask(out, &question, json)
        }
        Command::Repl { graph } => {
            cfg.check().map_err(anyhow::Error::from)?;
            let session = Session::open(cfg, &graph)?;
            let stdin = io::stdin();
            let interactive = stdin.is_terminal();
            session.repl(&mut stdin.lock(), out, interactive)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let code = match run(cli, &mut out) {
        Ok(code) => code,
        Err(f) => {
            let _ = out.flush();
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    let _ = out.flush();
    ExitCode::from(code)
}
