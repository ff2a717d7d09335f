use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ragforge_cli::server;
use ragforge_core::config::EngineConfig;
use ragforge_core::eval::{render_markdown, MetricReport};
use ragforge_core::layout::convert_document;
use ragforge_core::pipeline::{PipelineKind, PipelineRunner};
use ragforge_core::service::{Engine, ServiceError};
use tower_http::services::ServeDir;

#[derive(Parser)]
#[command(
    name = "ragforge",
    version,
    about = "Retrieval-augmented answering over technical PDFs"
)]
struct Cli {
    /// TOML configuration file; every key has a default.
    #[arg(long, global = true, env = "RAGFORGE_CONFIG")]
    config: Option<PathBuf>,
    /// Index directory, overriding `index.dir` from the configuration.
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert one PDF or page fixture to Markdown.
    Convert {
        input: PathBuf,
        /// Defaults to the input path with a `.md` extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build the index from a file or directory of PDFs and fixtures.
    Ingest { path: PathBuf },
    /// Answer one question.
    Query {
        question: String,
        #[arg(long, default_value = "agent+funcall", value_parser = parse_pipeline)]
        pipeline: PipelineKind,
        /// Print the full response as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Interactive conversation; `/trace` shows the last turn's path, `/quit` exits.
    Chat {
        #[arg(long, value_parser = parse_pipeline)]
        pipeline: Option<PipelineKind>,
    },
    /// Score pipelines on a JSON-lines dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Repeat to compare several; defaults to all four.
        #[arg(long, value_parser = parse_pipeline)]
        pipeline: Vec<PipelineKind>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of static files (the chat UI) served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

fn parse_pipeline(s: &str) -> Result<PipelineKind, String> {
    s.parse().map_err(|e: ragforge_core::Error| e.to_string())
}

fn load_config(path: Option<&Path>, index: Option<&Path>) -> Result<EngineConfig> {
    let mut config = EngineConfig::load(path).context("loading configuration")?;
    if let Some(dir) = index {
        config.index.dir = dir.to_path_buf();
    }
    Ok(config)
}

fn service(e: ServiceError) -> anyhow::Error {
    anyhow::Error::new(e)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Command::Convert { input, output } = &cli.command {
        let output = output.clone().unwrap_or_else(|| input.with_extension("md"));
        let stats = convert_document(input, &output)
            .with_context(|| format!("converting {}", input.display()))?;
        eprintln!(
            "{} -> {}: {} pages, {} elements, {} tables",
            input.display(),
            output.display(),
            stats.pages,
            stats.elements,
            stats.tables
        );
        return Ok(());
    }

    let config = load_config(cli.config.as_deref(), cli.index.as_deref())?;
    let engine = Engine::new(config).context("starting engine")?;
    match cli.command {
        Command::Convert { .. } => unreachable!(),
        Command::Ingest { path } => {
            let report = engine.handle_ingest(&path).map_err(service)?;
            for e in &report.errors {
                log::warn!("{}: {}", e.path.display(), e.error);
            }
            print_json(&report)
        }
        Command::Query {
            question,
            pipeline,
            json,
        } => query(&engine, &question, pipeline, json),
        Command::Chat { pipeline } => chat(&engine, pipeline),
        Command::Eval {
            dataset,
            pipeline,
            format,
        } => {
            let kinds = if pipeline.is_empty() {
                PipelineKind::ALL.to_vec()
            } else {
                pipeline
            };
            let reports = kinds
                .into_iter()
                .map(|k| engine.handle_eval(&dataset, k).map_err(service))
                .collect::<Result<Vec<MetricReport>>>()?;
            match format {
                Format::Markdown => {
                    print!("{}", render_markdown(&reports));
                    Ok(())
                }
                Format::Json if reports.len() == 1 => print_json(&reports[0]),
                Format::Json => print_json(&reports),
            }
        }
        Command::Serve {
            port,
            host,
            static_dir,
        } => serve(engine, &host, port, static_dir),
    }
}

fn query(engine: &Engine, question: &str, pipeline: PipelineKind, json: bool) -> Result<()> {
    let corpus = engine.corpus();
    let cfg = engine.config();
    let runner = PipelineRunner {
        kind: pipeline,
        corpus: &corpus,
        backend: engine.backend(),
        retrieval: &cfg.retrieval,
        agent: &cfg.agent,
        funcall: &cfg.funcall,
    };
    let state = runner.run_turn(question, &[]).map_err(|e| e.source)?;
    if json {
        return print_json(&serde_json::json!({
            "answer": state.answer(),
            "sources": state.documents,
            "degraded": state.degraded,
            "trace": state.trace,
        }));
    }
    println!("{}", state.answer());
    if state.degraded {
        println!("(degraded: no answer passed the checks within budget)");
    }
    for (i, d) in state.documents.iter().enumerate() {
        println!(
            "[{}] {} ({:.4})",
            i + 1,
            d.chunk_id,
            d.relevance_score.unwrap_or(d.score)
        );
    }
    Ok(())
}

fn chat(engine: &Engine, pipeline: Option<PipelineKind>) -> Result<()> {
    let session = engine.create_session(pipeline).map_err(service)?;
    eprintln!(
        "session {} ({}, {} chunks indexed). /trace shows the last turn, /quit exits.",
        session.id,
        session.config.pipeline,
        engine.corpus().index().len()
    );
    let stdin = io::stdin();
    let mut last_trace: Option<String> = None;
    loop {
        eprint!("> ");
        io::stderr().flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" | "/exit" => break,
            "/trace" => {
                match &last_trace {
                    Some(id) => {
                        let trace = engine.trace(id).map_err(service)?;
                        for e in &trace.events {
                            println!("{:<16} {} -> {}", e.node.as_str(), e.input, e.outcome);
                        }
                    }
                    None => println!("no turns yet"),
                }
                continue;
            }
            _ => {}
        }
        match engine.handle_chat_turn(&session.id, line) {
            Ok(resp) => {
                println!("{}", resp.answer);
                if resp.degraded {
                    println!("(degraded)");
                }
                for (i, s) in resp.sources.iter().enumerate() {
                    println!("  [{}] {}", i + 1, s.chunk_id);
                }
                last_trace = Some(resp.trace_id);
            }
            Err(ServiceError::Backend {
                message, trace_id, ..
            }) => {
                println!("backend error: {message}");
                last_trace = trace_id;
            }
            Err(e) => println!("error: {e}"),
        }
    }
    Ok(())
}

fn serve(engine: Engine, host: &str, port: u16, static_dir: Option<PathBuf>) -> Result<()> {
    let mut app = server::router(Arc::new(engine));
    if let Some(dir) = static_dir {
        if !dir.is_dir() {
            bail!("static dir {} does not exist", dir.display());
        }
        app = app.fallback_service(ServeDir::new(dir));
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
