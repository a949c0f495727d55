use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sketchloop_core::analogy::DEFAULT_INSPIRATIONS;
use sketchloop_core::backends::prompt_hash;
use sketchloop_core::session::{compute_log_stats, from_jsonl};
use sketchloop_server::{AppState, ServiceConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "sketchloop", version, about = "Sketch co-creation service")]
struct Cli {
    /// Service configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true, env = "INKSPIRE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Print sketching statistics for an exported JSON-Lines event log.
    Stats { events: PathBuf },
    /// Print the language-model prompts for a subject and concept, each with
    /// the hash a mock fixture file must be named after.
    Prompts {
        #[arg(long)]
        subject: String,
        #[arg(long)]
        concept: String,
        /// Design principles returned by the first step. Needed to render the second.
        #[arg(long)]
        principles: Option<String>,
        #[arg(long, default_value_t = DEFAULT_INSPIRATIONS)]
        count: usize,
        /// Also print the category question for these labels.
        #[arg(long = "label")]
        labels: Vec<String>,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<ServiceConfig> {
    let mut config = match path {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    config.validate()?;
    Ok(config)
}

fn print_prompt(title: &str, text: &str) {
    println!("== {title} [{}]", prompt_hash(text));
    println!("{text}");
    println!();
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();

    match cli.command {
        Command::Serve { bind } => {
            let mut config = load_config(cli.config.as_ref())?;
            if let Some(bind) = bind {
                config.server.bind = bind;
            }
            let addr = config.server.bind.clone();
            let app = AppState::from_config(config)?;
            let listener = tokio::net::TcpListener::bind(&addr)
                .await
                .with_context(|| format!("cannot bind {addr}"))?;
            tracing::info!(addr = %listener.local_addr()?, "listening");
            sketchloop_server::serve(app, listener, async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await?;
        }
        Command::Stats { events } => {
            let text = std::fs::read_to_string(&events)
                .with_context(|| format!("cannot read {}", events.display()))?;
            let events =
                from_jsonl(&text).map_err(|(line, e)| anyhow::anyhow!("line {line}: {e}"))?;
            let stats = compute_log_stats(&events)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Prompts {
            subject,
            concept,
            principles,
            count,
            labels,
        } => {
            let templates = load_config(cli.config.as_ref())?.templates()?;
            print_prompt("step 1", &templates.render_step1(&subject));
            match principles {
                Some(p) => print_prompt(
                    "step 2",
                    &templates.render_step2_request(&subject, &concept, &p, count),
                ),
                None => eprintln!("pass --principles to render step 2"),
            }
            for label in labels {
                print_prompt(
                    &format!("category of {label:?}"),
                    &templates.render_categorize(&label),
                );
            }
        }
    }
    Ok(())
}
