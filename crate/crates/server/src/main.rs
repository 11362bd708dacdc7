use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use disclosure_core::chart_spec::parse_chart_spec;
use disclosure_core::game_core::{anonymize, parse_ndjson, replay, to_ndjson};
use disclosure_core::puzzle_gen::{Bundle, Template};
use disclosure_core::signal_rubric::{score, RubricParams};
use disclosure_server::{run_server, store, ServerConfig};

#[derive(Parser)]
#[command(name = "disclosure", version, about = "Show-hide disclosure game server and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP and websocket service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score one chart spec against a puzzle bundle.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Rubric parameters as JSON; defaults apply to missing fields.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        explain: bool,
    },
    /// Generate a puzzle bundle from a template.
    Genpuzzle {
        #[arg(long)]
        template: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the anonymized log of a stored session.
    Export {
        #[arg(long)]
        session: String,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay a log file and print the resulting state summary.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn score_cmd(bundle: PathBuf, spec: PathBuf, params: Option<PathBuf>, explain: bool) -> CliResult {
    let bundle = Bundle::read(&bundle)?;
    let spec = parse_chart_spec(&std::fs::read_to_string(spec)?)?;
    let params: RubricParams = match params {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => RubricParams::default(),
    };
    let card = score(&spec, &bundle.dataset, &bundle.puzzle, &params)?;
    if explain {
        print!("{}", card.explain());
    } else {
        println!("{}", serde_json::to_string_pretty(&card)?);
    }
    Ok(())
}

fn genpuzzle_cmd(template: String, seed: u64, out: Option<PathBuf>) -> CliResult {
    let t = Template::from_name(&template).ok_or_else(|| format!("unknown template {template:?}"))?;
    let bundle = Bundle::generate(t, seed, &RubricParams::default())?;
    let dir = out.unwrap_or_else(|| PathBuf::from(&bundle.puzzle.id));
    bundle.write(&dir)?;
    println!("wrote {}", dir.display());
    if let Some(t) = &bundle.tension {
        println!("{}", serde_json::to_string_pretty(t)?);
    }
    Ok(())
}

fn export_cmd(session: String, data_dir: PathBuf, seed: u64) -> CliResult {
    let path = store::sessions_root(&data_dir).join(&session).join("events.ndjson");
    let log = parse_ndjson(&std::fs::read_to_string(path)?)?;
    print!("{}", to_ndjson(&anonymize(&log, seed)));
    Ok(())
}

fn replay_cmd(log: PathBuf) -> CliResult {
    let events = parse_ndjson(&std::fs::read_to_string(log)?)?;
    let state = replay(&events)?;
    println!("session {} seq {} hash {}", state.id, state.last_seq, state.state_hash());
    for g in &state.groups {
        let r = g.current();
        let status = if g.finished { "finished".to_string() } else { format!("{:?}", r.phase) };
        println!("  group {} round {} {}", g.index, g.current_round(), status);
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Serve { config } => ServerConfig::from_file(&config).map_err(Into::into).and_then(|cfg| {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(run_server(cfg)).map_err(Into::into)
        }),
        Command::Score { bundle, spec, params, explain } => score_cmd(bundle, spec, params, explain),
        Command::Genpuzzle { template, seed, out } => genpuzzle_cmd(template, seed, out),
        Command::Export { session, data_dir, seed } => export_cmd(session, data_dir, seed),
        Command::Replay { log } => replay_cmd(log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
