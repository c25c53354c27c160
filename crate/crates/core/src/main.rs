use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use suggestion_bot::app::{self, AppError, ReviewOptions, RunReport};
use suggestion_bot::config::{load_config, Config};
use suggestion_bot::forge_client::PullRequestRef;
use suggestion_bot::suggestion_mapper::Visibility;
use suggestion_bot::webhook_service;

#[derive(Parser)]
#[command(
    name = "suggestion-bot",
    version,
    about = "Turns formatter output into pull request suggested changes"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (default: ./suggestion-bot.toml if present)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Which lines may receive comments: diff_visible or added_only
    #[arg(long, global = true)]
    policy: Option<Visibility>,
    #[arg(long, global = true)]
    merge_gap: Option<usize>,
    #[arg(long, global = true)]
    max_comments: Option<usize>,
    /// Forge API base URL
    #[arg(long, global = true)]
    base_url: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Review a pull request (owner/repo#number or URL)
    Review {
        pr: PullRequestRef,
        /// Compute suggestions without posting
        #[arg(long)]
        dry_run: bool,
    },
    /// Review the changes between two directory trees
    Local { base: PathBuf, head: PathBuf },
    /// Validate configuration and tool availability
    CheckConfig,
    /// Receive webhook deliveries and review pull requests as they change
    Serve,
}

fn load(common: &Common) -> Result<Config, AppError> {
    let mut config = load_config(common.config.as_deref())?;
    let policy = &mut config.limits.policy;
    if let Some(v) = common.policy {
        policy.visibility = v;
    }
    if let Some(g) = common.merge_gap {
        policy.merge_gap = g;
    }
    if let Some(m) = common.max_comments {
        if m == 0 {
            return Err(AppError::Usage("--max-comments must be at least 1".into()));
        }
        policy.max_comments = m;
    }
    if let Some(url) = &common.base_url {
        config.forge.base_url = url.clone();
    }
    Ok(config)
}

fn emit(report: &RunReport, format: Format) {
    let mut out = std::io::stdout().lock();
    let text = match format {
        Format::Json => report.to_json() + "\n",
        Format::Text => report.to_text(),
    };
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::CheckConfig => {
            let outcome = app::check_config(cli.common.config.as_deref());
            for line in &outcome.lines {
                if line.starts_with("error:") {
                    eprintln!("{line}");
                } else {
                    println!("{line}");
                }
            }
            if !outcome.ok {
                return Err(AppError::Usage("configuration check failed".into()));
            }
            Ok(())
        }
        Command::Local { base, head } => {
            let config = load(&cli.common)?;
            let opts = ReviewOptions::from_config(&config);
            let report = app::run_local(&config, &base, &head, &opts)?;
            emit(&report, cli.common.format);
            Ok(())
        }
        Command::Review { pr, dry_run } => {
            let config = load(&cli.common)?;
            let client = app::forge_client(&config, dry_run)?;
            let opts = ReviewOptions {
                dry_run,
                ..ReviewOptions::from_config(&config)
            };
            let report = runtime().block_on(app::run_review(&config, &client, &pr, &opts))?;
            emit(&report, cli.common.format);
            Ok(())
        }
        Command::Serve => {
            let config = load(&cli.common)?;
            if config.tools.is_empty() {
                return Err(AppError::Usage("no tools configured".into()));
            }
            let env = &config.webhook.secret_env;
            let secret = std::env::var(env)
                .ok()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| AppError::Usage(format!("environment variable {env} is not set")))?;
            let addr: SocketAddr = config.webhook.listen_addr.parse().map_err(|_| {
                AppError::Usage(format!(
                    "invalid listen address {:?}",
                    config.webhook.listen_addr
                ))
            })?;
            let client = app::forge_client(&config, false)?;
            let opts = ReviewOptions::from_config(&config);
            let config = Arc::new(config);
            let runner = move |pr: PullRequestRef| {
                let (config, client, opts) = (config.clone(), client.clone(), opts.clone());
                async move {
                    match app::run_review(&config, &client, &pr, &opts).await {
                        Ok(r) => log::info!(
                            "{pr}: {} suggestion(s), review {:?}",
                            r.suggestions.len(),
                            r.review_id
                        ),
                        Err(e) => log::error!("{pr}: {e}"),
                    }
                }
            };
            runtime()
                .block_on(webhook_service::serve(addr, secret.into_bytes(), runner))
                .map_err(|source| AppError::Io {
                    path: PathBuf::from(addr.to_string()),
                    source,
                })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
