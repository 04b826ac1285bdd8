use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use remixhub::Config;
use remixhub_core::container::{self, parse_project, AssetKind, Project, Sprite};
use remixhub_core::lineage::Direction;
use remixhub_core::platform::{Platform, SystemClock};
use remixhub_core::ProjectId;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "remixhub", version, about = "Share, remix and trace programmable-media projects")]
struct Cli {
    /// TOML configuration file. REMIXHUB_DATA_DIR and REMIXHUB_PORT override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve,
    /// Describe a project file without executing it.
    Inspect { file: PathBuf },
    /// Print a project file's content hash.
    Hash { file: PathBuf },
    /// Print the lineage tree of a stored project.
    Lineage {
        id: ProjectId,
        #[arg(long, default_value_t = remixhub::api::DEFAULT_LINEAGE_DEPTH)]
        depth: usize,
        #[arg(long, value_enum, default_value_t = Dir::Ancestors)]
        direction: Dir,
    },
    /// Print participation counts over a trailing window.
    Stats {
        #[arg(long)]
        window_days: Option<u32>,
    },
    /// Print the activity log, one JSON event per line.
    Events,
    /// Manage members.
    User {
        #[command(subcommand)]
        command: UserCommand,
    },
}

#[derive(Subcommand)]
enum UserCommand {
    /// Create a member and print their token. Needs the server stopped.
    Add { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Ancestors,
    Descendants,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Inspect { file } => inspect(&read_project(&file)?),
        Command::Hash { file } => {
            println!("{}", container::content_hash(&read_project(&file)?)?);
            Ok(())
        }
        command => {
            let config = Config::load(cli.config.as_deref())?;
            match command {
                Command::Serve => serve(config),
                Command::Lineage { id, depth, direction } => {
                    let direction = match direction {
                        Dir::Ancestors => Direction::Ancestors,
                        Dir::Descendants => Direction::Descendants,
                    };
                    print_json(&open_read_only(&config)?.lineage(id, direction, depth)?)
                }
                Command::Stats { window_days } => {
                    let days = window_days.unwrap_or(config.participation_window_days);
                    print_json(&open_read_only(&config)?.community_stats_trailing(days)?)
                }
                Command::Events => {
                    std::io::stdout().write_all(&open_read_only(&config)?.export_events())?;
                    Ok(())
                }
                Command::User {
                    command: UserCommand::Add { name },
                } => {
                    let platform = Platform::open(&config.data_dir, config.platform(), Arc::new(SystemClock))?;
                    let (user, token) = platform.create_user(&name)?;
                    println!("{} {}", user.username, token);
                    Ok(())
                }
                Command::Inspect { .. } | Command::Hash { .. } => unreachable!(),
            }
        }
    }
}

fn serve(config: Config) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let (platform, listener) = remixhub::bind(&config).await?;
        let addr = remixhub::local_addr(&listener);
        tracing::info!(%addr, data_dir = %config.data_dir.display(), "serving");
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        remixhub::serve(platform, listener, config.max_body_bytes, remixhub::shutdown_signal()).await
    })
}

fn open_read_only(config: &Config) -> anyhow::Result<Platform> {
    Platform::open_read_only(&config.data_dir, config.platform())
        .with_context(|| format!("reading data directory {}", config.data_dir.display()))
}

fn read_project(path: &Path) -> anyhow::Result<Project> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_project(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    let value = serde_json::to_value(value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn describe(sprite: &Sprite) -> String {
    format!(
        "{}: {} costumes, {} sounds, {} scripts",
        sprite.name,
        sprite.costumes.len(),
        sprite.sounds.len(),
        sprite.scripts.len()
    )
}

fn inspect(project: &Project) -> anyhow::Result<()> {
    println!("title: {}", project.title);
    println!("author: {}", project.author);
    println!("format_version: {}", project.format_version);
    println!("content_hash: {}", container::content_hash(project)?);
    println!("sprites:");
    for sprite in project.all_sprites() {
        println!("  {}", describe(sprite));
    }
    let count = |kind| project.assets.values().filter(|a| a.kind == kind).count();
    println!(
        "assets: {} ({} image, {} audio, {} text)",
        project.assets.len(),
        count(AssetKind::Image),
        count(AssetKind::Audio),
        count(AssetKind::Text)
    );
    println!("provenance:");
    for r in &project.provenance {
        let reference = r.project_ref.map(|p| format!(" project {p}")).unwrap_or_default();
        println!("  {} {} {} at {} on {}{}", r.seq, r.action, r.actor, r.timestamp, r.server, reference);
    }
    Ok(())
}
