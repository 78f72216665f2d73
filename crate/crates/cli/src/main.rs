mod config;
mod demo;
mod fixture;
mod schema;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chainsight_core::analysis::replay_log;
use chainsight_core::log::read_log;
use chainsight_core::report::{Report, ReportFormat};
use chainsight_core::sampler::{BuiltinModel, FaultProfile, SamplerAlgorithm};
use chainsight_core::store::{ChainStore, RunId};
use chainsight_server::client::Client;
use chainsight_server::ServerHandle;
use clap::{Args, Parser, Subcommand};

const DEFAULT_SERVER: &str = "http://127.0.0.1:8765";

#[derive(Parser)]
#[command(
    name = "chainsight",
    version,
    about = "Online MCMC debugger: live diagnostics and warnings for running samplers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EngineArgs {
    /// Engine config file: JSON or key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set rhat_warn=1.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Mirror every run into `<dir>/<run_id>.jsonl`.
        #[arg(long)]
        spill_dir: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Boot a server, stream a builtin model into it and print the warnings timeline.
    Demo {
        #[arg(long)]
        model: BuiltinModel,
        #[arg(long, default_value = "default")]
        fault_profile: FaultProfile,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        n_leapfrog: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        tune: Option<usize>,
        #[arg(long)]
        draws: Option<usize>,
        /// Also write the batch stream to this JSONL log.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Report format printed at the end.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Keep serving after the run until interrupted.
        #[arg(long)]
        keep_serving: bool,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Feed a recorded JSONL batch log through a fresh engine, offline.
    Replay {
        log: PathBuf,
        /// Print the final report.
        #[arg(long)]
        report: bool,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Fetch the report of a run from a running server.
    Report {
        run_id: String,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        #[arg(long, default_value = DEFAULT_SERVER)]
        server: String,
    },
    /// Write the JSON schema of every wire body.
    Schema {
        #[arg(long, default_value = "docs/wire-schema")]
        out: PathBuf,
    },
    /// Write a seeded replay fixture.
    GenFixture {
        /// Fixture kind. Only `iid` is available.
        #[arg(default_value = "iid")]
        kind: String,
        #[arg(long, default_value = "fixtures/iid.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve {
            host,
            port,
            spill_dir,
            engine,
        } => {
            let config = config::load(engine.config.as_deref(), &engine.sets)?;
            let store = match spill_dir {
                Some(dir) => ChainStore::with_spill(dir),
                None => ChainStore::new(),
            };
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .context("bad --host/--port")?;
            let handle = ServerHandle::spawn(store, config, addr).context("cannot start server")?;
            eprintln!("listening on {}", handle.base_url());
            wait_for_signal()?;
            handle.shutdown()?;
            Ok(())
        }
        Command::Demo {
            model,
            fault_profile,
            seed,
            port,
            algorithm,
            step_size,
            n_leapfrog,
            chains,
            tune,
            draws,
            record,
            format,
            keep_serving,
            engine,
        } => {
            let config = config::load(engine.config.as_deref(), &engine.sets)?;
            let mut sampler = fault_profile.config(model, seed);
            if let Some(a) = algorithm {
                sampler.algorithm = match a.as_str() {
                    "hmc" => SamplerAlgorithm::Hmc,
                    "random_walk_mh" | "rwmh" => SamplerAlgorithm::RandomWalkMh,
                    _ => anyhow::bail!("unknown algorithm `{a}` (expected hmc or random_walk_mh)"),
                };
            }
            sampler.step_size = step_size.unwrap_or(sampler.step_size);
            sampler.n_leapfrog = n_leapfrog.unwrap_or(sampler.n_leapfrog);
            sampler.chains = chains.unwrap_or(sampler.chains);
            sampler.tune = tune.unwrap_or(sampler.tune);
            sampler.draws = draws.unwrap_or(sampler.draws);

            let addr: SocketAddr = ([127, 0, 0, 1], port).into();
            let handle = ServerHandle::spawn(ChainStore::new(), config, addr)
                .context("cannot start server")?;
            eprintln!("listening on {}", handle.base_url());
            println!(
                "demo {model} profile={} seed={seed} algorithm={:?} step_size={} chains={} tune={} draws={}",
                fault_profile.name(),
                sampler.algorithm,
                sampler.step_size,
                sampler.chains,
                sampler.tune,
                sampler.draws
            );
            let out = demo::run(&handle.base_url(), model, &sampler, record.as_deref())?;
            let report = Client::new(handle.base_url()).report(&out.run_id)?;
            print!("\n{}", report.render(format));
            if keep_serving {
                eprintln!(
                    "run {} finished; still serving on {}",
                    out.run_id,
                    handle.base_url()
                );
                wait_for_signal()?;
            }
            handle.shutdown()?;
            Ok(())
        }
        Command::Replay {
            log,
            report,
            format,
            engine,
        } => {
            let config = config::load(engine.config.as_deref(), &engine.sets)?;
            let parsed =
                read_log(&log).with_context(|| format!("cannot replay {}", log.display()))?;
            let label = parsed.metadata.label.clone();
            let replay = replay_log(&parsed, &config)
                .with_context(|| format!("cannot replay {}", log.display()))?;
            let status = replay.store.status(&replay.run_id)?;
            let final_report = Report::from_analyzer(&replay.analyzer, status, label)
                .expect("replay evaluates at least once");
            if report {
                print!("{}", final_report.render(format));
            } else {
                println!(
                    "replayed {} batches, {} evaluations, {} active warnings, max rhat {}",
                    parsed.batches.len(),
                    replay.analyzer.evaluations(),
                    final_report.active.len(),
                    final_report
                        .max_rhat()
                        .map_or("-".into(), |r| format!("{r:.4}")),
                );
            }
            Ok(())
        }
        Command::Report {
            run_id,
            format,
            server,
        } => {
            let report = Client::new(server).report(&RunId(run_id))?;
            print!("{}", report.render(format));
            Ok(())
        }
        Command::Schema { out } => {
            for path in schema::write_all(&out)? {
                println!("{path}");
            }
            Ok(())
        }
        Command::GenFixture { kind, out, seed } => {
            anyhow::ensure!(
                kind == "iid",
                "unknown fixture kind `{kind}` (expected iid)"
            );
            fixture::IidFixture {
                seed,
                ..Default::default()
            }
            .write(&out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn wait_for_signal() -> Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?;
    rt.block_on(tokio::signal::ctrl_c())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins the error chain, skipping causes whose text the message above
/// already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}
