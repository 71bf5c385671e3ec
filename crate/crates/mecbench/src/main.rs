use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use mecbench::app::{self, AppConfig, Mode};
use mecbench::loadgen::{self, LoadConfig};
use mecbench::path::{proxy_listen, PathProfile};
use mecbench::registry::server as registry_server;
use mecbench::scenario::{self, RunOptions};

#[derive(Parser)]
#[command(name = "mecbench", about = "Edge-vs-cloud offloading benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the MEC-platform service registry.
    Mep {
        #[arg(long, default_value = "127.0.0.1:7021")]
        listen: String,
        #[arg(long, default_value_t = 1000)]
        sweep_interval_ms: u64,
    },
    /// Run the offloading application server (MEC or cloud mode).
    App {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value = "127.0.0.1:7030")]
        listen: String,
        /// Total server compute target per request, ms.
        #[arg(long, default_value_t = 0.0)]
        service_ms: f64,
        /// Registry base URI; required in MEC mode.
        #[arg(long)]
        mep: Option<String>,
        /// Registration lease TTL, seconds (MEC mode).
        #[arg(long, default_value_t = 30)]
        ttl_s: u64,
    },
    /// Run the network path emulator proxy.
    Path {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        upstream: String,
        #[arg(long, default_value_t = 0.0)]
        one_way_ms: f64,
        #[arg(long, default_value_t = 0.0)]
        jitter_ms: f64,
        /// Megabits per second, or "unlimited".
        #[arg(long, default_value = "unlimited")]
        bandwidth_mbps: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the closed-loop device load generator.
    Load {
        #[arg(long)]
        endpoint: String,
        #[arg(long, default_value_t = 1)]
        devices: u32,
        #[arg(long, default_value_t = 100)]
        samples: u64,
        /// "synthetic" or a directory of image files.
        #[arg(long, default_value = "synthetic")]
        frames: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Samples CSV output path ("-" for stdout).
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Run a scenario suite and emit the report.
    Run {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run only the named scenario.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        keep_logs: bool,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ModeArg {
    Mec,
    Cloud,
}

fn park_forever() -> ! {
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Mep { listen, sweep_interval_ms } => {
            match registry_server::start(&listen, sweep_interval_ms) {
                Ok(server) => {
                    eprintln!("[mep] listening on {}", server.addr());
                    park_forever();
                }
                Err(e) => {
                    eprintln!("[mep] failed to start: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::App { mode, listen, service_ms, mep, ttl_s } => {
            let mut config = AppConfig::new(
                match mode {
                    ModeArg::Mec => Mode::Mec,
                    ModeArg::Cloud => Mode::Cloud,
                },
                &listen,
                service_ms,
            );
            config.mep_uri = mep;
            config.ttl_s = ttl_s;
            match app::start(config) {
                Ok(handle) => {
                    eprintln!("[app] listening on {}", handle.addr());
                    park_forever();
                }
                Err(e) => {
                    eprintln!("[app] failed to start: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Path { listen, upstream, one_way_ms, jitter_ms, bandwidth_mbps, seed } => {
            let bandwidth = if bandwidth_mbps == "unlimited" {
                None
            } else {
                match bandwidth_mbps.parse::<f64>() {
                    Ok(b) => Some(b),
                    Err(_) => {
                        eprintln!("[path] bad --bandwidth-mbps: {bandwidth_mbps}");
                        return ExitCode::FAILURE;
                    }
                }
            };
            let profile = PathProfile {
                name: "cli".into(),
                one_way_delay_ms: one_way_ms,
                jitter_ms,
                bandwidth_mbps: bandwidth,
            };
            match proxy_listen(&listen, &upstream, profile, seed) {
                Ok(handle) => {
                    eprintln!("[path] {} -> {} up", handle.addr, upstream);
                    park_forever();
                }
                Err(e) => {
                    eprintln!("[path] failed to start: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Load { endpoint, devices, samples, frames, seed, out } => {
            let corpus = if frames == "synthetic" {
                loadgen::synthetic_corpus(seed)
            } else {
                match loadgen::corpus_from_dir(std::path::Path::new(&frames)) {
                    Ok(c) if !c.is_empty() => c,
                    Ok(_) => {
                        eprintln!("[load] no frames in {frames}");
                        return ExitCode::FAILURE;
                    }
                    Err(e) => {
                        eprintln!("[load] cannot read {frames}: {e}");
                        return ExitCode::FAILURE;
                    }
                }
            };
            let config = LoadConfig::new(&endpoint, samples);
            let runs = loadgen::run_fleet(&config, devices, &corpus, seed);
            let write = |w: &mut dyn std::io::Write| loadgen::write_samples_csv(w, &runs);
            let result = if out == "-" {
                write(&mut std::io::stdout())
            } else {
                std::fs::File::create(&out).and_then(|mut f| write(&mut f))
            };
            if let Err(e) = result {
                eprintln!("[load] cannot write samples: {e}");
                return ExitCode::FAILURE;
            }
            if runs.iter().all(|r| r.complete) {
                ExitCode::SUCCESS
            } else {
                for r in runs.iter().filter(|r| !r.complete) {
                    eprintln!(
                        "[load] device {} incomplete: {}",
                        r.device_id,
                        r.error.clone().unwrap_or_default()
                    );
                }
                ExitCode::FAILURE
            }
        }
        Cmd::Run { suite, out, scenario, keep_logs } => {
            let config = match scenario::load_config(&suite) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("[run] {e}");
                    return ExitCode::from(2);
                }
            };
            let bin = match std::env::current_exe() {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("[run] cannot locate own binary: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let opts = RunOptions { out_dir: out, keep_logs, bin, only_scenario: scenario };
            match scenario::run_suite(&config, &opts) {
                Ok(outcome) => {
                    print!(
                        "{}",
                        String::from_utf8_lossy(&mecbench::metrics::export(
                            &outcome.report,
                            mecbench::metrics::ExportFormat::Csv
                        ))
                    );
                    if outcome.failed.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("[run] {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
