//! Suite configuration and orchestration: spawns registry, app, and path
//! proxy as child processes per scenario, runs the device fleet through
//! the emulated path, and writes the final report artifacts.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::httpwire::request_once;
use crate::loadgen::{self, DeviceRun, LoadConfig, WireFrame};
use crate::metrics::{build_report, export, ExportFormat, ScenarioReport};
use crate::path::PathProfile;

pub const HEALTH_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_devices")]
    pub devices: u32,
    #[serde(default = "default_samples")]
    pub samples_per_device: u64,
    /// "mec" or "cloud".
    pub mode: crate::app::Mode,
    pub service_ms: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_rtt_burst")]
    pub rtt_burst: usize,
    /// "synthetic" or a directory of image files.
    #[serde(default = "default_frames")]
    pub frames: String,
    #[serde(default = "default_path")]
    pub path: PathProfile,
}

fn default_devices() -> u32 {
    1
}
fn default_samples() -> u64 {
    100
}
fn default_seed() -> u64 {
    1
}
fn default_rtt_burst() -> usize {
    loadgen::DEFAULT_RTT_BURST
}
fn default_frames() -> String {
    "synthetic".into()
}
fn default_path() -> PathProfile {
    PathProfile::unlimited("direct", 0.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub baseline: String,
    pub variant: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub comparisons: Vec<ComparisonPair>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
}

/// Parses and validates a suite file, reporting every violation at once.
pub fn load_config(path: &Path) -> Result<SuiteConfig, ConfigError> {
    let text = fs::read_to_string(path)?;
    let suite: SuiteConfig = toml::from_str(&text)?;
    validate(&suite)?;
    Ok(suite)
}

pub fn validate(suite: &SuiteConfig) -> Result<(), ConfigError> {
    let mut violations = Vec::new();
    if suite.scenarios.is_empty() {
        violations.push("scenarios: at least one scenario required".to_string());
    }
    let mut names = HashSet::new();
    for s in &suite.scenarios {
        let ctx = &s.name;
        if !names.insert(s.name.clone()) {
            violations.push(format!("{ctx}: duplicate scenario name"));
        }
        if s.devices < 1 {
            violations.push(format!("{ctx}: devices must be >= 1"));
        }
        if s.samples_per_device < 2 {
            violations.push(format!("{ctx}: samples_per_device must be >= 2"));
        }
        if s.service_ms < 0.0 {
            violations.push(format!("{ctx}: service_ms must be >= 0"));
        }
        if let Err(e) = s.path.validate() {
            violations.push(format!("{ctx}: {e}"));
        }
    }
    for c in &suite.comparisons {
        for name in [&c.baseline, &c.variant] {
            if !suite.scenarios.iter().any(|s| &s.name == name) {
                violations.push(format!(
                    "comparisons: {} vs {} references unknown scenario {name}",
                    c.baseline, c.variant
                ));
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Validation(violations))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Health {
    Ok,
    Failing(String),
}

pub struct Chain {
    pub registry: Option<String>,
    pub app: String,
    pub proxy: String,
}

/// Probes each hop of a launched scenario chain and names the first
/// failing one.
pub fn health_check(chain: &Chain) -> Health {
    let short = Duration::from_secs(3);
    if let Some(reg) = &chain.registry {
        match request_once(reg, "GET", "/mep/v1/services", &[], &[], short) {
            Ok(resp) if resp.status == 200 => {}
            _ => return Health::Failing("registry".into()),
        }
    }
    match request_once(&chain.app, "POST", "/echo", &[], b"ping", short) {
        Ok(resp) if resp.status == 200 && resp.body == b"ping" => {}
        _ => return Health::Failing("app".into()),
    }
    if chain.proxy.parse::<std::net::SocketAddr>().map_or(true, |a| {
        TcpStream::connect_timeout(&a, short).is_err()
    }) {
        return Health::Failing("proxy".into());
    }
    match request_once(&chain.proxy, "POST", "/echo", &[], b"ping", short) {
        Ok(resp) if resp.status == 200 && resp.body == b"ping" => Health::Ok,
        _ => Health::Failing("proxy\u{2192}app".into()),
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report error: {0}")]
    Stats(#[from] crate::metrics::StatsError),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub keep_logs: bool,
    /// Path to the mecbench binary used to spawn the server processes.
    pub bin: PathBuf,
    /// Run only this scenario, when set.
    pub only_scenario: Option<String>,
}

pub struct SuiteOutcome {
    pub report: ScenarioReport,
    /// Names of scenarios that failed, with reasons.
    pub failed: Vec<(String, String)>,
}

/// Kills the child on drop so teardown survives panics and early returns.
struct ChildGuard {
    child: Child,
    role: &'static str,
}

impl ChildGuard {
    fn stop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ChildGuard {
    fn drop(&mut self) {
        self.stop();
    }
}

fn free_port() -> std::io::Result<u16> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    Ok(listener.local_addr()?.port())
}

fn wait_tcp_ready(addr: &str, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    let Ok(sock) = addr.parse::<std::net::SocketAddr>() else {
        return false;
    };
    while Instant::now() < deadline {
        if TcpStream::connect_timeout(&sock, Duration::from_millis(250)).is_ok() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    false
}

fn spawn_child(
    bin: &Path,
    role: &'static str,
    args: &[String],
    log_dir: &Path,
    scenario: &str,
) -> std::io::Result<ChildGuard> {
    let log = fs::File::create(log_dir.join(format!("{scenario}-{role}.log")))?;
    let child = Command::new(bin)
        .args(args)
        .stdout(Stdio::from(log.try_clone()?))
        .stderr(Stdio::from(log))
        .spawn()?;
    Ok(ChildGuard { child, role })
}

struct ScenarioOutcome {
    runs: Vec<DeviceRun>,
    failure: Option<String>,
}

fn load_frames(spec: &str, seed: u64) -> std::io::Result<Vec<WireFrame>> {
    if spec == "synthetic" {
        Ok(loadgen::synthetic_corpus(seed))
    } else {
        loadgen::corpus_from_dir(Path::new(spec))
    }
}

fn run_scenario(
    scenario: &ScenarioConfig,
    opts: &RunOptions,
    log_dir: &Path,
) -> std::io::Result<ScenarioOutcome> {
    let fail = |msg: String| Ok(ScenarioOutcome { runs: Vec::new(), failure: Some(msg) });

    let frames = match load_frames(&scenario.frames, scenario.seed) {
        Ok(f) if !f.is_empty() => f,
        Ok(_) => return fail(format!("frame source {} is empty", scenario.frames)),
        Err(e) => return fail(format!("frame source {}: {e}", scenario.frames)),
    };

    let mut children: Vec<ChildGuard> = Vec::new();

    // start registry first (MEC only), then app, then path proxy
    let registry_addr = if scenario.mode == crate::app::Mode::Mec {
        let addr = format!("127.0.0.1:{}", free_port()?);
        children.push(spawn_child(
            &opts.bin,
            "mep",
            &[
                "mep".into(),
                "--listen".into(),
                addr.clone(),
                "--sweep-interval-ms".into(),
                "1000".into(),
            ],
            log_dir,
            &scenario.name,
        )?);
        if !wait_tcp_ready(&addr, Duration::from_secs(10)) {
            return fail("registry did not come up".into());
        }
        Some(addr)
    } else {
        None
    };

    let app_addr = format!("127.0.0.1:{}", free_port()?);
    let mut app_args = vec![
        "app".into(),
        "--mode".into(),
        match scenario.mode {
            crate::app::Mode::Mec => "mec".to_string(),
            crate::app::Mode::Cloud => "cloud".to_string(),
        },
        "--listen".into(),
        app_addr.clone(),
        "--service-ms".into(),
        scenario.service_ms.to_string(),
    ];
    if let Some(reg) = &registry_addr {
        app_args.extend(["--mep".into(), format!("http://{reg}")]);
    }
    children.push(spawn_child(&opts.bin, "app", &app_args, log_dir, &scenario.name)?);
    if !wait_tcp_ready(&app_addr, Duration::from_secs(15)) {
        return fail("app did not come up".into());
    }

    let proxy_addr = format!("127.0.0.1:{}", free_port()?);
    let bandwidth = scenario
        .path
        .bandwidth_mbps
        .map(|b| b.to_string())
        .unwrap_or_else(|| "unlimited".into());
    children.push(spawn_child(
        &opts.bin,
        "path",
        &[
            "path".into(),
            "--listen".into(),
            proxy_addr.clone(),
            "--upstream".into(),
            app_addr.clone(),
            "--one-way-ms".into(),
            scenario.path.one_way_delay_ms.to_string(),
            "--jitter-ms".into(),
            scenario.path.jitter_ms.to_string(),
            "--bandwidth-mbps".into(),
            bandwidth,
            "--seed".into(),
            scenario.seed.to_string(),
        ],
        log_dir,
        &scenario.name,
    )?);
    if !wait_tcp_ready(&proxy_addr, Duration::from_secs(10)) {
        return fail("path proxy did not come up".into());
    }

    // health-check the whole chain before measuring so cold-start effects
    // never pollute sample 0
    let chain = Chain {
        registry: registry_addr.clone(),
        app: app_addr.clone(),
        proxy: proxy_addr.clone(),
    };
    let deadline = Instant::now() + HEALTH_TIMEOUT;
    let mut last = Health::Failing("unprobed".into());
    while Instant::now() < deadline {
        last = health_check(&chain);
        if last == Health::Ok {
            break;
        }
        std::thread::sleep(Duration::from_millis(200));
    }
    if let Health::Failing(hop) = last {
        return fail(format!("health check timed out at hop {hop}"));
    }

    let mut load = LoadConfig::new(&proxy_addr, scenario.samples_per_device);
    load.rtt_burst = scenario.rtt_burst;
    let runs = loadgen::run_fleet(&load, scenario.devices, &frames, scenario.seed);

    // teardown in reverse launch order
    while let Some(mut child) = children.pop() {
        let _ = child.role;
        child.stop();
    }

    let failure = runs
        .iter()
        .filter(|r| !r.complete)
        .map(|r| format!("device {}: {}", r.device_id, r.error.clone().unwrap_or_default()))
        .reduce(|a, b| format!("{a}; {b}"));
    Ok(ScenarioOutcome { runs, failure })
}

/// Runs every scenario in order, then builds and exports the report.
/// Individual scenario failures are recorded and the suite continues.
pub fn run_suite(suite: &SuiteConfig, opts: &RunOptions) -> Result<SuiteOutcome, SuiteError> {
    fs::create_dir_all(&opts.out_dir)?;
    let log_dir = opts.out_dir.join("logs");
    fs::create_dir_all(&log_dir)?;

    let mut completed: Vec<(String, Vec<DeviceRun>)> = Vec::new();
    let mut failed: Vec<(String, String)> = Vec::new();

    for scenario in &suite.scenarios {
        if let Some(only) = &opts.only_scenario {
            if &scenario.name != only {
                continue;
            }
        }
        eprintln!(
            "[mecbench] scenario {}: {} device(s) x {} samples",
            scenario.name, scenario.devices, scenario.samples_per_device
        );
        let outcome = run_scenario(scenario, opts, &log_dir)?;
        if !outcome.runs.is_empty() {
            let scen_dir = opts.out_dir.join(&scenario.name);
            fs::create_dir_all(&scen_dir)?;
            let mut file = fs::File::create(scen_dir.join("samples.csv"))?;
            loadgen::write_samples_csv(&mut file, &outcome.runs)?;
        }
        match outcome.failure {
            Some(reason) => {
                eprintln!("[mecbench] scenario {} FAILED: {reason}", scenario.name);
                failed.push((scenario.name.clone(), reason));
            }
            None => completed.push((scenario.name.clone(), outcome.runs)),
        }
    }

    let pairs: Vec<(String, String)> = suite
        .comparisons
        .iter()
        .map(|c| (c.baseline.clone(), c.variant.clone()))
        .collect();
    let report = build_report(&completed, &pairs)?;

    fs::write(opts.out_dir.join("report.csv"), export(&report, ExportFormat::Csv))?;
    fs::write(opts.out_dir.join("report.json"), export(&report, ExportFormat::Json))?;
    fs::write(opts.out_dir.join("plotdata.txt"), export(&report, ExportFormat::PlotData))?;
    write_manifest(suite, opts, &failed)?;

    if !opts.keep_logs {
        let _ = fs::remove_dir_all(&log_dir);
    }
    Ok(SuiteOutcome { report, failed })
}

fn write_manifest(
    suite: &SuiteConfig,
    opts: &RunOptions,
    failed: &[(String, String)],
) -> std::io::Result<()> {
    let manifest = json!({
        "scenarios": suite.scenarios.iter().map(|s| json!({
            "name": s.name,
            "devices": s.devices,
            "samples_per_device": s.samples_per_device,
            "mode": s.mode,
            "service_ms": s.service_ms,
            "seed": s.seed,
            "rtt_burst": s.rtt_burst,
            "frames": s.frames,
            "path": s.path,
        })).collect::<Vec<_>>(),
        "comparisons": suite.comparisons,
        "failed": failed.iter().map(|(n, r)| json!({"scenario": n, "reason": r})).collect::<Vec<_>>(),
        "conventions": {
            "rtt": "application-level /echo probes, 64-octet payload; burst before the run plus one probe per 10 requests; each sample gets the nearest-in-time probe",
            "byte_counting": "stream level inside the client, HTTP headers included",
            "frame_encoding": "application/x-raw-frame unless a frame directory supplies png/jpeg",
            "think_time_ms": 0,
            "delay_model": "symmetric one-way delay per direction, per-chunk serialization at the bandwidth cap",
            "cell_contention": "not modeled; per-connection pacing only"
        }
    });
    let mut f = fs::File::create(opts.out_dir.join("run-manifest.json"))?;
    f.write_all(serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())?;
    f.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_suite() -> SuiteConfig {
        toml::from_str(
            r#"
            [[scenarios]]
            name = "A"
            mode = "cloud"
            service_ms = 1.0
            "#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_applied() {
        let suite = minimal_suite();
        let s = &suite.scenarios[0];
        assert_eq!(s.devices, 1);
        assert_eq!(s.samples_per_device, 100);
        assert_eq!(s.seed, 1);
        assert_eq!(s.frames, "synthetic");
        assert!(s.path.bandwidth_mbps.is_none());
        validate(&suite).unwrap();
    }

    #[test]
    fn zero_devices_named_in_validation() {
        let mut suite = minimal_suite();
        suite.scenarios[0].devices = 0;
        let err = validate(&suite).unwrap_err();
        assert!(err.to_string().contains("devices"), "{err}");
    }

    #[test]
    fn unknown_comparison_target_rejected() {
        let mut suite = minimal_suite();
        suite.comparisons.push(ComparisonPair { baseline: "A".into(), variant: "Nope".into() });
        let err = validate(&suite).unwrap_err();
        assert!(err.to_string().contains("Nope"), "{err}");
    }

    #[test]
    fn empty_scenario_list_rejected() {
        let suite = SuiteConfig { scenarios: vec![], comparisons: vec![] };
        assert!(validate(&suite).is_err());
    }

    #[test]
    fn all_violations_reported_together() {
        let mut suite = minimal_suite();
        suite.scenarios[0].devices = 0;
        suite.scenarios[0].samples_per_device = 1;
        let err = validate(&suite).unwrap_err();
        let ConfigError::Validation(v) = err else { panic!("wrong variant") };
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn parse_error_carries_location() {
        let err = toml::from_str::<SuiteConfig>("scenarios = [ { name }").unwrap_err();
        assert!(!err.to_string().is_empty());
    }
}
