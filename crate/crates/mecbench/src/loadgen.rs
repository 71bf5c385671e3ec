//! Closed-loop UE emulation: each device repeatedly posts a frame to the
//! detect endpoint, waits for the response, and records one metric sample
//! per request. RTT is probed separately through the echo endpoint.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::DetectionResponse;
use crate::httpwire::HttpClient;
use crate::vision::{encode_raw, Encoding, Frame};

pub const ECHO_PROBE_BYTES: usize = 64;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_RTT_BURST: usize = 100;
/// One echo probe is interleaved after every this many detect requests.
pub const PROBE_EVERY: u64 = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSample {
    pub device_id: u32,
    pub seq: u64,
    /// Nearest-in-time echo probe, ms.
    pub rtt_ms: f64,
    /// Server-reported processing time, ms.
    pub processing_ms: f64,
    /// Client clock, send-start to response-fully-read, ms.
    pub response_ms: f64,
    /// Stream-level octet counts, headers included.
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub throughput_mbps: f64,
    pub t_start_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceRun {
    pub device_id: u32,
    pub samples: Vec<MetricSample>,
    pub complete: bool,
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("response_ms is zero")]
    ZeroDuration,
}

/// Paper throughput definition: total octets on the wire over response
/// time, in megabits per second.
pub fn compute_throughput(bytes_total: u64, response_ms: f64) -> Result<f64, LoadError> {
    if response_ms <= 0.0 {
        return Err(LoadError::ZeroDuration);
    }
    Ok(bytes_total as f64 * 8.0 / (response_ms * 1000.0))
}

/// An encoded frame ready to put on the wire.
#[derive(Debug, Clone)]
pub struct WireFrame {
    pub body: Vec<u8>,
    pub encoding: Encoding,
}

/// Sixteen deterministic 200x152 RGB frames with 1-3 bright rectangular
/// blobs on a dark background; payload sizes are stable across runs.
pub fn synthetic_corpus(seed: u64) -> Vec<WireFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..16)
        .map(|_| {
            let (w, h) = (200u32, 152u32);
            let mut pixels = vec![20u8; (w * h * 3) as usize];
            let blobs = rng.gen_range(1..=3);
            for _ in 0..blobs {
                let bw = rng.gen_range(8..30u32);
                let bh = rng.gen_range(8..30u32);
                let x0 = rng.gen_range(0..w - bw);
                let y0 = rng.gen_range(0..h - bh);
                let value = rng.gen_range(220..=255u8);
                for y in y0..y0 + bh {
                    for x in x0..x0 + bw {
                        let base = ((y * w + x) * 3) as usize;
                        pixels[base..base + 3].copy_from_slice(&[value; 3]);
                    }
                }
            }
            let frame = Frame::new(w, h, 3, pixels).expect("synthetic frame is valid");
            WireFrame { body: encode_raw(&frame), encoding: Encoding::Raw }
        })
        .collect()
}

/// Loads .png/.jpg/.jpeg/.raw files from a directory, sorted by name.
pub fn corpus_from_dir(dir: &std::path::Path) -> std::io::Result<Vec<WireFrame>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png" | "jpg" | "jpeg" | "raw")
            )
        })
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let encoding = match p.extension().and_then(|e| e.to_str()) {
                Some("png") => Encoding::Png,
                Some("jpg" | "jpeg") => Encoding::Jpeg,
                _ => Encoding::Raw,
            };
            Ok(WireFrame { body: std::fs::read(&p)?, encoding })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LoadConfig {
    /// `host:port` or `http://host:port` of the detect/echo server.
    pub endpoint: String,
    pub samples: u64,
    pub rtt_burst: usize,
    pub timeout: Duration,
}

impl LoadConfig {
    pub fn new(endpoint: &str, samples: u64) -> Self {
        LoadConfig {
            endpoint: endpoint.into(),
            samples,
            rtt_burst: DEFAULT_RTT_BURST,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    fn authority(&self) -> String {
        self.endpoint
            .strip_prefix("http://")
            .unwrap_or(&self.endpoint)
            .trim_end_matches('/')
            .to_string()
    }
}

fn echo_probe(client: &mut HttpClient, payload: &[u8]) -> Result<f64, LoadError> {
    let start = Instant::now();
    let resp = client
        .request("POST", "/echo", &[("Content-Type", "application/octet-stream")], payload)
        .map_err(|e| LoadError::EndpointUnreachable(e.to_string()))?;
    let rtt = start.elapsed().as_secs_f64() * 1000.0;
    if resp.status != 200 || resp.body != payload {
        return Err(LoadError::ProtocolError(format!("echo status {}", resp.status)));
    }
    Ok(rtt)
}

/// Standalone RTT measurement: `probes` echo round trips on one fresh
/// connection, 64-octet payload.
pub fn measure_rtt(endpoint: &str, probes: usize) -> Result<Vec<f64>, LoadError> {
    assert!(probes >= 1, "at least one probe required");
    let cfg = LoadConfig::new(endpoint, 0);
    let mut client = HttpClient::connect(&cfg.authority(), cfg.timeout)
        .map_err(|e| LoadError::EndpointUnreachable(e.to_string()))?;
    let payload = vec![0xa5u8; ECHO_PROBE_BYTES];
    (0..probes).map(|_| echo_probe(&mut client, &payload)).collect()
}

/// Runs one device's closed loop: `samples` sequential detect requests on
/// a persistent connection, frames drawn round-robin from the corpus.
/// On transport failure the partial run is preserved and marked
/// incomplete.
pub fn run_device(
    config: &LoadConfig,
    device_id: u32,
    frames: &[WireFrame],
    _seed: u64,
) -> DeviceRun {
    assert!(!frames.is_empty(), "frame corpus must be non-empty");
    let mut run = DeviceRun { device_id, samples: Vec::new(), complete: false, error: None };
    let mut probes: Vec<(f64, f64)> = Vec::new(); // (t_ms, rtt_ms)
    let probe_payload = vec![0xa5u8; ECHO_PROBE_BYTES];

    let mut client = match HttpClient::connect(&config.authority(), config.timeout) {
        Ok(c) => c,
        Err(e) => {
            run.error = Some(LoadError::EndpointUnreachable(e.to_string()).to_string());
            return run;
        }
    };

    let fail = |run: &mut DeviceRun, err: LoadError| {
        run.error = Some(err.to_string());
    };

    // RTT burst before the measured loop
    for _ in 0..config.rtt_burst {
        match echo_probe(&mut client, &probe_payload) {
            Ok(rtt) => probes.push((crate::now_ms(), rtt)),
            Err(e) => {
                fail(&mut run, e);
                return run;
            }
        }
    }

    for seq in 0..config.samples {
        let frame = &frames[(seq as usize) % frames.len()];
        let sent_before = client.bytes_sent;
        let recv_before = client.bytes_received;
        let t_start_ms = crate::now_ms();
        let start = Instant::now();
        let resp = match client.request(
            "POST",
            "/detect",
            &[
                ("X-Seq", &seq.to_string()),
                ("Content-Type", frame.encoding.content_type()),
            ],
            &frame.body,
        ) {
            Ok(r) => r,
            Err(e) => {
                fail(&mut run, LoadError::EndpointUnreachable(e.to_string()));
                finish_rtt(&mut run, &probes);
                return run;
            }
        };
        let response_ms = start.elapsed().as_secs_f64() * 1000.0;
        if resp.status != 200 {
            fail(
                &mut run,
                LoadError::ProtocolError(format!(
                    "detect status {}: {}",
                    resp.status,
                    String::from_utf8_lossy(&resp.body)
                )),
            );
            finish_rtt(&mut run, &probes);
            return run;
        }
        let detection: DetectionResponse = match serde_json::from_slice(&resp.body) {
            Ok(d) => d,
            Err(e) => {
                fail(&mut run, LoadError::ProtocolError(e.to_string()));
                finish_rtt(&mut run, &probes);
                return run;
            }
        };
        if detection.request_seq != seq {
            fail(
                &mut run,
                LoadError::ProtocolError(format!(
                    "sequence mismatch: sent {seq}, got {}",
                    detection.request_seq
                )),
            );
            finish_rtt(&mut run, &probes);
            return run;
        }
        let bytes_sent = client.bytes_sent - sent_before;
        let bytes_received = client.bytes_received - recv_before;
        let throughput_mbps = compute_throughput(bytes_sent + bytes_received, response_ms)
            .unwrap_or(0.0);
        run.samples.push(MetricSample {
            device_id,
            seq,
            rtt_ms: f64::NAN, // filled from the probe record below
            processing_ms: detection.processing_ms,
            response_ms,
            bytes_sent,
            bytes_received,
            throughput_mbps,
            t_start_ms,
        });

        if (seq + 1) % PROBE_EVERY == 0 {
            match echo_probe(&mut client, &probe_payload) {
                Ok(rtt) => probes.push((crate::now_ms(), rtt)),
                Err(e) => {
                    fail(&mut run, e);
                    finish_rtt(&mut run, &probes);
                    return run;
                }
            }
        }
    }
    run.complete = true;
    finish_rtt(&mut run, &probes);
    run
}

/// Assigns each sample the RTT of the probe nearest in time to its start.
fn finish_rtt(run: &mut DeviceRun, probes: &[(f64, f64)]) {
    for sample in &mut run.samples {
        sample.rtt_ms = probes
            .iter()
            .min_by(|a, b| {
                let da = (a.0 - sample.t_start_ms).abs();
                let db = (b.0 - sample.t_start_ms).abs();
                da.partial_cmp(&db).unwrap()
            })
            .map(|p| p.1)
            .unwrap_or(f64::NAN);
    }
}

/// Runs `devices` independent closed loops concurrently; per-device seeds
/// are `seed + device_id`. Failures do not cancel sibling devices.
pub fn run_fleet(
    config: &LoadConfig,
    devices: u32,
    frames: &[WireFrame],
    seed: u64,
) -> Vec<DeviceRun> {
    assert!(devices >= 1, "at least one device");
    let mut handles = Vec::new();
    for device_id in 0..devices {
        let config = config.clone();
        let frames = frames.to_vec();
        handles.push(std::thread::spawn(move || {
            run_device(&config, device_id, &frames, seed + device_id as u64)
        }));
    }
    let mut runs: Vec<DeviceRun> = handles
        .into_iter()
        .map(|h| h.join().expect("device thread panicked"))
        .collect();
    runs.sort_by_key(|r| r.device_id);
    runs
}

pub const SAMPLES_CSV_HEADER: &str =
    "device_id,seq,rtt_ms,processing_ms,response_ms,bytes_sent,bytes_received,throughput_mbps";

pub fn write_samples_csv(out: &mut (impl Write + ?Sized), runs: &[DeviceRun]) -> std::io::Result<()> {
    writeln!(out, "{SAMPLES_CSV_HEADER}")?;
    for run in runs {
        for s in &run.samples {
            writeln!(
                out,
                "{},{},{:.4},{:.4},{:.4},{},{},{:.4}",
                s.device_id,
                s.seq,
                s.rtt_ms,
                s.processing_ms,
                s.response_ms,
                s.bytes_sent,
                s.bytes_received,
                s.throughput_mbps
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::{self, AppConfig, Mode};

    fn local_app(service_ms: f64) -> app::AppHandle {
        app::start(AppConfig::new(Mode::Cloud, "127.0.0.1:0", service_ms)).unwrap()
    }

    #[test]
    fn throughput_analytic_values() {
        assert!((compute_throughput(52_000, 100.0).unwrap() - 4.16).abs() < 1e-12);
        assert_eq!(compute_throughput(0, 5.0).unwrap(), 0.0);
        assert!(matches!(compute_throughput(100, 0.0), Err(LoadError::ZeroDuration)));
    }

    #[test]
    fn synthetic_corpus_is_stable() {
        let a = synthetic_corpus(9);
        let b = synthetic_corpus(9);
        assert_eq!(a.len(), 16);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.body, y.body);
        }
        // 200x152x3 RAW payload
        assert_eq!(a[0].body.len(), 12 + 200 * 152 * 3);
    }

    #[test]
    fn zero_samples_gives_empty_run() {
        let mut handle = local_app(0.0);
        let mut cfg = LoadConfig::new(&handle.addr().to_string(), 0);
        cfg.rtt_burst = 1;
        let run = run_device(&cfg, 0, &synthetic_corpus(1), 0);
        assert!(run.complete);
        assert!(run.samples.is_empty());
        handle.shutdown();
    }

    #[test]
    fn closed_loop_sequences_and_invariants() {
        let mut handle = local_app(0.0);
        let mut cfg = LoadConfig::new(&handle.addr().to_string(), 25);
        cfg.rtt_burst = 3;
        let run = run_device(&cfg, 0, &synthetic_corpus(1), 0);
        assert!(run.complete, "error: {:?}", run.error);
        assert_eq!(run.samples.len(), 25);
        for (i, s) in run.samples.iter().enumerate() {
            assert_eq!(s.seq, i as u64);
            assert!(s.rtt_ms.is_finite());
            assert!(s.response_ms >= s.processing_ms);
            assert!(s.bytes_sent >= 12 + 200 * 152 * 3);
            assert!(s.bytes_received > 0);
            let recomputed =
                compute_throughput(s.bytes_sent + s.bytes_received, s.response_ms).unwrap();
            assert!((recomputed - s.throughput_mbps).abs() <= 1e-9 * recomputed.abs());
        }
        // closed loop: next start no earlier than previous completion
        for pair in run.samples.windows(2) {
            assert!(pair[1].t_start_ms >= pair[0].t_start_ms + pair[0].response_ms - 0.5);
        }
        handle.shutdown();
    }

    #[test]
    fn server_killed_mid_run_keeps_partial_data() {
        let mut handle = local_app(5.0);
        let addr = handle.addr().to_string();
        let killer = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(300));
            handle.shutdown();
        });
        let mut cfg = LoadConfig::new(&addr, 10_000);
        cfg.rtt_burst = 1;
        cfg.timeout = Duration::from_secs(2);
        let run = run_device(&cfg, 0, &synthetic_corpus(1), 0);
        killer.join().unwrap();
        assert!(!run.complete);
        assert!(run.error.is_some());
        assert!(!run.samples.is_empty(), "partial samples retained");
        assert!(run.samples.len() < 10_000);
    }

    #[test]
    fn fleet_isolation_one_dead_endpoint() {
        // both devices target the same live endpoint; a second fleet on a
        // dead endpoint fails without panicking
        let mut handle = local_app(0.0);
        let mut cfg = LoadConfig::new(&handle.addr().to_string(), 3);
        cfg.rtt_burst = 1;
        let runs = run_fleet(&cfg, 2, &synthetic_corpus(1), 0);
        assert_eq!(runs.len(), 2);
        assert!(runs.iter().all(|r| r.complete));
        assert_eq!(runs[0].device_id, 0);
        assert_eq!(runs[1].device_id, 1);
        handle.shutdown();

        let mut dead_cfg = LoadConfig::new("127.0.0.1:1", 3);
        dead_cfg.rtt_burst = 1;
        dead_cfg.timeout = Duration::from_millis(500);
        let runs = run_fleet(&dead_cfg, 2, &synthetic_corpus(1), 0);
        assert!(runs.iter().all(|r| !r.complete && r.error.is_some()));
    }

    #[test]
    fn measure_rtt_loopback_fast() {
        let mut handle = local_app(0.0);
        let rtts = measure_rtt(&handle.addr().to_string(), 20).unwrap();
        assert_eq!(rtts.len(), 20);
        // scheduler hiccups can spike a probe; judge the typical case
        let mut sorted = rtts.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[rtts.len() / 2] < 10.0, "median rtt high: {rtts:?}");
        assert!(sorted[rtts.len() - 1] < 200.0, "outlier rtt: {rtts:?}");
        handle.shutdown();
    }

    #[test]
    fn samples_csv_layout() {
        let run = DeviceRun {
            device_id: 0,
            samples: vec![MetricSample {
                device_id: 0,
                seq: 0,
                rtt_ms: 1.0,
                processing_ms: 2.0,
                response_ms: 4.0,
                bytes_sent: 100,
                bytes_received: 50,
                throughput_mbps: 0.3,
                t_start_ms: 0.0,
            }],
            complete: true,
            error: None,
        };
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &[run]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SAMPLES_CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "0,0,1.0000,2.0000,4.0000,100,50,0.3000");
    }
}
