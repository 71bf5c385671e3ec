//! Userspace network path emulator: a transparent TCP byte-stream proxy
//! imposing one-way delay, seeded uniform jitter, and a bandwidth cap on
//! each direction of every proxied connection.
//!
//! Delay is modeled per chunk rather than per IP packet so the whole
//! harness runs unprivileged on one machine.

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const CHUNK: usize = 16 * 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathProfile {
    pub name: String,
    pub one_way_delay_ms: f64,
    /// Uniform +/- jitter applied per chunk; must not exceed the delay.
    pub jitter_ms: f64,
    /// `None` means unlimited.
    pub bandwidth_mbps: Option<f64>,
}

impl PathProfile {
    pub fn unlimited(name: &str, one_way_delay_ms: f64) -> Self {
        PathProfile { name: name.into(), one_way_delay_ms, jitter_ms: 0.0, bandwidth_mbps: None }
    }

    pub fn validate(&self) -> Result<(), PathError> {
        if self.one_way_delay_ms < 0.0 || self.jitter_ms < 0.0 {
            return Err(PathError::InvalidProfile("negative delay or jitter".into()));
        }
        if self.jitter_ms > self.one_way_delay_ms {
            return Err(PathError::InvalidProfile("jitter exceeds one-way delay".into()));
        }
        if let Some(b) = self.bandwidth_mbps {
            if b <= 0.0 {
                return Err(PathError::InvalidProfile("bandwidth must be positive".into()));
            }
        }
        Ok(())
    }

    /// Serialization time for `bytes` at the profile's bandwidth, ms.
    pub fn serialization_ms(&self, bytes: usize) -> f64 {
        match self.bandwidth_mbps {
            Some(b) => bytes as f64 * 8.0 / (b * 1000.0),
            None => 0.0,
        }
    }
}

/// Deterministic one-message transfer model: delay plus serialization,
/// jitter excluded.
pub fn transfer_time(bytes: usize, profile: &PathProfile) -> f64 {
    profile.one_way_delay_ms + profile.serialization_ms(bytes)
}

#[derive(Debug, Error)]
pub enum PathError {
    #[error("invalid path profile: {0}")]
    InvalidProfile(String),
    #[error("bind failed: {0}")]
    BindFailed(std::io::Error),
    #[error("upstream unreachable: {0}")]
    UpstreamUnreachable(std::io::Error),
}

/// Release-time calculator for one direction of one connection.
///
/// Chunks pass through a serialization pipe (bandwidth cap), then pick up
/// the one-way delay plus seeded jitter; release times are clamped
/// monotonic so ordering is preserved.
pub struct DelayScheduler {
    profile: PathProfile,
    rng: ChaCha8Rng,
    pipe_busy_until_ms: f64,
    last_release_ms: f64,
}

impl DelayScheduler {
    pub fn new(profile: PathProfile, seed: u64) -> Self {
        DelayScheduler {
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pipe_busy_until_ms: 0.0,
            last_release_ms: 0.0,
        }
    }

    /// Release time for a chunk of `bytes` arriving at `arrival_ms`.
    pub fn schedule(&mut self, arrival_ms: f64, bytes: usize) -> f64 {
        let start = arrival_ms.max(self.pipe_busy_until_ms);
        self.pipe_busy_until_ms = start + self.profile.serialization_ms(bytes);
        let jitter = if self.profile.jitter_ms > 0.0 {
            self.rng.gen_range(-self.profile.jitter_ms..=self.profile.jitter_ms)
        } else {
            0.0
        };
        let release = self.pipe_busy_until_ms + self.profile.one_way_delay_ms + jitter;
        self.last_release_ms = release.max(self.last_release_ms);
        self.last_release_ms
    }
}

pub struct ProxyHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
}

impl ProxyHandle {
    /// Idempotent: the second call is a no-op.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        for s in self.streams.lock().unwrap().iter() {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts the proxy. The upstream is probed once so a misconfigured
/// topology fails loudly at startup.
pub fn proxy_listen(
    listen: &str,
    upstream: &str,
    profile: PathProfile,
    seed: u64,
) -> Result<ProxyHandle, PathError> {
    profile.validate()?;
    let upstream_addr: SocketAddr = upstream
        .parse()
        .map_err(|_| PathError::UpstreamUnreachable(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "bad upstream address",
        )))?;
    TcpStream::connect_timeout(&upstream_addr, Duration::from_secs(5))
        .map_err(PathError::UpstreamUnreachable)?;
    let listener = TcpListener::bind(listen).map_err(PathError::BindFailed)?;
    let addr = listener.local_addr().map_err(PathError::BindFailed)?;
    listener.set_nonblocking(true).map_err(PathError::BindFailed)?;

    let stop = Arc::new(AtomicBool::new(false));
    let streams: Arc<Mutex<Vec<TcpStream>>> = Arc::new(Mutex::new(Vec::new()));
    let conn_counter = Arc::new(AtomicU64::new(0));

    let stop2 = Arc::clone(&stop);
    let streams2 = Arc::clone(&streams);
    let accept = thread::spawn(move || {
        let mut pumps: Vec<JoinHandle<()>> = Vec::new();
        while !stop2.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((client, _)) => {
                    let upstream = match TcpStream::connect_timeout(
                        &upstream_addr,
                        Duration::from_secs(5),
                    ) {
                        Ok(s) => s,
                        Err(_) => continue,
                    };
                    let _ = client.set_nodelay(true);
                    let _ = upstream.set_nodelay(true);
                    let conn_id = conn_counter.fetch_add(1, Ordering::SeqCst);
                    {
                        let mut guard = streams2.lock().unwrap();
                        guard.push(client.try_clone().expect("clone"));
                        guard.push(upstream.try_clone().expect("clone"));
                    }
                    let c2u = pump_direction(
                        client.try_clone().expect("clone"),
                        upstream.try_clone().expect("clone"),
                        profile.clone(),
                        seed ^ (conn_id << 1),
                        Arc::clone(&stop2),
                    );
                    let u2c = pump_direction(
                        upstream,
                        client,
                        profile.clone(),
                        seed ^ (conn_id << 1) ^ 1,
                        Arc::clone(&stop2),
                    );
                    pumps.extend([c2u, u2c]);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                }
                Err(_) => break,
            }
        }
        for p in pumps {
            let _ = p.join();
        }
    });

    Ok(ProxyHandle { addr, stop, accept: Some(accept), streams })
}

/// Reader thread timestamps chunks and computes release deadlines; writer
/// thread sleeps until each deadline and forwards. Separating the two
/// keeps per-chunk delay from compounding across a multi-chunk body.
fn pump_direction(
    mut from: TcpStream,
    mut to: TcpStream,
    profile: PathProfile,
    seed: u64,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    thread::spawn(move || {
        let epoch = Instant::now();
        let mut scheduler = DelayScheduler::new(profile, seed);
        let (tx, rx) = mpsc::channel::<(Vec<u8>, f64)>();

        let stop_w = Arc::clone(&stop);
        let writer = thread::spawn(move || {
            while let Ok((chunk, release_ms)) = rx.recv() {
                loop {
                    if stop_w.load(Ordering::SeqCst) {
                        let _ = to.shutdown(Shutdown::Both);
                        return;
                    }
                    let now_ms = epoch.elapsed().as_secs_f64() * 1000.0;
                    let remaining = release_ms - now_ms;
                    if remaining <= 0.0 {
                        break;
                    }
                    thread::sleep(Duration::from_secs_f64((remaining / 1000.0).min(0.05)));
                }
                if to.write_all(&chunk).is_err() {
                    return;
                }
            }
            // source closed: propagate the half-close
            let _ = to.shutdown(Shutdown::Write);
        });

        let _ = from.set_read_timeout(Some(Duration::from_millis(100)));
        let mut buf = vec![0u8; CHUNK];
        loop {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match from.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    let arrival_ms = epoch.elapsed().as_secs_f64() * 1000.0;
                    let release = scheduler.schedule(arrival_ms, n);
                    if tx.send((buf[..n].to_vec(), release)).is_err() {
                        break;
                    }
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    continue;
                }
                Err(_) => break,
            }
        }
        drop(tx);
        let _ = writer.join();
    })
}
