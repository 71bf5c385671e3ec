//! MEC-platform service registry: registration records with TTL leases,
//! category discovery, and expiry sweeping.
//!
//! Time never comes from a global clock here; every operation takes the
//! caller's monotonic timestamp so expiry is deterministic under test.

pub mod client;
pub mod server;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_NAME_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServiceState {
    #[serde(rename = "ACTIVE")]
    Active,
    #[serde(rename = "INACTIVE")]
    Inactive,
}

/// The registration record a MEC app submits to the platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    #[serde(rename = "ser_name")]
    pub service_name: String,
    pub version: String,
    pub category: String,
    pub endpoint_uri: String,
    pub state: ServiceState,
    pub ttl_s: u64,
}

impl ServiceDescriptor {
    /// Checks the descriptor invariants, naming the first failing field.
    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.service_name.is_empty() || self.service_name.len() > MAX_NAME_LEN {
            return Err(RegistryError::InvalidDescriptor { field: "ser_name" });
        }
        if !is_absolute_uri(&self.endpoint_uri) {
            return Err(RegistryError::InvalidDescriptor { field: "endpoint_uri" });
        }
        if self.ttl_s < 1 {
            return Err(RegistryError::InvalidDescriptor { field: "ttl_s" });
        }
        Ok(())
    }
}

/// Absolute URI check: a scheme, `://`, and a non-empty host.
fn is_absolute_uri(uri: &str) -> bool {
    let Some((scheme, rest)) = uri.split_once("://") else {
        return false;
    };
    if scheme.is_empty() || !scheme.chars().all(|c| c.is_ascii_alphanumeric() || c == '+' || c == '-' || c == '.') {
        return false;
    }
    let host = rest.split(['/', '?', '#']).next().unwrap_or("");
    !host.is_empty()
}

/// Opaque handle assigned at registration; never reused within one
/// registry lifetime.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServiceId(pub String);

impl std::fmt::Display for ServiceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("invalid descriptor: field {field}")]
    InvalidDescriptor { field: &'static str },
    #[error("duplicate service name+version")]
    DuplicateName,
    #[error("unknown or expired service id")]
    UnknownService,
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub id: ServiceId,
    pub descriptor: ServiceDescriptor,
    pub registered_at: u64,
    pub expires_at: u64,
}

#[derive(Default)]
struct State {
    entries: Vec<Entry>,
}

/// In-memory registry, linearizable behind one mutex. Timestamps are
/// caller-supplied monotonic milliseconds.
pub struct Registry {
    state: Mutex<State>,
    next_id: AtomicU64,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    pub fn new() -> Self {
        Registry { state: Mutex::new(State::default()), next_id: AtomicU64::new(1) }
    }

    pub fn register(
        &self,
        descriptor: ServiceDescriptor,
        now_ms: u64,
    ) -> Result<ServiceId, RegistryError> {
        descriptor.validate()?;
        let mut state = self.state.lock().unwrap();
        let duplicate = state.entries.iter().any(|e| {
            e.expires_at > now_ms
                && e.descriptor.state == ServiceState::Active
                && e.descriptor.service_name == descriptor.service_name
                && e.descriptor.version == descriptor.version
        });
        if duplicate {
            return Err(RegistryError::DuplicateName);
        }
        let id = ServiceId(format!("svc-{:08x}", self.next_id.fetch_add(1, Ordering::SeqCst)));
        let expires_at = now_ms + descriptor.ttl_s * 1000;
        state.entries.push(Entry {
            id: id.clone(),
            descriptor,
            registered_at: now_ms,
            expires_at,
        });
        Ok(id)
    }

    pub fn deregister(&self, id: &ServiceId, now_ms: u64) -> Result<(), RegistryError> {
        let mut state = self.state.lock().unwrap();
        let pos = state
            .entries
            .iter()
            .position(|e| &e.id == id && e.expires_at > now_ms)
            .ok_or(RegistryError::UnknownService)?;
        state.entries.remove(pos);
        Ok(())
    }

    /// Non-expired entries matching the category filter (empty filter
    /// matches all), ordered by registration time then id.
    pub fn discover(&self, category_filter: &str, now_ms: u64) -> Vec<Entry> {
        let state = self.state.lock().unwrap();
        let mut found: Vec<Entry> = state
            .entries
            .iter()
            .filter(|e| e.expires_at > now_ms)
            .filter(|e| category_filter.is_empty() || e.descriptor.category == category_filter)
            .cloned()
            .collect();
        found.sort_by(|a, b| a.registered_at.cmp(&b.registered_at).then(a.id.cmp(&b.id)));
        found
    }

    pub fn renew(&self, id: &ServiceId, now_ms: u64) -> Result<(), RegistryError> {
        let mut state = self.state.lock().unwrap();
        let entry = state
            .entries
            .iter_mut()
            .find(|e| &e.id == id && e.expires_at > now_ms)
            .ok_or(RegistryError::UnknownService)?;
        entry.expires_at = now_ms + entry.descriptor.ttl_s * 1000;
        Ok(())
    }

    /// Removes every entry with `expires_at <= now_ms`; returns how many.
    pub fn expire_sweep(&self, now_ms: u64) -> usize {
        let mut state = self.state.lock().unwrap();
        let before = state.entries.len();
        state.entries.retain(|e| e.expires_at > now_ms);
        before - state.entries.len()
    }
}

pub fn sample_descriptor(name: &str, category: &str) -> ServiceDescriptor {
    ServiceDescriptor {
        service_name: name.into(),
        version: "1.0".into(),
        category: category.into(),
        endpoint_uri: "http://10.0.0.2:8080/detect".into(),
        state: ServiceState::Active,
        ttl_s: 30,
    }
}
