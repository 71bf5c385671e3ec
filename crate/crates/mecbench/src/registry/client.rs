//! Thin HTTP client for the registry, used by the offload app and the
//! orchestrator's health checks.

use std::io;
use std::time::Duration;

use thiserror::Error;

use crate::httpwire::request_once;
use crate::registry::{ServiceDescriptor, ServiceId};

const TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("registry unreachable: {0}")]
    Unreachable(#[from] io::Error),
    #[error("registry rejected request: status {status} body {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed registry response: {0}")]
    Malformed(String),
}

/// `mep_uri` is `http://host:port` (no trailing slash).
pub struct RegistryClient {
    authority: String,
}

impl RegistryClient {
    pub fn new(mep_uri: &str) -> Self {
        let authority = mep_uri
            .strip_prefix("http://")
            .unwrap_or(mep_uri)
            .trim_end_matches('/')
            .to_string();
        RegistryClient { authority }
    }

    pub fn register(&self, descriptor: &ServiceDescriptor) -> Result<ServiceId, ClientError> {
        let body = serde_json::to_vec(descriptor).expect("descriptor serializes");
        let resp = request_once(
            &self.authority,
            "POST",
            "/mep/v1/services",
            &[("Content-Type", "application/json")],
            &body,
            TIMEOUT,
        )?;
        if resp.status != 201 {
            return Err(rejected(&resp));
        }
        let v: serde_json::Value = serde_json::from_slice(&resp.body)
            .map_err(|e| ClientError::Malformed(e.to_string()))?;
        let id = v["service_id"]
            .as_str()
            .ok_or_else(|| ClientError::Malformed("missing service_id".into()))?;
        Ok(ServiceId(id.to_string()))
    }

    pub fn deregister(&self, id: &ServiceId) -> Result<(), ClientError> {
        let path = format!("/mep/v1/services/{id}");
        let resp = request_once(&self.authority, "DELETE", &path, &[], &[], TIMEOUT)?;
        if resp.status != 204 {
            return Err(rejected(&resp));
        }
        Ok(())
    }

    pub fn renew(&self, id: &ServiceId) -> Result<(), ClientError> {
        let path = format!("/mep/v1/services/{id}/renew");
        let resp = request_once(&self.authority, "PUT", &path, &[], &[], TIMEOUT)?;
        if resp.status != 204 {
            return Err(rejected(&resp));
        }
        Ok(())
    }

    pub fn discover(
        &self,
        category: &str,
    ) -> Result<Vec<(ServiceId, ServiceDescriptor)>, ClientError> {
        let path = if category.is_empty() {
            "/mep/v1/services".to_string()
        } else {
            format!("/mep/v1/services?category={category}")
        };
        let resp = request_once(&self.authority, "GET", &path, &[], &[], TIMEOUT)?;
        if resp.status != 200 {
            return Err(rejected(&resp));
        }
        let v: Vec<serde_json::Value> = serde_json::from_slice(&resp.body)
            .map_err(|e| ClientError::Malformed(e.to_string()))?;
        v.into_iter()
            .map(|item| {
                let id = item["service_id"]
                    .as_str()
                    .ok_or_else(|| ClientError::Malformed("missing service_id".into()))?
                    .to_string();
                let descriptor = serde_json::from_value(item["descriptor"].clone())
                    .map_err(|e| ClientError::Malformed(e.to_string()))?;
                Ok((ServiceId(id), descriptor))
            })
            .collect()
    }
}

fn rejected(resp: &crate::httpwire::Response) -> ClientError {
    ClientError::Rejected {
        status: resp.status,
        body: String::from_utf8_lossy(&resp.body).into_owned(),
    }
}
