//! HTTP facade for the registry, plus the machine-readable API
//! description served under `/mep/v1/openapi`.

use std::io;
use std::sync::Arc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::json;

use crate::httpwire::{spawn_server, Handler, HttpServer, Request, Response};
use crate::now_ms;
use crate::registry::{Entry, Registry, RegistryError, ServiceDescriptor, ServiceId};

pub struct RegistryServer {
    pub registry: Arc<Registry>,
    server: HttpServer,
    stop_sweep: Arc<AtomicBool>,
    sweeper: Option<JoinHandle<()>>,
}

impl RegistryServer {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.server.addr()
    }

    pub fn shutdown(&mut self) {
        self.stop_sweep.store(true, Ordering::SeqCst);
        if let Some(h) = self.sweeper.take() {
            let _ = h.join();
        }
        self.server.shutdown();
    }
}

impl Drop for RegistryServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts the registry HTTP server with a periodic expiry sweeper.
pub fn start(listen: &str, sweep_interval_ms: u64) -> io::Result<RegistryServer> {
    let registry = Arc::new(Registry::new());
    let reg = Arc::clone(&registry);
    let handler: Handler = Arc::new(move |req| route(&reg, req));
    let server = spawn_server(listen, 64 * 1024, handler)?;
    let stop_sweep = Arc::new(AtomicBool::new(false));
    let stop = Arc::clone(&stop_sweep);
    let reg = Arc::clone(&registry);
    let sweeper = std::thread::spawn(move || {
        // sleep in short slices so shutdown stays prompt
        let mut slept = 0u64;
        while !stop.load(Ordering::SeqCst) {
            let slice = sweep_interval_ms.min(100).max(1);
            std::thread::sleep(Duration::from_millis(slice));
            slept += slice;
            if slept >= sweep_interval_ms {
                slept = 0;
                reg.expire_sweep(now_ms() as u64);
            }
        }
    });
    Ok(RegistryServer { registry, server, stop_sweep, sweeper: Some(sweeper) })
}

fn entry_json(e: &Entry) -> serde_json::Value {
    json!({
        "service_id": e.id.0,
        "descriptor": serde_json::to_value(&e.descriptor).unwrap(),
    })
}

fn error_response(err: &RegistryError) -> Response {
    match err {
        RegistryError::InvalidDescriptor { field } => Response::json(
            400,
            &json!({"error": "InvalidDescriptor", "field": field}),
        ),
        RegistryError::DuplicateName => {
            Response::json(409, &json!({"error": "DuplicateName"}))
        }
        RegistryError::UnknownService => {
            Response::json(404, &json!({"error": "UnknownService"}))
        }
    }
}

fn route(registry: &Registry, req: &Request) -> Response {
    let now = now_ms() as u64;
    let path = req.path().to_string();
    match (req.method.as_str(), path.as_str()) {
        ("POST", "/mep/v1/services") => {
            let descriptor: ServiceDescriptor = match serde_json::from_slice(&req.body) {
                Ok(d) => d,
                Err(e) => {
                    return Response::json(
                        400,
                        &json!({"error": "InvalidDescriptor", "detail": e.to_string()}),
                    )
                }
            };
            match registry.register(descriptor, now) {
                Ok(id) => Response::json(201, &json!({"service_id": id.0})),
                Err(e) => error_response(&e),
            }
        }
        ("GET", "/mep/v1/services") => {
            let filter = req.query_param("category").unwrap_or("");
            let entries = registry.discover(filter, now);
            let body: Vec<_> = entries.iter().map(entry_json).collect();
            Response::json(200, &serde_json::Value::Array(body))
        }
        ("GET", "/mep/v1/openapi") => Response::json(200, &openapi_doc()),
        _ => {
            // /mep/v1/services/{id} and /mep/v1/services/{id}/renew
            if let Some(rest) = path.strip_prefix("/mep/v1/services/") {
                if req.method == "DELETE" && !rest.contains('/') {
                    let id = ServiceId(rest.to_string());
                    return match registry.deregister(&id, now) {
                        Ok(()) => Response::new(204),
                        Err(e) => error_response(&e),
                    };
                }
                if req.method == "PUT" {
                    if let Some(id) = rest.strip_suffix("/renew") {
                        let id = ServiceId(id.to_string());
                        return match registry.renew(&id, now) {
                            Ok(()) => Response::new(204),
                            Err(e) => error_response(&e),
                        };
                    }
                }
            }
            Response::json(404, &json!({"error": "NoSuchRoute"}))
        }
    }
}

fn openapi_doc() -> serde_json::Value {
    json!({
        "openapi": "3.0.3",
        "info": {
            "title": "MEC platform service registry",
            "version": "1.0",
            "description": "Register, renew, discover and remove MEC services."
        },
        "paths": {
            "/mep/v1/services": {
                "post": {
                    "summary": "Register a MEC service",
                    "requestBody": {"content": {"application/json": {"schema": {
                        "type": "object",
                        "required": ["ser_name", "version", "category", "endpoint_uri", "state", "ttl_s"],
                        "properties": {
                            "ser_name": {"type": "string", "maxLength": 128},
                            "version": {"type": "string"},
                            "category": {"type": "string"},
                            "endpoint_uri": {"type": "string", "format": "uri"},
                            "state": {"type": "string", "enum": ["ACTIVE", "INACTIVE"]},
                            "ttl_s": {"type": "integer", "minimum": 1}
                        }
                    }}}},
                    "responses": {
                        "201": {"description": "Registered; body carries service_id."},
                        "400": {"description": "InvalidDescriptor"},
                        "409": {"description": "DuplicateName"}
                    }
                },
                "get": {
                    "summary": "Discover services, optionally filtered by category",
                    "parameters": [{"name": "category", "in": "query", "schema": {"type": "string"}}],
                    "responses": {"200": {"description": "Array of {service_id, descriptor}."}}
                }
            },
            "/mep/v1/services/{service_id}": {
                "delete": {
                    "summary": "Deregister a service",
                    "responses": {"204": {"description": "Removed"}, "404": {"description": "UnknownService"}}
                }
            },
            "/mep/v1/services/{service_id}/renew": {
                "put": {
                    "summary": "Renew the liveness lease",
                    "responses": {"204": {"description": "Renewed"}, "404": {"description": "UnknownService"}}
                }
            },
            "/mep/v1/openapi": {
                "get": {"summary": "This document", "responses": {"200": {"description": "OpenAPI JSON"}}}
            }
        }
    })
}
