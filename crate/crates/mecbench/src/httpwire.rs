//! Minimal HTTP/1.1 over `std::net`, shared by every server and client in
//! the harness.
//!
//! Hand-rolled instead of a framework because the load generator must
//! count bytes at the stream level (headers included) and the offload app
//! must timestamp "request body fully read" precisely. Only what the
//! harness speaks is implemented: Content-Length bodies, keep-alive, no
//! chunked encoding.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

const MAX_HEADER_BYTES: usize = 16 * 1024;

#[derive(Debug, Clone)]
pub struct Request {
    pub method: String,
    /// Request target as sent, e.g. `/mep/v1/services?category=vision`.
    pub target: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Request {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Path without the query string.
    pub fn path(&self) -> &str {
        self.target.split('?').next().unwrap_or("")
    }

    /// Value of one query parameter, if present.
    pub fn query_param(&self, name: &str) -> Option<&str> {
        let query = self.target.split_once('?')?.1;
        query.split('&').find_map(|pair| {
            let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
            (k == name).then_some(v)
        })
    }
}

#[derive(Debug, Clone)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn new(status: u16) -> Self {
        Response { status, headers: Vec::new(), body: Vec::new() }
    }

    pub fn with_body(status: u16, content_type: &str, body: Vec<u8>) -> Self {
        Response {
            status,
            headers: vec![("Content-Type".into(), content_type.into())],
            body,
        }
    }

    pub fn json(status: u16, value: &serde_json::Value) -> Self {
        Self::with_body(status, "application/json", value.to_string().into_bytes())
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        204 => "No Content",
        400 => "Bad Request",
        404 => "Not Found",
        409 => "Conflict",
        413 => "Payload Too Large",
        500 => "Internal Server Error",
        _ => "Unknown",
    }
}

fn write_response(stream: &mut impl Write, resp: &Response) -> io::Result<()> {
    let mut head = format!("HTTP/1.1 {} {}\r\n", resp.status, reason(resp.status));
    for (k, v) in &resp.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str(&format!("Content-Length: {}\r\n\r\n", resp.body.len()));
    stream.write_all(head.as_bytes())?;
    stream.write_all(&resp.body)?;
    stream.flush()
}

fn read_head(reader: &mut impl BufRead) -> io::Result<Option<Vec<String>>> {
    let mut lines = Vec::new();
    let mut total = 0usize;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            // clean EOF only before the first line
            if lines.is_empty() && total == 0 {
                return Ok(None);
            }
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated head"));
        }
        total += n;
        if total > MAX_HEADER_BYTES {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "oversize head"));
        }
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() {
            return Ok(Some(lines));
        }
        lines.push(trimmed.to_string());
    }
}

fn parse_headers(lines: &[String]) -> Vec<(String, String)> {
    lines
        .iter()
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn content_length(headers: &[(String, String)]) -> io::Result<usize> {
    for (k, v) in headers {
        if k.eq_ignore_ascii_case("content-length") {
            return v
                .parse()
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "bad content-length"));
        }
    }
    Ok(0)
}

pub type Handler = Arc<dyn Fn(&Request) -> Response + Send + Sync>;

/// A running HTTP server. Dropping the handle shuts it down.
pub struct HttpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Maximum request body accepted by [`spawn_server`] before 413 is returned.
pub const DEFAULT_MAX_BODY: usize = 8 * 1024 * 1024;

pub fn spawn_server(listen: &str, max_body: usize, handler: Handler) -> io::Result<HttpServer> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = Arc::clone(&stop);
    let accept = thread::spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !stop2.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let handler = Arc::clone(&handler);
                    let stop = Arc::clone(&stop2);
                    workers.push(thread::spawn(move || {
                        let _ = serve_connection(stream, max_body, handler, stop);
                    }));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(10));
                }
                Err(_) => break,
            }
        }
        for w in workers {
            let _ = w.join();
        }
    });
    Ok(HttpServer { addr, stop, accept: Some(accept) })
}

fn serve_connection(
    stream: TcpStream,
    max_body: usize,
    handler: Handler,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    loop {
        let head = match read_head(&mut reader) {
            Ok(Some(lines)) => lines,
            Ok(None) => return Ok(()),
            Err(e)
                if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut =>
            {
                if stop.load(Ordering::SeqCst) {
                    return Ok(());
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut parts = head[0].split_whitespace();
        let method = parts.next().unwrap_or("").to_string();
        let target = parts.next().unwrap_or("").to_string();
        let headers = parse_headers(&head[1..]);
        let len = content_length(&headers)?;
        if len > max_body {
            // drain nothing; the client wrote more than we accept
            write_response(&mut writer, &Response::json(
                413,
                &serde_json::json!({"error": "PayloadTooLarge", "limit": max_body}),
            ))?;
            return Ok(());
        }
        let mut body = vec![0u8; len];
        read_exact_blocking(&mut reader, &mut body, &stop)?;
        let req = Request { method, target, headers, body };
        let resp = handler(&req);
        write_response(&mut writer, &resp)?;
    }
}

/// `read_exact` that tolerates the 200 ms read timeout used for shutdown
/// polling on the server side.
fn read_exact_blocking(
    reader: &mut impl Read,
    buf: &mut [u8],
    stop: &AtomicBool,
) -> io::Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated body")),
            Ok(n) => filled += n,
            Err(e)
                if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut =>
            {
                if stop.load(Ordering::SeqCst) {
                    return Err(io::Error::new(io::ErrorKind::Interrupted, "shutdown"));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Persistent-connection HTTP client that counts every byte it puts on or
/// takes off the wire.
pub struct HttpClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    host: String,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl HttpClient {
    pub fn connect(addr: &str, timeout: Duration) -> io::Result<Self> {
        let sock_addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "unresolvable address"))?;
        let stream = TcpStream::connect_timeout(&sock_addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(HttpClient {
            reader: BufReader::new(stream),
            writer,
            host: addr.to_string(),
            bytes_sent: 0,
            bytes_received: 0,
        })
    }

    pub fn request(
        &mut self,
        method: &str,
        path: &str,
        extra_headers: &[(&str, &str)],
        body: &[u8],
    ) -> io::Result<Response> {
        let mut head = format!("{method} {path} HTTP/1.1\r\nHost: {}\r\n", self.host);
        for (k, v) in extra_headers {
            head.push_str(&format!("{k}: {v}\r\n"));
        }
        head.push_str(&format!("Content-Length: {}\r\n\r\n", body.len()));
        self.writer.write_all(head.as_bytes())?;
        self.writer.write_all(body)?;
        self.writer.flush()?;
        self.bytes_sent += (head.len() + body.len()) as u64;

        let lines = read_head(&mut self.reader)?
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"))?;
        let status: u16 = lines[0]
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad status line"))?;
        let headers = parse_headers(&lines[1..]);
        let len = content_length(&headers)?;
        let mut resp_body = vec![0u8; len];
        self.reader.read_exact(&mut resp_body)?;
        let head_bytes: usize = lines.iter().map(|l| l.len() + 2).sum::<usize>() + 2;
        self.bytes_received += (head_bytes + len) as u64;
        Ok(Response { status, headers, body: resp_body })
    }
}

/// One-shot request on a fresh connection; convenience for control-plane
/// calls where byte counts do not matter.
pub fn request_once(
    addr: &str,
    method: &str,
    path: &str,
    extra_headers: &[(&str, &str)],
    body: &[u8],
    timeout: Duration,
) -> io::Result<Response> {
    let mut client = HttpClient::connect(addr, timeout)?;
    client.request(method, path, extra_headers, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo_handler() -> Handler {
        Arc::new(|req: &Request| Response::with_body(200, "application/octet-stream", req.body.clone()))
    }

    #[test]
    fn round_trip_keepalive() {
        let mut server = spawn_server("127.0.0.1:0", DEFAULT_MAX_BODY, echo_handler()).unwrap();
        let addr = server.addr().to_string();
        let mut client = HttpClient::connect(&addr, Duration::from_secs(5)).unwrap();
        for i in 0..3 {
            let body = vec![i as u8; 64];
            let resp = client.request("POST", "/echo", &[], &body).unwrap();
            assert_eq!(resp.status, 200);
            assert_eq!(resp.body, body);
        }
        assert!(client.bytes_sent > 3 * 64);
        assert!(client.bytes_received > 3 * 64);
        server.shutdown();
    }

    #[test]
    fn oversize_body_rejected() {
        let mut server = spawn_server("127.0.0.1:0", 1024, echo_handler()).unwrap();
        let addr = server.addr().to_string();
        let mut client = HttpClient::connect(&addr, Duration::from_secs(5)).unwrap();
        let resp = client.request("POST", "/echo", &[], &vec![0u8; 4096]).unwrap();
        assert_eq!(resp.status, 413);
        server.shutdown();
    }

    #[test]
    fn query_param_parsing() {
        let req = Request {
            method: "GET".into(),
            target: "/mep/v1/services?category=vision".into(),
            headers: vec![],
            body: vec![],
        };
        assert_eq!(req.path(), "/mep/v1/services");
        assert_eq!(req.query_param("category"), Some("vision"));
        assert_eq!(req.query_param("missing"), None);
    }
}
