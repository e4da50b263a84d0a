//! In-process stand-in for the guidance service: the analytic oracle behind
//! `/v1/predict`, pooled-color embeddings behind `/v1/embed`, mean absolute
//! difference behind `/v1/lpips`. Failures can be injected per request.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use meshstyle::diffusion::DiffusionSchedule;
use meshstyle::eval::{EmbeddingProvider, PooledColorEmbedder};
use meshstyle::guidance::wire::{
    decode_f32, EmbedKind, EmbedRequest, EmbedResponse, HealthResponse, LpipsRequest, LpipsResponse, PredictRequest,
    PredictResponse,
};
use meshstyle::guidance::{GuidanceBackend, OracleBackend, OracleTarget};

#[derive(Debug, Clone)]
pub enum Fault {
    Status(u16),
    Body(String),
}

#[derive(Default)]
pub struct Counters {
    pub predict: AtomicUsize,
    pub embed_text: AtomicUsize,
    pub embed_image: AtomicUsize,
    pub lpips: AtomicUsize,
    pub health: AtomicUsize,
}

pub struct MockService {
    pub url: String,
    pub counters: Arc<Counters>,
    faults: Arc<Mutex<Vec<Fault>>>,
}

impl MockService {
    pub fn start(target: OracleTarget) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let counters = Arc::new(Counters::default());
        let faults: Arc<Mutex<Vec<Fault>>> = Arc::default();
        let oracle = Arc::new(OracleBackend::new(target, DiffusionSchedule::default()));
        let (c, f) = (counters.clone(), faults.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (c, f, o) = (c.clone(), f.clone(), oracle.clone());
                std::thread::spawn(move || serve(stream, &c, &f, &o));
            }
        });
        Self { url, counters, faults }
    }

    /// The next `faults.len()` requests fail in order.
    pub fn inject(&self, faults: Vec<Fault>) {
        let mut q = self.faults.lock().unwrap();
        q.extend(faults);
    }
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = if status == 200 { "OK" } else { "Error" };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

fn serve(mut stream: TcpStream, counters: &Counters, faults: &Mutex<Vec<Fault>>, oracle: &OracleBackend) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let (method, path) = (parts.next().unwrap_or("").to_string(), parts.next().unwrap_or("").to_string());
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let fault = {
        let mut q = faults.lock().unwrap();
        (!q.is_empty()).then(|| q.remove(0))
    };
    match fault {
        Some(Fault::Status(s)) => return respond(&mut stream, s, "{\"error\":\"injected\"}"),
        Some(Fault::Body(b)) => return respond(&mut stream, 200, &b),
        None => {}
    }
    let (status, out) = route(&method, &path, &body, counters, oracle);
    respond(&mut stream, status, &out);
}

fn route(method: &str, path: &str, body: &[u8], counters: &Counters, oracle: &OracleBackend) -> (u16, String) {
    let bad = |m: String| (400, serde_json::json!({ "error": m }).to_string());
    match (method, path) {
        ("GET", "/v1/health") => {
            counters.health.fetch_add(1, Ordering::SeqCst);
            (200, serde_json::to_string(&HealthResponse { ok: true, info: "mock oracle".into() }).unwrap())
        }
        ("POST", "/v1/predict") => {
            counters.predict.fetch_add(1, Ordering::SeqCst);
            let req: PredictRequest = match serde_json::from_slice(body) {
                Ok(r) => r,
                Err(e) => return bad(e.to_string()),
            };
            match req.decode().and_then(|r| oracle.predict_residual(&r)) {
                Ok(resp) => (200, serde_json::to_string(&PredictResponse::from(&resp)).unwrap()),
                Err(e) => bad(e.to_string()),
            }
        }
        ("POST", "/v1/embed") => {
            let req: EmbedRequest = match serde_json::from_slice(body) {
                Ok(r) => r,
                Err(e) => return bad(e.to_string()),
            };
            let emb = match req.kind {
                EmbedKind::Text => {
                    counters.embed_text.fetch_add(1, Ordering::SeqCst);
                    PooledColorEmbedder.embed_text(req.text.as_deref().unwrap_or(""))
                }
                EmbedKind::Image => {
                    counters.embed_image.fetch_add(1, Ordering::SeqCst);
                    let pixels = decode_f32(req.image_b64.as_deref().unwrap_or("")).unwrap_or_default();
                    PooledColorEmbedder.embed_image(req.width.unwrap_or(0), req.height.unwrap_or(0), &pixels)
                }
            };
            match emb {
                Ok(v) => {
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let embedding: Vec<f64> = v.iter().map(|x| x / norm).collect();
                    (200, serde_json::to_string(&EmbedResponse { dim: embedding.len(), embedding }).unwrap())
                }
                Err(e) => bad(e.to_string()),
            }
        }
        ("POST", "/v1/lpips") => {
            counters.lpips.fetch_add(1, Ordering::SeqCst);
            let req: LpipsRequest = match serde_json::from_slice(body) {
                Ok(r) => r,
                Err(e) => return bad(e.to_string()),
            };
            let (a, b) = (decode_f32(&req.image_a_b64).unwrap_or_default(), decode_f32(&req.image_b_b64).unwrap_or_default());
            if a.len() != b.len() || a.len() != 3 * req.width * req.height {
                return bad("image sizes disagree".into());
            }
            let value = a.iter().zip(&b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len().max(1) as f64;
            (200, serde_json::to_string(&LpipsResponse { value }).unwrap())
        }
        _ => (404, "{\"error\":\"not found\"}".into()),
    }
}
