//! Reference implementations and helpers shared by the integration tests.
//! Written independently of the library code they check.
#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::OnceLock;

use isl_core::metrics::ConfusionMatrix;

// ---------------------------------------------------------------- canny

/// Straightforward Canny on a row-major gray image; returns 0/1 per pixel.
///
/// Blur and Sobel sums are integers over an edge-replicated border; the
/// derivative is the integer sum divided by the blur normalizer.
pub fn reference_canny(w: usize, h: usize, px: &[u8], low: f64, high: f64, gaussian: bool) -> Vec<u8> {
    let pad = |img: &Vec<i64>, r: usize| -> (Vec<i64>, usize) {
        let pw = w + 2 * r;
        let mut out = vec![0i64; pw * (h + 2 * r)];
        for y in 0..h + 2 * r {
            for x in 0..pw {
                let sx = (x as isize - r as isize).clamp(0, w as isize - 1) as usize;
                let sy = (y as isize - r as isize).clamp(0, h as isize - 1) as usize;
                out[y * pw + x] = img[sy * w + sx];
            }
        }
        (out, pw)
    };
    let img: Vec<i64> = px.iter().map(|&p| i64::from(p)).collect();

    let (smooth, norm) = if gaussian {
        let g = [2i64, 4, 5, 4, 2, 4, 9, 12, 9, 4, 5, 12, 15, 12, 5, 4, 9, 12, 9, 4, 2, 4, 5, 4, 2];
        let (p, pw) = pad(&img, 2);
        let mut out = vec![0i64; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0;
                for j in 0..5 {
                    for i in 0..5 {
                        s += g[j * 5 + i] * p[(y + j) * pw + x + i];
                    }
                }
                out[y * w + x] = s;
            }
        }
        (out, 159.0)
    } else {
        (img, 1.0)
    };

    let (p, pw) = pad(&smooth, 1);
    let v = |x: usize, y: usize| p[y * pw + x];
    let mut mag = vec![0.0f64; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            // (x+1, y+1) is the centre in padded coordinates
            let (cx, cy) = (x + 1, y + 1);
            let gx = (v(cx + 1, cy - 1) + 2 * v(cx + 1, cy) + v(cx + 1, cy + 1))
                - (v(cx - 1, cy - 1) + 2 * v(cx - 1, cy) + v(cx - 1, cy + 1));
            let gy = (v(cx - 1, cy + 1) + 2 * v(cx, cy + 1) + v(cx + 1, cy + 1))
                - (v(cx - 1, cy - 1) + 2 * v(cx, cy - 1) + v(cx + 1, cy - 1));
            let (fx, fy) = (gx as f64 / norm, gy as f64 / norm);
            mag[y * w + x] = (fx * fx + fy * fy).sqrt();
            let mut a = fy.atan2(fx).to_degrees();
            if a < 0.0 {
                a += 180.0;
            }
            if a >= 180.0 {
                a -= 180.0;
            }
            dir[y * w + x] = if a < 22.5 || a >= 157.5 {
                0
            } else if a < 67.5 {
                1
            } else if a < 112.5 {
                2
            } else {
                3
            };
        }
    }

    let get = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let m = get(x, y);
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = [(1, 0), (1, 1), (0, 1), (-1, 1)][dir[y as usize * w + x as usize] as usize];
            if m > get(x - dx, y - dy) && m >= get(x + dx, y + dy) {
                thin[y as usize * w + x as usize] = m;
            }
        }
    }

    // grow strong pixels through weak ones until nothing changes
    let mut edge: Vec<u8> = thin.iter().map(|&m| u8::from(m > 0.0 && m >= high)).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if edge[i] == 1 || thin[i] == 0.0 || thin[i] < low {
                    continue;
                }
                let near = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                    .any(|ny| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|nx| edge[ny * w + nx] == 1));
                if near {
                    edge[i] = 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    edge
}

pub fn step_fixture(w: usize, h: usize, at: usize) -> Vec<u8> {
    (0..w * h).map(|i| if i % w >= at { 255 } else { 0 }).collect()
}

pub fn ramp_fixture(w: usize, h: usize, step: u8) -> Vec<u8> {
    (0..w * h).map(|i| ((i % w) as u8).wrapping_mul(step)).collect()
}

// ---------------------------------------------------------------- metrics

/// Per-class (precision, recall, f1, precision undefined, recall undefined,
/// f1 undefined) computed cell by cell.
pub fn brute_force_class(cm: &ConfusionMatrix, c: usize) -> (f64, f64, f64, bool, bool, bool) {
    let k = cm.classes();
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for t in 0..k {
        for p in 0..k {
            let n = cm.get(t, p);
            match (t == c, p == c) {
                (true, true) => tp += n,
                (false, true) => fp += n,
                (true, false) => fn_ += n,
                (false, false) => {}
            }
        }
    }
    let (p, pu) = if tp + fp == 0 { (0.0, true) } else { (tp as f64 / (tp + fp) as f64, false) };
    let (r, ru) = if tp + fn_ == 0 { (0.0, true) } else { (tp as f64 / (tp + fn_) as f64, false) };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f, pu, ru, pu && ru)
}

/// (macro precision, macro recall, macro f1, accuracy) averaging over
/// defined classes only.
pub fn brute_force_macro(cm: &ConfusionMatrix) -> (f64, f64, f64, f64) {
    let k = cm.classes();
    let rows: Vec<_> = (0..k).map(|c| brute_force_class(cm, c)).collect();
    let mean = |vals: Vec<(f64, bool)>| {
        let defined: Vec<f64> = vals.into_iter().filter(|(_, u)| !u).map(|(v, _)| v).collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    };
    let total: u64 = (0..k).flat_map(|t| (0..k).map(move |p| (t, p))).map(|(t, p)| cm.get(t, p)).sum();
    let diag: u64 = (0..k).map(|c| cm.get(c, c)).sum();
    (
        mean(rows.iter().map(|r| (r.0, r.3)).collect()),
        mean(rows.iter().map(|r| (r.1, r.4)).collect()),
        mean(rows.iter().map(|r| (r.2, r.5)).collect()),
        diag as f64 / total as f64,
    )
}

// ---------------------------------------------------------------- http

pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("non-JSON body {:?}: {e}", self.body))
    }
}

/// One HTTP/1.1 request over a fresh connection.
pub fn http(addr: SocketAddr, method: &str, path: &str, content_type: Option<&str>, body: &[u8]) -> HttpResponse {
    let mut s = TcpStream::connect(addr).expect("connect");
    let mut head = format!("{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Length: {}\r\n", body.len());
    if let Some(ct) = content_type {
        head.push_str(&format!("Content-Type: {ct}\r\n"));
    }
    head.push_str("\r\n");
    s.write_all(head.as_bytes()).expect("write head");
    // the server may answer and close before reading an oversized body
    let _ = s.write_all(body);
    let mut raw = Vec::new();
    let _ = s.read_to_end(&mut raw);
    let text = String::from_utf8_lossy(&raw).to_string();
    let (head, body) = text.split_once("\r\n\r\n").unwrap_or_else(|| panic!("malformed response {text:?}"));
    let status = head.split_whitespace().nth(1).and_then(|s| s.parse().ok()).expect("status code");
    let chunked = head.to_ascii_lowercase().contains("transfer-encoding: chunked");
    HttpResponse { status, body: if chunked { dechunk(body) } else { body.to_string() } }
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    while let Some((size, rest)) = s.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
    out
}

// ---------------------------------------------------------------- images

pub fn png_bytes(w: usize, h: usize, rgb: Vec<u8>) -> Vec<u8> {
    let img = isl_core::preproc::RgbImage::from_raw(w, h, rgb).unwrap();
    isl_core::preproc::io::encode_png_rgb(&img)
}

/// Shared synthetic dataset, generated once per test binary.
pub fn synth_dir(classes: usize, per_class: usize, seed: u64) -> &'static Path {
    static DIRS: OnceLock<std::sync::Mutex<Vec<((usize, usize, u64), &'static Path)>>> = OnceLock::new();
    let dirs = DIRS.get_or_init(Default::default);
    let mut guard = dirs.lock().unwrap();
    if let Some((_, p)) = guard.iter().find(|(k, _)| *k == (classes, per_class, seed)) {
        return p;
    }
    let dir: &'static tempfile::TempDir = Box::leak(Box::new(tempfile::tempdir().unwrap()));
    isl_core::data::synth_generate(dir.path(), classes, per_class, seed).unwrap();
    guard.push(((classes, per_class, seed), dir.path()));
    dir.path()
}
