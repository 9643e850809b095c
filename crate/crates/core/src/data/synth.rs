//! Parametric stroke glyphs standing in for gesture photographs.
//!
//! Each class is a distinct subset of twelve stroke primitives (sides,
//! midlines, diagonals, a ring, chevrons and a dot) drawn in a unit box.
//! The subsets form a code with pairwise Hamming distance of at least 3, so
//! classes differ by several strokes. Every image jitters position, scale,
//! rotation and stroke thickness and adds background noise.

use std::fs;
use std::path::{Path, PathBuf};

use crate::nn::Rng;
use crate::preproc::{io, RgbImage};

use super::{io_err, DataError, Result, LABELS};

pub const IMAGE_SIZE: usize = 256;
const PRIMITIVES: usize = 12;
const MAX_ROTATION_DEG: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub files: usize,
}

enum Shape {
    Segment([f64; 2], [f64; 2]),
    Ring(f64),
    Disc(f64),
}

fn primitive(i: usize) -> Vec<Shape> {
    use Shape::*;
    match i {
        0 => vec![Segment([-1.0, -1.0], [1.0, -1.0])],
        1 => vec![Segment([-1.0, 1.0], [1.0, 1.0])],
        2 => vec![Segment([-1.0, -1.0], [-1.0, 1.0])],
        3 => vec![Segment([1.0, -1.0], [1.0, 1.0])],
        4 => vec![Segment([-1.0, 0.0], [1.0, 0.0])],
        5 => vec![Segment([0.0, -1.0], [0.0, 1.0])],
        6 => vec![Segment([-1.0, -1.0], [1.0, 1.0])],
        7 => vec![Segment([1.0, -1.0], [-1.0, 1.0])],
        8 => vec![Ring(0.5)],
        9 => vec![Segment([-1.0, 0.0], [0.0, -1.0]), Segment([0.0, -1.0], [1.0, 0.0])],
        10 => vec![Segment([-1.0, 0.0], [0.0, 1.0]), Segment([0.0, 1.0], [1.0, 0.0])],
        11 => vec![Disc(0.25)],
        _ => unreachable!("twelve primitives"),
    }
}

/// Primitive masks for all classes: greedy lexicode over masks with 2 to 4
/// strokes, ordered by stroke count, minimum distance 3.
fn class_codes() -> Vec<u16> {
    let mut masks: Vec<u16> = (1..1u16 << PRIMITIVES)
        .filter(|m| (2..=4).contains(&m.count_ones()))
        .collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let mut codes: Vec<u16> = Vec::new();
    for m in masks {
        if codes.iter().all(|c| (c ^ m).count_ones() >= 3) {
            codes.push(m);
        }
    }
    codes.truncate(LABELS.len());
    codes
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// Distance from `p` to the stroke centre line; 0 inside a disc.
fn shape_distance(p: [f64; 2], shape: &Shape) -> f64 {
    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
    match *shape {
        Shape::Segment(a, b) => segment_distance(p, a, b),
        Shape::Ring(radius) => (r - radius).abs(),
        Shape::Disc(radius) => (r - radius).max(0.0),
    }
}

/// Renders one jittered glyph for the class with primitive mask `code`.
pub(crate) fn render_glyph(code: u16, rng: &mut Rng) -> RgbImage {
    let shapes: Vec<Shape> = (0..PRIMITIVES).filter(|i| code >> i & 1 == 1).flat_map(primitive).collect();
    let n = IMAGE_SIZE as f64;
    let half = n * rng.uniform(0.26, 0.34);
    let cx = n / 2.0 + rng.uniform(-0.08, 0.08) * n;
    let cy = n / 2.0 + rng.uniform(-0.08, 0.08) * n;
    let theta = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG).to_radians();
    let thickness = rng.uniform(10.0, 18.0);
    let (sin, cos) = theta.sin_cos();
    let bg = [rng.below(50) as f64 + 10.0, rng.below(50) as f64 + 10.0, rng.below(50) as f64 + 10.0];
    let fg = [rng.uniform(190.0, 255.0), rng.uniform(190.0, 255.0), rng.uniform(190.0, 255.0)];

    let mut px = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (dx, dy) = ((x as f64 + 0.5 - cx) / half, (y as f64 + 0.5 - cy) / half);
            let p = [cos * dx + sin * dy, -sin * dx + cos * dy];
            let d = shapes.iter().map(|s| shape_distance(p, s)).fold(f64::INFINITY, f64::min) * half;
            // one pixel of linear falloff at the stroke boundary
            let cover = (thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            for c in 0..3 {
                let noise = rng.uniform(-8.0, 8.0);
                let v = bg[c] + cover * (fg[c] - bg[c]) + noise;
                px.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_raw(IMAGE_SIZE, IMAGE_SIZE, px).expect("fixed size")
}

/// Writes `classes * per_class` PNGs as `<out>/<label>/<label>_NNNN.png`
/// using the first `classes` labels.
///
/// Image `i` of class `c` draws from generator stream `(c << 32) | i` of
/// `seed`, so an image does not depend on how many others are generated.
pub fn synth_generate(out: &Path, classes: usize, per_class: usize, seed: u64) -> Result<SynthSummary> {
    if !(2..=LABELS.len()).contains(&classes) {
        return Err(DataError::Invalid(format!("classes must be in [2, {}], got {classes}", LABELS.len())));
    }
    if per_class == 0 {
        return Err(DataError::Invalid("per-class count must be at least 1".into()));
    }
    let codes = class_codes();
    for (c, label) in LABELS.iter().take(classes).enumerate() {
        let dir = out.join(label);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let encoded: Vec<(PathBuf, Vec<u8>)> = {
            use rayon::prelude::*;
            (0..per_class)
                .into_par_iter()
                .map(|i| {
                    let mut rng = Rng::with_stream(seed, ((c as u64) << 32) | i as u64);
                    let img = render_glyph(codes[c], &mut rng);
                    (dir.join(format!("{label}_{i:04}.png")), io::encode_png_rgb(&img))
                })
                .collect()
        };
        for (path, bytes) in encoded {
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
    }
    Ok(SynthSummary {
        root: out.to_path_buf(),
        classes: LABELS[..classes].iter().map(|s| s.to_string()).collect(),
        files: classes * per_class,
    })
}
