//! Sobel gradients and Canny edge detection.
//!
//! Smoothing and Sobel filtering are evaluated exactly in integers; the
//! gradient components handed to the rest of the detector are those integer
//! sums divided by the smoothing normalizer. Borders replicate edge pixels.

use super::{EdgeMap, GradientField, GrayImage, PipelineConfig, PreprocError, Result};

/// 5x5 integer Gaussian (sigma about 1.4); weights sum to [`GAUSS_NORM`].
const GAUSS: [[i64; 5]; 5] = [
    [2, 4, 5, 4, 2],
    [4, 9, 12, 9, 4],
    [5, 12, 15, 12, 5],
    [4, 9, 12, 9, 4],
    [2, 4, 5, 4, 2],
];
const GAUSS_NORM: i64 = 159;

const SOBEL_X: [[i64; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
const SOBEL_Y: [[i64; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];

/// Integer image with an implied divisor.
struct Plane {
    width: usize,
    height: usize,
    values: Vec<i64>,
    scale: i64,
}

impl Plane {
    fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            values: img.pixels().iter().map(|&p| p as i64).collect(),
            scale: 1,
        }
    }

    #[inline]
    fn clamped(&self, x: isize, y: isize) -> i64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.values[y * self.width + x]
    }

    fn correlate<const N: usize>(&self, kernel: &[[i64; N]; N]) -> Vec<i64> {
        let r = (N / 2) as isize;
        let mut out = Vec::with_capacity(self.values.len());
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let mut acc = 0;
                for (ky, row) in kernel.iter().enumerate() {
                    for (kx, &k) in row.iter().enumerate() {
                        if k != 0 {
                            acc += k * self.clamped(x + kx as isize - r, y + ky as isize - r);
                        }
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    fn blurred(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            values: self.correlate(&GAUSS),
            scale: self.scale * GAUSS_NORM,
        }
    }

    fn sobel(&self) -> GradientField {
        let s = self.scale as f64;
        GradientField {
            width: self.width,
            height: self.height,
            gx: self.correlate(&SOBEL_X).into_iter().map(|v| v as f64 / s).collect(),
            gy: self.correlate(&SOBEL_Y).into_iter().map(|v| v as f64 / s).collect(),
        }
    }
}

/// Horizontal and vertical Sobel derivatives. `gx` grows with intensity to
/// the right, `gy` with intensity downwards.
pub fn sobel_gradients(img: &GrayImage) -> Result<GradientField> {
    if img.width() < 3 || img.height() < 3 {
        return Err(PreprocError::Dimension(format!(
            "Sobel needs at least 3x3 pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(Plane::from_gray(img).sobel())
}

/// Edge strength `sqrt(gx² + gy²)` per pixel.
pub fn gradient_magnitude(field: &GradientField) -> Vec<f64> {
    field
        .gx
        .iter()
        .zip(&field.gy)
        .map(|(x, y)| (x * x + y * y).sqrt())
        .collect()
}

/// Gradient direction in degrees, folded into `[0, 180)`; a zero gradient
/// maps to 0.
pub fn gradient_angle(field: &GradientField) -> Vec<f64> {
    field
        .gx
        .iter()
        .zip(&field.gy)
        .map(|(&x, &y)| fold_angle(y.atan2(x).to_degrees()))
        .collect()
}

fn fold_angle(mut deg: f64) -> f64 {
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    deg
}

/// Step towards the neighbour along the quantized gradient direction
/// (0°, 45°, 90° or 135°), in image coordinates with y pointing down.
fn direction_step(angle: f64) -> (isize, isize) {
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Keeps pixels that are maxima along their quantized gradient direction.
///
/// A pixel must strictly exceed the neighbour behind it and at least match
/// the one ahead, so a plateau two pixels wide keeps only its first pixel.
fn non_maximum_suppression(width: usize, height: usize, magnitude: &[f64], angle: &[f64]) -> Vec<f64> {
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
            0.0
        } else {
            magnitude[y as usize * width + x as usize]
        }
    };
    let mut out = vec![0.0; magnitude.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let m = magnitude[i];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = direction_step(angle[i]);
            let (xi, yi) = (x as isize, y as isize);
            if m > at(xi - dx, yi - dy) && m >= at(xi + dx, yi + dy) {
                out[i] = m;
            }
        }
    }
    out
}

/// Double threshold: pixels at or above `high` are edges, and pixels at or
/// above `low` join them when 8-connected to an edge, transitively.
fn hysteresis(width: usize, height: usize, strength: &[f64], low: f64, high: f64) -> Vec<u8> {
    let mut out = vec![0u8; strength.len()];
    let mut stack = Vec::new();
    for (i, &s) in strength.iter().enumerate() {
        if s >= high && s > 0.0 && out[i] == 0 {
            out[i] = 1;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (x, y) = ((j % width) as isize, (j / width) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                            continue;
                        }
                        let k = ny as usize * width + nx as usize;
                        if out[k] == 0 && strength[k] >= low && strength[k] > 0.0 {
                            out[k] = 1;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Canny edge detection: optional 5x5 Gaussian, Sobel, non-maximum
/// suppression on 4 quantized directions, then hysteresis with
/// `cfg.canny_low` / `cfg.canny_high` on the (un-normalized) Sobel
/// magnitude scale.
pub fn canny(img: &GrayImage, cfg: &PipelineConfig) -> Result<EdgeMap> {
    if !(cfg.canny_low < cfg.canny_high) {
        return Err(PreprocError::Config(format!(
            "canny low threshold {} must be below high threshold {}",
            cfg.canny_low, cfg.canny_high
        )));
    }
    let min = if cfg.gaussian { 5 } else { 3 };
    if img.width() < min || img.height() < min {
        return Err(PreprocError::Dimension(format!(
            "Canny needs at least {min}x{min} pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut plane = Plane::from_gray(img);
    if cfg.gaussian {
        plane = plane.blurred();
    }
    let field = plane.sobel();
    let magnitude = gradient_magnitude(&field);
    let angle = gradient_angle(&field);
    let thin = non_maximum_suppression(field.width, field.height, &magnitude, &angle);
    let pixels = hysteresis(field.width, field.height, &thin, cfg.canny_low, cfg.canny_high);
    Ok(EdgeMap::from_raw(field.width, field.height, pixels).expect("binary by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(width: usize, height: usize, at: usize, lo: u8, hi: u8) -> GrayImage {
        let px = (0..width * height)
            .map(|i| if i % width < at { lo } else { hi })
            .collect();
        GrayImage::from_raw(width, height, px).unwrap()
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = GrayImage::from_raw(5, 4, vec![77; 20]).unwrap();
        let f = sobel_gradients(&g).unwrap();
        assert!(f.gx.iter().chain(&f.gy).all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_gradient() {
        let g = step(8, 6, 4, 0, 100);
        let f = sobel_gradients(&g).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                let gx = f.gx[y * 8 + x];
                if x == 3 || x == 4 {
                    assert_eq!(gx.abs(), 400.0);
                } else {
                    assert_eq!(gx, 0.0);
                }
                assert_eq!(f.gy[y * 8 + x], 0.0);
            }
        }
    }

    #[test]
    fn transpose_swaps_components() {
        let (w, h) = (7, 5);
        let px: Vec<u8> = (0..w * h).map(|i| ((i * 53 + 11) % 256) as u8).collect();
        let g = GrayImage::from_raw(w, h, px.clone()).unwrap();
        let mut tp = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                tp[x * h + y] = px[y * w + x];
            }
        }
        let t = GrayImage::from_raw(h, w, tp).unwrap();
        let a = sobel_gradients(&g).unwrap();
        let b = sobel_gradients(&t).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(a.gx[y * w + x], b.gy[x * h + y]);
                assert_eq!(a.gy[y * w + x], b.gx[x * h + y]);
            }
        }
    }

    #[test]
    fn too_small_for_sobel() {
        let g = GrayImage::from_raw(2, 5, vec![0; 10]).unwrap();
        assert!(matches!(sobel_gradients(&g), Err(PreprocError::Dimension(_))));
    }

    #[test]
    fn magnitude_and_angle_examples() {
        let f = GradientField {
            width: 5,
            height: 1,
            gx: vec![3.0, 0.0, 1.0, 1.0, 0.0],
            gy: vec![4.0, 0.0, 1.0, 0.0, 1.0],
        };
        let m = gradient_magnitude(&f);
        assert_eq!(m[0], 5.0);
        assert_eq!(m[1], 0.0);
        assert!((m[2] - 1.41421).abs() < 1e-5);
        let a = gradient_angle(&f);
        assert_eq!(a[1], 0.0);
        assert!((a[2] - 45.0).abs() < 1e-12);
        assert_eq!(a[3], 0.0);
        assert!((a[4] - 90.0).abs() < 1e-12);
    }

    #[test]
    fn angles_fold_into_half_turn() {
        let f = GradientField {
            width: 3,
            height: 1,
            gx: vec![-1.0, -1.0, 1.0],
            gy: vec![0.0, -1.0, -1.0],
        };
        let a = gradient_angle(&f);
        assert_eq!(a[0], 0.0);
        assert!((a[1] - 45.0).abs() < 1e-12);
        assert!((a[2] - 135.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image_has_no_edges() {
        let g = GrayImage::from_raw(16, 16, vec![120; 256]).unwrap();
        let e = canny(&g, &PipelineConfig::default()).unwrap();
        assert!(e.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn step_gives_single_line() {
        for gaussian in [false, true] {
            let cfg = PipelineConfig {
                gaussian,
                ..PipelineConfig::default()
            };
            let e = canny(&step(16, 16, 8, 0, 255), &cfg).unwrap();
            for y in 0..16 {
                let row: Vec<usize> = (0..16).filter(|&x| e.pixels()[y * 16 + x] == 1).collect();
                assert_eq!(row, vec![7], "gaussian={gaussian} row {y}");
            }
        }
    }

    #[test]
    fn bad_thresholds() {
        let cfg = PipelineConfig {
            canny_low: 150.0,
            canny_high: 150.0,
            ..PipelineConfig::default()
        };
        let g = GrayImage::from_raw(8, 8, vec![0; 64]).unwrap();
        assert!(matches!(canny(&g, &cfg), Err(PreprocError::Config(_))));
    }
}
