//! Image preprocessing: luminance grayscale, binary thresholding, Sobel
//! gradients, Canny edges and resizing, composed into a configurable
//! pipeline that produces the network input.

mod color;
mod edges;
pub mod io;
mod resize;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;

pub use color::{binary_threshold, to_grayscale};
pub use edges::{canny, gradient_angle, gradient_magnitude, sobel_gradients};
pub use resize::resize;

#[derive(Debug, Error)]
pub enum PreprocError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid preprocessing config: {0}")]
    Config(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PreprocError>;

macro_rules! image_type {
    ($(#[$doc:meta])* $name:ident, $channels:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name {
            width: usize,
            height: usize,
            pixels: Vec<u8>,
        }

        impl $name {
            pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
                if width == 0 || height == 0 || pixels.len() != width * height * $channels {
                    return Err(PreprocError::Dimension(format!(
                        "{}x{} image with {} channel(s) cannot hold {} bytes",
                        width,
                        height,
                        $channels,
                        pixels.len()
                    )));
                }
                Ok(Self { width, height, pixels })
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn pixels(&self) -> &[u8] {
                &self.pixels
            }

            pub fn into_raw(self) -> Vec<u8> {
                self.pixels
            }
        }
    };
}

image_type!(
    /// Row-major interleaved 8-bit RGB.
    RgbImage,
    3
);
image_type!(
    /// Row-major 8-bit intensities.
    GrayImage,
    1
);

/// Binary edge image; every pixel is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl EdgeMap {
    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(PreprocError::Dimension(format!(
                "{width}x{height} edge map cannot hold {} values",
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(PreprocError::Dimension("edge maps are binary".into()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// 0/255 rendering, for saving or further gray-level stages.
    pub fn to_gray(&self) -> GrayImage {
        let px = self.pixels.iter().map(|&p| p * 255).collect();
        GrayImage::from_raw(self.width, self.height, px).expect("same dimensions")
    }
}

/// Horizontal and vertical derivatives, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Grayscale,
    Threshold,
    Canny,
    Resize,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Grayscale => "grayscale",
            Stage::Threshold => "threshold",
            Stage::Canny => "canny",
            Stage::Resize => "resize",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PreprocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grayscale" => Ok(Stage::Grayscale),
            "threshold" => Ok(Stage::Threshold),
            "canny" => Ok(Stage::Canny),
            "resize" => Ok(Stage::Resize),
            other => Err(PreprocError::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Binary threshold; pixels below it become black.
    pub threshold: u8,
    pub canny_low: f64,
    pub canny_high: f64,
    /// 5x5 Gaussian smoothing before the Sobel stage.
    pub gaussian: bool,
    /// Output `[width, height]`.
    pub target_size: [usize; 2],
    pub stages: Vec<Stage>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: 90,
            canny_low: 50.0,
            canny_high: 150.0,
            gaussian: true,
            target_size: [256, 256],
            stages: vec![Stage::Grayscale, Stage::Threshold, Stage::Canny, Stage::Resize],
        }
    }
}

impl PipelineConfig {
    /// Resize first, then threshold and detect edges at the target size.
    /// Suited to targets much smaller than the source images, where
    /// resampling a thin edge map would lose edges.
    pub fn resize_first(width: usize, height: usize) -> Self {
        Self {
            target_size: [width, height],
            stages: vec![Stage::Grayscale, Stage::Resize, Stage::Threshold, Stage::Canny],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.canny_low < self.canny_high) {
            return Err(PreprocError::Config(format!(
                "canny_low ({}) must be below canny_high ({})",
                self.canny_low, self.canny_high
            )));
        }
        if self.target_size.iter().any(|&d| d == 0) {
            return Err(PreprocError::Config("target_size must be positive".into()));
        }
        match self.stages.first() {
            Some(Stage::Grayscale) => {}
            _ => return Err(PreprocError::Config("stages must start with grayscale".into())),
        }
        if self.stages.iter().filter(|&&s| s == Stage::Grayscale).count() > 1 {
            return Err(PreprocError::Config("grayscale may appear only once".into()));
        }
        Ok(())
    }

    /// Parses a comma-separated stage list such as `grayscale,threshold,canny`.
    pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
        list.split(',').map(|s| s.trim().parse()).collect()
    }
}

/// Intermediate result between stages.
#[derive(Debug, Clone)]
pub enum StageImage {
    Rgb(RgbImage),
    Gray(GrayImage),
    Edges(EdgeMap),
}

impl StageImage {
    fn dims(&self) -> (usize, usize) {
        match self {
            StageImage::Rgb(i) => (i.width(), i.height()),
            StageImage::Gray(i) => (i.width(), i.height()),
            StageImage::Edges(i) => (i.width(), i.height()),
        }
    }

    /// Gray-level view used for debugging output.
    pub fn to_gray(&self) -> GrayImage {
        match self {
            StageImage::Rgb(i) => to_grayscale(i),
            StageImage::Gray(i) => i.clone(),
            StageImage::Edges(e) => e.to_gray(),
        }
    }
}

fn apply(stage: Stage, img: StageImage, cfg: &PipelineConfig) -> Result<StageImage> {
    let [tw, th] = cfg.target_size;
    Ok(match (stage, img) {
        (Stage::Grayscale, StageImage::Rgb(rgb)) => StageImage::Gray(to_grayscale(&rgb)),
        (Stage::Grayscale, other) => other,
        (_, StageImage::Rgb(_)) => {
            return Err(PreprocError::Config(format!("{stage} needs a grayscale image")))
        }
        (Stage::Threshold, StageImage::Gray(g)) => StageImage::Gray(binary_threshold(&g, cfg.threshold)),
        (Stage::Threshold, StageImage::Edges(e)) => StageImage::Gray(binary_threshold(&e.to_gray(), cfg.threshold)),
        (Stage::Canny, StageImage::Gray(g)) => StageImage::Edges(canny(&g, cfg)?),
        (Stage::Canny, StageImage::Edges(e)) => StageImage::Edges(canny(&e.to_gray(), cfg)?),
        (Stage::Resize, StageImage::Gray(g)) => StageImage::Gray(resize(&g, tw, th)),
        (Stage::Resize, StageImage::Edges(e)) => StageImage::Edges(resize_edges(&e, tw, th)),
    })
}

/// Bilinear resize of the 0/255 rendering, re-binarized at half intensity.
fn resize_edges(e: &EdgeMap, width: usize, height: usize) -> EdgeMap {
    let r = resize(&e.to_gray(), width, height);
    let px = r.pixels().iter().map(|&p| u8::from(p >= 128)).collect();
    EdgeMap::from_raw(width, height, px).expect("sized above")
}

/// Timing of one executed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

/// Runs `cfg.stages` in order and returns a `[height, width, 1]` tensor.
///
/// Edge maps become {0, 1}; gray images are scaled by 1/255. If the last
/// stage leaves the image at a different size, a final resize to
/// `cfg.target_size` is applied.
pub fn run_pipeline(img: &RgbImage, cfg: &PipelineConfig) -> Result<Tensor> {
    run_pipeline_observed(img, cfg, |_, _| {}).map(|(t, _)| t)
}

/// Like [`run_pipeline`], additionally calling `observe` after each stage
/// and returning per-stage timings.
pub fn run_pipeline_observed(
    img: &RgbImage,
    cfg: &PipelineConfig,
    mut observe: impl FnMut(Stage, &StageImage),
) -> Result<(Tensor, Vec<StageTiming>)> {
    cfg.validate()?;
    let mut timings = Vec::with_capacity(cfg.stages.len() + 1);
    let mut current = StageImage::Rgb(img.clone());
    let mut stages = cfg.stages.clone();
    let mut i = 0;
    while i < stages.len() {
        let stage = stages[i];
        let start = Instant::now();
        current = apply(stage, current, cfg)?;
        timings.push(StageTiming {
            stage: stage.name().to_string(),
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        observe(stage, &current);
        i += 1;
        if i == stages.len() && current.dims() != (cfg.target_size[0], cfg.target_size[1]) {
            stages.push(Stage::Resize);
        }
    }

    let [w, h] = cfg.target_size;
    let data = match &current {
        StageImage::Edges(e) => e.pixels().iter().map(|&p| p as f64).collect(),
        StageImage::Gray(g) => g.pixels().iter().map(|&p| p as f64 / 255.0).collect(),
        StageImage::Rgb(_) => unreachable!("validated pipelines start with grayscale"),
    };
    let tensor = Tensor::new(vec![h, w, 1], data).map_err(|e| PreprocError::Dimension(e.to_string()))?;
    Ok((tensor, timings))
}
