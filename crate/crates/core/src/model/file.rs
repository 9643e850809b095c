//! Binary model files.
//!
//! ```text
//! "ISLM"            4 bytes
//! format version    u32 LE
//! manifest length   u64 LE, then UTF-8 manifest text, then CRC-32 (u32 LE)
//! blob length       u64 LE, then parameters as f64 LE, then CRC-32 (u32 LE)
//! ```
//!
//! The manifest text is the architecture manifest followed by `labels` and
//! `pipeline.*` keys. Parameters are stored layer by layer in manifest order,
//! each layer's parameters in their fixed order, values row-major.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::nn::{ParameterBundle, Rng, Tensor};
use crate::preproc::{PipelineConfig, Stage};

use super::manifest::{join_dims, parse_dims, KeyValues};
use super::{ArchitectureManifest, Model, ModelError, Result};

pub const MAGIC: &[u8; 4] = b"ISLM";
pub const FORMAT_VERSION: u32 = 1;

fn header_text(model: &Model) -> String {
    let mut s = model.manifest.to_text();
    let p = &model.pipeline;
    writeln!(s, "labels = {}", model.labels.join(" ")).unwrap();
    writeln!(s, "pipeline.threshold = {}", p.threshold).unwrap();
    writeln!(s, "pipeline.canny_low = {}", p.canny_low).unwrap();
    writeln!(s, "pipeline.canny_high = {}", p.canny_high).unwrap();
    writeln!(s, "pipeline.gaussian = {}", p.gaussian).unwrap();
    writeln!(s, "pipeline.target_size = {}", join_dims(&p.target_size)).unwrap();
    let stages: Vec<&str> = p.stages.iter().map(|s| s.name()).collect();
    writeln!(s, "pipeline.stages = {}", stages.join(",")).unwrap();
    s
}

fn parse_header(text: &str) -> Result<(ArchitectureManifest, Vec<String>, PipelineConfig)> {
    let mut kv = KeyValues::parse(text)?;
    let manifest = ArchitectureManifest::from_key_values(&mut kv)?;
    let labels = kv.required("labels")?.split_whitespace().map(str::to_owned).collect();
    let target = parse_dims(&kv.required("pipeline.target_size")?)?;
    let [w, h] = target[..] else {
        return Err(ModelError::Manifest("pipeline.target_size needs two dimensions".into()));
    };
    let pipeline = PipelineConfig {
        threshold: kv.parse_required("pipeline.threshold")?,
        canny_low: kv.parse_required("pipeline.canny_low")?,
        canny_high: kv.parse_required("pipeline.canny_high")?,
        gaussian: kv.parse_required("pipeline.gaussian")?,
        target_size: [w, h],
        stages: PipelineConfig::parse_stages(&kv.required("pipeline.stages")?)
            .map_err(|e| ModelError::Manifest(e.to_string()))?,
    };
    debug_assert!(pipeline.stages.iter().all(|s| *s != Stage::Grayscale || pipeline.stages[0] == *s));
    kv.finish()?;
    Ok((manifest, labels, pipeline))
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let header = header_text(model);
    let values: usize = model.params.layers.iter().flat_map(|l| &l.params).map(|p| p.value.len()).sum();
    let mut blob = Vec::with_capacity(values * 8);
    for p in model.params.layers.iter().flat_map(|l| &l.params) {
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(blob.len() + header.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for section in [header.as_bytes(), &blob] {
        out.extend_from_slice(&(section.len() as u64).to_le_bytes());
        out.extend_from_slice(section);
        out.extend_from_slice(&crc32fast::hash(section).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(ModelError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn section(&mut self, name: &'static str) -> Result<&'a [u8]> {
        let len = usize::try_from(self.u64()?).map_err(|_| ModelError::Truncated)?;
        let body = self.take(len)?;
        if crc32fast::hash(body) != self.u32()? {
            return Err(ModelError::ChecksumMismatch { section: name });
        }
        Ok(body)
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes };
    if r.take(4).map_err(|_| ModelError::BadMagic)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
    }
    let header = std::str::from_utf8(r.section("manifest")?)
        .map_err(|_| ModelError::Manifest("manifest is not UTF-8".into()))?;
    let (manifest, labels, pipeline) = parse_header(header)?;
    let blob = r.section("parameters")?;
    if !r.bytes.is_empty() {
        return Err(ModelError::Invalid(format!("{} unexpected bytes after the parameter section", r.bytes.len())));
    }

    let mut params = ParameterBundle::init(&manifest.layers, &manifest.input_shape, &mut Rng::new(0))?;
    let expected: usize = params.layers.iter().flat_map(|l| &l.params).map(|p| p.value.len() * 8).sum();
    if blob.len() != expected {
        return Err(ModelError::Invalid(format!(
            "parameter section holds {} bytes, manifest needs {expected}",
            blob.len()
        )));
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for p in params.layers.iter_mut().flat_map(|l| &mut l.params) {
        let data: Vec<f64> = values.by_ref().take(p.value.len()).collect();
        p.value = Tensor::new(p.value.shape().to_vec(), data)?;
    }
    Model::from_parts(manifest, params, labels, pipeline)
}

/// Writes atomically via a temporary file in the same directory.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let io = |source| ModelError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("islm.tmp");
    fs::write(&tmp, model_to_bytes(model)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    model_from_bytes(&bytes)
}
