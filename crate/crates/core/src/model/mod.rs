//! The sign-language classifier: architecture manifests, the trainable
//! model and its on-disk format.

mod file;
mod manifest;

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::layer::{self, LayerCache};
use crate::nn::loss::softmax_cross_entropy_batch;
use crate::nn::norm::update_running_stats;
use crate::nn::params::{RUNNING_MEAN, RUNNING_VAR};
use crate::nn::{sgd_step, Gradients, LayerGrads, LayerKind, Mode, NnError, ParameterBundle, Rng, Tensor};
use crate::preproc::PipelineConfig;

pub use file::{load_model, model_from_bytes, model_to_bytes, save_model, MAGIC, FORMAT_VERSION};
pub use manifest::{
    build_desk, build_table1, build_table1_with, ArchitectureManifest, Profile, SummaryRow, BN_EPSILON, BN_MOMENTUM,
    MANIFEST_VERSION,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("format version {found} is newer than supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("model file is truncated")]
    Truncated,
    #[error("checksum mismatch in {section} section")]
    ChecksumMismatch { section: &'static str },
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite {what} in layer {layer}")]
    NonFinite { layer: String, what: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Class probabilities for one input and the most probable class.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub class: usize,
}

impl Prediction {
    /// The `k` most probable classes, best first; ties keep class order.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.probabilities.len()).collect();
        idx.sort_by(|&a, &b| self.probabilities[b].total_cmp(&self.probabilities[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (i, self.probabilities[i])).collect()
    }
}

/// Loss and number of correct argmax predictions for one training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub correct: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    manifest: ArchitectureManifest,
    params: ParameterBundle,
    labels: Vec<String>,
    pipeline: PipelineConfig,
    mode: Mode,
}

impl Model {
    /// Fresh model with weights drawn from `init_seed`, in inference mode.
    pub fn init(
        manifest: ArchitectureManifest,
        labels: Vec<String>,
        pipeline: PipelineConfig,
        init_seed: u64,
    ) -> Result<Self> {
        let params = ParameterBundle::init(&manifest.layers, &manifest.input_shape, &mut Rng::new(init_seed))?;
        Self::from_parts(manifest, params, labels, pipeline)
    }

    pub fn from_parts(
        manifest: ArchitectureManifest,
        params: ParameterBundle,
        labels: Vec<String>,
        pipeline: PipelineConfig,
    ) -> Result<Self> {
        manifest.validate()?;
        if labels.len() != manifest.classes {
            return Err(ModelError::Invalid(format!(
                "{} labels for a {}-class model",
                labels.len(),
                manifest.classes
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.is_empty() || l.chars().any(char::is_whitespace)) {
            return Err(ModelError::Invalid(format!("label {l:?} must be non-empty without whitespace")));
        }
        pipeline.validate().map_err(|e| ModelError::Invalid(e.to_string()))?;
        let [w, h] = pipeline.target_size;
        if manifest.input_shape != [h, w, 1] {
            return Err(ModelError::Invalid(format!(
                "pipeline produces {h}x{w}x1 but the network expects {}",
                manifest::join_dims(&manifest.input_shape)
            )));
        }
        let expected = ParameterBundle::init(&manifest.layers, &manifest.input_shape, &mut Rng::new(0))?;
        let shapes_match = expected.layers.len() == params.layers.len()
            && expected.layers.iter().zip(&params.layers).all(|(a, b)| {
                a.layer == b.layer
                    && a.params.len() == b.params.len()
                    && a.params.iter().zip(&b.params).all(|(p, q)| {
                        p.name == q.name && p.trainable == q.trainable && p.value.shape() == q.value.shape()
                    })
            });
        if !shapes_match {
            return Err(ModelError::Invalid("parameters do not match the manifest".into()));
        }
        Ok(Self { manifest, params, labels, pipeline, mode: Mode::Infer })
    }

    pub fn manifest(&self) -> &ArchitectureManifest {
        &self.manifest
    }

    pub fn params(&self) -> &ParameterBundle {
        &self.params
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn pipeline(&self) -> &PipelineConfig {
        &self.pipeline
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes
    }

    /// Short identifier: profile plus a checksum of the parameters.
    pub fn id(&self) -> String {
        format!("{}-{:08x}", self.manifest.profile, self.params.fingerprint())
    }

    fn require_infer(&self) -> Result<()> {
        match self.mode {
            Mode::Infer => Ok(()),
            Mode::Train => Err(NnError::State("prediction requires inference mode".into()).into()),
        }
    }

    fn check_batch(&self, inputs: &Tensor) -> Result<()> {
        if inputs.rank() != 4 || inputs.shape()[1..] != self.manifest.input_shape[..] || inputs.shape()[0] == 0 {
            return Err(NnError::Dimension {
                axis: "input".into(),
                detail: format!(
                    "expected [B, {}], got {:?}",
                    manifest::join_dims(&self.manifest.input_shape).replace('x', ", "),
                    inputs.shape()
                ),
            }
            .into());
        }
        Ok(())
    }

    /// Class probabilities `[B, classes]` for a batch `[B, H, W, C]`.
    pub fn predict_batch(&self, inputs: &Tensor) -> Result<Tensor> {
        self.require_infer()?;
        self.check_batch(inputs)?;
        // inference-mode dropout is the identity and draws nothing
        let mut rng = Rng::new(0);
        let mut x = inputs.clone();
        for (spec, lp) in self.manifest.layers.iter().zip(&self.params.layers) {
            x = layer::forward(spec, lp, &x, Mode::Infer, &mut rng, false)
                .map_err(|e| e.in_layer(&spec.name))?
                .0;
        }
        Ok(x)
    }

    /// Prediction for a single `[H, W, C]` input.
    pub fn predict(&self, input: &Tensor) -> Result<Prediction> {
        let mut shape = vec![1];
        shape.extend_from_slice(input.shape());
        let probs = self.predict_batch(&input.clone().reshape(shape)?)?;
        let probabilities = probs.into_data();
        let class = crate::nn::Tensor::from_vec(probabilities.clone()).argmax();
        Ok(Prediction { probabilities, class })
    }

    /// One SGD step on a batch: forward in training mode, running-statistic
    /// update, softmax cross-entropy, backward and parameter update.
    pub fn train_batch(&mut self, inputs: &Tensor, labels: &[usize], learning_rate: f64, rng: &mut Rng) -> Result<BatchStats> {
        if self.mode != Mode::Train {
            return Err(NnError::State("training requires training mode".into()).into());
        }
        self.check_batch(inputs)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes()) {
            return Err(ModelError::Invalid(format!("label {bad} out of range")));
        }

        let layers = &self.manifest.layers;
        let mut caches: Vec<LayerCache> = Vec::with_capacity(layers.len());
        let mut x = inputs.clone();
        for (spec, lp) in layers.iter().zip(&self.params.layers) {
            let (y, cache) = layer::forward(spec, lp, &x, Mode::Train, rng, true).map_err(|e| e.in_layer(&spec.name))?;
            if !y.is_finite() {
                return Err(ModelError::NonFinite { layer: spec.name.clone(), what: "activation".into() });
            }
            caches.push(cache.expect("cache requested"));
            x = y;
        }
        let (loss, mut grad) = softmax_cross_entropy_batch(&x, labels)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFinite { layer: "loss".into(), what: "value".into() });
        }
        let k = self.classes();
        let correct = x
            .data()
            .chunks(k)
            .zip(labels)
            .filter(|(row, &l)| Tensor::from_vec(row.to_vec()).argmax() == l)
            .count();

        for ((spec, lp), cache) in layers.iter().zip(self.params.layers.iter_mut()).zip(&caches) {
            if let (LayerKind::BatchNorm { momentum, .. }, LayerCache::BatchNorm(c)) = (&spec.kind, cache) {
                let mut rm = lp.get(RUNNING_MEAN).expect("batchnorm param").clone();
                let mut rv = lp.get(RUNNING_VAR).expect("batchnorm param").clone();
                update_running_stats(&mut rm, &mut rv, c, *momentum);
                *lp.get_mut(RUNNING_MEAN).expect("batchnorm param") = rm;
                *lp.get_mut(RUNNING_VAR).expect("batchnorm param") = rv;
            }
        }

        let mut grads = Vec::with_capacity(layers.len());
        for i in (0..layers.len()).rev() {
            let last = i + 1 == layers.len();
            let (gx, g) = layer::backward(&layers[i], &self.params.layers[i], &caches[i], &grad, i > 0, last)
                .map_err(|e| e.in_layer(&layers[i].name))?;
            if !g.is_empty() {
                grads.push(LayerGrads { layer: layers[i].name.clone(), grads: g });
            }
            match gx {
                Some(gx) => grad = gx,
                None => break,
            }
        }
        grads.reverse();
        sgd_step(&mut self.params, &Gradients { layers: grads }, learning_rate).map_err(|e| match e {
            NnError::NonFinite { layer, param } => ModelError::NonFinite { layer, what: format!("gradient of {param}") },
            other => other.into(),
        })?;
        Ok(BatchStats { loss, correct, size: labels.len() })
    }
}
