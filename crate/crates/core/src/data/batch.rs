use rayon::prelude::*;

use crate::nn::{Rng, Tensor};
use crate::preproc::{io, run_pipeline, PipelineConfig};

use super::{DataError, Result, Sample};

/// Inputs stacked as `[B, H, W, C]` with their class indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// Indexed access to preprocessed inputs.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> usize;

    /// Preprocessed input of sample `i`, shaped `[H, W, C]`.
    fn input(&self, i: usize) -> Result<Tensor>;
}

/// Decodes and preprocesses images on every access.
#[derive(Debug, Clone)]
pub struct FileSource {
    samples: Vec<Sample>,
    pipeline: PipelineConfig,
}

impl FileSource {
    pub fn new(samples: Vec<Sample>, pipeline: PipelineConfig) -> Self {
        Self { samples, pipeline }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

impl SampleSource for FileSource {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn label(&self, i: usize) -> usize {
        self.samples[i].class
    }

    fn input(&self, i: usize) -> Result<Tensor> {
        let path = &self.samples[i].path;
        let wrap = |source| DataError::Image { path: path.clone(), source };
        let img = io::load_rgb(path).map_err(wrap)?;
        run_pipeline(&img, &self.pipeline).map_err(wrap)
    }
}

/// Inputs held in memory.
#[derive(Debug, Clone)]
pub struct MemorySource {
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
}

impl MemorySource {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|t| t.shape() != first.shape()) {
                return Err(DataError::Invalid("inputs differ in shape".into()));
            }
        }
        Ok(Self { inputs, labels })
    }

    /// Preprocesses every sample of `source` once, in parallel.
    pub fn preload(source: &impl SampleSource) -> Result<Self> {
        let inputs = (0..source.len())
            .into_par_iter()
            .map(|i| source.input(i))
            .collect::<Result<Vec<_>>>()?;
        let labels = (0..source.len()).map(|i| source.label(i)).collect();
        Self::new(inputs, labels)
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

impl SampleSource for MemorySource {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn input(&self, i: usize) -> Result<Tensor> {
        Ok(self.inputs[i].clone())
    }
}

/// Sample order for one epoch: a permutation drawn from the generator
/// stream `epoch` of `seed`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::with_stream(seed, epoch).shuffle(&mut order);
    order
}

/// Iterator over the batches of one epoch.
pub struct Batches<'a, S: SampleSource + ?Sized> {
    source: &'a S,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl<S: SampleSource + ?Sized> Batches<'_, S> {
    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

/// Batches covering every sample once, in the seeded order for `epoch`.
/// The last batch is short when the sample count is not a multiple of
/// `batch_size`. Inputs within a batch are loaded in parallel.
pub fn make_batches<S: SampleSource + ?Sized>(
    source: &S,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Result<Batches<'_, S>> {
    if batch_size == 0 {
        return Err(DataError::Invalid("batch size must be at least 1".into()));
    }
    Ok(Batches { source, order: epoch_order(source.len(), shuffle_seed, epoch), batch_size, next: 0 })
}

/// Stacks per-sample tensors into one batch tensor.
pub fn stack(inputs: Vec<Tensor>) -> Result<Tensor> {
    let sample_shape = inputs
        .first()
        .map(|t| t.shape().to_vec())
        .ok_or_else(|| DataError::Invalid("empty batch".into()))?;
    let mut data = Vec::with_capacity(inputs.len() * inputs[0].len());
    for t in &inputs {
        if t.shape() != sample_shape.as_slice() {
            return Err(DataError::Invalid("inputs differ in shape".into()));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![inputs.len()];
    shape.extend(sample_shape);
    Ok(Tensor::new(shape, data)?)
}

impl<S: SampleSource + ?Sized> Iterator for Batches<'_, S> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let idx = &self.order[self.next..end];
        self.next = end;
        let source = self.source;
        let loaded: Result<Vec<Tensor>> = idx.par_iter().map(|&i| source.input(i)).collect();
        Some(loaded.and_then(stack).map(|inputs| Batch {
            inputs,
            labels: idx.iter().map(|&i| source.label(i)).collect(),
        }))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn source(n: usize) -> MemorySource {
        let inputs = (0..n).map(|i| Tensor::filled(vec![2, 2, 1], i as f64)).collect();
        MemorySource::new(inputs, (0..n).map(|i| i % 3).collect()).unwrap()
    }

    #[test]
    fn batch_count_is_ceiling() {
        struct Fake;
        impl SampleSource for Fake {
            fn len(&self) -> usize {
                35_000
            }
            fn label(&self, _: usize) -> usize {
                0
            }
            fn input(&self, _: usize) -> Result<Tensor> {
                Ok(Tensor::zeros(vec![1]))
            }
        }
        let b = make_batches(&Fake, 32, 0, 0).unwrap();
        assert_eq!(b.batch_count(), 1094);
        let sizes: Vec<usize> = b.map(|x| x.unwrap().labels.len()).collect();
        assert_eq!(sizes.len(), 1094);
        assert_eq!(*sizes.last().unwrap(), 24);
    }

    #[test]
    fn short_final_batch_and_shapes() {
        let src = source(10);
        let batches: Vec<Batch> = make_batches(&src, 4, 1, 0).unwrap().map(Result::unwrap).collect();
        assert_eq!(batches.iter().map(|b| b.labels.len()).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(batches[2].inputs.shape(), &[2, 2, 2, 1]);
        for b in &batches {
            for (k, &label) in b.labels.iter().enumerate() {
                let v = b.inputs.data()[k * 4];
                assert_eq!(label, v as usize % 3);
            }
        }
    }

    #[test]
    fn batch_size_one_follows_order() {
        let src = source(6);
        let order = epoch_order(6, 5, 2);
        let seen: Vec<usize> = make_batches(&src, 1, 5, 2)
            .unwrap()
            .map(|b| b.unwrap().inputs.data()[0] as usize)
            .collect();
        assert_eq!(seen, order);
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(make_batches(&source(3), 0, 0, 0).is_err());
    }

    #[test]
    fn epochs_differ_seeds_repeat() {
        assert_eq!(epoch_order(50, 9, 1), epoch_order(50, 9, 1));
        assert_ne!(epoch_order(50, 9, 1), epoch_order(50, 9, 2));
    }

    #[test]
    fn missing_file_error_carries_path() {
        let src = FileSource::new(
            vec![Sample { path: "/nonexistent/a.png".into(), class: 0 }],
            PipelineConfig::default(),
        );
        let err = make_batches(&src, 1, 0, 0).unwrap().next().unwrap().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/a.png"));
    }

    proptest! {
        #[test]
        fn every_sample_once_per_epoch(n in 1usize..60, bs in 1usize..9, seed in any::<u64>(), epoch in 0u64..5) {
            let src = source(n);
            let mut seen: Vec<usize> = make_batches(&src, bs, seed, epoch)
                .unwrap()
                .flat_map(|b| {
                    let b = b.unwrap();
                    (0..b.labels.len()).map(move |k| b.inputs.data()[k * 4] as usize).collect::<Vec<_>>()
                })
                .collect();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
