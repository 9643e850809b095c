//! Dataset ingestion from a class-per-directory layout, stratified
//! splitting, batching and a synthetic glyph generator.

mod batch;
mod split;
mod synth;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::NnError;
use crate::preproc::PreprocError;

pub use batch::{epoch_order, make_batches, stack as stack_inputs, Batch, Batches, FileSource, MemorySource, SampleSource};
pub use split::{stratified_split, SplitIndex};
pub use synth::{synth_generate, SynthSummary};

/// Gesture labels in canonical order: digits, then letters.
pub const LABELS: [&str; 35] = [
    "1", "2", "3", "4", "5", "6", "7", "8", "9", "A", "B", "C", "D", "E", "F", "G", "H", "I", "J",
    "K", "L", "M", "N", "O", "P", "Q", "R", "S", "T", "U", "V", "W", "X", "Y", "Z",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset root {0} contains no class directories")]
    EmptyRoot(PathBuf),
    #[error("class {class:?} has {count} sample(s); splitting needs at least 2")]
    ClassTooSmall { class: String, count: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: PreprocError,
    },
    #[error(transparent)]
    Tensor(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub path: PathBuf,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    /// Class names, byte-lexicographically sorted.
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
    pub counts: Vec<usize>,
    /// Files with an image extension whose header could not be read as PNG or JPEG.
    pub skipped: usize,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn has_image_header(path: &Path) -> bool {
    let mut head = [0u8; 8];
    let Ok(mut f) = fs::File::open(path) else {
        return false;
    };
    match f.read_exact(&mut head) {
        Ok(()) => head == *b"\x89PNG\r\n\x1a\n" || head[..3] == [0xFF, 0xD8, 0xFF],
        Err(_) => false,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        out.push(entry.map_err(io_err(dir))?.path());
    }
    out.sort();
    Ok(out)
}

/// Enumerates `<root>/<label>/<file>.{png,jpg,jpeg}`.
///
/// Each subdirectory is one class; files without an image extension are
/// ignored and image-named files that are not PNG or JPEG are counted in
/// `skipped`.
pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    let mut classes = Vec::new();
    let mut dirs = Vec::new();
    for path in sorted_entries(root)? {
        if path.is_dir() {
            let name = path.file_name().and_then(|n| n.to_str()).map(str::to_owned);
            match name {
                Some(n) => {
                    classes.push(n);
                    dirs.push(path);
                }
                None => log::warn!("skipping non-UTF-8 directory {}", path.display()),
            }
        }
    }
    if classes.is_empty() {
        return Err(DataError::EmptyRoot(root.to_path_buf()));
    }
    // sort by name bytes, independent of locale and of full-path ordering
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| classes[a].as_bytes().cmp(classes[b].as_bytes()));
    let classes: Vec<String> = order.iter().map(|&i| classes[i].clone()).collect();
    let dirs: Vec<PathBuf> = order.iter().map(|&i| dirs[i].clone()).collect();

    let mut samples = Vec::new();
    let mut counts = vec![0; classes.len()];
    let mut skipped = 0;
    for (class, dir) in dirs.iter().enumerate() {
        for path in sorted_entries(dir)? {
            if !path.is_file() || !has_image_extension(&path) {
                continue;
            }
            if has_image_header(&path) {
                samples.push(Sample { path, class });
                counts[class] += 1;
            } else {
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} unreadable image file(s) under {}", root.display());
    }
    Ok(DatasetIndex { classes, samples, counts, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n....";

    #[test]
    fn single_class() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("A");
        fs::create_dir(&a).unwrap();
        for name in ["x2.png", "x1.png", "x3.jpg"] {
            let bytes: &[u8] = if name.ends_with("jpg") { b"\xFF\xD8\xFF\xE0...." } else { PNG_MAGIC };
            fs::write(a.join(name), bytes).unwrap();
        }
        fs::write(a.join("notes.txt"), "hi").unwrap();
        let idx = scan_dataset(dir.path()).unwrap();
        assert_eq!(idx.classes, vec!["A"]);
        assert_eq!(idx.len(), 3);
        assert!(idx.samples.iter().all(|s| s.class == 0));
        assert_eq!(idx.samples[0].path.file_name().unwrap(), "x1.png");
        assert_eq!(idx.skipped, 0);
    }

    #[test]
    fn empty_root_is_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("stray.png"), PNG_MAGIC).unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(DataError::EmptyRoot(_))));
    }

    #[test]
    fn missing_root_names_path() {
        let err = scan_dataset(Path::new("/nonexistent/isl-data")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/isl-data"));
    }

    #[test]
    fn classes_sorted_digits_before_letters() {
        let dir = tempfile::tempdir().unwrap();
        for label in ["B", "a", "7", "A", "1"] {
            let d = dir.path().join(label);
            fs::create_dir(&d).unwrap();
            fs::write(d.join("0.png"), PNG_MAGIC).unwrap();
        }
        let idx = scan_dataset(dir.path()).unwrap();
        assert_eq!(idx.classes, vec!["1", "7", "A", "B", "a"]);
        assert_eq!(idx.counts, vec![1; 5]);
        assert_eq!(idx.samples[3].class, 3);
        assert!(idx.samples[3].path.starts_with(dir.path().join("B")));
    }

    #[test]
    fn bogus_image_counted_as_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("C");
        fs::create_dir(&d).unwrap();
        fs::write(d.join("good.png"), PNG_MAGIC).unwrap();
        fs::write(d.join("bad.png"), "not an image").unwrap();
        let idx = scan_dataset(dir.path()).unwrap();
        assert_eq!((idx.len(), idx.skipped), (1, 1));
    }

    #[test]
    fn labels_are_sorted_and_unique() {
        let mut sorted = LABELS.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, LABELS.to_vec());
    }
}
