//! Synthetic datasets and the MNIST IDX reader.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::numerics::{Rng, Vector};
use crate::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub inputs: Vec<Vector>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(train: Split, test: Split, n_classes: usize) -> Result<Self> {
        let dim = train
            .inputs
            .first()
            .or(test.inputs.first())
            .map(Vector::dim)
            .ok_or(Error::Empty("dataset"))?;
        for split in [&train, &test] {
            if split.inputs.len() != split.labels.len() {
                return Err(Error::dim("dataset labels", split.inputs.len(), split.labels.len()));
            }
            if let Some(x) = split.inputs.iter().find(|x| x.dim() != dim) {
                return Err(Error::dim("dataset input", dim, x.dim()));
            }
            if let Some(&y) = split.labels.iter().find(|&&y| y >= n_classes) {
                return Err(Error::dim("dataset label", format!("< {n_classes}"), y));
            }
        }
        Ok(Dataset { train, test, n_classes })
    }

    pub fn dim(&self) -> usize {
        self.train
            .inputs
            .first()
            .or(self.test.inputs.first())
            .map_or(0, Vector::dim)
    }
}

/// What to load or synthesize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Isotropic Gaussian clusters around centers drawn from
    /// `N(0, separation^2 I)`.
    Blobs {
        n_classes: usize,
        per_class: usize,
        dim: usize,
        noise: f64,
        separation: f64,
    },
    /// Interleaved 2D spiral arms, one per class.
    Spirals {
        n_classes: usize,
        per_class: usize,
        noise: f64,
    },
    /// Whitelisted MNIST classes from IDX files, relabelled `0..k` in
    /// whitelist order.
    MnistSubset {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: Vec<u8>,
        /// Keep the first `cap_per_class` training images of each class.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap_per_class: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_cap_per_class: Option<usize>,
    },
}

impl DatasetSpec {
    /// Resolves relative MNIST paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::MnistSubset {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = self
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

pub fn make_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    match spec {
        DatasetSpec::Blobs {
            n_classes,
            per_class,
            dim,
            noise,
            separation,
        } => {
            check_synthetic(*n_classes, *per_class, *noise)?;
            if *dim == 0 {
                return Err(config_err("dataset.dim", "must be >= 1"));
            }
            let mut rng = Rng::new(seed);
            let centers: Vec<Vec<f64>> = (0..*n_classes)
                .map(|_| (0..*dim).map(|_| separation * rng.standard_normal()).collect())
                .collect();
            let mut samples = Vec::with_capacity(n_classes * per_class);
            for (c, center) in centers.iter().enumerate() {
                for _ in 0..*per_class {
                    let x = center.iter().map(|m| m + noise * rng.standard_normal()).collect();
                    samples.push((Vector::new(x)?, c));
                }
            }
            Ok(split_80_20(samples, *n_classes, &mut rng))
        }
        DatasetSpec::Spirals {
            n_classes,
            per_class,
            noise,
        } => {
            check_synthetic(*n_classes, *per_class, *noise)?;
            let mut rng = Rng::new(seed);
            let mut samples = Vec::with_capacity(n_classes * per_class);
            for c in 0..*n_classes {
                for i in 0..*per_class {
                    let r = (i as f64 + 0.5) / *per_class as f64;
                    let theta = 4.0 * r + 2.0 * std::f64::consts::PI * c as f64 / *n_classes as f64;
                    let x = vec![
                        r * theta.cos() + noise * rng.standard_normal(),
                        r * theta.sin() + noise * rng.standard_normal(),
                    ];
                    samples.push((Vector::new(x)?, c));
                }
            }
            Ok(split_80_20(samples, *n_classes, &mut rng))
        }
        DatasetSpec::MnistSubset {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
            cap_per_class,
            test_cap_per_class,
        } => {
            if classes.len() < 2 {
                return Err(config_err("dataset.classes", "need at least two classes"));
            }
            if let Some(&c) = classes.iter().find(|&&c| c > 9) {
                return Err(config_err("dataset.classes", &format!("{c} is not a digit")));
            }
            let train = load_mnist_split(train_images, train_labels, classes, *cap_per_class)?;
            let test = load_mnist_split(test_images, test_labels, classes, *test_cap_per_class)?;
            Dataset::new(train, test, classes.len())
        }
    }
}

fn config_err(path: &str, message: &str) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn check_synthetic(n_classes: usize, per_class: usize, noise: f64) -> Result<()> {
    if n_classes < 2 {
        return Err(config_err("dataset.n_classes", "must be >= 2"));
    }
    if per_class < 5 {
        return Err(config_err("dataset.per_class", "must be >= 5 for an 80/20 split"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(config_err("dataset.noise", "must be finite and >= 0"));
    }
    Ok(())
}

/// Shuffles, then puts the first 80% into train.
fn split_80_20(mut samples: Vec<(Vector, usize)>, n_classes: usize, rng: &mut Rng) -> Dataset {
    rng.shuffle(&mut samples);
    let n_train = samples.len() * 4 / 5;
    let mut train = Split::default();
    let mut test = Split::default();
    for (i, (x, y)) in samples.into_iter().enumerate() {
        let s = if i < n_train { &mut train } else { &mut test };
        s.inputs.push(x);
        s.labels.push(y);
    }
    Dataset { train, test, n_classes }
}

fn load_mnist_split(images: &Path, labels: &Path, classes: &[u8], cap: Option<usize>) -> Result<Split> {
    let img_bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl_bytes = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let img = parse_idx_images(&img_bytes, &images.display().to_string())?;
    let lbl = parse_idx_labels(&lbl_bytes, &labels.display().to_string())?;
    if img.count != lbl.len() {
        return Err(Error::Format {
            file: labels.display().to_string(),
            offset: 4,
            message: format!("{} labels for {} images", lbl.len(), img.count),
        });
    }
    let mut taken = vec![0usize; classes.len()];
    let mut split = Split::default();
    for (i, &digit) in lbl.iter().enumerate() {
        let Some(class) = classes.iter().position(|&c| c == digit) else {
            continue;
        };
        if cap.is_some_and(|cap| taken[class] >= cap) {
            continue;
        }
        taken[class] += 1;
        split.inputs.push(Vector::from_raw(img.image(i).iter().map(|&b| b as f64 / 255.0).collect()));
        split.labels.push(class);
    }
    Ok(split)
}

/// Decoded IDX image file (`u8` pixels, row-major per image).
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            file: file.to_string(),
            offset: offset as u64,
            message: format!("header ends early ({} bytes)", bytes.len()),
        })
}

/// Big-endian magic `0x00000803`, three big-endian `u32` sizes, raw bytes.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<IdxImages> {
    let magic = read_be_u32(bytes, 0, file)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            file: file.to_string(),
            offset: 0,
            message: format!("magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4, file)? as usize;
    let rows = read_be_u32(bytes, 8, file)? as usize;
    let cols = read_be_u32(bytes, 12, file)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format {
            file: file.to_string(),
            offset: bytes.len().min(expected) as u64,
            message: format!("expected {expected} bytes for {count} images of {rows}x{cols}, found {}", bytes.len()),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Big-endian magic `0x00000801`, one big-endian `u32` count, raw bytes.
pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0, file)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            file: file.to_string(),
            offset: 0,
            message: format!("magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4, file)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Format {
            file: file.to_string(),
            offset: bytes.len().min(expected) as u64,
            message: format!("expected {expected} bytes for {count} labels, found {}", bytes.len()),
        });
    }
    if let Some(pos) = bytes[8..].iter().position(|&b| b > 9) {
        return Err(Error::Format {
            file: file.to_string(),
            offset: (8 + pos) as u64,
            message: format!("label {} is not a digit", bytes[8 + pos]),
        });
    }
    Ok(bytes[8..].to_vec())
}
