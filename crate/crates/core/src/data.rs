//! Clean datasets: seeded Gaussian blobs and IDX (MNIST-format) files.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::prob::ClassLabel;
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One example per row.
    pub features: Array2<f64>,
    pub labels: Vec<ClassLabel>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<ClassLabel>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Parameter("dataset is empty".into()));
        }
        if num_classes < 2 {
            return Err(Error::Parameter("need at least 2 classes".into()));
        }
        if let Some(bad) = labels.iter().find(|l| l.0 >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in &self.labels {
            counts[l.0] += 1;
        }
        counts
    }

    fn select(&self, indices: &[usize], name: String) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub separation: f64,
}

const CENTER_TRIES: usize = 200;
const CENTER_GROW_ROUNDS: usize = 20;
const CENTER_GROWTH: f64 = 1.25;

/// Class centers with pairwise distance at least `separation`.
///
/// Centers are random directions on a sphere of radius `scale * separation / 2`,
/// starting from `scale = 1`. When a full placement fails [`CENTER_TRIES`] times
/// in a row the sphere grows by 25%; after 20 growth rounds the placement gives up.
pub fn blob_centers(num_classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Array2<f64>> {
    let mut rng = seed::rng(seed);
    let mut radius = separation / 2.0;
    let mut centers = Array2::<f64>::zeros((num_classes, dim));
    for _ in 0..CENTER_GROW_ROUNDS {
        'attempt: for _ in 0..CENTER_TRIES {
            for c in 0..num_classes {
                let mut dir: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = dir.dot(&dir).sqrt();
                dir *= radius / norm;
                for prev in 0..c {
                    let d = &centers.row(prev) - &dir;
                    if d.dot(&d).sqrt() < separation {
                        continue 'attempt;
                    }
                }
                centers.row_mut(c).assign(&dir);
            }
            return Ok(centers);
        }
        radius *= CENTER_GROWTH;
    }
    Err(Error::Geometry(format!(
        "{num_classes} centers {separation} apart do not fit in {dim} dimensions"
    )))
}

/// Isotropic Gaussian clusters around [`blob_centers`], `per_class` points each,
/// ordered by class.
pub fn gaussian_blobs(params: BlobParams, seed: u64) -> Result<Dataset> {
    let BlobParams {
        num_classes,
        per_class,
        dim,
        spread,
        separation,
    } = params;
    if num_classes < 2 || per_class < 1 || dim < 2 {
        return Err(Error::Parameter(format!(
            "blobs need K >= 2, per_class >= 1, dim >= 2 (got {num_classes}, {per_class}, {dim})"
        )));
    }
    if !(spread > 0.0 && separation > 0.0) {
        return Err(Error::Parameter("spread and separation must be positive".into()));
    }
    let centers = blob_centers(num_classes, dim, separation, seed::derive(seed, 0))?;
    let mut rng = seed::rng(seed::derive(seed, 1));
    let n = num_classes * per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = i / per_class;
        for (x, c) in row.iter_mut().zip(centers.row(class)) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = c + spread * z;
        }
        labels.push(ClassLabel(class));
    }
    Dataset::new(
        features,
        labels,
        num_classes,
        format!("blobs-k{num_classes}-n{per_class}-d{dim}"),
    )
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated("header"))
}

fn truncated(what: &str) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::UnexpectedEof,
        format!("IDX file truncated in {what}"),
    ))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "{what} file has magic {magic:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

/// Parses IDX image and label byte buffers. Pixels are scaled by 1/255.
pub fn parse_idx(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset> {
    check_magic(images, IDX_IMAGES_MAGIC, "image")?;
    check_magic(labels, IDX_LABELS_MAGIC, "label")?;
    let n_images = read_u32(images, 4)? as usize;
    let rows = read_u32(images, 8)? as usize;
    let cols = read_u32(images, 12)? as usize;
    let n_labels = read_u32(labels, 4)? as usize;
    if n_images != n_labels {
        return Err(Error::Consistency(format!("{n_images} images but {n_labels} labels")));
    }
    let dim = rows * cols;
    let pixels = images
        .get(16..16 + n_images * dim)
        .ok_or_else(|| truncated("image data"))?;
    let label_bytes = labels.get(8..8 + n_labels).ok_or_else(|| truncated("label data"))?;
    let features = Array2::from_shape_fn((n_images, dim), |(i, j)| f64::from(pixels[i * dim + j]) / 255.0);
    let labels: Vec<ClassLabel> = label_bytes.iter().map(|&b| ClassLabel(b as usize)).collect();
    let num_classes = labels.iter().map(|l| l.0 + 1).max().unwrap_or(0).max(2);
    Dataset::new(features, labels, num_classes, name)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    parse_idx(&images, &labels, &name)
}

/// Serializes a dataset of `rows x cols` images back into IDX image and label
/// buffers. Pixels are rounded to the nearest multiple of 1/255.
pub fn to_idx_bytes(ds: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != ds.dim() {
        return Err(Error::shape("idx image size", ds.dim(), rows * cols));
    }
    let n = ds.len() as u32;
    let mut images = Vec::with_capacity(16 + ds.features.len());
    for word in [IDX_IMAGES_MAGIC, n, rows as u32, cols as u32] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    images.extend(ds.features.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for l in &ds.labels {
        let b = u8::try_from(l.0).map_err(|_| Error::Parameter(format!("label {l} exceeds a byte")))?;
        labels.push(b);
    }
    Ok((images, labels))
}

/// Seeded subset of `n` examples in random order. With `stratified`, per-class
/// counts differ by at most one wherever the classes have enough examples.
pub fn subsample(ds: &Dataset, n: usize, seed: u64, stratified: bool) -> Result<Dataset> {
    if n > ds.len() {
        return Err(Error::Parameter(format!(
            "cannot take {n} examples from a dataset of {}",
            ds.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut chosen = if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
        for (i, l) in ds.labels.iter().enumerate() {
            by_class[l.0].push(i);
        }
        for members in &mut by_class {
            members.shuffle(&mut rng);
        }
        // Round-robin over classes in a seeded order until n are taken.
        let mut order: Vec<usize> = (0..ds.num_classes).collect();
        order.shuffle(&mut rng);
        let mut taken = vec![0usize; ds.num_classes];
        let mut chosen = Vec::with_capacity(n);
        while chosen.len() < n {
            for &c in &order {
                if chosen.len() == n {
                    break;
                }
                if taken[c] < by_class[c].len() {
                    chosen.push(by_class[c][taken[c]]);
                    taken[c] += 1;
                }
            }
        }
        chosen
    } else {
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(n);
        all
    };
    chosen.shuffle(&mut rng);
    Ok(ds.select(&chosen, format!("{}-sub{n}", ds.name)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(k: usize, n: usize, seed: u64) -> Dataset {
        gaussian_blobs(
            BlobParams {
                num_classes: k,
                per_class: n,
                dim: 5,
                spread: 1.0,
                separation: 10.0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn blobs_have_requested_sizes() {
        let ds = blobs(3, 100, 1);
        assert_eq!(ds.len(), 300);
        assert_eq!(ds.class_counts(), vec![100, 100, 100]);
        assert_eq!(ds.dim(), 5);
        assert_eq!(ds, blobs(3, 100, 1));
        assert_ne!(ds, blobs(3, 100, 2));
    }

    #[test]
    fn centers_respect_separation() {
        for (k, dim) in [(10, 20), (10, 2), (4, 3)] {
            let c = blob_centers(k, dim, 7.5, 9).unwrap();
            for i in 0..k {
                for j in 0..i {
                    let d = &c.row(i) - &c.row(j);
                    assert!(d.dot(&d).sqrt() >= 7.5);
                }
            }
        }
    }

    #[test]
    fn impossible_geometry_errors() {
        let err = blob_centers(2000, 2, 1.0, 0).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn blob_parameters_validated() {
        let mut p = BlobParams {
            num_classes: 1,
            per_class: 3,
            dim: 2,
            spread: 1.0,
            separation: 1.0,
        };
        assert!(gaussian_blobs(p, 0).is_err());
        p.num_classes = 2;
        p.dim = 1;
        assert!(gaussian_blobs(p, 0).is_err());
        p.dim = 2;
        p.spread = 0.0;
        assert!(gaussian_blobs(p, 0).is_err());
    }

    // Two 2x3 images and their labels, spelled out byte by byte.
    const IMAGES: [u8; 28] = [
        0x00, 0x00, 0x08, 0x03, // magic
        0x00, 0x00, 0x00, 0x02, // count
        0x00, 0x00, 0x00, 0x02, // rows
        0x00, 0x00, 0x00, 0x03, // cols
        0, 51, 102, 153, 204, 255, //
        255, 0, 255, 0, 17, 34,
    ];
    const LABELS: [u8; 10] = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 2];

    #[test]
    fn parses_fixture() {
        let ds = parse_idx(&IMAGES, &LABELS, "fixture").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 6);
        assert_eq!(ds.num_classes, 8);
        assert_eq!(ds.labels, vec![ClassLabel(7), ClassLabel(2)]);
        let expected = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for (got, want) in ds.features.row(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(ds.features[[1, 4]], 17.0 / 255.0);
    }

    #[test]
    fn idx_errors() {
        // labels file passed where images expected, and vice versa
        assert!(matches!(parse_idx(&LABELS, &LABELS, "x"), Err(Error::Format(_))));
        let mut wrong = LABELS;
        wrong[3] = 0x03;
        assert!(matches!(parse_idx(&IMAGES, &wrong, "x"), Err(Error::Format(_))));

        let mut one_label = LABELS;
        one_label[7] = 1;
        assert!(matches!(
            parse_idx(&IMAGES, &one_label, "x"),
            Err(Error::Consistency(_))
        ));

        assert!(matches!(parse_idx(&IMAGES[..20], &LABELS, "x"), Err(Error::Io(_))));
        assert!(matches!(parse_idx(&IMAGES, &LABELS[..9], "x"), Err(Error::Io(_))));
        assert!(matches!(parse_idx(&IMAGES[..2], &LABELS, "x"), Err(Error::Io(_))));
    }

    #[test]
    fn idx_round_trip() {
        let ds = parse_idx(&IMAGES, &LABELS, "fixture").unwrap();
        let (img, lab) = to_idx_bytes(&ds, 2, 3).unwrap();
        assert_eq!(img, IMAGES);
        assert_eq!(lab, LABELS);
        assert_eq!(parse_idx(&img, &lab, "fixture").unwrap(), ds);
    }

    #[test]
    fn load_idx_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs-idx3-ubyte");
        let lab = dir.path().join("labs-idx1-ubyte");
        fs::write(&img, IMAGES).unwrap();
        fs::write(&lab, LABELS).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(matches!(load_idx(dir.path().join("missing"), &lab), Err(Error::Io(_))));
    }

    #[test]
    fn subsample_behaviour() {
        let ds = blobs(4, 25, 3);
        let full = subsample(&ds, 100, 5, false).unwrap();
        assert_eq!(full.len(), 100);
        assert_eq!(full.class_counts(), ds.class_counts());
        assert_ne!(full.labels, ds.labels);

        let strat = subsample(&ds, 30, 5, true).unwrap();
        let counts = strat.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
        assert_eq!(strat, subsample(&ds, 30, 5, true).unwrap());
        assert!(subsample(&ds, 101, 5, false).is_err());
    }
}
