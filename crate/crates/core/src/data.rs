//! Labelled datasets: synthetic generators (FCUBE, Gaussian blobs), readers
//! for IDX and LIBSVM files, and a small binary container for export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FedError, Result};
use crate::matrix::Matrix;
use crate::rng::{self, tag};

/// Dense features, integer labels, and optional per-sample group ids
/// (e.g. writer ids or FCUBE octants).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
    group_ids: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(FedError::Data("n_classes must be positive".into()));
        }
        if features.rows() != labels.len() {
            return Err(FedError::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(FedError::Data(format!(
                "label {y} of sample {i} outside [0, {n_classes})"
            )));
        }
        if let Some(i) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(FedError::Data(format!(
                "non-finite feature in sample {}",
                i / features.cols().max(1)
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            n_classes,
            group_ids: None,
        })
    }

    pub fn with_groups(mut self, group_ids: Vec<usize>) -> Result<Self> {
        if group_ids.len() != self.labels.len() {
            return Err(FedError::Shape(format!(
                "{} group ids for {} samples",
                group_ids.len(),
                self.labels.len()
            )));
        }
        self.group_ids = Some(group_ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn group_ids(&self) -> Option<&[usize]> {
        self.group_ids.as_deref()
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// The listed samples, in order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            group_ids: self
                .group_ids
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
        }
    }
}

/// FCUBE generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcubeSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for FcubeSpec {
    fn default() -> Self {
        FcubeSpec {
            n_train: 4000,
            n_test: 1000,
            seed: 0,
        }
    }
}

/// Generated FCUBE data. Both datasets carry their octant ids as group ids.
#[derive(Debug, Clone)]
pub struct Fcube {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub octant_ids: Vec<usize>,
}

const FCUBE_PLANE_EPS: f64 = 1e-9;

/// Class of an FCUBE point: 0 above the plane `x1 = 0`, 1 below.
pub fn fcube_label(point: &[f64]) -> usize {
    if point[0] > 0.0 {
        0
    } else {
        1
    }
}

/// Octant as the 3-bit pattern `(x1>0, x2>0, x3>0)`, most significant first.
pub fn fcube_octant(point: &[f64]) -> usize {
    point
        .iter()
        .take(3)
        .fold(0, |acc, &v| (acc << 1) | usize::from(v > 0.0))
}

fn fcube_sample(n: usize, seed: u64, stream_id: u64) -> Result<LabeledDataset> {
    let mut rng = rng::stream(seed, &[tag::FCUBE, stream_id]);
    let mut data = Vec::with_capacity(n * 3);
    let mut labels = Vec::with_capacity(n);
    let mut octants = Vec::with_capacity(n);
    while labels.len() < n {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        if p[0].abs() < FCUBE_PLANE_EPS {
            continue;
        }
        labels.push(fcube_label(&p));
        octants.push(fcube_octant(&p));
        data.extend_from_slice(&p);
    }
    LabeledDataset::new(Matrix::from_vec(n, 3, data)?, labels, 2)?.with_groups(octants)
}

/// Uniform points in `[-1, 1]^3`, labelled by the sign of `x1`.
pub fn fcube_generate(spec: &FcubeSpec) -> Result<Fcube> {
    if spec.n_train < 8 || spec.n_test < 8 {
        return Err(FedError::Config(format!(
            "FCUBE needs at least 8 train and test points, got {} / {}",
            spec.n_train, spec.n_test
        )));
    }
    let train = fcube_sample(spec.n_train, spec.seed, 0)?;
    let test = fcube_sample(spec.n_test, spec.seed, 1)?;
    let octant_ids = train.group_ids().expect("set by sampler").to_vec();
    Ok(Fcube {
        train,
        test,
        octant_ids,
    })
}

/// Unit-norm center of blob class `k` in `dim` dimensions. Independent of any
/// dataset seed.
pub fn blob_center(k: usize, dim: usize) -> Vec<f64> {
    let mut rng = rng::stream(0, &[tag::CENTERS, k as u64, dim as u64]);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Isotropic Gaussian blobs around fixed unit-norm class centers, shuffled.
pub fn blobs_generate(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes == 0 || n_per_class == 0 || dim == 0 {
        return Err(FedError::Config(
            "blobs need positive class count, class size, and dimension".into(),
        ));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(FedError::Config(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = rng::stream(seed, &[tag::BLOBS]);
    let n = n_classes * n_per_class;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for k in 0..n_classes {
        let center = blob_center(k, dim);
        for _ in 0..n_per_class {
            let x = center
                .iter()
                .map(|&c| {
                    let z: f64 = rng.sample(StandardNormal);
                    c + spread * z
                })
                .collect();
            rows.push((x, k));
        }
    }
    rows.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (x, y) in rows {
        data.extend(x);
        labels.push(y);
    }
    LabeledDataset::new(Matrix::from_vec(n, dim, data)?, labels, n_classes)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| FedError::io(path, e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let mut slice = bytes.get(offset..offset + 4).ok_or_else(|| FedError::BinaryFormat {
        offset: offset as u64,
        msg: format!("truncated header while reading {what}"),
    })?;
    Ok(slice.read_u32::<BigEndian>().expect("4 bytes available"))
}

/// Reads an IDX image/label file pair (the MNIST distribution format).
pub fn read_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = read_all(images_path.as_ref())?;
    let labels = read_all(labels_path.as_ref())?;

    let magic = be_u32(&images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(FedError::BinaryFormat {
            offset: 0,
            msg: format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(&images, 4, "image count")? as usize;
    let rows = be_u32(&images, 8, "row count")? as usize;
    let cols = be_u32(&images, 12, "column count")? as usize;
    let d = rows * cols;
    let payload = &images[16..];
    if payload.len() < n * d {
        return Err(FedError::BinaryFormat {
            offset: (16 + payload.len()) as u64,
            msg: format!("image payload truncated: need {} bytes, found {}", n * d, payload.len()),
        });
    }

    let magic = be_u32(&labels, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(FedError::BinaryFormat {
            offset: 0,
            msg: format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = be_u32(&labels, 4, "label count")? as usize;
    if n_labels != n {
        return Err(FedError::BinaryFormat {
            offset: 4,
            msg: format!("label file holds {n_labels} items but image file holds {n}"),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n {
        return Err(FedError::BinaryFormat {
            offset: (8 + label_bytes.len()) as u64,
            msg: format!("label payload truncated: need {n} bytes, found {}", label_bytes.len()),
        });
    }
    let mut ys = Vec::with_capacity(n);
    for (i, &b) in label_bytes[..n].iter().enumerate() {
        if b >= 10 {
            return Err(FedError::BinaryFormat {
                offset: (8 + i) as u64,
                msg: format!("label {b} outside [0, 10)"),
            });
        }
        ys.push(b as usize);
    }

    let data = payload[..n * d].iter().map(|&b| b as f64 / 255.0).collect();
    LabeledDataset::new(Matrix::from_vec(n, d, data)?, ys, 10)
}

/// Writes a dataset as an IDX pair, quantizing features (clamped to
/// `[0, 1]`) to bytes. `rows * cols` must equal the feature width.
pub fn write_idx(
    ds: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != ds.n_features() {
        return Err(FedError::Shape(format!(
            "{rows}x{cols} images cannot hold {} features",
            ds.n_features()
        )));
    }
    if ds.labels().iter().any(|&y| y > u8::MAX as usize) {
        return Err(FedError::Data("IDX labels must fit in one byte".into()));
    }
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let write = |path: &Path, body: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
        let mut w = BufWriter::new(File::create(path).map_err(|e| FedError::io(path, e))?);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| FedError::io(path, e))
    };
    write(ip, &|w| {
        w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
        w.write_u32::<BigEndian>(ds.len() as u32)?;
        w.write_u32::<BigEndian>(rows as u32)?;
        w.write_u32::<BigEndian>(cols as u32)?;
        for &v in ds.features().as_slice() {
            w.write_u8((v.clamp(0.0, 1.0) * 255.0).round() as u8)?;
        }
        Ok(())
    })?;
    write(lp, &|w| {
        w.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
        w.write_u32::<BigEndian>(ds.len() as u32)?;
        for &y in ds.labels() {
            w.write_u8(y as u8)?;
        }
        Ok(())
    })
}

/// Reads LIBSVM text (`label idx:val ...`, 1-based indices) into a dense
/// dataset, remapping raw integer labels through `label_map`.
pub fn read_libsvm(
    path: impl AsRef<Path>,
    n_features: usize,
    n_classes: usize,
    label_map: &BTreeMap<i64, usize>,
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FedError::io(path, e))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FedError::io(path, e))?;
        let line_no = lineno + 1;
        let fail = |msg: String| FedError::TextFormat { line: line_no, msg };
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let raw: i64 = label_tok
            .parse::<i64>()
            .ok()
            .or_else(|| {
                label_tok
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && v.is_finite())
                    .map(|v| v as i64)
            })
            .ok_or_else(|| fail(format!("malformed label {label_tok:?}")))?;
        let label = *label_map
            .get(&raw)
            .ok_or_else(|| fail(format!("label {raw} has no mapping")))?;
        if label >= n_classes {
            return Err(fail(format!("label {raw} maps to {label}, outside [0, {n_classes})")));
        }
        let mut row = vec![0.0; n_features];
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| fail(format!("malformed token {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| fail(format!("malformed index in {tok:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| fail(format!("malformed value in {tok:?}")))?;
            if idx == 0 || idx > n_features {
                return Err(fail(format!("index {idx} outside [1, {n_features}]")));
            }
            if !val.is_finite() {
                return Err(fail(format!("non-finite value in {tok:?}")));
            }
            row[idx - 1] = val;
        }
        data.extend(row);
        labels.push(label);
    }
    let n = labels.len();
    LabeledDataset::new(Matrix::from_vec(n, n_features, data)?, labels, n_classes)
}

/// Shuffled split; the test side receives `floor(n * test_fraction)` samples.
pub fn split_train_test(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(FedError::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = ds.len();
    let n_test = (n as f64 * test_fraction).floor() as usize;
    if n_test == 0 || n_test == n {
        return Err(FedError::Config(format!(
            "test fraction {test_fraction} of {n} samples leaves an empty side"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let (test, train) = perm.split_at(n_test);
    Ok((ds.subset(train), ds.subset(test)))
}

/// Writes the binary container: `n, d, n_classes` as little-endian u64,
/// row-major f64 features, then u32 labels.
pub fn write_container(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| FedError::io(path, e))?);
    let body = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_u64::<LittleEndian>(ds.len() as u64)?;
        w.write_u64::<LittleEndian>(ds.n_features() as u64)?;
        w.write_u64::<LittleEndian>(ds.n_classes() as u64)?;
        for &v in ds.features().as_slice() {
            w.write_f64::<LittleEndian>(v)?;
        }
        for &y in ds.labels() {
            w.write_u32::<LittleEndian>(y as u32)?;
        }
        w.flush()
    };
    body(&mut w).map_err(|e| FedError::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let bytes = read_all(path.as_ref())?;
    let mut cur = std::io::Cursor::new(&bytes);
    let truncated = |cur: &std::io::Cursor<&Vec<u8>>| FedError::BinaryFormat {
        offset: cur.position(),
        msg: "container truncated".into(),
    };
    let mut header = [0u64; 3];
    for h in header.iter_mut() {
        *h = cur.read_u64::<LittleEndian>().map_err(|_| truncated(&cur))?;
    }
    let [n, d, k] = header.map(|v| v as usize);
    let expected = 24 + n * d * 8 + n * 4;
    if bytes.len() != expected {
        return Err(FedError::BinaryFormat {
            offset: bytes.len().min(expected) as u64,
            msg: format!("container holds {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(cur.read_f64::<LittleEndian>().map_err(|_| truncated(&cur))?);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(cur.read_u32::<LittleEndian>().map_err(|_| truncated(&cur))? as usize);
    }
    LabeledDataset::new(Matrix::from_vec(n, d, data)?, labels, k)
}
