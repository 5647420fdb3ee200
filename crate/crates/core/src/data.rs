//! Labeled synthetic datasets and their file format.
//!
//! Points are generated in raw coordinates, then normalized per dimension
//! to zero mean and unit standard deviation. Rows are stored class-major:
//! all of class 0, then all of class 1, and so on.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::DenseArray;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

const MAGIC: &[u8; 8] = b"GAFDSET\0";
pub const DATASET_VERSION: u32 = 1;

/// Distance of each Gaussian center from the origin, in units of the
/// per-blob standard deviation.
pub const GAUSSIAN_RADIUS: f64 = 6.0;
pub const MOONS_NOISE: f64 = 0.1;
pub const SPIRAL_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Gaussians,
    Moons,
    Spirals,
    Checkerboard,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussians" => Ok(Self::Gaussians),
            "moons" => Ok(Self::Moons),
            "spirals" => Ok(Self::Spirals),
            "checkerboard" => Ok(Self::Checkerboard),
            other => Err(Error::invalid(format!("unknown dataset kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Gaussians,
            classes: 3,
            per_class: 2000,
            dim: 2,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.per_class == 0 {
            return Err(Error::invalid("per_class must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        let n = self.classes;
        match self.kind {
            DatasetKind::Moons if n != 2 => Err(Error::invalid("moons needs exactly 2 classes")),
            DatasetKind::Checkerboard if !(2..=16).contains(&n) => {
                Err(Error::invalid("checkerboard needs 2 to 16 classes"))
            }
            _ if n < 2 => Err(Error::invalid(format!("{:?} needs at least 2 classes", self.kind))),
            DatasetKind::Gaussians => Ok(()),
            _ if self.dim != 2 => Err(Error::invalid(format!("{:?} is two-dimensional", self.kind))),
            _ => Ok(()),
        }
    }
}

/// Per-dimension affine normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    fn fit(raw: &[f64], d: usize) -> Self {
        let n = (raw.len() / d) as f64;
        let mut mean = vec![0.0; d];
        for row in raw.chunks(d) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in raw.chunks(d) {
            for (e, v) in row.iter().enumerate() {
                var[e] += (v - mean[e]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(1e-12)).collect();
        Self { mean, std }
    }

    fn apply(&self, raw: &[f64]) -> Vec<f32> {
        let d = self.mean.len();
        raw.iter()
            .enumerate()
            .map(|(i, v)| ((v - self.mean[i % d]) / self.std[i % d]) as f32)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub spec: DatasetSpec,
    pub points: DenseArray<f32>,
    pub labels: Vec<usize>,
    pub stats: NormStats,
}

fn raw_point(spec: &DatasetSpec, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let n = spec.classes as f64;
    match spec.kind {
        DatasetKind::Gaussians => {
            let mut p: Vec<f64> = (0..spec.dim).map(|_| normal(rng)).collect();
            if spec.dim == 1 {
                p[0] += GAUSSIAN_RADIUS * (class as f64 - (n - 1.0) / 2.0);
            } else {
                let a = std::f64::consts::TAU * class as f64 / n;
                p[0] += GAUSSIAN_RADIUS * a.cos();
                p[1] += GAUSSIAN_RADIUS * a.sin();
            }
            p
        }
        DatasetKind::Moons => {
            let th = rng.random::<f64>() * std::f64::consts::PI;
            let (x, y) = if class == 0 {
                (th.cos(), th.sin())
            } else {
                (1.0 - th.cos(), 0.5 - th.sin())
            };
            vec![x + MOONS_NOISE * normal(rng), y + MOONS_NOISE * normal(rng)]
        }
        DatasetKind::Spirals => {
            let s: f64 = rng.random();
            let r = 0.1 + s;
            let th = 3.0 * std::f64::consts::PI * s + std::f64::consts::TAU * class as f64 / n;
            vec![
                r * th.cos() + SPIRAL_NOISE * normal(rng),
                r * th.sin() + SPIRAL_NOISE * normal(rng),
            ]
        }
        DatasetKind::Checkerboard => {
            let cells: Vec<(usize, usize)> = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .filter(|(i, j)| (i + j) % spec.classes == class)
                .collect();
            let (i, j) = cells[rng.random_range(0..cells.len())];
            vec![
                i as f64 - 2.0 + rng.random::<f64>(),
                j as f64 - 2.0 + rng.random::<f64>(),
            ]
        }
    }
}

fn generate_raw(spec: &DatasetSpec, seed: u64) -> Vec<f64> {
    let mut raw = Vec::with_capacity(spec.classes * spec.per_class * spec.dim);
    for c in 0..spec.classes {
        for i in 0..spec.per_class {
            let mut s = rng::stream(seed, Purpose::Dataset, c as u64, i as u64);
            raw.extend(raw_point(spec, c, &mut s));
        }
    }
    raw
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let raw = generate_raw(spec, spec.seed);
    let stats = NormStats::fit(&raw, spec.dim);
    LabeledDataset::assemble(spec.clone(), stats.apply(&raw), stats)
}

impl LabeledDataset {
    fn assemble(spec: DatasetSpec, points: Vec<f32>, stats: NormStats) -> Result<Self> {
        let rows = spec.classes * spec.per_class;
        let labels = (0..rows).map(|r| r / spec.per_class).collect();
        Ok(Self {
            points: DenseArray::matrix(rows, spec.dim, points)?,
            labels,
            stats,
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.classes
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// A fresh draw from the same distribution, normalized with this set's
    /// statistics.
    pub fn heldout(&self, seed: u64) -> Result<Self> {
        let spec = DatasetSpec {
            seed,
            ..self.spec.clone()
        };
        let raw = generate_raw(&spec, seed);
        Self::assemble(spec, self.stats.apply(&raw), self.stats.clone())
    }

    pub fn class_points(&self, c: usize) -> Result<DenseArray<f32>> {
        if c >= self.spec.classes {
            return Err(Error::ClassOutOfRange {
                class: c,
                classes: self.spec.classes,
            });
        }
        let m = self.spec.per_class;
        let rows: Vec<usize> = (c * m..(c + 1) * m).collect();
        self.points.select_rows(&rows)
    }

    pub fn normalize(&self, raw: &DenseArray<f32>) -> Result<DenseArray<f32>> {
        let d = self.dim();
        let data: Vec<f64> = raw.data().iter().map(|&v| v as f64).collect();
        if !data.len().is_multiple_of(d) {
            return Err(Error::shape("normalize", "row length differs from dataset"));
        }
        DenseArray::new(raw.shape().to_vec(), self.stats.apply(&data))
    }

    pub fn denormalize(&self, x: &DenseArray<f32>) -> Result<DenseArray<f32>> {
        let d = self.dim();
        if !x.len().is_multiple_of(d) {
            return Err(Error::shape("denormalize", "row length differs from dataset"));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v as f64 * self.stats.std[i % d] + self.stats.mean[i % d]) as f32)
            .collect();
        DenseArray::new(x.shape().to_vec(), data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&FileHeader {
            kind: self.spec.kind,
            classes: self.spec.classes,
            per_class: self.spec.per_class,
            dim: self.spec.dim,
            seed: self.spec.seed,
            stats: self.stats.clone(),
        })
        .map_err(|e| Error::Format {
            section: "header",
            detail: e.to_string(),
        })?;
        let mut out = Vec::with_capacity(24 + header.len() + 4 * (self.points.len() + self.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.points.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Format {
                section: "magic",
                detail: "not a dataset file".into(),
            });
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(r.take(8, "header length")?.try_into().unwrap()) as usize;
        let header: FileHeader = serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| Error::Format {
            section: "header",
            detail: e.to_string(),
        })?;
        let spec = DatasetSpec {
            kind: header.kind,
            classes: header.classes,
            per_class: header.per_class,
            dim: header.dim,
            seed: header.seed,
        };
        spec.validate().map_err(|e| Error::Format {
            section: "header",
            detail: e.to_string(),
        })?;
        if header.stats.mean.len() != spec.dim || header.stats.std.len() != spec.dim {
            return Err(Error::Format {
                section: "header",
                detail: "normalization stats do not match dim".into(),
            });
        }
        let rows = spec.classes * spec.per_class;
        let points: Vec<f32> = r
            .take(4 * rows * spec.dim, "points")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels: Vec<usize> = r
            .take(4 * rows, "labels")?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        if r.pos != bytes.len() {
            return Err(Error::Format {
                section: "labels",
                detail: "trailing bytes".into(),
            });
        }
        let ds = Self::assemble(spec, points, header.stats).map_err(|e| Error::Format {
            section: "points",
            detail: e.to_string(),
        })?;
        if ds.labels != labels {
            return Err(Error::Format {
                section: "labels",
                detail: "labels are not class-major and balanced".into(),
            });
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    kind: DatasetKind,
    classes: usize,
    per_class: usize,
    dim: usize,
    seed: u64,
    stats: NormStats,
}

pub(crate) struct Reader<'b> {
    pub bytes: &'b [u8],
    pub pos: usize,
}

impl<'b> Reader<'b> {
    pub fn take(&mut self, n: usize, section: &'static str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                section,
                detail: format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: DatasetKind, classes: usize, per_class: usize) -> DatasetSpec {
        DatasetSpec {
            kind,
            classes,
            per_class,
            dim: 2,
            seed: 3,
        }
    }

    #[test]
    fn gaussians_balanced() {
        let ds = make_dataset(&spec(DatasetKind::Gaussians, 3, 1000)).unwrap();
        assert_eq!(ds.len(), 3000);
        for c in 0..3 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 1000);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [
            DatasetKind::Gaussians,
            DatasetKind::Moons,
            DatasetKind::Spirals,
            DatasetKind::Checkerboard,
        ] {
            let a = make_dataset(&spec(kind, 2, 50)).unwrap();
            let b = make_dataset(&spec(kind, 2, 50)).unwrap();
            assert!(a.points.bitwise_eq(&b.points));
        }
    }

    #[test]
    fn class_count_rules() {
        assert!(make_dataset(&spec(DatasetKind::Moons, 3, 10)).is_err());
        assert!(make_dataset(&spec(DatasetKind::Gaussians, 1, 10)).is_err());
        assert!(make_dataset(&spec(DatasetKind::Checkerboard, 17, 10)).is_err());
        assert!(make_dataset(&spec(DatasetKind::Spirals, 4, 10)).is_ok());
    }

    #[test]
    fn normalized_moments() {
        let ds = make_dataset(&spec(DatasetKind::Spirals, 3, 500)).unwrap();
        for e in 0..2 {
            let col: Vec<f64> = (0..ds.len()).map(|r| ds.points.row(r)[e] as f64).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "std {}", var.sqrt());
        }
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let ds = make_dataset(&spec(DatasetKind::Checkerboard, 4, 100)).unwrap();
        let raw = ds.denormalize(&ds.points).unwrap();
        let back = ds.normalize(&raw).unwrap();
        assert!(back.max_abs_diff(&ds.points) < 1e-6);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let ds = make_dataset(&spec(DatasetKind::Moons, 2, 20)).unwrap();
        let bytes = ds.to_bytes().unwrap();
        let back = LabeledDataset::from_bytes(&bytes).unwrap();
        assert!(back.points.bitwise_eq(&ds.points));
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let cut = &bytes[..bytes.len() - 10];
        match LabeledDataset::from_bytes(cut) {
            Err(Error::Format { section, .. }) => assert_eq!(section, "labels"),
            other => panic!("unexpected {other:?}"),
        }
        match LabeledDataset::from_bytes(&bytes[..30]) {
            Err(Error::Format { section, .. }) => assert_eq!(section, "header"),
            other => panic!("unexpected {other:?}"),
        }
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(matches!(
            LabeledDataset::from_bytes(&wrong),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn heldout_uses_training_stats() {
        let ds = make_dataset(&spec(DatasetKind::Gaussians, 3, 200)).unwrap();
        let ho = ds.heldout(99).unwrap();
        assert_eq!(ho.stats, ds.stats);
        assert!(!ho.points.bitwise_eq(&ds.points));
    }
}
