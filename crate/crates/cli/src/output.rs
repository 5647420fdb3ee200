//! Files written by the commands: CSV, JSON, portable pixmaps and the
//! manifest that ties them to a config.

use std::fs;
use std::path::{Path, PathBuf};

use gaf_core::DenseArray;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Seeds};
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects files written into one output directory.
pub struct OutDir {
    pub root: PathBuf,
    written: Vec<(String, String)>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push((name.to_owned(), sha256_hex(bytes)));
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far. The config
    /// digest ignores the output directory.
    pub fn finish(mut self, command: &str, config: &ExperimentConfig, inputs: Vec<Input>) -> Result<(), CliError> {
        let mut digestible = config.clone();
        digestible.output.dir = None;
        let canonical = serde_json::to_vec(&digestible).map_err(|e| CliError::Runtime(e.to_string()))?;
        let manifest = Manifest {
            command: command.to_owned(),
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_owned(),
            config_digest: sha256_hex(&canonical),
            seeds: config.seeds(),
            config: config.clone(),
            inputs,
            outputs: std::mem::take(&mut self.written)
                .into_iter()
                .map(|(file, sha256)| FileDigest { file, sha256 })
                .collect(),
        };
        self.write_json("manifest.json", &manifest).map(|_| ())
    }
}

#[derive(Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Input {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl Input {
    pub fn file(role: &str, path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        Ok(Self {
            role: role.to_owned(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    code_version: String,
    config_digest: String,
    seeds: Seeds,
    config: ExperimentConfig,
    inputs: Vec<Input>,
    outputs: Vec<FileDigest>,
}

/// CSV of points with a leading label column.
pub fn points_csv(header: &str, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for (label, values) in rows {
        out.push_str(&label);
        for v in values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn rows_f64(a: &DenseArray<f32>) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..a.rows()).map(|r| a.row(r).iter().map(|&v| v as f64).collect())
}

const PALETTE: [[u8; 3]; 8] = [
    [228, 26, 28],
    [55, 126, 184],
    [77, 175, 74],
    [152, 78, 163],
    [255, 127, 0],
    [166, 86, 40],
    [247, 129, 191],
    [80, 80, 80],
];

pub fn class_color(c: usize) -> [u8; 3] {
    PALETTE[c % PALETTE.len()]
}

/// Blend between two colors, `s` in `[0, 1]`.
pub fn mix(a: [u8; 3], b: [u8; 3], s: f64) -> [u8; 3] {
    let f = |x: u8, y: u8| ((1.0 - s) * x as f64 + s * y as f64).round().clamp(0.0, 255.0) as u8;
    [f(a[0], b[0]), f(a[1], b[1]), f(a[2], b[2])]
}

/// Binary P6 scatter plot of the first two coordinates on a white
/// background. Bounds cover every point with a small margin.
pub fn scatter_ppm(points: &[([f64; 2], [u8; 3])], size: usize) -> Vec<u8> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (p, _) in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if points.is_empty() {
        lo = [-1.0; 2];
        hi = [1.0; 2];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.1;
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let mut img = vec![255u8; size * size * 3];
    let last = (size - 1) as f64;
    for (p, color) in points {
        let px = ((p[0] - center[0]) / span + 0.5) * last;
        let py = (0.5 - (p[1] - center[1]) / span) * last;
        let (cx, cy) = (px.round() as i64, py.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                    let o = (y as usize * size + x as usize) * 3;
                    img[o..o + 3].copy_from_slice(color);
                }
            }
        }
    }
    let mut out = format!("P6\n{size} {size}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    out
}
