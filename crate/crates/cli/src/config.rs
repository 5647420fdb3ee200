//! Experiment configuration: one JSON document, every section optional.

use std::path::{Path, PathBuf};

use gaf_core::data::DatasetSpec;
use gaf_core::metrics::EvalSettings;
use gaf_core::sampler::Solver;
use gaf_core::transport::SampleSettings;
use gaf_core::{GafConfig, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub steps: usize,
    pub schedule: Schedule,
    pub t_eps: f64,
    pub solver: Solver,
    /// Samples generated per class by `sample`.
    pub count: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        let s = SampleSettings::default();
        Self {
            steps: s.steps,
            schedule: s.schedule,
            t_eps: s.t_eps,
            solver: s.solver,
            count: 2000,
        }
    }
}

impl SampleSection {
    pub fn settings(&self) -> SampleSettings {
        SampleSettings {
            steps: self.steps,
            schedule: self.schedule,
            t_eps: self.t_eps,
            solver: self.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSection {
    /// Class pair for `interp`.
    pub pair: [usize; 2],
    /// Closed class cycle for `cycle`, first entry repeated at the end.
    pub cycle: Vec<usize>,
    /// Frames per interpolation edge, endpoints included.
    pub alpha_steps: usize,
    /// Shared latents decoded by `interp`, `cycle` and `bary`.
    pub latents: usize,
    pub bary_classes: [usize; 3],
    pub resolution: usize,
    /// Also run the chained encode-decode cycle in `cycle`.
    pub chained: bool,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            pair: [0, 1],
            cycle: vec![0, 1, 2, 0],
            alpha_steps: 10,
            latents: 200,
            bary_classes: [0, 1, 2],
            resolution: 7,
            chained: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub samples: usize,
    pub projections: usize,
    pub diagnostic_samples: usize,
    /// Step counts for `steps-sweep`.
    pub sweep_steps: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalSettings::default();
        Self {
            samples: e.samples,
            projections: e.projections,
            diagnostic_samples: e.diagnostic_samples,
            sweep_steps: vec![2, 5, 10, 20, 40, 80, 250],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every section seed is derived from it.
    pub seed: u64,
    pub model: GafConfig,
    pub train: TrainConfig,
    pub data: DatasetSpec,
    pub sample: SampleSection,
    pub transport: TransportSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

/// Seeds derived from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Seeds {
    pub root: u64,
    pub model: u64,
    pub train: u64,
    pub data: u64,
    pub heldout: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn from_root(root: u64) -> Self {
        Self {
            root,
            model: root,
            train: root,
            data: root,
            heldout: root.wrapping_add(1),
            eval: root.wrapping_add(2),
        }
    }
}

impl ExperimentConfig {
    /// Reads the file (if any), applies `--set` overrides in order and
    /// rejects unknown keys.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_root(self.seed)
    }

    /// Pushes the root seed and shared sizes into every section and checks
    /// the result.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let s = self.seeds();
        self.model.seed = s.model;
        self.train.seed = s.train;
        self.data.seed = s.data;
        self.train.dataset = serde_json::to_value(self.data.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        if self.model.num_classes != self.data.classes {
            return Err(CliError::Config(format!(
                "model.num_classes = {} but data.classes = {}",
                self.model.num_classes, self.data.classes
            )));
        }
        if self.model.data_dim != self.data.dim {
            return Err(CliError::Config(format!(
                "model.data_dim = {} but data.dim = {}",
                self.model.data_dim, self.data.dim
            )));
        }
        let check = |r: gaf_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        check(self.model.validate())?;
        check(self.train.validate())?;
        check(self.data.validate())?;
        check(self.sample.settings().grid(gaf_core::Direction::Forward).map(|_| ()))?;
        if self.sample.count == 0 || self.transport.latents == 0 || self.eval.samples == 0 {
            return Err(CliError::Config("sample counts must be positive".into()));
        }
        let n = self.model.num_classes;
        let classes = self
            .transport
            .pair
            .iter()
            .chain(&self.transport.cycle)
            .chain(&self.transport.bary_classes);
        if let Some(c) = classes.into_iter().find(|&&c| c >= n) {
            return Err(CliError::Config(format!("transport class {c} out of range for {n} classes")));
        }
        Ok(self)
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            samples: self.eval.samples,
            projections: self.eval.projections,
            diagnostic_samples: self.eval.diagnostic_samples,
            seed: self.seeds().eval,
        }
    }
}

/// `section.key=value`; the value is parsed as JSON, falling back to a
/// plain string.
fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override key {path:?} is malformed")));
    }
    let mut cur = doc;
    for k in &keys[..keys.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {path:?} descends into a non-object")))?;
        cur = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    cur.as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override {path:?} descends into a non-object")))?
        .insert(keys[keys.len() - 1].to_owned(), value);
    Ok(())
}
