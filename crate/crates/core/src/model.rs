//! Trunk, twin heads and velocity queries.
//!
//! The trunk maps `(x_t, t, class)` to features `f_t`. One `J` head and one
//! `K` head per class read those features and produce residuals that are
//! added to the anchored terms:
//!
//! ```text
//! J = (1 - t) x_t + H_J(f_t)
//! K = t x_t + H_K[c](f_t)
//! v = K - J
//! ```
//!
//! Parameters live in one ordered list. Class-specific parameters (a class
//! embedding row and a `K` head) come last, grouped per class, so adding a
//! class only appends.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::diffcore::{DenseArray, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, Purpose};

/// Rows per velocity work chunk.
const VELOCITY_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Linear to `head_width`, gelu, linear to `d`.
    #[default]
    Mlp,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GafConfig {
    pub data_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub time_embed: usize,
    pub num_classes: usize,
    /// Hidden width of each head; twice the trunk width when unset.
    pub head_width: Option<usize>,
    pub head: HeadKind,
    /// Adds the class embedding to the trunk's conditioning signal.
    pub class_conditioning: bool,
    /// Zero the final layer of every head.
    pub zero_init_heads: bool,
    pub seed: u64,
}

impl Default for GafConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            width: 256,
            depth: 4,
            time_embed: 64,
            num_classes: 3,
            head_width: None,
            head: HeadKind::Mlp,
            class_conditioning: true,
            zero_init_heads: true,
            seed: 0,
        }
    }
}

impl GafConfig {
    pub fn head_hidden(&self) -> usize {
        self.head_width.unwrap_or(2 * self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.data_dim >= 1, "data_dim must be at least 1"),
            (self.num_classes >= 1, "num_classes must be at least 1"),
            (self.depth >= 1, "depth must be at least 1"),
            (self.width >= 1, "width must be at least 1"),
            (self.time_embed >= 1, "time_embed must be at least 1"),
            (self.head_hidden() >= 1, "head_width must be at least 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(msg));
            }
        }
        Ok(())
    }

    /// Number of scalar parameters a model with this config holds.
    pub fn parameter_count(&self) -> usize {
        specs(self)
            .0
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

/// Raw sinusoidal features `[sin w_0 t', cos w_0 t', sin w_1 t', ...]`
/// with `t' = 1000 t` and geometrically spaced `w_i`, truncated to `size`.
pub fn sinusoidal_features(t: f64, size: usize) -> Vec<f64> {
    let half = size.div_ceil(2);
    let scaled = 1000.0 * t;
    let mut out = Vec::with_capacity(2 * half);
    for i in 0..half {
        let w = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out.push((w * scaled).sin());
        out.push((w * scaled).cos());
    }
    out.truncate(size);
    out
}

/// One evaluation of the twins for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinOutput<T: Real = f32> {
    pub features: DenseArray<T>,
    pub j: DenseArray<T>,
    pub k: DenseArray<T>,
    pub j_res: DenseArray<T>,
    pub k_res: DenseArray<T>,
}

/// Class weights for a velocity evaluation.
///
/// `v = sum_m w_m (K_m - J)`. Weights must be finite and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityQuery {
    weights: Vec<f64>,
}

impl VelocityQuery {
    pub fn weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("empty velocity query"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("non-finite query weight"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("query weights sum to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn single(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::ClassOutOfRange {
                class,
                classes: num_classes,
            });
        }
        let mut w = vec![0.0; num_classes];
        w[class] = 1.0;
        Self::weights(w)
    }

    /// `(1 - alpha)` on `i`, `alpha` on `j`.
    pub fn pair(i: usize, j: usize, alpha: f64, num_classes: usize) -> Result<Self> {
        for c in [i, j] {
            if c >= num_classes {
                return Err(Error::ClassOutOfRange {
                    class: c,
                    classes: num_classes,
                });
            }
        }
        let mut w = vec![0.0; num_classes];
        w[i] += 1.0 - alpha;
        w[j] += alpha;
        Self::weights(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Classes with nonzero weight, in class order.
    pub fn active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w != 0.0)
    }

    fn check(&self, num_classes: usize) -> Result<()> {
        if self.weights.len() != num_classes {
            return Err(Error::invalid(format!(
                "query has {} weights for {num_classes} classes",
                self.weights.len()
            )));
        }
        Ok(())
    }
}

/// Anything that can be integrated by the sampler.
pub trait VelocityField<T: Real>: Sync {
    fn data_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Velocity for every row of `x` (`[B, d]`) at a shared time `t`.
    fn velocity(&self, x: &DenseArray<T>, t: f64, query: &VelocityQuery) -> Result<DenseArray<T>>;
}

impl<T: Real, F: VelocityField<T>> VelocityField<T> for &F {
    fn data_dim(&self) -> usize {
        (**self).data_dim()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn velocity(&self, x: &DenseArray<T>, t: f64, query: &VelocityQuery) -> Result<DenseArray<T>> {
        (**self).velocity(x, t, query)
    }
}

/// Shared `J` and the active `K_m` for one velocity evaluation.
#[derive(Debug, Clone)]
pub struct VelocityParts<T: Real = f32> {
    pub j: DenseArray<T>,
    pub k: Vec<(usize, DenseArray<T>)>,
}

/// Rows processed by each network part since construction or the last reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalCounts {
    pub trunk_rows: u64,
    pub j_rows: u64,
    pub k_rows: u64,
}

#[derive(Default)]
struct Counters {
    trunk: AtomicU64,
    j: AtomicU64,
    k: AtomicU64,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zero,
    LeCun(usize),
    Normal,
}

#[derive(Debug, Clone)]
struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Layout {
    time: Vec<usize>,
    input: Vec<usize>,
    blocks: Vec<[usize; 2]>,
    head_j: Vec<usize>,
    class_embed: Vec<usize>,
    head_k: Vec<Vec<usize>>,
}

struct SpecBuilder {
    specs: Vec<Spec>,
}

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(Spec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, zero: bool) -> [usize; 2] {
        let init = if zero { Init::Zero } else { Init::LeCun(fan_in) };
        [
            self.push(format!("{prefix}.weight"), vec![fan_in, fan_out], init),
            self.push(format!("{prefix}.bias"), vec![fan_out], Init::Zero),
        ]
    }

    fn head(&mut self, prefix: &str, cfg: &GafConfig) -> Vec<usize> {
        let (w, d, h) = (cfg.width, cfg.data_dim, cfg.head_hidden());
        match cfg.head {
            HeadKind::Mlp => {
                let mut idx = self.linear(&format!("{prefix}.0"), w, h, false).to_vec();
                idx.extend(self.linear(&format!("{prefix}.1"), h, d, cfg.zero_init_heads));
                idx
            }
            HeadKind::Linear => self
                .linear(&format!("{prefix}.0"), w, d, cfg.zero_init_heads)
                .to_vec(),
        }
    }

    fn class(&mut self, cfg: &GafConfig, layout: &mut Layout, c: usize) {
        if cfg.class_conditioning {
            let i = self.push(format!("trunk.class_embed.{c}"), vec![1, cfg.width], Init::Normal);
            layout.class_embed.push(i);
        }
        let head = self.head(&format!("head_k.{c}"), cfg);
        layout.head_k.push(head);
    }
}

fn specs(cfg: &GafConfig) -> (Vec<Spec>, Layout) {
    let mut b = SpecBuilder { specs: Vec::new() };
    let mut layout = Layout::default();
    let (w, d, e) = (cfg.width, cfg.data_dim, cfg.time_embed);
    layout.time.extend(b.linear("trunk.time.0", e, w, false));
    layout.time.extend(b.linear("trunk.time.1", w, w, false));
    layout.input.extend(b.linear("trunk.input", d + w, w, false));
    for i in 0..cfg.depth {
        layout.blocks.push(b.linear(&format!("trunk.block.{i}"), w, w, false));
    }
    layout.head_j = b.head("head_j", cfg);
    for c in 0..cfg.num_classes {
        b.class(cfg, &mut layout, c);
    }
    (b.specs, layout)
}

fn init_param<T: Real>(seed: u64, spec: &Spec) -> DenseArray<T> {
    let len = spec.shape.iter().product();
    let std = match spec.init {
        Init::Zero => return DenseArray::zeros(&spec.shape),
        Init::LeCun(fan_in) => 1.0 / (fan_in as f64).sqrt(),
        Init::Normal => 1.0,
    };
    let mut s = rng::stream(seed, Purpose::Init, rng::name_key(&spec.name), 0);
    let data = rng::normal_vec::<f64>(&mut s, len)
        .into_iter()
        .map(|z| T::lit(std * z))
        .collect();
    DenseArray::from_parts_unchecked(spec.shape.clone(), data)
}

/// Class input to the trunk: one label per row, or one blend for all rows.
pub(crate) enum ClassCond<'c> {
    Labels(&'c [usize]),
    Blend(&'c [f64]),
}

/// Tape handles for one twin evaluation.
pub(crate) struct TwinVars {
    pub f: Var,
    pub j: Var,
    pub k: Var,
    pub j_res: Var,
    pub k_res: Var,
}

pub struct GafModel<T: Real = f32> {
    config: GafConfig,
    names: Vec<String>,
    params: Vec<DenseArray<T>>,
    layout: Layout,
    counters: Counters,
}

impl<T: Real> Clone for GafModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.clone(),
            layout: self.layout.clone(),
            counters: Counters::default(),
        }
    }
}

impl<T: Real> std::fmt::Debug for GafModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GafModel")
            .field("config", &self.config)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

impl<T: Real> GafModel<T> {
    pub fn new(config: GafConfig) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = specs(&config);
        let params = specs.iter().map(|s| init_param(config.seed, s)).collect();
        Ok(Self {
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
            layout,
            config,
            counters: Counters::default(),
        })
    }

    /// Rebuilds a model from an ordered parameter list.
    pub fn from_parts(config: GafConfig, params: Vec<DenseArray<T>>) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = specs(&config);
        if specs.len() != params.len() {
            return Err(Error::shape(
                "model",
                format!("expected {} parameter arrays, got {}", specs.len(), params.len()),
            ));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(Error::shape(
                    "model",
                    format!("{}: expected {:?}, got {:?}", s.name, s.shape, p.shape()),
                ));
            }
            if !p.all_finite() {
                return Err(Error::NonFinite { op: "model" });
            }
        }
        Ok(Self {
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
            layout,
            config,
            counters: Counters::default(),
        })
    }

    pub fn cast<U: Real>(&self) -> GafModel<U> {
        GafModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(DenseArray::cast).collect(),
            layout: self.layout.clone(),
            counters: Counters::default(),
        }
    }

    pub fn config(&self) -> &GafConfig {
        &self.config
    }

    pub fn params(&self) -> &[DenseArray<T>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [DenseArray<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Replaces one parameter array, keeping its shape.
    pub fn set_param(&mut self, index: usize, value: DenseArray<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("no parameter {index}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                format!("{:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(DenseArray::len).sum()
    }

    /// Indices of the parameters owned by `K` head `c`.
    pub fn head_k_params(&self, c: usize) -> Result<&[usize]> {
        self.layout
            .head_k
            .get(c)
            .map(Vec::as_slice)
            .ok_or(Error::ClassOutOfRange {
                class: c,
                classes: self.config.num_classes,
            })
    }

    /// Appends a class embedding row and a fresh `K` head. Returns the new
    /// class index; existing parameters are untouched.
    pub fn add_class_head(&mut self) -> usize {
        let c = self.config.num_classes;
        self.config.num_classes += 1;
        let mut b = SpecBuilder { specs: Vec::new() };
        let base = self.params.len();
        let mut added = Layout::default();
        b.class(&self.config, &mut added, c);
        for s in &b.specs {
            self.params.push(init_param(self.config.seed, s));
            self.names.push(s.name.clone());
        }
        self.layout
            .class_embed
            .extend(added.class_embed.iter().map(|i| i + base));
        self.layout
            .head_k
            .extend(added.head_k.into_iter().map(|h| h.into_iter().map(|i| i + base).collect()));
        c
    }

    pub fn eval_counts(&self) -> EvalCounts {
        EvalCounts {
            trunk_rows: self.counters.trunk.load(Ordering::Relaxed),
            j_rows: self.counters.j.load(Ordering::Relaxed),
            k_rows: self.counters.k.load(Ordering::Relaxed),
        }
    }

    pub fn reset_eval_counts(&self) {
        self.counters.trunk.store(0, Ordering::Relaxed);
        self.counters.j.store(0, Ordering::Relaxed);
        self.counters.k.store(0, Ordering::Relaxed);
    }

    fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.config.num_classes {
            return Err(Error::ClassOutOfRange {
                class: c,
                classes: self.config.num_classes,
            });
        }
        Ok(())
    }

    fn check_batch(&self, x: &DenseArray<T>, rows: usize) -> Result<()> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.config.data_dim || s[0] != rows {
            return Err(Error::shape(
                "model",
                format!("input {s:?}, expected [{rows}, {}]", self.config.data_dim),
            ));
        }
        Ok(())
    }

    /// Registers every parameter on `tape`; trainable ones become leaves.
    pub(crate) fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p)
                } else {
                    tape.constant_ref(p)
                }
            })
            .collect()
    }

    fn linear(tape: &mut Tape<'_, T>, p: &[Var], idx: &[usize], x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[idx[0]])?;
        tape.add(y, p[idx[1]])
    }

    fn record_time(&self, tape: &mut Tape<'_, T>, p: &[Var], t: &[f64]) -> Result<Var> {
        let e = self.config.time_embed;
        let mut feats = Vec::with_capacity(t.len() * e);
        for &ti in t {
            feats.extend(sinusoidal_features(ti, e).into_iter().map(T::lit));
        }
        let raw = tape.constant(DenseArray::from_parts_unchecked(vec![t.len(), e], feats));
        let h = Self::linear(tape, p, &self.layout.time[0..2], raw)?;
        let h = tape.gelu(h)?;
        Self::linear(tape, p, &self.layout.time[2..4], h)
    }

    pub(crate) fn record_trunk(
        &self,
        tape: &mut Tape<'_, T>,
        p: &[Var],
        x: Var,
        t: &[f64],
        class: &ClassCond<'_>,
    ) -> Result<Var> {
        let rows = t.len();
        let mut cond = self.record_time(tape, p, t)?;
        if self.config.class_conditioning {
            let emb = match class {
                ClassCond::Labels(labels) => {
                    let rows: Vec<Var> = self.layout.class_embed.iter().map(|&i| p[i]).collect();
                    let table = tape.concat(&rows, 0)?;
                    tape.gather_rows(table, labels.to_vec())?
                }
                ClassCond::Blend(w) => {
                    let mut acc: Option<Var> = None;
                    for (m, &wm) in w.iter().enumerate().filter(|(_, w)| **w != 0.0) {
                        let term = tape.scale(p[self.layout.class_embed[m]], wm)?;
                        acc = Some(match acc {
                            Some(a) => tape.add(a, term)?,
                            None => term,
                        });
                    }
                    let acc = acc.ok_or_else(|| Error::invalid("empty velocity query"))?;
                    tape.gather_rows(acc, vec![0; rows])?
                }
            };
            cond = tape.add(cond, emb)?;
        }
        let input = tape.concat(&[x, cond], 1)?;
        let mut h = Self::linear(tape, p, &self.layout.input, input)?;
        for blk in &self.layout.blocks {
            let z = Self::linear(tape, p, blk, h)?;
            let z = tape.add(z, cond)?;
            let z = tape.gelu(z)?;
            h = tape.add(h, z)?;
        }
        self.counters.trunk.fetch_add(rows as u64, Ordering::Relaxed);
        Ok(h)
    }

    fn record_head(&self, tape: &mut Tape<'_, T>, p: &[Var], idx: &[usize], f: Var) -> Result<Var> {
        match self.config.head {
            HeadKind::Mlp => {
                let h = Self::linear(tape, p, &idx[0..2], f)?;
                let h = tape.gelu(h)?;
                Self::linear(tape, p, &idx[2..4], h)
            }
            HeadKind::Linear => Self::linear(tape, p, &idx[0..2], f),
        }
    }

    pub(crate) fn record_j(&self, tape: &mut Tape<'_, T>, p: &[Var], f: Var, rows: usize) -> Result<Var> {
        self.counters.j.fetch_add(rows as u64, Ordering::Relaxed);
        self.record_head(tape, p, &self.layout.head_j, f)
    }

    pub(crate) fn record_k(
        &self,
        tape: &mut Tape<'_, T>,
        p: &[Var],
        c: usize,
        f: Var,
        rows: usize,
    ) -> Result<Var> {
        self.counters.k.fetch_add(rows as u64, Ordering::Relaxed);
        self.record_head(tape, p, &self.layout.head_k[c], f)
    }

    /// Runs each row's features through its own class head.
    fn record_k_routed(&self, tape: &mut Tape<'_, T>, p: &[Var], f: Var, labels: &[usize]) -> Result<Var> {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.config.num_classes];
        for (r, &c) in labels.iter().enumerate() {
            groups[c].push(r);
        }
        let present: Vec<usize> = (0..groups.len()).filter(|&c| !groups[c].is_empty()).collect();
        if let [only] = present[..] {
            return self.record_k(tape, p, only, f, labels.len());
        }
        let mut parts = Vec::with_capacity(present.len());
        let mut order = Vec::with_capacity(labels.len());
        for &c in &present {
            let fc = tape.gather_rows(f, groups[c].clone())?;
            parts.push(self.record_k(tape, p, c, fc, groups[c].len())?);
            order.extend_from_slice(&groups[c]);
        }
        let grouped = tape.concat(&parts, 0)?;
        let mut inverse = vec![0; labels.len()];
        for (pos, &r) in order.iter().enumerate() {
            inverse[r] = pos;
        }
        tape.gather_rows(grouped, inverse)
    }

    /// Anchored term `scale(t_i) * x_i` for every row.
    fn anchored(x: &DenseArray<T>, t: &[f64], scale: impl Fn(f64) -> f64) -> DenseArray<T> {
        let d = x.row_len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| T::lit(scale(t[i / d])) * v)
            .collect();
        DenseArray::from_parts_unchecked(x.shape().to_vec(), data)
    }

    /// Records `J` and `K` for every row of `x` with its own time and label.
    pub(crate) fn record_twins(
        &self,
        tape: &mut Tape<'_, T>,
        p: &[Var],
        x: &DenseArray<T>,
        t: &[f64],
        labels: &[usize],
    ) -> Result<TwinVars> {
        let xv = tape.constant(x.clone());
        let f = self.record_trunk(tape, p, xv, t, &ClassCond::Labels(labels))?;
        let j_res = self.record_j(tape, p, f, t.len())?;
        let k_res = self.record_k_routed(tape, p, f, labels)?;
        let aj = tape.constant(Self::anchored(x, t, |t| 1.0 - t));
        let ak = tape.constant(Self::anchored(x, t, |t| t));
        let j = tape.add(aj, j_res)?;
        let k = tape.add(ak, k_res)?;
        Ok(TwinVars { f, j, k, j_res, k_res })
    }

    fn check_times(t: &[f64]) -> Result<()> {
        if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid(format!("time {bad} outside [0, 1]")));
        }
        Ok(())
    }

    /// Evaluates the twins; row `i` uses time `t[i]` and class `classes[i]`.
    pub fn twin_forward(&self, x: &DenseArray<T>, t: &[f64], classes: &[usize]) -> Result<TwinOutput<T>> {
        self.check_batch(x, t.len())?;
        if classes.len() != t.len() {
            return Err(Error::shape("twin_forward", "one class per row required"));
        }
        Self::check_times(t)?;
        for &c in classes {
            self.check_class(c)?;
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let tv = self.record_twins(&mut tape, &p, x, t, classes)?;
        Ok(TwinOutput {
            features: tape.value(tv.f).clone(),
            j: tape.value(tv.j).clone(),
            k: tape.value(tv.k).clone(),
            j_res: tape.value(tv.j_res).clone(),
            k_res: tape.value(tv.k_res).clone(),
        })
    }

    /// Projected time embedding `[width]` used inside the trunk.
    pub fn embed_time(&self, t: f64) -> Result<DenseArray<T>> {
        Self::check_times(&[t])?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let v = self.record_time(&mut tape, &p, &[t])?;
        tape.value(v).clone().reshape(vec![self.config.width])
    }

    /// `K_res` of head `c` applied to given trunk features `[B, width]`.
    pub fn head_k_on_features(&self, c: usize, features: &DenseArray<T>) -> Result<DenseArray<T>> {
        self.check_class(c)?;
        let s = features.shape();
        if s.len() != 2 || s[1] != self.config.width {
            return Err(Error::shape("head_k", format!("features {s:?}")));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let f = tape.constant(features.clone());
        let k = self.record_k(&mut tape, &p, c, f, s[0])?;
        Ok(tape.value(k).clone())
    }

    /// `J` and every active `K_m` from a single trunk and `J` evaluation.
    pub fn velocity_parts(&self, x: &DenseArray<T>, t: f64, query: &VelocityQuery) -> Result<VelocityParts<T>> {
        self.check_batch(x, x.shape().first().copied().unwrap_or(0))?;
        Self::check_times(&[t])?;
        query.check(self.config.num_classes)?;
        let rows = x.rows();
        let times = vec![t; rows];
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = tape.constant_ref(x);
        let f = self.record_trunk(&mut tape, &p, xv, &times, &ClassCond::Blend(query.as_slice()))?;
        let j_res = self.record_j(&mut tape, &p, f, rows)?;
        let aj = tape.constant(Self::anchored(x, &times, |t| 1.0 - t));
        let j = tape.add(aj, j_res)?;
        let ak = tape.constant(Self::anchored(x, &times, |t| t));
        let mut k = Vec::new();
        for (m, _) in query.active() {
            let kr = self.record_k(&mut tape, &p, m, f, rows)?;
            let km = tape.add(ak, kr)?;
            k.push((m, tape.value(km).clone()));
        }
        Ok(VelocityParts {
            j: tape.value(j).clone(),
            k,
        })
    }

    fn velocity_chunk(&self, x: &DenseArray<T>, t: f64, query: &VelocityQuery) -> Result<DenseArray<T>> {
        let parts = self.velocity_parts(x, t, query)?;
        let jd = parts.j.data();
        let mut acc = vec![T::zero(); jd.len()];
        for (m, km) in &parts.k {
            let w = T::lit(query.as_slice()[*m]);
            for ((a, &k), &j) in acc.iter_mut().zip(km.data()).zip(jd) {
                *a = *a + w * (k - j);
            }
        }
        DenseArray::new(x.shape().to_vec(), acc)
    }
}

impl<T: Real> VelocityField<T> for GafModel<T> {
    fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn velocity(&self, x: &DenseArray<T>, t: f64, query: &VelocityQuery) -> Result<DenseArray<T>> {
        self.check_batch(x, x.shape().first().copied().unwrap_or(0))?;
        let rows = x.rows();
        if rows <= VELOCITY_CHUNK {
            return self.velocity_chunk(x, t, query);
        }
        let parts = par::map_chunks(rows, VELOCITY_CHUNK, |r| {
            let idx: Vec<usize> = r.collect();
            self.velocity_chunk(&x.select_rows(&idx)?, t, query)
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        DenseArray::concat_rows(&parts)
    }
}
