//! Bridges, swap operators and the training loss.
//!
//! ```text
//! x_t    = (1 - t) z_y + t z_x
//! L_pair = (1 - t) msq(J - z_y) + t msq(K - z_x)
//! L_res  = (1 - t) msq(J_res) + t msq(K_res)
//! L_swap = msq(J_res + K~_res) + msq(K_res + J~_res)
//! L      = L_pair + lambda_res L_res + lambda_swap L_swap
//! ```
//!
//! `msq` is the mean of squared elements; batch losses average over samples.
//! Tilde quantities come from the same `x_t` evaluated at time `1 - t`.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DenseArray, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{GafModel, TwinOutput};

/// One bridge point.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSample<T: Real = f32> {
    pub z_x: DenseArray<T>,
    pub z_y: DenseArray<T>,
    pub t: f64,
    pub class: usize,
    pub x_t: DenseArray<T>,
}

fn interpolate<T: Real>(z_y: &[T], z_x: &[T], t: f64) -> Vec<T> {
    let (a, b) = (T::lit(1.0 - t), T::lit(t));
    z_y.iter().zip(z_x).map(|(&y, &x)| a * y + b * x).collect()
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("bridge time {t} outside [0, 1]")));
    }
    Ok(())
}

pub fn make_bridge<T: Real>(
    z_y: &DenseArray<T>,
    z_x: &DenseArray<T>,
    t: f64,
    class: usize,
) -> Result<BridgeSample<T>> {
    check_time(t)?;
    if z_y.shape() != z_x.shape() {
        return Err(Error::shape(
            "make_bridge",
            format!("{:?} vs {:?}", z_y.shape(), z_x.shape()),
        ));
    }
    if !z_y.all_finite() || !z_x.all_finite() {
        return Err(Error::NonFinite { op: "make_bridge" });
    }
    let x_t = DenseArray::new(z_x.shape().to_vec(), interpolate(z_y.data(), z_x.data(), t))?;
    Ok(BridgeSample {
        z_x: z_x.clone(),
        z_y: z_y.clone(),
        t,
        class,
        x_t,
    })
}

/// A batch of bridge points, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeBatch<T: Real = f32> {
    pub z_x: DenseArray<T>,
    pub z_y: DenseArray<T>,
    pub t: Vec<f64>,
    pub classes: Vec<usize>,
    pub x_t: DenseArray<T>,
}

impl<T: Real> BridgeBatch<T> {
    pub fn new(z_y: DenseArray<T>, z_x: DenseArray<T>, t: Vec<f64>, classes: Vec<usize>) -> Result<Self> {
        let s = z_x.shape();
        if s.len() != 2 || z_y.shape() != s || t.len() != s[0] || classes.len() != s[0] {
            return Err(Error::shape(
                "bridge_batch",
                format!(
                    "z_x {:?}, z_y {:?}, {} times, {} classes",
                    s,
                    z_y.shape(),
                    t.len(),
                    classes.len()
                ),
            ));
        }
        for &ti in &t {
            check_time(ti)?;
        }
        let d = s[1];
        let mut x = Vec::with_capacity(z_x.len());
        for (i, &ti) in t.iter().enumerate() {
            x.extend(interpolate(&z_y.data()[i * d..(i + 1) * d], &z_x.data()[i * d..(i + 1) * d], ti));
        }
        let x_t = DenseArray::new(s.to_vec(), x)?;
        Ok(Self {
            z_x,
            z_y,
            t,
            classes,
            x_t,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn sample(&self, i: usize) -> BridgeSample<T> {
        BridgeSample {
            z_x: DenseArray::from_parts_unchecked(vec![self.z_x.row_len()], self.z_x.row(i).to_vec()),
            z_y: DenseArray::from_parts_unchecked(vec![self.z_y.row_len()], self.z_y.row(i).to_vec()),
            t: self.t[i],
            class: self.classes[i],
            x_t: DenseArray::from_parts_unchecked(vec![self.x_t.row_len()], self.x_t.row(i).to_vec()),
        }
    }

    pub(crate) fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            z_x: self.z_x.select_rows(rows)?,
            z_y: self.z_y.select_rows(rows)?,
            t: rows.iter().map(|&r| self.t[r]).collect(),
            classes: rows.iter().map(|&r| self.classes[r]).collect(),
            x_t: self.x_t.select_rows(rows)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapKind {
    /// `(z_y, z_x, t, c) -> (z_x, z_y, t, c)`
    Swap,
    /// `(z_y, z_x, t, c) -> (z_y, z_x, 1 - t, c)`
    Flip,
    /// `(z_y, z_x, t, c) -> (z_x, z_y, 1 - t, c)`
    SwapAndFlip,
}

/// The tuple `(z_y, z_x, t, c)` acted on by the swap operators.
///
/// Time is kept as a base value plus a flip flag so that flipping twice
/// restores `t` exactly rather than `1 - (1 - t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig<T: Real = f32> {
    pub z_y: DenseArray<T>,
    pub z_x: DenseArray<T>,
    base_t: f64,
    flipped: bool,
    pub class: usize,
}

impl<T: Real> BridgeConfig<T> {
    pub fn new(z_y: DenseArray<T>, z_x: DenseArray<T>, t: f64, class: usize) -> Result<Self> {
        check_time(t)?;
        if z_y.shape() != z_x.shape() {
            return Err(Error::shape("bridge_config", "endpoint shapes differ"));
        }
        Ok(Self {
            z_y,
            z_x,
            base_t: t,
            flipped: false,
            class,
        })
    }

    pub fn t(&self) -> f64 {
        if self.flipped {
            1.0 - self.base_t
        } else {
            self.base_t
        }
    }

    pub fn apply(&self, kind: SwapKind) -> Self {
        let mut out = self.clone();
        if matches!(kind, SwapKind::Swap | SwapKind::SwapAndFlip) {
            std::mem::swap(&mut out.z_y, &mut out.z_x);
        }
        if matches!(kind, SwapKind::Flip | SwapKind::SwapAndFlip) {
            out.flipped = !out.flipped;
        }
        out
    }

    pub fn bridge_point(&self) -> DenseArray<T> {
        DenseArray::from_parts_unchecked(
            self.z_x.shape().to_vec(),
            interpolate(self.z_y.data(), self.z_x.data(), self.t()),
        )
    }

    pub fn sample(&self) -> Result<BridgeSample<T>> {
        make_bridge(&self.z_y, &self.z_x, self.t(), self.class)
    }
}

pub const DEFAULT_LAMBDA_RES: f64 = 0.003;
pub const DEFAULT_LAMBDA_SWAP: f64 = 0.002;

/// Batch-mean loss components and the weights that combined them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pair: f64,
    pub res: f64,
    pub swap: f64,
    pub total: f64,
    pub lambda_res: f64,
    pub lambda_swap: f64,
}

pub fn loss_total(pair: f64, res: f64, swap: f64, lambda_res: f64, lambda_swap: f64) -> Result<LossBreakdown> {
    if !(lambda_res >= 0.0 && lambda_swap >= 0.0) {
        return Err(Error::invalid("loss weights must be nonnegative"));
    }
    Ok(LossBreakdown {
        pair,
        res,
        swap,
        total: pair + lambda_res * res + lambda_swap * swap,
        lambda_res,
        lambda_swap,
    })
}

/// Per-element weights `w(t_i) / (B d)` for row-weighted mean squares.
fn row_weights<T: Real>(t: &[f64], d: usize, w: impl Fn(f64) -> f64) -> DenseArray<T> {
    let denom = (t.len() * d) as f64;
    let data = t
        .iter()
        .flat_map(|&ti| std::iter::repeat_n(T::lit(w(ti) / denom), d))
        .collect();
    DenseArray::from_parts_unchecked(vec![t.len(), d], data)
}

fn weighted_msq<T: Real>(tape: &mut Tape<'_, T>, r: Var, t: &[f64], w: impl Fn(f64) -> f64) -> Result<Var> {
    let d = tape.value(r).row_len();
    let sq = tape.square(r)?;
    let wv = tape.constant(row_weights(t, d, w));
    let m = tape.mul(sq, wv)?;
    tape.sum(m)
}

pub(crate) fn record_pair<T: Real>(
    tape: &mut Tape<'_, T>,
    j: Var,
    k: Var,
    z_y: Var,
    z_x: Var,
    t: &[f64],
) -> Result<Var> {
    let dj = tape.sub(j, z_y)?;
    let dk = tape.sub(k, z_x)?;
    let a = weighted_msq(tape, dj, t, |t| 1.0 - t)?;
    let b = weighted_msq(tape, dk, t, |t| t)?;
    tape.add(a, b)
}

pub(crate) fn record_res<T: Real>(tape: &mut Tape<'_, T>, j_res: Var, k_res: Var, t: &[f64]) -> Result<Var> {
    let a = weighted_msq(tape, j_res, t, |t| 1.0 - t)?;
    let b = weighted_msq(tape, k_res, t, |t| t)?;
    tape.add(a, b)
}

pub(crate) fn record_swap<T: Real>(
    tape: &mut Tape<'_, T>,
    j_res: Var,
    k_res: Var,
    j_res_flip: Var,
    k_res_flip: Var,
) -> Result<Var> {
    let g0 = tape.add(j_res, k_res_flip)?;
    let g1 = tape.add(k_res, j_res_flip)?;
    let s0 = tape.square(g0)?;
    let s1 = tape.square(g1)?;
    let m0 = tape.mean(s0)?;
    let m1 = tape.mean(s1)?;
    tape.add(m0, m1)
}

fn check_same<T: Real>(op: &'static str, a: &DenseArray<T>, b: &DenseArray<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_rows<T: Real>(op: &'static str, a: &DenseArray<T>, rows: usize) -> Result<()> {
    if a.shape().len() != 2 || a.shape()[0] != rows {
        return Err(Error::shape(op, format!("{:?} for {rows} samples", a.shape())));
    }
    Ok(())
}

pub fn loss_pair<T: Real>(out: &TwinOutput<T>, batch: &BridgeBatch<T>) -> Result<f64> {
    check_same("loss_pair", &out.j, &batch.z_y)?;
    check_same("loss_pair", &out.k, &batch.z_x)?;
    let mut tape = Tape::new();
    let j = tape.constant_ref(&out.j);
    let k = tape.constant_ref(&out.k);
    let zy = tape.constant_ref(&batch.z_y);
    let zx = tape.constant_ref(&batch.z_x);
    let l = record_pair(&mut tape, j, k, zy, zx, &batch.t)?;
    Ok(tape.value(l).item()?.as_f64())
}

pub fn loss_res<T: Real>(out: &TwinOutput<T>, t: &[f64]) -> Result<f64> {
    check_same("loss_res", &out.j_res, &out.k_res)?;
    check_rows("loss_res", &out.j_res, t.len())?;
    let mut tape = Tape::new();
    let j = tape.constant_ref(&out.j_res);
    let k = tape.constant_ref(&out.k_res);
    let l = record_res(&mut tape, j, k, t)?;
    Ok(tape.value(l).item()?.as_f64())
}

pub fn loss_swap<T: Real>(out: &TwinOutput<T>, out_flipped: &TwinOutput<T>) -> Result<f64> {
    for (a, b) in [
        (&out.j_res, &out.k_res),
        (&out.j_res, &out_flipped.j_res),
        (&out.j_res, &out_flipped.k_res),
    ] {
        check_same("loss_swap", a, b)?;
    }
    let mut tape = Tape::new();
    let jr = tape.constant_ref(&out.j_res);
    let kr = tape.constant_ref(&out.k_res);
    let jf = tape.constant_ref(&out_flipped.j_res);
    let kf = tape.constant_ref(&out_flipped.k_res);
    let l = record_swap(&mut tape, jr, kr, jf, kf)?;
    Ok(tape.value(l).item()?.as_f64())
}

/// Weights of the two regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_res: f64,
    pub lambda_swap: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_res: DEFAULT_LAMBDA_RES,
            lambda_swap: DEFAULT_LAMBDA_SWAP,
        }
    }
}

pub(crate) struct LossVars {
    pub pair: Var,
    pub res: Var,
    pub swap: Var,
    pub total: Var,
}

/// Records the full loss for `batch`, scaled by `scale`.
///
/// The model is evaluated once on `2B` rows: the batch at its own times,
/// then the same points at `1 - t`.
pub(crate) fn record_gaf_loss<T: Real>(
    model: &GafModel<T>,
    tape: &mut Tape<'_, T>,
    p: &[Var],
    batch: &BridgeBatch<T>,
    weights: LossWeights,
    scale: f64,
) -> Result<LossVars> {
    let n = batch.len();
    let x2 = DenseArray::concat_rows(&[batch.x_t.clone(), batch.x_t.clone()])?;
    let mut t2 = batch.t.clone();
    t2.extend(batch.t.iter().map(|t| 1.0 - t));
    let mut c2 = batch.classes.clone();
    c2.extend_from_slice(&batch.classes);
    let tw = model.record_twins(tape, p, &x2, &t2, &c2)?;

    let head: Vec<usize> = (0..n).collect();
    let tail: Vec<usize> = (n..2 * n).collect();
    let j = tape.gather_rows(tw.j, head.clone())?;
    let k = tape.gather_rows(tw.k, head.clone())?;
    let jr = tape.gather_rows(tw.j_res, head.clone())?;
    let kr = tape.gather_rows(tw.k_res, head)?;
    let jf = tape.gather_rows(tw.j_res, tail.clone())?;
    let kf = tape.gather_rows(tw.k_res, tail)?;
    let zy = tape.constant(batch.z_y.clone());
    let zx = tape.constant(batch.z_x.clone());

    let pair = record_pair(tape, j, k, zy, zx, &batch.t)?;
    let res = record_res(tape, jr, kr, &batch.t)?;
    let swap = record_swap(tape, jr, kr, jf, kf)?;
    let pair = tape.scale(pair, scale)?;
    let res = tape.scale(res, scale)?;
    let swap = tape.scale(swap, scale)?;
    let wr = tape.scale(res, weights.lambda_res)?;
    let ws = tape.scale(swap, weights.lambda_swap)?;
    let total = tape.add(pair, wr)?;
    let total = tape.add(total, ws)?;
    Ok(LossVars {
        pair,
        res,
        swap,
        total,
    })
}

fn breakdown<T: Real>(tape: &Tape<'_, T>, v: &LossVars, weights: LossWeights) -> Result<LossBreakdown> {
    let get = |x: Var| -> Result<f64> { Ok(tape.value(x).item()?.as_f64()) };
    loss_total(
        get(v.pair)?,
        get(v.res)?,
        get(v.swap)?,
        weights.lambda_res,
        weights.lambda_swap,
    )
}

fn check_batch<T: Real>(model: &GafModel<T>, batch: &BridgeBatch<T>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let cfg = model.config();
    if batch.x_t.row_len() != cfg.data_dim {
        return Err(Error::shape("gaf_loss", "batch dimension differs from model"));
    }
    if let Some(&c) = batch.classes.iter().find(|&&c| c >= cfg.num_classes) {
        return Err(Error::ClassOutOfRange {
            class: c,
            classes: cfg.num_classes,
        });
    }
    Ok(())
}

/// Full loss on a fixed batch.
pub fn gaf_loss<T: Real>(model: &GafModel<T>, batch: &BridgeBatch<T>, weights: LossWeights) -> Result<LossBreakdown> {
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let v = record_gaf_loss(model, &mut tape, &p, batch, weights, 1.0)?;
    breakdown(&tape, &v, weights)
}

/// Loss on `batch` scaled by `scale`, with the gradient of the scaled total
/// for every parameter in model order.
pub fn gaf_loss_and_grad<T: Real>(
    model: &GafModel<T>,
    batch: &BridgeBatch<T>,
    weights: LossWeights,
    scale: f64,
) -> Result<(LossBreakdown, Vec<DenseArray<T>>)> {
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, true);
    let v = record_gaf_loss(model, &mut tape, &p, batch, weights, scale)?;
    let report = breakdown(&tape, &v, weights)?;
    let grads = tape.backward(v.total)?;
    let g = p.iter().map(|&pv| grads.wrt(pv)).collect::<Result<Vec<_>>>()?;
    Ok((report, g))
}
