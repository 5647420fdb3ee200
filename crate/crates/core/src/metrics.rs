//! Distribution distances and model diagnostics.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::diffcore::{DenseArray, Real};
use crate::error::{Error, Result};
use crate::model::{GafModel, VelocityField, VelocityQuery};
use crate::objective::BridgeBatch;
use crate::par;
use crate::rng::{self, Purpose};
use crate::transport::{generate, SampleSettings};

const PAIR_CHUNK: usize = 128;

fn rows_f64<T: Real>(a: &DenseArray<T>) -> Result<(Vec<f64>, usize, usize)> {
    let s = a.shape();
    if s.len() != 2 {
        return Err(Error::shape("metric", format!("expected a point set, got {s:?}")));
    }
    Ok((a.data().iter().map(|v| v.as_f64()).collect(), s[0], s[1]))
}

fn pair_sum(x: &[f64], n: usize, y: &[f64], m: usize, d: usize) -> f64 {
    par::map_chunks(n, PAIR_CHUNK, |r| {
        let mut s = 0.0;
        for i in r {
            let xi = &x[i * d..(i + 1) * d];
            for j in 0..m {
                let yj = &y[j * d..(j + 1) * d];
                s += xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            }
        }
        s
    })
    .into_iter()
    .sum()
}

/// Orders point sets so symmetric metrics see the same operand order.
fn canonical_order<T: Real>(a: &DenseArray<T>, b: &DenseArray<T>) -> Ordering {
    a.shape().cmp(b.shape()).then_with(|| {
        a.data()
            .iter()
            .map(|v| v.as_f64().to_bits())
            .cmp(b.data().iter().map(|v| v.as_f64().to_bits()))
    })
}

/// `2 E|a - b| - E|a - a'| - E|b - b'|` over all ordered pairs, including
/// each point paired with itself.
pub fn energy_distance<T: Real>(a: &DenseArray<T>, b: &DenseArray<T>) -> Result<f64> {
    let (a, b) = if canonical_order(a, b) == Ordering::Greater { (b, a) } else { (a, b) };
    let (x, n, d) = rows_f64(a)?;
    let (y, m, e) = rows_f64(b)?;
    if d != e {
        return Err(Error::shape("energy_distance", format!("dimension {d} vs {e}")));
    }
    let cross = pair_sum(&x, n, &y, m, d) / (n * m) as f64;
    let xx = pair_sum(&x, n, &x, n, d) / (n * n) as f64;
    let yy = pair_sum(&y, m, &y, m, d) / (m * m) as f64;
    Ok((2.0 * cross - xx - yy).max(0.0))
}

/// Unit directions used by [`sliced_wasserstein`].
pub fn projections(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|p| {
            let mut s = rng::stream(seed, Purpose::Projection, p, 0);
            loop {
                let v = rng::normal_vec::<f64>(&mut s, dim);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    return v.into_iter().map(|x| x / norm).collect();
                }
            }
        })
        .collect()
}

/// Exact 2-Wasserstein distance between two 1D empirical measures.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty point set"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as u64, b.len() as u64);
    // Quantile breakpoints in units of 1 / (n m): a's at i m, b's at j n.
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0u64);
    let total = n * m;
    let mut acc = 0.0;
    while pos < total {
        let next = ((i as u64 + 1) * m).min((j as u64 + 1) * n);
        let diff = a[i] - b[j];
        acc += (next - pos) as f64 * diff * diff;
        pos = next;
        if pos == (i as u64 + 1) * m {
            i += 1;
        }
        if pos == (j as u64 + 1) * n {
            j += 1;
        }
    }
    Ok((acc / total as f64).sqrt())
}

/// Mean over `count` seeded unit directions of the 1D 2-Wasserstein
/// distance between projections.
pub fn sliced_wasserstein<T: Real>(a: &DenseArray<T>, b: &DenseArray<T>, count: usize, seed: u64) -> Result<f64> {
    let (x, n, d) = rows_f64(a)?;
    let (y, m, e) = rows_f64(b)?;
    if d != e {
        return Err(Error::shape("sliced_wasserstein", format!("dimension {d} vs {e}")));
    }
    if count == 0 {
        return Err(Error::invalid("at least one projection required"));
    }
    let dirs = projections(d, count, seed);
    let project = |pts: &[f64], rows: usize, dir: &[f64]| -> Vec<f64> {
        (0..rows)
            .map(|r| pts[r * d..(r + 1) * d].iter().zip(dir).map(|(p, q)| p * q).sum())
            .collect()
    };
    let per = par::map_items(&dirs, |dir| wasserstein_1d(&project(&x, n, dir), &project(&y, m, dir)));
    let mut sum = 0.0;
    for w in per {
        sum += w?;
    }
    Ok(sum / count as f64)
}

/// Access to the twin predictors, for endpoint diagnostics.
pub trait Twins<T: Real>: Sync {
    fn twins(&self, x: &DenseArray<T>, t: &[f64], classes: &[usize]) -> Result<(DenseArray<T>, DenseArray<T>)>;
}

impl<T: Real> Twins<T> for GafModel<T> {
    fn twins(&self, x: &DenseArray<T>, t: &[f64], classes: &[usize]) -> Result<(DenseArray<T>, DenseArray<T>)> {
        let out = self.twin_forward(x, t, classes)?;
        Ok((out.j, out.k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointSide {
    /// `J` against `z_y` at `t = t_eps`.
    JAtNoise,
    /// `K` against `z_x` at `t = 1 - t_eps`.
    KAtData,
}

/// `samples` bridges at a fixed time: data rows and noise drawn from `seed`.
pub fn eval_bridges(data: &LabeledDataset, samples: usize, seed: u64, t: f64) -> Result<BridgeBatch<f32>> {
    if samples == 0 {
        return Err(Error::invalid("samples must be positive"));
    }
    let d = data.dim();
    let mut pick = rng::stream(seed, Purpose::Eval, 0, 0);
    let rows: Vec<usize> = (0..samples).map(|_| pick.random_range(0..data.len())).collect();
    let mut z_y = Vec::with_capacity(samples * d);
    for i in 0..samples as u64 {
        z_y.extend(rng::normal_vec::<f32>(&mut rng::stream(seed, Purpose::Eval, 1, i), d));
    }
    BridgeBatch::new(
        DenseArray::matrix(samples, d, z_y)?,
        data.points.select_rows(&rows)?,
        vec![t; samples],
        rows.iter().map(|&r| data.labels[r]).collect(),
    )
}

/// Root mean square endpoint error on the given bridges.
pub fn endpoint_rmse_on(twins: &impl Twins<f32>, batch: &BridgeBatch<f32>, side: EndpointSide) -> Result<f64> {
    let (j, k) = twins.twins(&batch.x_t, &batch.t, &batch.classes)?;
    let (pred, target) = match side {
        EndpointSide::JAtNoise => (j, &batch.z_y),
        EndpointSide::KAtData => (k, &batch.z_x),
    };
    if pred.shape() != target.shape() {
        return Err(Error::shape("endpoint_rmse", "prediction shape differs from target"));
    }
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn endpoint_rmse(
    twins: &impl Twins<f32>,
    data: &LabeledDataset,
    side: EndpointSide,
    samples: usize,
    seed: u64,
    t_eps: f64,
) -> Result<f64> {
    let t = match side {
        EndpointSide::JAtNoise => t_eps,
        EndpointSide::KAtData => 1.0 - t_eps,
    };
    endpoint_rmse_on(twins, &eval_bridges(data, samples, seed, t)?, side)
}

/// Mean over random bridges of `|v(x, 1 - t) + v(x, t)| / (|v(x, t)| + 1e-8)`
/// using each sample's own class.
pub fn antisymmetry_residual<T: Real>(
    field: &impl VelocityField<T>,
    data: &LabeledDataset,
    samples: usize,
    seed: u64,
    t_eps: f64,
) -> Result<f64> {
    let mut batch = eval_bridges(data, samples, seed, 0.5)?;
    let mut ts = Vec::with_capacity(samples);
    for i in 0..samples as u64 {
        ts.push(rng::uniform(&mut rng::stream(seed, Purpose::Eval, 2, i), t_eps, 1.0 - t_eps));
    }
    batch = BridgeBatch::new(batch.z_y, batch.z_x, ts, batch.classes)?;
    let x = batch.x_t.cast::<T>();
    let idx: Vec<usize> = (0..samples).collect();
    let ratios = par::map_items(&idx, |&i| -> Result<f64> {
        let xi = x.select_rows(&[i])?;
        let q = VelocityQuery::single(batch.classes[i], field.num_classes())?;
        let v = field.velocity(&xi, batch.t[i], &q)?;
        let vf = field.velocity(&xi, 1.0 - batch.t[i], &q)?;
        let num: f64 = v
            .data()
            .iter()
            .zip(vf.data())
            .map(|(a, b)| (a.as_f64() + b.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(num / (v.norm() + 1e-8))
    });
    let mut sum = 0.0;
    for r in ratios {
        sum += r?;
    }
    Ok(sum / samples as f64)
}

/// Nearest-centroid classifier with a shared isotropic variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    pub centroids: Vec<Vec<f64>>,
    pub variance: f64,
}

impl NearestCentroid {
    pub fn fit<T: Real>(points: &DenseArray<T>, labels: &[usize], classes: usize) -> Result<Self> {
        let (x, n, d) = rows_f64(points)?;
        if labels.len() != n {
            return Err(Error::shape("classifier", "one label per point required"));
        }
        let mut sums = vec![vec![0.0; d]; classes];
        let mut counts = vec![0usize; classes];
        for (r, &c) in labels.iter().enumerate() {
            if c >= classes {
                return Err(Error::ClassOutOfRange { class: c, classes });
            }
            counts[c] += 1;
            sums[c].iter_mut().zip(&x[r * d..(r + 1) * d]).for_each(|(s, v)| *s += v);
        }
        if counts.contains(&0) {
            return Err(Error::invalid("every class needs at least one point"));
        }
        let centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &k)| s.into_iter().map(|v| v / k as f64).collect())
            .collect();
        let mut ss = 0.0;
        for (r, &c) in labels.iter().enumerate() {
            ss += sq_dist(&x[r * d..(r + 1) * d], &centroids[c]);
        }
        let variance = (ss / (n * d) as f64).max(1e-12);
        Ok(Self { centroids, variance })
    }

    pub fn fit_dataset(data: &LabeledDataset) -> Result<Self> {
        Self::fit(&data.points, &data.labels, data.num_classes())
    }

    /// Log posterior of every class under equal priors.
    pub fn log_posterior(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| -sq_dist(x, c) / (2.0 * self.variance))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.into_iter().map(|l| l - lse).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        self.centroids
            .iter()
            .enumerate()
            .min_by(|a, b| sq_dist(x, a.1).total_cmp(&sq_dist(x, b.1)))
            .map(|(c, _)| c)
            .unwrap_or(0)
    }

    pub fn predict_rows<T: Real>(&self, points: &DenseArray<T>) -> Vec<usize> {
        (0..points.rows())
            .map(|r| {
                let x: Vec<f64> = points.row(r).iter().map(|v| v.as_f64()).collect();
                self.predict(&x)
            })
            .collect()
    }

    pub fn accuracy<T: Real>(&self, points: &DenseArray<T>, labels: &[usize]) -> f64 {
        let pred = self.predict_rows(points);
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub energy_distance: Vec<f64>,
    pub sliced_wasserstein: Vec<f64>,
    pub projections: usize,
    pub endpoint_rmse_j: f64,
    pub endpoint_rmse_k: f64,
    pub antisymmetry_residual: f64,
    pub samples: usize,
    pub steps: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn csv_header(classes: usize) -> String {
        let mut cols = vec!["seed".to_string(), "steps".into(), "samples".into()];
        cols.extend((0..classes).map(|c| format!("energy_{c}")));
        cols.extend((0..classes).map(|c| format!("sw_{c}")));
        cols.extend([
            "endpoint_rmse_j".into(),
            "endpoint_rmse_k".into(),
            "antisymmetry_residual".into(),
        ]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.seed.to_string(), self.steps.to_string(), self.samples.to_string()];
        cols.extend(self.energy_distance.iter().map(f64::to_string));
        cols.extend(self.sliced_wasserstein.iter().map(f64::to_string));
        cols.extend([
            self.endpoint_rmse_j.to_string(),
            self.endpoint_rmse_k.to_string(),
            self.antisymmetry_residual.to_string(),
        ]);
        cols.join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub samples: usize,
    pub projections: usize,
    pub diagnostic_samples: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            samples: 2000,
            projections: 64,
            diagnostic_samples: 1000,
            seed: 0,
        }
    }
}

/// Generated samples for class `c`, decoded from seeded latents.
pub fn class_samples(
    model: &GafModel<f32>,
    class: usize,
    count: usize,
    seed: u64,
    sample: &SampleSettings,
) -> Result<DenseArray<f32>> {
    let d = model.config().data_dim;
    let z0 = DenseArray::matrix(count, d, rng::latents(seed, class as u64, count, d))?;
    generate(model, class, &z0, sample)
}

/// Full report: per-class distances between generated samples and the
/// reference set, plus endpoint and antisymmetry diagnostics.
pub fn evaluate(
    model: &GafModel<f32>,
    reference: &LabeledDataset,
    sample: &SampleSettings,
    eval: &EvalSettings,
) -> Result<EvalReport> {
    let classes = model.config().num_classes;
    if reference.num_classes() != classes {
        return Err(Error::invalid("reference class count differs from model"));
    }
    let mut energy = Vec::with_capacity(classes);
    let mut sw = Vec::with_capacity(classes);
    for c in 0..classes {
        let gen = class_samples(model, c, eval.samples, eval.seed, sample)?;
        let refc = reference.class_points(c)?;
        energy.push(energy_distance(&gen, &refc)?);
        sw.push(sliced_wasserstein(&gen, &refc, eval.projections, eval.seed)?);
    }
    let ds = eval.diagnostic_samples;
    Ok(EvalReport {
        energy_distance: energy,
        sliced_wasserstein: sw,
        projections: eval.projections,
        endpoint_rmse_j: endpoint_rmse(model, reference, EndpointSide::JAtNoise, ds, eval.seed, sample.t_eps)?,
        endpoint_rmse_k: endpoint_rmse(model, reference, EndpointSide::KAtData, ds, eval.seed, sample.t_eps)?,
        antisymmetry_residual: antisymmetry_residual(model, reference, ds, eval.seed, sample.t_eps)?,
        samples: eval.samples,
        steps: sample.steps,
        seed: eval.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[[f64; 2]]) -> DenseArray<f64> {
        DenseArray::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn energy_examples() {
        let a = pts(&[[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]]);
        let perm = pts(&[[1.0, 2.0], [-1.0, 0.5], [0.0, 0.0]]);
        assert!(energy_distance(&a, &perm).unwrap().abs() < 1e-10);
        let p = pts(&[[0.0, 0.0]]);
        let q = pts(&[[3.0, 4.0]]);
        assert!((energy_distance(&p, &q).unwrap() - 10.0).abs() < 1e-12);
        let b = pts(&[[5.0, 1.0], [2.0, 2.0]]);
        assert_eq!(
            energy_distance(&a, &b).unwrap().to_bits(),
            energy_distance(&b, &a).unwrap().to_bits()
        );
    }

    #[test]
    fn wasserstein_examples() {
        assert!((wasserstein_1d(&[0.0], &[1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(wasserstein_1d(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        // {0, 1} vs {0.5}: both halves at distance 0.5.
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
        let a = DenseArray::matrix(1, 1, vec![0.0]).unwrap();
        let b = DenseArray::matrix(1, 1, vec![1.0f64]).unwrap();
        assert!((sliced_wasserstein(&a, &b, 8, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn projections_are_unit() {
        for p in projections(3, 10, 4) {
            let n: f64 = p.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classifier_posterior_is_normalized() {
        let x = pts(&[[0.0, 0.0], [0.2, 0.0], [5.0, 5.0], [5.2, 5.0]]);
        let clf = NearestCentroid::fit(&x, &[0, 0, 1, 1], 2).unwrap();
        let lp = clf.log_posterior(&[0.1, 0.0]);
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(clf.predict(&[4.0, 4.0]), 1);
        assert_eq!(clf.accuracy(&x, &[0, 0, 1, 1]), 1.0);
    }
}
