#![allow(dead_code)]

use gaf_core::{DenseArray, Real, Result, VelocityField, VelocityQuery};

/// Per-class affine field `v_c(x, t) = a_c x + b_c t`, blended linearly.
pub struct LinearField {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub dim: usize,
}

impl LinearField {
    pub fn three() -> Self {
        Self {
            a: vec![0.7, -0.4, 1.1],
            b: vec![0.3, 1.0, -0.5],
            dim: 2,
        }
    }

    fn coeffs(&self, q: &VelocityQuery) -> (f64, f64) {
        q.active().fold((0.0, 0.0), |(a, b), (c, w)| (a + w * self.a[c], b + w * self.b[c]))
    }

    /// Exact flow of the blended field from `(x0, t0)` to `t1`.
    pub fn exact(&self, x0: f64, t0: f64, t1: f64, q: &VelocityQuery) -> f64 {
        let (a, b) = self.coeffs(q);
        let xp = |t: f64| -(b / a) * t - b / (a * a);
        (x0 - xp(t0)) * (a * (t1 - t0)).exp() + xp(t1)
    }
}

impl<T: Real> VelocityField<T> for LinearField {
    fn data_dim(&self) -> usize {
        self.dim
    }
    fn num_classes(&self) -> usize {
        self.a.len()
    }
    fn velocity(&self, x: &DenseArray<T>, t: f64, q: &VelocityQuery) -> Result<DenseArray<T>> {
        let (a, b) = self.coeffs(q);
        x.map(|v| T::lit(a * v.as_f64() + b * t))
    }
}

/// Perfect twins for a fixed set of pairs: `J = z_y`, `K = z_x` row by row.
pub struct OracleTwins<T: Real> {
    pub z_y: DenseArray<T>,
    pub z_x: DenseArray<T>,
}

impl<T: Real> VelocityField<T> for OracleTwins<T> {
    fn data_dim(&self) -> usize {
        self.z_x.row_len()
    }
    fn num_classes(&self) -> usize {
        1
    }
    fn velocity(&self, _x: &DenseArray<T>, _t: f64, _q: &VelocityQuery) -> Result<DenseArray<T>> {
        self.z_x.sub(&self.z_y)
    }
}

pub fn latents<T: Real>(seed: u64, rows: usize, dim: usize) -> DenseArray<T> {
    DenseArray::matrix(rows, dim, gaf_core::rng::latents(seed, 0, rows, dim)).unwrap()
}
