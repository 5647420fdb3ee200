//! Deterministic ODE integration of a velocity query.
//!
//! Forward integration runs from `t_eps` to `1 - t_eps` (noise to data).
//! Reverse integration walks the same nodes backwards, still evaluating the
//! field at the current node, which moves a data point to the noise side.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffcore::{DenseArray, Real};
use crate::error::{Error, Result};
use crate::model::{VelocityField, VelocityQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Linear,
    /// `t_k = t_eps + (1 - 2 t_eps) (1 - cos(pi k / N)) / 2`
    Cosine,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::invalid(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Euler,
    Heun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    schedule: Schedule,
    t_eps: f64,
    direction: Direction,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(steps: usize, schedule: Schedule, t_eps: f64, direction: Direction) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("step count must be at least 1"));
        }
        if !(0.0..0.5).contains(&t_eps) {
            return Err(Error::invalid(format!("t_eps {t_eps} outside [0, 0.5)")));
        }
        let span = 1.0 - 2.0 * t_eps;
        let n = steps as f64;
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|k| {
                let frac = match schedule {
                    Schedule::Linear => k as f64 / n,
                    Schedule::Cosine => (1.0 - (std::f64::consts::PI * k as f64 / n).cos()) / 2.0,
                };
                t_eps + span * frac
            })
            .collect();
        nodes[0] = t_eps;
        nodes[steps] = 1.0 - t_eps;
        if direction == Direction::Reverse {
            nodes.reverse();
        }
        Ok(Self {
            steps,
            schedule,
            t_eps,
            direction,
            nodes,
        })
    }

    pub fn forward(steps: usize, schedule: Schedule, t_eps: f64) -> Result<Self> {
        Self::new(steps, schedule, t_eps, Direction::Forward)
    }

    pub fn reverse(steps: usize, schedule: Schedule, t_eps: f64) -> Result<Self> {
        Self::new(steps, schedule, t_eps, Direction::Reverse)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn t_eps(&self) -> f64 {
        self.t_eps
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Every state visited during integration, starting with the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real = f32> {
    pub times: Vec<f64>,
    pub states: Vec<DenseArray<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn initial(&self) -> &DenseArray<T> {
        &self.states[0]
    }

    pub fn final_state(&self) -> &DenseArray<T> {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn into_final(mut self) -> DenseArray<T> {
        self.states.pop().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV with columns `step,t,x_0..x_{d-1}` for one row of the batch.
    pub fn to_csv(&self, row: usize) -> Result<String> {
        let d = self.states[0].row_len();
        if row >= self.states[0].rows() {
            return Err(Error::invalid(format!("row {row} outside trajectory batch")));
        }
        let mut out = String::from("step,t");
        for e in 0..d {
            let _ = write!(out, ",x_{e}");
        }
        out.push('\n');
        for (k, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let _ = write!(out, "{k},{t}");
            for v in s.row(row) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        Ok(out)
    }
}

fn check_start<T: Real>(field: &impl VelocityField<T>, z0: &DenseArray<T>) -> Result<()> {
    let s = z0.shape();
    if s.len() != 2 || s[1] != field.data_dim() {
        return Err(Error::shape(
            "integrate",
            format!("initial state {s:?}, field dimension {}", field.data_dim()),
        ));
    }
    if !z0.all_finite() {
        return Err(Error::NonFiniteState { step: 0, t: f64::NAN });
    }
    Ok(())
}

fn axpy<T: Real>(z: &DenseArray<T>, a: f64, v: &DenseArray<T>, step: usize, t: f64) -> Result<DenseArray<T>> {
    if v.shape() != z.shape() {
        return Err(Error::shape("integrate", format!("velocity {:?} for state {:?}", v.shape(), z.shape())));
    }
    let a = T::lit(a);
    let data: Vec<T> = z.data().iter().zip(v.data()).map(|(&x, &y)| x + a * y).collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteState { step, t });
    }
    Ok(DenseArray::from_parts_unchecked(z.shape().to_vec(), data))
}

fn velocity_at<T: Real>(
    field: &impl VelocityField<T>,
    z: &DenseArray<T>,
    t: f64,
    q: &VelocityQuery,
    step: usize,
) -> Result<DenseArray<T>> {
    field.velocity(z, t, q).map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFiniteState { step, t },
        other => other,
    })
}

/// `z_{k+1} = z_k + (t_{k+1} - t_k) v(z_k, t_k)`; one evaluation per step.
pub fn euler_integrate<T: Real>(
    field: &impl VelocityField<T>,
    z0: &DenseArray<T>,
    grid: &TimeGrid,
    query: &VelocityQuery,
) -> Result<Trajectory<T>> {
    check_start(field, z0)?;
    let nodes = grid.nodes();
    let mut states = Vec::with_capacity(nodes.len());
    states.push(z0.clone());
    for k in 0..grid.steps() {
        let z = &states[k];
        let v = velocity_at(field, z, nodes[k], query, k)?;
        let next = axpy(z, nodes[k + 1] - nodes[k], &v, k + 1, nodes[k + 1])?;
        states.push(next);
    }
    Ok(Trajectory {
        times: nodes.to_vec(),
        states,
    })
}

/// Explicit trapezoidal rule; two evaluations per step.
pub fn heun_integrate<T: Real>(
    field: &impl VelocityField<T>,
    z0: &DenseArray<T>,
    grid: &TimeGrid,
    query: &VelocityQuery,
) -> Result<Trajectory<T>> {
    check_start(field, z0)?;
    let nodes = grid.nodes();
    let mut states = Vec::with_capacity(nodes.len());
    states.push(z0.clone());
    for k in 0..grid.steps() {
        let z = &states[k];
        let dt = nodes[k + 1] - nodes[k];
        let v1 = velocity_at(field, z, nodes[k], query, k)?;
        let pred = axpy(z, dt, &v1, k + 1, nodes[k + 1])?;
        let v2 = velocity_at(field, &pred, nodes[k + 1], query, k + 1)?;
        let sum = v1.add(&v2).map_err(|_| Error::NonFiniteState { step: k + 1, t: nodes[k + 1] })?;
        states.push(axpy(z, dt * 0.5, &sum, k + 1, nodes[k + 1])?);
    }
    Ok(Trajectory {
        times: nodes.to_vec(),
        states,
    })
}

pub fn integrate<T: Real>(
    field: &impl VelocityField<T>,
    z0: &DenseArray<T>,
    grid: &TimeGrid,
    query: &VelocityQuery,
    solver: Solver,
) -> Result<Trajectory<T>> {
    match solver {
        Solver::Euler => euler_integrate(field, z0, grid, query),
        Solver::Heun => heun_integrate(field, z0, grid, query),
    }
}
