//! Inference-time operations over per-class velocity fields.
//!
//! All operations are compositions of sampler legs. A leg integrates one
//! query in one direction; consecutive legs hand over their final state.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DenseArray, Real};
use crate::error::{Error, Result};
use crate::model::{VelocityField, VelocityQuery};
use crate::sampler::{integrate, Direction, Schedule, Solver, TimeGrid, Trajectory};

/// Integration settings shared by every leg of an operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    pub steps: usize,
    pub schedule: Schedule,
    pub t_eps: f64,
    pub solver: Solver,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            steps: 250,
            schedule: Schedule::Linear,
            t_eps: crate::T_EPS,
            solver: Solver::Euler,
        }
    }
}

impl SampleSettings {
    pub fn grid(&self, direction: Direction) -> Result<TimeGrid> {
        TimeGrid::new(self.steps, self.schedule, self.t_eps, direction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub query: VelocityQuery,
    pub direction: Direction,
    pub steps: usize,
    pub schedule: Schedule,
}

/// Ordered legs; each starts from the previous leg's final state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub legs: Vec<Leg>,
    pub t_eps: f64,
    pub solver: Solver,
}

impl TransportPlan {
    pub fn run<T: Real>(&self, field: &impl VelocityField<T>, z0: &DenseArray<T>) -> Result<Vec<Trajectory<T>>> {
        if self.legs.is_empty() {
            return Err(Error::invalid("transport plan has no legs"));
        }
        let mut out: Vec<Trajectory<T>> = Vec::with_capacity(self.legs.len());
        for leg in &self.legs {
            let grid = TimeGrid::new(leg.steps, leg.schedule, self.t_eps, leg.direction)?;
            let start = out.last().map_or(z0, |t| t.final_state());
            let tr = integrate(field, start, &grid, &leg.query, self.solver)?;
            out.push(tr);
        }
        Ok(out)
    }
}

fn leg(query: VelocityQuery, direction: Direction, s: &SampleSettings) -> Leg {
    Leg {
        query,
        direction,
        steps: s.steps,
        schedule: s.schedule,
    }
}

fn single_leg_plan(query: VelocityQuery, direction: Direction, s: &SampleSettings) -> TransportPlan {
    TransportPlan {
        legs: vec![leg(query, direction, s)],
        t_eps: s.t_eps,
        solver: s.solver,
    }
}

fn run_final<T: Real>(field: &impl VelocityField<T>, z0: &DenseArray<T>, plan: &TransportPlan) -> Result<DenseArray<T>> {
    Ok(plan.run(field, z0)?.pop().expect("one leg").into_final())
}

/// Integrates class `c` forward from noise `z0`.
pub fn generate<T: Real>(
    field: &impl VelocityField<T>,
    class: usize,
    z0: &DenseArray<T>,
    settings: &SampleSettings,
) -> Result<DenseArray<T>> {
    let q = VelocityQuery::single(class, field.num_classes())?;
    run_final(field, z0, &single_leg_plan(q, Direction::Forward, settings))
}

/// Forward integration of an arbitrary blend from noise `z0`.
pub fn generate_blend<T: Real>(
    field: &impl VelocityField<T>,
    query: &VelocityQuery,
    z0: &DenseArray<T>,
    settings: &SampleSettings,
) -> Result<DenseArray<T>> {
    run_final(field, z0, &single_leg_plan(query.clone(), Direction::Forward, settings))
}

/// Reverse-integrates class `c` from data `x` to the noise side.
pub fn encode<T: Real>(
    field: &impl VelocityField<T>,
    class: usize,
    x: &DenseArray<T>,
    settings: &SampleSettings,
) -> Result<DenseArray<T>> {
    let q = VelocityQuery::single(class, field.num_classes())?;
    run_final(field, x, &single_leg_plan(q, Direction::Reverse, settings))
}

/// Encodes `x_i` under class `i`, then decodes under class `j`.
pub fn cross_class_transport<T: Real>(
    field: &impl VelocityField<T>,
    x_i: &DenseArray<T>,
    i: usize,
    j: usize,
    settings: &SampleSettings,
) -> Result<DenseArray<T>> {
    let n = field.num_classes();
    let plan = TransportPlan {
        legs: vec![
            leg(VelocityQuery::single(i, n)?, Direction::Reverse, settings),
            leg(VelocityQuery::single(j, n)?, Direction::Forward, settings),
        ],
        t_eps: settings.t_eps,
        solver: settings.solver,
    };
    run_final(field, x_i, &plan)
}

/// One sample per `alpha`, all from the same `z0`, under
/// `(1 - alpha) v_i + alpha v_j`.
pub fn interpolate_pair<T: Real>(
    field: &impl VelocityField<T>,
    i: usize,
    j: usize,
    alphas: &[f64],
    z0: &DenseArray<T>,
    settings: &SampleSettings,
) -> Result<Vec<DenseArray<T>>> {
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid(format!("alpha {a} outside [0, 1]")));
    }
    alphas
        .iter()
        .map(|&a| {
            let q = VelocityQuery::pair(i, j, a, field.num_classes())?;
            generate_blend(field, &q, z0, settings)
        })
        .collect()
}

/// `alpha_steps` uniform values from 0 to 1 inclusive.
pub fn uniform_alphas(alpha_steps: usize) -> Result<Vec<f64>> {
    if alpha_steps < 2 {
        return Err(Error::invalid("alpha_steps must be at least 2"));
    }
    let last = (alpha_steps - 1) as f64;
    Ok((0..alpha_steps).map(|k| k as f64 / last).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleFrame<T: Real = f32> {
    pub leg: usize,
    pub from: usize,
    pub to: usize,
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub state: DenseArray<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleResult<T: Real = f32> {
    pub frames: Vec<CycleFrame<T>>,
    /// Per-row distance between the first and the last frame.
    pub closure: Vec<f64>,
}

impl<T: Real> CycleResult<T> {
    pub fn max_closure(&self) -> f64 {
        self.closure.iter().copied().fold(0.0, f64::max)
    }
}

fn check_cycle(cycle: &[usize], classes: usize) -> Result<()> {
    if cycle.len() < 2 || cycle.first() != cycle.last() {
        return Err(Error::invalid(format!(
            "cycle {cycle:?} must have at least two entries and end where it starts"
        )));
    }
    if let Some(&c) = cycle.iter().find(|&&c| c >= classes) {
        return Err(Error::ClassOutOfRange { class: c, classes });
    }
    Ok(())
}

/// Row-wise Euclidean distances.
pub fn row_distances<T: Real>(a: &DenseArray<T>, b: &DenseArray<T>) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("row_distances", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok((0..a.rows())
        .map(|r| {
            a.row(r)
                .iter()
                .zip(b.row(r))
                .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Decodes the shared latent `z0` under the blends along each edge of
/// `cycle`. Frame `alpha = 1` of one edge and frame `alpha = 0` of the next
/// are the same generation, and so are the first and last frames.
pub fn cyclic_transport<T: Real>(
    field: &impl VelocityField<T>,
    cycle: &[usize],
    z0: &DenseArray<T>,
    alpha_steps: usize,
    settings: &SampleSettings,
) -> Result<CycleResult<T>> {
    check_cycle(cycle, field.num_classes())?;
    let alphas = uniform_alphas(alpha_steps)?;
    let mut frames = Vec::new();
    for (leg, w) in cycle.windows(2).enumerate() {
        let states = interpolate_pair(field, w[0], w[1], &alphas, z0, settings)?;
        for (&alpha, state) in alphas.iter().zip(states) {
            frames.push(CycleFrame {
                leg,
                from: w[0],
                to: w[1],
                alpha,
                weights: VelocityQuery::pair(w[0], w[1], alpha, field.num_classes())?
                    .as_slice()
                    .to_vec(),
                state,
            });
        }
    }
    let closure = row_distances(&frames[0].state, &frames[frames.len() - 1].state)?;
    Ok(CycleResult { frames, closure })
}

/// Chains encode-decode transports around `cycle`, starting from the class
/// `cycle[0]` generation of `z0`. Returns the visited states and per-row
/// closure distances.
pub fn chained_cycle<T: Real>(
    field: &impl VelocityField<T>,
    cycle: &[usize],
    z0: &DenseArray<T>,
    settings: &SampleSettings,
) -> Result<(Vec<DenseArray<T>>, Vec<f64>)> {
    check_cycle(cycle, field.num_classes())?;
    let mut states = vec![generate(field, cycle[0], z0, settings)?];
    for w in cycle.windows(2) {
        let next = cross_class_transport(field, states.last().unwrap(), w[0], w[1], settings)?;
        states.push(next);
    }
    let closure = row_distances(&states[0], states.last().unwrap())?;
    Ok((states, closure))
}

/// Square-to-simplex map: `(u (1 - v), (1 - u)(1 - v), v)`.
pub fn barycentric_weights(u: f64, v: f64) -> (f64, f64, f64) {
    (u * (1.0 - v), (1.0 - u) * (1.0 - v), v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell<T: Real = f32> {
    pub row: usize,
    pub col: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub state: DenseArray<T>,
}

/// `(row, col, alpha, beta, gamma)`.
pub type LayoutCell = (usize, usize, f64, f64, f64);

/// Weight triple of every cell of an `R x R` grid, row-major.
/// Row `i` sets `u = i / (R - 1)`, column `j` sets `v = j / (R - 1)`.
pub fn barycentric_layout(resolution: usize) -> Result<Vec<LayoutCell>> {
    if resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    let last = (resolution - 1) as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let (a, b, g) = barycentric_weights(i as f64 / last, j as f64 / last);
            out.push((i, j, a, b, g));
        }
    }
    Ok(out)
}

pub fn blend_query(classes: (usize, usize, usize), w: (f64, f64, f64), num_classes: usize) -> Result<VelocityQuery> {
    let mut weights = vec![0.0; num_classes];
    for (c, x) in [(classes.0, w.0), (classes.1, w.1), (classes.2, w.2)] {
        if c >= num_classes {
            return Err(Error::ClassOutOfRange {
                class: c,
                classes: num_classes,
            });
        }
        weights[c] += x;
    }
    VelocityQuery::weights(weights)
}

/// Decodes `z0` under the blend of every grid cell.
pub fn barycentric_grid<T: Real>(
    field: &impl VelocityField<T>,
    classes: (usize, usize, usize),
    resolution: usize,
    z0: &DenseArray<T>,
    settings: &SampleSettings,
) -> Result<Vec<GridCell<T>>> {
    let (i, j, k) = classes;
    if i == j || j == k || i == k {
        return Err(Error::invalid("barycentric grid needs three distinct classes"));
    }
    barycentric_layout(resolution)?
        .into_iter()
        .map(|(row, col, alpha, beta, gamma)| {
            let q = blend_query(classes, (alpha, beta, gamma), field.num_classes())?;
            Ok(GridCell {
                row,
                col,
                alpha,
                beta,
                gamma,
                state: generate_blend(field, &q, z0, settings)?,
            })
        })
        .collect()
}

/// CSV with columns `row,col,alpha,beta,gamma,x_0..` for one latent row.
pub fn grid_csv<T: Real>(cells: &[GridCell<T>], latent: usize) -> String {
    use std::fmt::Write as _;
    let d = cells.first().map_or(0, |c| c.state.row_len());
    let mut out = String::from("row,col,alpha,beta,gamma");
    for e in 0..d {
        let _ = write!(out, ",x_{e}");
    }
    out.push('\n');
    for c in cells {
        let _ = write!(out, "{},{},{},{},{}", c.row, c.col, c.alpha, c.beta, c.gamma);
        for v in c.state.row(latent) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barycentric_weights_sum_and_corners() {
        for (_, _, a, b, g) in barycentric_layout(7).unwrap() {
            assert!((a + b + g - 1.0).abs() < 1e-12);
            assert!(a >= 0.0 && b >= 0.0 && g >= 0.0);
        }
        assert_eq!(barycentric_weights(1.0, 0.0), (1.0, 0.0, 0.0));
        assert_eq!(barycentric_weights(0.0, 0.0), (0.0, 1.0, 0.0));
        assert_eq!(barycentric_weights(0.4, 1.0).2, 1.0);
    }

    #[test]
    fn alphas_and_cycles_validate() {
        assert_eq!(uniform_alphas(3).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(uniform_alphas(1).is_err());
        assert!(check_cycle(&[0, 1, 2], 3).is_err());
        assert!(check_cycle(&[0], 3).is_err());
        assert!(check_cycle(&[0, 5, 0], 3).is_err());
        assert!(check_cycle(&[0, 1, 2, 0], 3).is_ok());
    }

    #[test]
    fn blend_query_accumulates() {
        let q = blend_query((0, 2, 1), (0.2, 0.3, 0.5), 3).unwrap();
        assert_eq!(q.as_slice(), &[0.2, 0.5, 0.3]);
        assert!(blend_query((0, 1, 3), (1.0, 0.0, 0.0), 3).is_err());
    }
}
