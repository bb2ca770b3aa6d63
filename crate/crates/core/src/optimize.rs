//! Deterministic box-constrained minimization.
//!
//! A coarse grid seeds a projected Nelder-Mead search from the best few grid
//! points; each search is restarted until it stops improving and then
//! polished with a shrinking compass search. Coordinates are rescaled to the
//! unit cube so that axes with very different ranges are treated alike.
//! Axes whose bounds coincide are held fixed.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    /// Points per axis of the initial grid (at least 3).
    pub grid_points_per_axis: usize,
    /// Objective tolerance of the refinement.
    pub refine_tolerance: f64,
    /// Iteration cap for each simplex run.
    pub max_refine_iters: usize,
    /// Number of best grid points refined.
    pub starts: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            grid_points_per_axis: 7,
            refine_tolerance: 1e-8,
            max_refine_iters: 2000,
            starts: 3,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.grid_points_per_axis < 3 {
            return Err("grid_points_per_axis must be at least 3".into());
        }
        if !(self.refine_tolerance > 0.0) {
            return Err("refine_tolerance must be positive".into());
        }
        if self.max_refine_iters == 0 || self.starts == 0 {
            return Err("max_refine_iters and starts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxMinimum<const D: usize> {
    pub x: [f64; D],
    pub value: f64,
    /// Smallest objective value seen on the initial grid.
    pub grid_value: f64,
    pub evaluations: usize,
}

/// Simplex diameter below which a run is considered collapsed (unit cube).
const X_TOLERANCE: f64 = 1e-10;
const MAX_RESTARTS: usize = 8;

struct Scaled<'a, F, const D: usize> {
    f: &'a F,
    lower: [f64; D],
    span: [f64; D],
    free: Vec<usize>,
    evaluations: usize,
}

impl<F: Fn(&[f64; D]) -> f64, const D: usize> Scaled<'_, F, D> {
    fn to_box(&self, u: &[f64]) -> [f64; D] {
        let mut x = self.lower;
        for (slot, &axis) in self.free.iter().enumerate() {
            x[axis] = self.lower[axis] + u[slot].clamp(0.0, 1.0) * self.span[axis];
        }
        x
    }

    fn to_unit(&self, x: &[f64; D]) -> Vec<f64> {
        self.free
            .iter()
            .map(|&axis| ((x[axis] - self.lower[axis]) / self.span[axis]).clamp(0.0, 1.0))
            .collect()
    }

    fn eval(&mut self, u: &[f64]) -> f64 {
        self.evaluations += 1;
        let value = (self.f)(&self.to_box(u));
        if value.is_nan() {
            f64::INFINITY
        } else {
            value
        }
    }
}

/// Minimizes `f` over the box `[lower, upper]`.
///
/// `extra_starts` are refined alongside the best grid points (warm starts);
/// they are projected onto the box first. The result is never worse than
/// any grid point or extra start.
pub fn minimize_box<F, const D: usize>(
    f: &F,
    lower: [f64; D],
    upper: [f64; D],
    cfg: &OptConfig,
    extra_starts: &[[f64; D]],
) -> BoxMinimum<D>
where
    F: Fn(&[f64; D]) -> f64,
{
    let span: [f64; D] = std::array::from_fn(|k| (upper[k] - lower[k]).max(0.0));
    let free: Vec<usize> = (0..D).filter(|&k| span[k] > 0.0).collect();
    let mut problem = Scaled {
        f,
        lower,
        span,
        free,
        evaluations: 0,
    };
    let dims = problem.free.len();
    let g = cfg.grid_points_per_axis.max(2);

    let mut grid: Vec<(f64, Vec<f64>)> = Vec::with_capacity(g.pow(dims as u32));
    let mut index = vec![0usize; dims];
    loop {
        let u: Vec<f64> = index.iter().map(|&i| i as f64 / (g - 1) as f64).collect();
        let value = problem.eval(&u);
        grid.push((value, u));
        let mut axis = 0;
        while axis < dims {
            index[axis] += 1;
            if index[axis] < g {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
        if axis == dims {
            break;
        }
    }
    // Stable sort keeps grid order among ties, so results are deterministic.
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    let grid_value = grid[0].0;

    let mut starts: Vec<(f64, Vec<f64>)> = grid.into_iter().take(cfg.starts).collect();
    for x in extra_starts {
        let projected: [f64; D] = std::array::from_fn(|k| x[k].clamp(lower[k], lower[k] + span[k]));
        let u = problem.to_unit(&projected);
        let value = problem.eval(&u);
        starts.push((value, u));
    }

    let mut best = starts[0].clone();
    for (value, u) in &starts {
        if *value < best.0 {
            best = (*value, u.clone());
        }
    }
    if dims > 0 {
        let step = 1.0 / (g - 1) as f64;
        for (value, u) in starts {
            let candidate = refine(&mut problem, u, value, step, cfg);
            if candidate.0 < best.0 {
                best = candidate;
            }
        }
    }

    BoxMinimum {
        x: problem.to_box(&best.1),
        value: best.0,
        grid_value,
        evaluations: problem.evaluations,
    }
}

fn refine<F: Fn(&[f64; D]) -> f64, const D: usize>(
    problem: &mut Scaled<'_, F, D>,
    start: Vec<f64>,
    start_value: f64,
    step: f64,
    cfg: &OptConfig,
) -> (f64, Vec<f64>) {
    let mut best = (start_value, start);
    let mut h = step;
    for _ in 0..MAX_RESTARTS {
        let run = nelder_mead(problem, &best.1, best.0, h, cfg);
        let improvement = best.0 - run.0;
        if run.0 < best.0 {
            best = run;
        }
        if !(improvement > cfg.refine_tolerance) {
            break;
        }
        h = (h * 0.5).max(1e-4);
    }
    compass(problem, best, cfg)
}

/// Projected Nelder-Mead on the unit cube.
fn nelder_mead<F: Fn(&[f64; D]) -> f64, const D: usize>(
    problem: &mut Scaled<'_, F, D>,
    start: &[f64],
    start_value: f64,
    h: f64,
    cfg: &OptConfig,
) -> (f64, Vec<f64>) {
    let n = start.len();
    let mut simplex: Vec<(f64, Vec<f64>)> = vec![(start_value, start.to_vec())];
    for k in 0..n {
        let mut u = start.to_vec();
        u[k] = if u[k] + h <= 1.0 { u[k] + h } else { u[k] - h };
        let value = problem.eval(&u);
        simplex.push((value, u));
    }

    let project = |u: Vec<f64>| -> Vec<f64> { u.into_iter().map(|x| x.clamp(0.0, 1.0)).collect() };

    for _ in 0..cfg.max_refine_iters {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spread = simplex[n].0 - simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .map(|(_, u)| {
                u.iter()
                    .zip(&simplex[0].1)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() <= cfg.refine_tolerance && diameter <= X_TOLERANCE {
            break;
        }
        if diameter == 0.0 {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(_, u)| u[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along =
            |t: f64| -> Vec<f64> { project(centroid.iter().zip(&worst.1).map(|(c, w)| c + t * (c - w)).collect()) };

        let reflected = along(1.0);
        let fr = problem.eval(&reflected);
        if fr < simplex[0].0 {
            let expanded = along(2.0);
            let fe = problem.eval(&expanded);
            simplex[n] = if fe < fr { (fe, expanded) } else { (fr, reflected) };
            continue;
        }
        if fr < simplex[n - 1].0 {
            simplex[n] = (fr, reflected);
            continue;
        }
        let (contracted, fc) = if fr < worst.0 {
            let c = along(0.5);
            let fc = problem.eval(&c);
            (c, fc)
        } else {
            let c = along(-0.5);
            let fc = problem.eval(&c);
            (c, fc)
        };
        if fc < worst.0.min(fr) {
            simplex[n] = (fc, contracted);
            continue;
        }
        let anchor = simplex[0].1.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let u: Vec<f64> = anchor.iter().zip(&vertex.1).map(|(a, v)| a + 0.5 * (v - a)).collect();
            let value = problem.eval(&u);
            *vertex = (value, u);
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    simplex.swap_remove(0)
}

/// Coordinate search with a halving step; handles active bounds cleanly.
fn compass<F: Fn(&[f64; D]) -> f64, const D: usize>(
    problem: &mut Scaled<'_, F, D>,
    start: (f64, Vec<f64>),
    cfg: &OptConfig,
) -> (f64, Vec<f64>) {
    let mut best = start;
    let mut step = 1e-2;
    let mut budget = cfg.max_refine_iters * 4;
    while step > X_TOLERANCE && budget > 0 {
        let mut moved = false;
        for k in 0..best.1.len() {
            for sign in [1.0, -1.0] {
                let mut u = best.1.clone();
                u[k] = (u[k] + sign * step).clamp(0.0, 1.0);
                if u[k] == best.1[k] {
                    continue;
                }
                budget = budget.saturating_sub(1);
                let value = problem.eval(&u);
                if value < best.0 {
                    best = (value, u);
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}
