//! Bounded Nelder–Mead for the low-dimensional outer GMM problem.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Converged once every vertex is within this distance (sup-norm) of
    /// the best one.
    pub x_tolerance: f64,
    /// Converged once vertex values differ by at most this fraction of the
    /// best value.
    pub f_tolerance: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            x_tolerance: 1e-6,
            f_tolerance: 1e-10,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best value after each iteration.
    pub trace: Vec<f64>,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Minimizes `f` over the box `[lower, upper]`; trial points outside the
/// box are projected onto it.
///
/// Projection can flatten the simplex against a bound, so the search is
/// restarted from the best point with a fresh simplex until a restart stops
/// improving.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    options: &NelderMeadOptions,
) -> Result<NelderMeadOutcome> {
    let mut out = simplex_search(&mut f, start, lower, upper, options)?;
    for _ in 0..MAX_RESTARTS {
        if out.iterations >= options.max_iterations {
            break;
        }
        let budget = NelderMeadOptions {
            max_iterations: options.max_iterations - out.iterations,
            ..*options
        };
        let next = simplex_search(&mut f, &out.x, lower, upper, &budget)?;
        let gain = out.value - next.value;
        let moved = next.x.iter().zip(&out.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.iterations += next.iterations;
        out.evaluations += next.evaluations;
        out.trace.extend(next.trace);
        if next.value <= out.value {
            out.x = next.x;
            out.value = next.value;
            out.converged = next.converged;
        }
        if gain <= RESTART_GAIN * out.value.abs() || moved <= RESTART_MOVE {
            break;
        }
    }
    Ok(out)
}

const MAX_RESTARTS: usize = 10;
/// A restart that improves the value by less than this fraction, or moves
/// less than `RESTART_MOVE`, ends the search.
const RESTART_GAIN: f64 = 1e-8;
const RESTART_MOVE: f64 = 1e-5;

fn simplex_search(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    options: &NelderMeadOptions,
) -> Result<NelderMeadOutcome> {
    let dim = start.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        f(x).map(|v| if v.is_nan() { f64::INFINITY } else { v })
    };

    let mut origin = start.to_vec();
    project(&mut origin, lower, upper);
    let mut simplex = vec![origin.clone()];
    for i in 0..dim {
        let mut vertex = origin.clone();
        // step inward when the start sits on the upper bound
        vertex[i] += if origin[i] + options.initial_step <= upper[i] {
            options.initial_step
        } else {
            -options.initial_step
        };
        project(&mut vertex, lower, upper);
        simplex.push(vertex);
    }
    let mut values = Vec::with_capacity(dim + 1);
    for v in &simplex {
        values.push(eval(v)?);
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        trace.push(values[0]);

        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = values[dim] - values[0];
        if diameter <= options.x_tolerance
            || (values[0].is_finite() && spread <= options.f_tolerance * values[0].abs())
        {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..dim)
            .map(|i| simplex[..dim].iter().map(|v| v[i]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = (0..dim).map(|i| centroid[i] + t * (simplex[dim][i] - centroid[i])).collect();
            project(&mut p, lower, upper);
            p
        };

        let reflected = along(-1.0);
        let f_reflected = eval(&reflected)?;
        if f_reflected < values[0] {
            let expanded = along(-2.0);
            let f_expanded = eval(&expanded)?;
            if f_expanded < f_reflected {
                simplex[dim] = expanded;
                values[dim] = f_expanded;
            } else {
                simplex[dim] = reflected;
                values[dim] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = f_reflected;
            continue;
        }
        let (contracted, f_contracted) = if f_reflected < values[dim] {
            let p = along(-0.5);
            let v = eval(&p)?;
            (p, v)
        } else {
            let p = along(0.5);
            let v = eval(&p)?;
            (p, v)
        };
        if f_contracted < values[dim].min(f_reflected) {
            simplex[dim] = contracted;
            values[dim] = f_contracted;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=dim {
            let shrunk: Vec<f64> = (0..dim).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
            values[i] = eval(&shrunk)?;
            simplex[i] = shrunk;
        }
    }

    let best = (0..=dim).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Ok(NelderMeadOutcome {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        evaluations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let out = nelder_mead(
            |x| Ok((x[0] - 0.3).powi(2) + 3.0 * (x[1] + 0.7).powi(2)),
            &[0.0, 0.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 0.3).abs() < 1e-6 && (out.x[1] + 0.7).abs() < 1e-6);
    }

    #[test]
    fn respects_bounds() {
        let out = nelder_mead(
            |x| Ok((x[0] - 2.0).powi(2) + x[1].powi(2)),
            &[0.0, 0.5],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-6);
        assert!(out.x[1].abs() < 1e-5, "{out:?}");
    }

    #[test]
    fn rosenbrock() {
        let out = nelder_mead(
            |x| Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)),
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &NelderMeadOptions {
                max_iterations: 2000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4);
    }
}
