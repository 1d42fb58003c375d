//! Deterministic limited-memory BFGS for smooth convex objectives.

use std::collections::VecDeque;

use crate::matrix::dot;

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Gradient infinity-norm at `x`.
    pub grad_norm: f64,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f` from `x0`. `f` writes the gradient into its second argument and
/// returns the objective value. Stops when the gradient infinity-norm drops to `tol`
/// or after `max_iter` iterations. Steps must pass an Armijo test, except inside the
/// rounding band of the objective, where a smaller gradient norm is accepted instead.
pub fn lbfgs<F>(f: F, x0: Vec<f64>, max_iter: usize, tol: f64) -> Minimum
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut direction = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = [0.0; MEMORY];

    let mut iterations = 0;
    while iterations < max_iter {
        if inf_norm(&g) <= tol {
            break;
        }

        // two-loop recursion: direction = -H g
        direction.copy_from_slice(&g);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &direction);
            alpha[k] = a;
            direction.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / g.iter().map(|v| v.abs()).sum::<f64>().max(1.0),
        };
        direction.iter_mut().for_each(|d| *d *= gamma);
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &direction);
            direction
                .iter_mut()
                .zip(s)
                .for_each(|(d, si)| *d += (alpha[k] - b) * si);
        }
        direction.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&g, &direction);
        if slope >= 0.0 {
            // lost descent; restart from steepest descent
            history.clear();
            direction.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -dot(&g, &g);
        }

        let g_norm = inf_norm(&g);
        let noise = 1e-14 * (1.0 + value.abs());
        let mut step = 1.0;
        let accepted = loop {
            x_new
                .iter_mut()
                .zip(&x)
                .zip(&direction)
                .for_each(|((xn, xi), d)| *xn = xi + step * d);
            let v = f(&x_new, &mut g_new);
            if v <= value + ARMIJO * step * slope && v.is_finite() {
                break Some(v);
            }
            // below the resolution of the objective, fall back to gradient progress
            if (v - value).abs() <= noise && inf_norm(&g_new) < g_norm {
                break Some(v);
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        iterations += 1;
        let Some(v_new) = accepted else {
            break;
        };
        if x_new == x {
            break;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        value = v_new;
    }

    let grad_norm = inf_norm(&g);
    Minimum {
        x,
        value,
        iterations,
        grad_norm,
        converged: grad_norm <= tol,
    }
}
