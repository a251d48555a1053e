//! Limited-memory BFGS for latent-code fine-tuning.
//!
//! Two-loop recursion over a bounded (s, y) history with Armijo backtracking;
//! failed line searches fall back to a plain gradient step with a warning.

use std::collections::VecDeque;

use ndarray::Array1;

use crate::error::Result;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_TRIALS: usize = 20;
const CURVATURE_GUARD: f64 = 1e-10;

/// Optimizer history: recent displacement/gradient-change pairs plus the
/// last accepted gradient.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    history: VecDeque<(Array1<f64>, Array1<f64>)>,
    m: usize,
}

impl LbfgsState {
    pub fn new(history_depth: usize) -> Self {
        Self {
            history: VecDeque::new(),
            m: history_depth.max(1),
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }
}

/// Outcome of one step.
#[derive(Debug, Clone, Copy)]
pub struct LbfgsStep {
    pub loss_before: f64,
    pub loss_after: f64,
    pub moved: bool,
    /// The quasi-Newton direction was rejected and a gradient step was used.
    pub fell_back: bool,
}

/// One L-BFGS iteration on `x`: evaluate, build the two-loop direction,
/// backtrack, and update the curvature history. `closure` returns the loss
/// and its gradient at a candidate point and must be re-evaluable.
pub fn lbfgs_step(
    x: &mut Array1<f64>,
    closure: &mut dyn FnMut(&Array1<f64>) -> Result<(f64, Array1<f64>)>,
    state: &mut LbfgsState,
) -> Result<LbfgsStep> {
    let (f0, g0) = closure(x)?;
    let g_norm2 = g0.dot(&g0);
    if g_norm2 == 0.0 {
        return Ok(LbfgsStep {
            loss_before: f0,
            loss_after: f0,
            moved: false,
            fell_back: false,
        });
    }

    let mut direction = two_loop_direction(&g0, &state.history);
    let mut fell_back = false;
    if direction.dot(&g0) >= 0.0 {
        // not a descent direction: drop the history and restart from steepest
        state.history.clear();
        direction = -&g0;
        fell_back = true;
    }

    let mut accepted = line_search(x, f0, &g0, &direction, closure)?;
    if accepted.is_none() && !fell_back {
        log::warn!("l-bfgs line search failed, falling back to a gradient step");
        fell_back = true;
        state.history.clear();
        direction = -&g0;
        accepted = line_search(x, f0, &g0, &direction, closure)?;
    }

    match accepted {
        Some((x_new, f_new, g_new)) => {
            let s = &x_new - &*x;
            let y = &g_new - &g0;
            if s.dot(&y) > CURVATURE_GUARD {
                state.history.push_back((s, y));
                while state.history.len() > state.m {
                    state.history.pop_front();
                }
            } else {
                // negative or vanishing curvature along the step: the stored
                // pairs no longer model the local Hessian, start over
                state.history.clear();
            }
            *x = x_new;
            Ok(LbfgsStep {
                loss_before: f0,
                loss_after: f_new,
                moved: true,
                fell_back,
            })
        }
        None => {
            log::warn!("l-bfgs gradient fallback also failed, keeping the current point");
            Ok(LbfgsStep {
                loss_before: f0,
                loss_after: f0,
                moved: false,
                fell_back: true,
            })
        }
    }
}

/// Two-loop recursion: approximates `-H g` with the implicit inverse Hessian
/// built from the history, scaled by the latest curvature pair.
fn two_loop_direction(g: &Array1<f64>, history: &VecDeque<(Array1<f64>, Array1<f64>)>) -> Array1<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / y.dot(s);
        let alpha = rho * s.dot(&q);
        q = &q - &(y * alpha);
        alphas.push((alpha, rho));
    }
    if let Some((s, y)) = history.back() {
        let gamma = s.dot(y) / y.dot(y);
        q *= gamma;
    }
    for ((s, y), (alpha, rho)) in history.iter().zip(alphas.iter().rev()) {
        let beta = rho * y.dot(&q);
        q = &q + &(s * (alpha - beta));
    }
    -q
}

#[allow(clippy::type_complexity)]
fn line_search(
    x: &Array1<f64>,
    f0: f64,
    g0: &Array1<f64>,
    direction: &Array1<f64>,
    closure: &mut dyn FnMut(&Array1<f64>) -> Result<(f64, Array1<f64>)>,
) -> Result<Option<(Array1<f64>, f64, Array1<f64>)>> {
    let slope = g0.dot(direction);
    let mut t = 1.0;
    for _ in 0..MAX_TRIALS {
        let candidate = x + &(direction * t);
        let (f, g) = closure(&candidate)?;
        if f.is_finite() && f <= f0 + ARMIJO_C * t * slope {
            return Ok(Some((candidate, f, g)));
        }
        t *= BACKTRACK_SHRINK;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn isotropic_quadratic_converges_within_ten_steps() {
        // |z - z*|^2: exact once the first curvature pair is in
        let target = array![1.0, -2.0, 0.5, 3.0];
        let mut closure = |z: &Array1<f64>| -> Result<(f64, Array1<f64>)> {
            let d = z - &target;
            Ok(((&d * &d).sum(), &d * 2.0))
        };
        let mut z = array![5.0, 5.0, 5.0, 5.0];
        let mut state = LbfgsState::new(10);
        for _ in 0..10 {
            lbfgs_step(&mut z, &mut closure, &mut state).unwrap();
        }
        let err = (&z - &target).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(err < 1e-8, "distance to optimum {err}");
    }

    #[test]
    fn anisotropic_quadratic_converges() {
        let target = array![1.0, -2.0, 0.5, 3.0];
        let scales = array![1.0, 4.0, 0.25, 2.0];
        let mut closure = |z: &Array1<f64>| -> Result<(f64, Array1<f64>)> {
            let d = z - &target;
            let f = (&d * &d * &scales).sum();
            let g = &d * &scales * 2.0;
            Ok((f, g))
        };
        let mut z = array![5.0, 5.0, 5.0, 5.0];
        let mut state = LbfgsState::new(10);
        for _ in 0..25 {
            lbfgs_step(&mut z, &mut closure, &mut state).unwrap();
        }
        let err = (&z - &target).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(err < 1e-6, "distance to optimum {err}");
    }

    #[test]
    fn zero_gradient_does_not_move() {
        let mut closure =
            |_: &Array1<f64>| -> Result<(f64, Array1<f64>)> { Ok((3.0, Array1::zeros(2))) };
        let mut z = array![0.7, -0.3];
        let before = z.clone();
        let mut state = LbfgsState::new(5);
        let step = lbfgs_step(&mut z, &mut closure, &mut state).unwrap();
        assert!(!step.moved);
        assert_eq!(z, before);
    }

    #[test]
    fn monotone_nonincreasing_loss() {
        // Rosenbrock-style curved valley
        let mut closure = |z: &Array1<f64>| -> Result<(f64, Array1<f64>)> {
            let (a, b) = (z[0], z[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = array![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a)
            ];
            Ok((f, g))
        };
        let mut z = array![-1.2, 1.0];
        let mut state = LbfgsState::new(10);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let step = lbfgs_step(&mut z, &mut closure, &mut state).unwrap();
            assert!(step.loss_after <= prev.max(step.loss_before) + 1e-12);
            prev = step.loss_after;
        }
        assert!(prev < 1e-6, "final rosenbrock loss {prev}");
    }
}
