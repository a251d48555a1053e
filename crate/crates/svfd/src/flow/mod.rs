//! Numerical integration of the flow ODE in both time directions, plus the
//! kinetic-energy regularizer and reverse-mode sweeps through the schemes.
//!
//! The direct map integrates `K` forward-Euler steps of size `1/K`; the
//! inverse map uses the modified Euler scheme, an explicit approximation of
//! the implicit backward step. The implicit scheme itself (fixed-point
//! solved) inverts the forward map exactly and serves as a test oracle.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::network::{GradientBundle, ShapeCodeGrid, VelocityNet};

/// A stationary velocity field evaluable on point batches. Implemented by
/// the network and by closed-form fields in tests.
pub trait VelocityField: Sync {
    fn eval(&self, points: &ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// Network-backed field with a fixed shape-code grid.
pub struct NetField<'a> {
    pub net: &'a VelocityNet,
    pub grid: &'a ShapeCodeGrid,
}

impl VelocityField for NetField<'_> {
    fn eval(&self, points: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.velocity_batch_par(points, self.grid)
    }
}

/// Trajectory of a point batch across the integration steps.
///
/// `states` has `K + 1` entries ordered by time index; `states[0]` is the
/// input for forward flows and the output for backward flows. `velocities`
/// holds the `K` stepping velocities and `kinetic_energy` their mean squared
/// norm over points and steps.
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub states: Vec<Array2<f64>>,
    pub velocities: Vec<Array2<f64>>,
    pub kinetic_energy: f64,
}

impl FlowResult {
    pub fn steps(&self) -> usize {
        self.velocities.len()
    }

    /// The final state of a forward flow: the direct map of the input.
    pub fn mapped(&self) -> &Array2<f64> {
        self.states.last().unwrap()
    }

    /// The initial state of a backward flow: the inverse map of the input.
    pub fn inverse_mapped(&self) -> &Array2<f64> {
        &self.states[0]
    }

    /// Re-derive the kinetic energy from the stored velocities; equals the
    /// accumulated value up to summation order.
    pub fn recompute_kinetic_energy(&self) -> f64 {
        mean_sq_norm(&self.velocities)
    }
}

fn mean_sq_norm(velocities: &[Array2<f64>]) -> f64 {
    let k = velocities.len();
    if k == 0 {
        return 0.0;
    }
    let m = velocities[0].nrows();
    let total: f64 = velocities
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>())
        .sum();
    total / (k * m) as f64
}

fn check_finite(state: &Array2<f64>, what: &str) -> Result<()> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!(
            "{what} produced a non-finite state (diverging field)"
        )));
    }
    Ok(())
}

/// Forward Euler: `x_(k+1) = x_k + (1/K) v(x_k)`; `states[K]` is the direct
/// map of the input points.
pub fn integrate_forward(
    field: &impl VelocityField,
    points: &ArrayView2<f64>,
    k: usize,
) -> Result<FlowResult> {
    if k == 0 {
        return Err(Error::invalid("need at least one integration step"));
    }
    let h = 1.0 / k as f64;
    let mut states = Vec::with_capacity(k + 1);
    let mut velocities = Vec::with_capacity(k);
    states.push(points.to_owned());
    for step in 0..k {
        let v = field.eval(&states[step].view())?;
        let next = &states[step] + &(&v * h);
        check_finite(&next, "forward integration")?;
        velocities.push(v);
        states.push(next);
    }
    let kinetic_energy = mean_sq_norm(&velocities);
    Ok(FlowResult {
        states,
        velocities,
        kinetic_energy,
    })
}

/// Modified Euler, backward in time:
/// `x_(k-1) = x_k - (1/K) v(x_k - (1/K) v(x_k))`; `states[0]` approximates
/// the inverse map of the input points.
pub fn integrate_backward_modified(
    field: &impl VelocityField,
    points: &ArrayView2<f64>,
    k: usize,
) -> Result<FlowResult> {
    if k == 0 {
        return Err(Error::invalid("need at least one integration step"));
    }
    let h = 1.0 / k as f64;
    let mut states = vec![Array2::zeros((0, 0)); k + 1];
    let mut velocities = vec![Array2::zeros((0, 0)); k];
    states[k] = points.to_owned();
    for step in (1..=k).rev() {
        let inner = field.eval(&states[step].view())?;
        let midpoint = &states[step] - &(&inner * h);
        let outer = field.eval(&midpoint.view())?;
        let prev = &states[step] - &(&outer * h);
        check_finite(&prev, "backward integration")?;
        velocities[step - 1] = outer;
        states[step - 1] = prev;
    }
    let kinetic_energy = mean_sq_norm(&velocities);
    Ok(FlowResult {
        states,
        velocities,
        kinetic_energy,
    })
}

/// Implicit backward Euler: solves `x_(k-1) = x_k - (1/K) v(x_(k-1))` by
/// fixed-point iteration from the modified-Euler guess. Inverts the forward
/// scheme exactly (up to the fixed-point tolerance); kept as a test oracle,
/// not used in training.
pub fn integrate_backward_implicit(
    field: &impl VelocityField,
    points: &ArrayView2<f64>,
    k: usize,
    fp_tol: f64,
    fp_max: usize,
) -> Result<FlowResult> {
    if k == 0 {
        return Err(Error::invalid("need at least one integration step"));
    }
    let h = 1.0 / k as f64;
    let mut states = vec![Array2::zeros((0, 0)); k + 1];
    let mut velocities = vec![Array2::zeros((0, 0)); k];
    states[k] = points.to_owned();
    for step in (1..=k).rev() {
        // modified-Euler initial guess
        let inner = field.eval(&states[step].view())?;
        let midpoint = &states[step] - &(&inner * h);
        let outer = field.eval(&midpoint.view())?;
        let mut y = &states[step] - &(&outer * h);
        let mut converged = false;
        let mut v_at_y = outer;
        for _ in 0..fp_max {
            v_at_y = field.eval(&y.view())?;
            let next = &states[step] - &(&v_at_y * h);
            let delta = (&next - &y)
                .iter()
                .fold(0.0f64, |a, &b| a.max(b.abs()));
            y = next;
            if delta < fp_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numerical(format!(
                "implicit backward step {step} did not converge within {fp_max} fixed-point iterations"
            )));
        }
        check_finite(&y, "implicit backward integration")?;
        velocities[step - 1] = field.eval(&y.view())?;
        let _ = v_at_y;
        states[step - 1] = y;
    }
    let kinetic_energy = mean_sq_norm(&velocities);
    Ok(FlowResult {
        states,
        velocities,
        kinetic_energy,
    })
}

/// Snapshot of the trajectory at `step`, for geodesic-path export.
pub fn geodesic_path(result: &FlowResult, step: usize) -> Result<&Array2<f64>> {
    result
        .states
        .get(step)
        .ok_or_else(|| Error::invalid(format!("step {step} out of range 0..={}", result.steps())))
}

/// Combined kinetic energy of a direct/inverse pair: mean over points and
/// steps of `|v_s|^2 + |v_t|^2`. Averaged (not summed) so the value is
/// insensitive to K and M.
pub fn kinetic_energy(forward: &FlowResult, backward: &FlowResult) -> f64 {
    forward.kinetic_energy + backward.kinetic_energy
}

/// Reverse sweep through a forward-Euler trajectory.
///
/// `d_final` is the loss cotangent of `states[K]`; `ke_coeff` is the
/// multiplier of this trajectory's `kinetic_energy` in the loss (its
/// contribution to each velocity cotangent is folded in here). Activations
/// are recomputed step by step, so only the stored states are needed.
/// Returns the loss gradient with respect to the input points.
pub fn backprop_forward(
    net: &VelocityNet,
    grid: &ShapeCodeGrid,
    result: &FlowResult,
    d_final: Array2<f64>,
    ke_coeff: f64,
    grads: &mut GradientBundle,
) -> Result<Array2<f64>> {
    let k = result.steps();
    let h = 1.0 / k as f64;
    let m = result.states[0].nrows();
    let ke_scale = ke_coeff * 2.0 / (k * m) as f64;
    let mut lambda = d_final;
    for step in (0..k).rev() {
        let mut mu = &result.velocities[step] * ke_scale;
        mu += &(&lambda * h);
        let dx = net.vjp_recompute_par(grid, &result.states[step].view(), &mu.view(), grads)?;
        lambda += &dx;
    }
    Ok(lambda)
}

/// Reverse sweep through a modified-Euler backward trajectory.
///
/// `d_initial` is the loss cotangent of `states[0]` (the inverse-mapped
/// points); `ke_coeff` as in [`backprop_forward`]. Returns the gradient with
/// respect to the input points (`states[K]`).
pub fn backprop_backward_modified(
    net: &VelocityNet,
    grid: &ShapeCodeGrid,
    result: &FlowResult,
    d_initial: Array2<f64>,
    ke_coeff: f64,
    grads: &mut GradientBundle,
) -> Result<Array2<f64>> {
    let k = result.steps();
    let h = 1.0 / k as f64;
    let m = result.states[k].nrows();
    let ke_scale = ke_coeff * 2.0 / (k * m) as f64;
    let mut lambda = d_initial;
    for step in 1..=k {
        let x_k = &result.states[step];
        // recompute the midpoint of this step
        let inner = net.velocity_batch_par(&x_k.view(), grid)?;
        let midpoint = x_k - &(&inner * h);
        // outer evaluation: velocity actually stored for this step
        let mut mu_out = &result.velocities[step - 1] * ke_scale;
        mu_out -= &(&lambda * h);
        let g_y = net.vjp_recompute_par(grid, &midpoint.view(), &mu_out.view(), grads)?;
        let mu_in = &g_y * (-h);
        let g_in = net.vjp_recompute_par(grid, &x_k.view(), &mu_in.view(), grads)?;
        lambda += &g_y;
        lambda += &g_in;
    }
    Ok(lambda)
}
