//! Dynamic layer: velocity-error barrier, smooth minimum of the channel
//! barriers, the energy barrier and the robust torque filter.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kin_cbf::RateModel;
use crate::task::{error_rate_map, error_time_partial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityBounds {
    /// Per-DoF bound ρ_i on `ζ_i − ζ^r_i`.
    pub rho: Vec<f64>,
    /// Below `‖ξ‖² < d_guard` the velocity row is dropped.
    pub d_guard: f64,
}

impl VelocityBounds {
    pub fn uniform(n: usize, rho: f64) -> Self {
        Self { rho: vec![rho; n], d_guard: 1e-4 }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.rho.len() != n {
            return Err(Error::Dimension { what: "velocity bounds", expected: n, got: self.rho.len() });
        }
        if self.rho.iter().any(|r| !(*r > 0.0)) || !(self.d_guard > 0.0 && self.d_guard < 1.0) {
            return Err(Error::Config("velocity bounds need ρ_i > 0 and 0 < d_guard < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynCbfParams {
    /// Softmin sharpness η.
    pub eta: f64,
    pub gamma_energy: f64,
    /// Per-DoF disturbance bounds `|δ_i| ≤ δ̄_i`.
    pub disturbance_bound: Vec<f64>,
    pub kappa_d: f64,
    pub kappa_v: f64,
    /// Keep the `ζ̇^r` term in the velocity constraint.
    #[serde(default)]
    pub reference_feedforward: bool,
}

impl DynCbfParams {
    /// Scalar bound `δ̄ = ‖[δ̄_i]‖`.
    pub fn delta_bar(&self) -> f64 {
        self.disturbance_bound.iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// Largest `−vᵀδ` over the disturbance box: `Σ |v_i| δ̄_i ≤ δ̄ ‖v‖`.
    pub fn disturbance_support(&self, v: &DVector<f64>) -> f64 {
        v.iter().zip(&self.disturbance_bound).map(|(vi, d)| vi.abs() * d).sum()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.disturbance_bound.len() != n {
            return Err(Error::Dimension {
                what: "disturbance bound",
                expected: n,
                got: self.disturbance_bound.len(),
            });
        }
        let positive = [self.eta, self.gamma_energy, self.kappa_d, self.kappa_v];
        if positive.iter().any(|v| !(*v > 0.0)) || self.disturbance_bound.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("dynamic barrier gains must be positive".into()));
        }
        Ok(())
    }
}

/// Barrier values at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierState {
    pub channels: Vector6<f64>,
    pub b_k: f64,
    pub weights: Vector6<f64>,
    pub b_vel: f64,
    pub xi: DVector<f64>,
    pub b_d: f64,
}

/// `ξ = ρ⁻¹ (ζ − ζ^r)`, `b = ½ (1 − ‖ξ‖²)`.
pub fn velocity_barrier(zeta: &DVector<f64>, zeta_r: &DVector<f64>, rho: &[f64]) -> (f64, DVector<f64>) {
    let xi = DVector::from_fn(zeta.len(), |i, _| (zeta[i] - zeta_r[i]) / rho[i]);
    (0.5 * (1.0 - xi.norm_squared()), xi)
}

/// `−(1/η) ln Σ exp(−η b_i)`, shifted by the minimum so it cannot overflow.
pub fn softmin_barrier(b: &[f64], eta: f64) -> f64 {
    let m = b.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = b.iter().map(|bi| (-eta * (bi - m)).exp()).sum();
    m - s.ln() / eta
}

/// Softmax weights `∂b_k/∂b_i`.
pub fn softmin_weights(b: &[f64], eta: f64) -> Vec<f64> {
    let m = b.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = b.iter().map(|bi| (-eta * (bi - m)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|wi| wi / s).collect()
}

/// `b_d = −½ ζᵀ M ζ + γ b_k`.
pub fn energy_barrier(mass: &DMatrix<f64>, zeta: &DVector<f64>, b_k: f64, gamma_energy: f64) -> f64 {
    -0.5 * zeta.dot(&(mass * zeta)) + gamma_energy * b_k
}

/// `∂b_k/∂q = Σ_i w_i (∂b_i/∂e_i) ∂e_i/∂q` for the chain Jacobian
/// `∂e/∂q` (6 × n).
pub fn bk_jacobian(weights: &Vector6<f64>, gradients: &Vector6<f64>, chain: &DMatrix<f64>) -> DVector<f64> {
    let mut row = DVector::zeros(chain.ncols());
    for i in 0..6 {
        row += chain.row(i).transpose() * (weights[i] * gradients[i]);
    }
    row
}

/// `∂e/∂q = E J T⁻¹` for contact gradient `gradient`.
pub fn error_configuration_jacobian(
    rate_map: &nalgebra::Matrix6<f64>,
    jacobian: &DMatrix<f64>,
    rate_transform: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let t_inv = rate_transform
        .clone()
        .try_inverse()
        .ok_or(Error::RepresentationSingularity { pitch: f64::NAN })?;
    let e = DMatrix::from_column_slice(6, 6, rate_map.as_slice());
    Ok(e * jacobian * t_inv)
}

/// Lower bound on `ḃ_k = Σ w_i (∂b_i/∂e_i) ė_i` over the gradient bounds.
pub fn softmin_rate_lower_bound(
    weights: &Vector6<f64>,
    gradients: &Vector6<f64>,
    twist: &Vector6<f64>,
    rates: &RateModel,
) -> f64 {
    let wh = weights.component_mul(gradients);
    let partial = error_time_partial(&rates.reference, &rates.l);
    [rates.gradient.lower, rates.gradient.upper]
        .into_iter()
        .map(|g| wh.dot(&(error_rate_map(g, &rates.l) * twist + partial)))
        .fold(f64::INFINITY, f64::min)
}

/// Linear constraint `aᵀ τ ≥ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub a: DVector<f64>,
    pub c: f64,
}

impl HalfSpace {
    pub fn slack(&self, tau: &DVector<f64>) -> f64 {
        self.a.dot(tau) - self.c
    }
}

/// Energy-barrier row:
/// `−ζᵀτ + ζᵀg + ζᵀJᵀλ − σ(ζ) + γ ḃ_k,min ≥ −κ_d b_d`, where `σ(ζ)` bounds
/// `−ζᵀδ` (see [`DynCbfParams::disturbance_support`]).
/// The dissipation `ζᵀDζ ≥ 0` is left out.
#[allow(clippy::too_many_arguments)]
pub fn energy_constraint(
    zeta: &DVector<f64>,
    gravity: &DVector<f64>,
    contact_power: f64,
    disturbance_margin: f64,
    gamma_energy: f64,
    bk_rate_min: f64,
    b_d: f64,
    kappa_d: f64,
) -> HalfSpace {
    let c = -(zeta.dot(gravity) + contact_power - disturbance_margin + gamma_energy * bk_rate_min + kappa_d * b_d);
    HalfSpace { a: -zeta, c }
}

/// Velocity-barrier row `ḃ + κ_v b ≥ 0` with `ḃ = −ξᵀρ⁻¹(ζ̇ − ζ̇^r)`,
/// `M ζ̇ = τ − bias − Jᵀλ − δ` and `δ` inside the box of `params`.
/// `None` when `‖ξ‖² < d_guard`.
#[allow(clippy::too_many_arguments)]
pub fn velocity_constraint(
    mass: &DMatrix<f64>,
    bias: &DVector<f64>,
    contact_load: &DVector<f64>,
    xi: &DVector<f64>,
    b_vel: f64,
    bounds: &VelocityBounds,
    params: &DynCbfParams,
    reference_accel: Option<&DVector<f64>>,
) -> Result<Option<HalfSpace>> {
    if xi.norm_squared() < bounds.d_guard {
        return Ok(None);
    }
    let s = DVector::from_fn(xi.len(), |i, _| xi[i] / bounds.rho[i]);
    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("inertia matrix is not positive definite".into()))?;
    let m_inv_s = chol.solve(&s);
    let mut c = -params.kappa_v * b_vel - m_inv_s.dot(&(bias + contact_load)) + params.disturbance_support(&m_inv_s);
    if let Some(acc) = reference_accel {
        c -= s.dot(acc);
    }
    Ok(Some(HalfSpace { a: -m_inv_s, c }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorqueFilterOutput {
    pub tau: DVector<f64>,
    /// Which of the supplied constraints ended up active.
    pub active: Vec<bool>,
}

const ACTIVE_TOL: f64 = 1e-12;

/// `argmin ‖τ − τ_des‖²` over at most two half-spaces, by enumerating the
/// active sets `{}`, `{1}`, `{2}`, `{1, 2}`.
pub fn project_halfspaces(tau_des: &DVector<f64>, rows: &[HalfSpace]) -> Result<TorqueFilterOutput> {
    assert!(rows.len() <= 2, "at most two constraints");
    let scale = |h: &HalfSpace| 1e-12 * (1.0 + h.c.abs() + h.a.norm() * tau_des.norm());
    let feasible = |tau: &DVector<f64>| rows.iter().all(|h| h.slack(tau) >= -scale(h));

    if feasible(tau_des) {
        return Ok(TorqueFilterOutput { tau: tau_des.clone(), active: vec![false; rows.len()] });
    }
    for (k, h) in rows.iter().enumerate() {
        let n2 = h.a.norm_squared();
        if n2 < ACTIVE_TOL {
            continue;
        }
        let mu = -h.slack(tau_des) / n2;
        if mu < 0.0 {
            continue;
        }
        let tau = tau_des + &h.a * mu;
        if feasible(&tau) {
            let mut active = vec![false; rows.len()];
            active[k] = true;
            return Ok(TorqueFilterOutput { tau, active });
        }
    }
    if rows.len() == 2 {
        let (a1, a2) = (&rows[0].a, &rows[1].a);
        let g = Matrix2::new(a1.dot(a1), a1.dot(a2), a2.dot(a1), a2.dot(a2));
        let r = Vector2::new(-rows[0].slack(tau_des), -rows[1].slack(tau_des));
        let det = g.determinant();
        if det.abs() > 1e-14 * g[(0, 0)] * g[(1, 1)] {
            let mu = g.try_inverse().ok_or(Error::Infeasible)? * r;
            if mu.x >= 0.0 && mu.y >= 0.0 {
                let tau = tau_des + a1 * mu.x + a2 * mu.y;
                if feasible(&tau) {
                    return Ok(TorqueFilterOutput { tau, active: vec![true, true] });
                }
            }
        }
    }
    Err(Error::Infeasible)
}

/// Robust torque filter; `rows` are the energy row and, when present, the
/// velocity row.
pub fn safe_torque_filter(tau_des: &DVector<f64>, rows: &[HalfSpace]) -> Result<TorqueFilterOutput> {
    if !tau_des.iter().all(|v| v.is_finite()) || rows.iter().any(|h| !h.c.is_finite()) {
        return Err(Error::Infeasible);
    }
    project_halfspaces(tau_des, rows)
}
