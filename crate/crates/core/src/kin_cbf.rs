//! Kinematic layer: nominal task-space velocity, per-channel error barriers,
//! the closed-form safety filter and resolution to quasi-velocities.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::contact::GradientBounds;
use crate::error::{Error, Result};
use crate::task::{ReferenceSample, TaskError, TaskReference};

/// Below this `|∂b_i/∂e_i|` a violated channel cannot be corrected.
pub const DEGENERATE_GRADIENT: f64 = 1e-9;

/// Error corridor `−M̲_i ≤ e_i ≤ M̄_i` and the force corridor `[f̲*, f̄*]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyBounds {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
    pub f_floor: f64,
    pub f_ceiling: f64,
    /// Clearance kept from the force corridor when clipping the force bounds.
    #[serde(default = "default_corridor_margin")]
    pub corridor_margin: f64,
}

fn default_corridor_margin() -> f64 {
    0.05
}

impl SafetyBounds {
    pub fn reference() -> Self {
        Self {
            lower: [1.0, 0.1, 0.1, 0.3, 0.2, 0.2],
            upper: [0.5, 0.1, 0.1, 0.3, 0.2, 0.2],
            f_floor: 0.2,
            f_ceiling: 1.8,
            corridor_margin: default_corridor_margin(),
        }
    }

    pub fn lower(&self) -> Vector6<f64> {
        Vector6::from(self.lower)
    }

    pub fn upper(&self) -> Vector6<f64> {
        Vector6::from(self.upper)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.iter().chain(&self.upper).any(|m| !(*m > 0.0)) {
            return Err(Error::Config("error bounds must be positive".into()));
        }
        if !(self.f_floor > 0.0 && self.f_floor < self.f_ceiling) {
            return Err(Error::Config("force corridor needs 0 < f_floor < f_ceiling".into()));
        }
        Ok(())
    }

    /// Strictly inside every channel's corridor.
    pub fn contains(&self, e: &Vector6<f64>) -> bool {
        (0..6).all(|i| -self.lower[i] < e[i] && e[i] < self.upper[i])
    }

    /// Force-channel bounds shrunk so that `f^d(t) + [−M̲_f, M̄_f]` stays
    /// `corridor_margin` inside `[f̲*, f̄*]`. Fails when nothing is left.
    pub fn clipped_to_corridor(&self, reference: &TaskReference) -> Result<SafetyBounds> {
        let f = &reference.force;
        let (lo, hi) = (f.offset - f.amplitude.abs(), f.offset + f.amplitude.abs());
        let mut out = *self;
        out.lower[0] = self.lower[0].min(lo - self.f_floor - self.corridor_margin);
        out.upper[0] = self.upper[0].min(self.f_ceiling - hi - self.corridor_margin);
        if !(out.lower[0] > 0.0) {
            return Err(Error::Config(format!(
                "inf{{−M̲_f + f^d}} > f̲* cannot hold: f^d dips to {lo} with f̲* = {}",
                self.f_floor
            )));
        }
        if !(out.upper[0] > 0.0) {
            return Err(Error::Config(format!(
                "sup{{M̄_f + f^d}} < f̄* cannot hold: f^d reaches {hi} with f̄* = {}",
                self.f_ceiling
            )));
        }
        Ok(out)
    }

    /// The force corridor must enclose `f^d(t) + [−M̲_f, M̄_f]` for all t.
    pub fn check_force_corridor(&self, reference: &TaskReference) -> Result<()> {
        let f = &reference.force;
        let (lo, hi) = (f.offset - f.amplitude.abs(), f.offset + f.amplitude.abs());
        if !(lo - self.lower[0] > self.f_floor && hi + self.upper[0] < self.f_ceiling) {
            return Err(Error::Config(format!(
                "force corridor [{}, {}] does not enclose the reference band [{}, {}]",
                self.f_floor,
                self.f_ceiling,
                lo - self.lower[0],
                hi + self.upper[0]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterForm {
    /// Exact per-channel projection.
    #[default]
    Decoupled,
    /// One joint correction `l = −A Ψ / ‖A‖²` over the violated channels.
    /// Only guarantees the barrier condition when a single channel is
    /// violated.
    Coupled,
}

/// Quadratic joint-limit potential pushed through the null space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimitTask {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub gain: f64,
}

impl JointLimitTask {
    /// `ζ⁰`: zero on the vehicle, `−k (q_j − mid_j) / half_j²` on the joints.
    pub fn secondary_velocity(&self, q: &DVector<f64>) -> DVector<f64> {
        let n = q.len();
        let mut v = DVector::zeros(n);
        for (j, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            v[6 + j] = -self.gain * (q[6 + j] - mid) / (half * half);
        }
        v
    }

    pub fn validate(&self, arm_dof: usize) -> Result<()> {
        if self.lower.len() != arm_dof || self.upper.len() != arm_dof {
            return Err(Error::Dimension { what: "joint limits", expected: arm_dof, got: self.lower.len() });
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) || !(self.gain >= 0.0) {
            return Err(Error::Config("joint limits need lower < upper and a non-negative gain".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinCbfParams {
    pub gamma: f64,
    pub kappa: [f64; 6],
    /// Damping μ of the pseudo-inverse.
    pub damping: f64,
    #[serde(default)]
    pub form: FilterForm,
    #[serde(default)]
    pub joint_limits: Option<JointLimitTask>,
}

impl KinCbfParams {
    pub fn reference() -> Self {
        Self { gamma: 1.0, kappa: [5.0; 6], damping: 1e-3, form: FilterForm::Decoupled, joint_limits: None }
    }

    pub fn validate(&self, arm_dof: usize) -> Result<()> {
        if !(self.gamma > 0.0) || self.kappa.iter().any(|k| !(*k > 0.0)) || !(self.damping >= 0.0) {
            return Err(Error::Config("kinematic gains must be positive".into()));
        }
        if let Some(jl) = &self.joint_limits {
            jl.validate(arm_dof)?;
        }
        Ok(())
    }
}

/// What the filter knows about how `ẋ` drives `ė`: bounds on the contact
/// gradient, the orientation matrix `L` and the reference rates.
#[derive(Debug, Clone, Copy)]
pub struct RateModel {
    pub gradient: GradientBounds,
    pub l: Matrix3<f64>,
    pub reference: ReferenceSample,
}

/// `ẋ_c` giving `ė = −γ e` when the gradient equals `gradient`.
/// The angular part solves `Lᵀ ω − L ω_d = −γ e_o`.
pub fn nominal_velocity(
    err: &TaskError,
    reference: &ReferenceSample,
    gradient: f64,
    l: &Matrix3<f64>,
    gamma: f64,
) -> Result<Vector6<f64>> {
    if !(gradient > 0.0) {
        return Err(Error::BelowGradientFloor { chi: f64::NAN, chi_star: f64::NAN });
    }
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or(Error::SingularInteraction { condition: f64::INFINITY })?;
    let w = lt_inv * (l * reference.angular_velocity - gamma * err.orientation());
    let p = reference.position_rate - gamma * err.position();
    Ok(Vector6::new((reference.force_rate - gamma * err.force()) / gradient, p.x, p.y, w.x, w.y, w.z))
}

/// `b_i = (e_i + M̲_i)(M̄_i − e_i)`.
pub fn barrier_values(e: &Vector6<f64>, bounds: &SafetyBounds) -> Vector6<f64> {
    Vector6::from_fn(|i, _| (e[i] + bounds.lower[i]) * (bounds.upper[i] - e[i]))
}

/// `∂b_i/∂e_i = (M̄_i − M̲_i) − 2 e_i`.
pub fn barrier_gradients(e: &Vector6<f64>, bounds: &SafetyBounds) -> Vector6<f64> {
    Vector6::from_fn(|i, _| (bounds.upper[i] - bounds.lower[i]) - 2.0 * e[i])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    pub velocity: Vector6<f64>,
    /// Barrier margin `ḃ_i + κ_i b_i` at `ẋ_c`, worst case over the
    /// gradient bounds for the force channel.
    pub psi: Vector6<f64>,
    pub active: [bool; 6],
    pub correction: Vector6<f64>,
}

/// Error-rate coordinates: `u = [ẋ_n, ẏ, ż, Lᵀω]`, so that
/// `ė = [g u_0 − ḟ_d, u_1 − ẏ_d, u_2 − ż_d, u_o − L ω_d]`.
fn to_rate_coordinates(x: &Vector6<f64>, l: &Matrix3<f64>) -> Vector6<f64> {
    let w: Vector3<f64> = l.transpose() * x.fixed_rows::<3>(3);
    Vector6::new(x[0], x[1], x[2], w.x, w.y, w.z)
}

fn from_rate_coordinates(u: &Vector6<f64>, l: &Matrix3<f64>) -> Result<Vector6<f64>> {
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or(Error::SingularInteraction { condition: f64::INFINITY })?;
    let w = lt_inv * u.fixed_rows::<3>(3);
    Ok(Vector6::new(u[0], u[1], u[2], w.x, w.y, w.z))
}

/// Drift `d_i` with `ė_i = a_i u_i + d_i`.
fn drift(rates: &RateModel) -> Vector6<f64> {
    let lw = rates.l * rates.reference.angular_velocity;
    let r = &rates.reference;
    -Vector6::new(r.force_rate, r.position_rate.x, r.position_rate.y, lw.x, lw.y, lw.z)
}

/// Safety filter minimizing `‖u − u_c‖²` in error-rate coordinates subject to
/// `∂b_i/∂e_i · ė_i + κ_i b_i ≥ 0` for every channel, and for the force
/// channel at both ends of the gradient bounds.
pub fn safe_velocity_filter(
    x_c: &Vector6<f64>,
    e: &Vector6<f64>,
    rates: &RateModel,
    bounds: &SafetyBounds,
    kappa: &[f64; 6],
    form: FilterForm,
) -> Result<FilterOutput> {
    let b = barrier_values(e, bounds);
    let h = barrier_gradients(e, bounds);
    let d = drift(rates);
    let u_c = to_rate_coordinates(x_c, &rates.l);
    let g = [rates.gradient.lower, rates.gradient.upper];

    let mut psi = Vector6::zeros();
    for i in 0..6 {
        let margin = |a: f64| h[i] * (a * u_c[i] + d[i]) + kappa[i] * b[i];
        psi[i] = if i == 0 { margin(g[0]).min(margin(g[1])) } else { margin(1.0) };
    }
    let mut active = [false; 6];
    for i in 0..6 {
        // Floating-point slack so a channel sitting exactly on its boundary
        // is not flagged.
        active[i] = psi[i] < -1e-14 * (1.0 + (kappa[i] * b[i]).abs());
        if active[i] && h[i].abs() < DEGENERATE_GRADIENT {
            return Err(Error::DegenerateFilter { channel: i });
        }
    }

    let mut u = u_c;
    match form {
        FilterForm::Decoupled => {
            for i in (0..6).filter(|&i| active[i]) {
                let bound = |a: f64| (-kappa[i] * b[i] - h[i] * d[i]) / (h[i] * a);
                u[i] = if i == 0 {
                    if h[i] > 0.0 {
                        bound(g[0]).max(bound(g[1]))
                    } else {
                        bound(g[0]).min(bound(g[1]))
                    }
                } else {
                    bound(1.0)
                };
            }
        }
        FilterForm::Coupled => {
            let nominal = rates.gradient.nominal();
            let a = Vector6::from_fn(|i, _| if i == 0 { h[i] * nominal } else { h[i] });
            let psi_nominal = Vector6::from_fn(|i, _| {
                let gain = if i == 0 { nominal } else { 1.0 };
                h[i] * (gain * u_c[i] + d[i]) + kappa[i] * b[i]
            });
            let norm2: f64 = (0..6).filter(|&i| active[i]).map(|i| a[i] * a[i]).sum();
            for i in (0..6).filter(|&i| active[i]) {
                u[i] -= a[i] * psi_nominal[i].min(0.0) / norm2;
            }
        }
    }

    let velocity = from_rate_coordinates(&u, &rates.l)?;
    Ok(FilterOutput { velocity, psi, active, correction: velocity - x_c })
}

/// `J^# = Jᵀ (J Jᵀ + μ² I)⁻¹`, evaluated through the SVD as
/// `V diag(σ / (σ² + μ²)) Uᵀ`.
pub fn damped_pinv(j: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let svd = j.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let scale = DVector::from_fn(svd.singular_values.len(), |i, _| {
        let s = svd.singular_values[i];
        let den = s * s + mu * mu;
        if den > 0.0 { s / den } else { 0.0 }
    });
    v_t.transpose() * DMatrix::from_diagonal(&scale) * u.transpose()
}

/// `ζ^r = J^# ẋ* + (I − J^# J) ζ⁰`.
pub fn redundancy_resolution(
    x_star: &Vector6<f64>,
    j: &DMatrix<f64>,
    mu: f64,
    secondary: Option<&DVector<f64>>,
) -> DVector<f64> {
    let pinv = damped_pinv(j, mu);
    let x = DVector::from_column_slice(x_star.as_slice());
    let mut zeta = &pinv * x;
    if let Some(z0) = secondary {
        let n = j.ncols();
        let null = DMatrix::identity(n, n) - &pinv * j;
        zeta += null * z0;
    }
    zeta
}
