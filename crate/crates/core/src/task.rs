//! Force, position and orientation tracking errors and their rates.
//!
//! The inertial frame sits on the surface with its x axis along the inward
//! surface normal, so the force channel acts along x and the position
//! channels are the y and z coordinates of the tool.

use nalgebra::{Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{axis_angle, skew, EulerConvention};

/// Condition number above which `L` is treated as singular.
pub const MAX_INTERACTION_CONDITION: f64 = 1e6;

/// `offset + amplitude · sin(2π t / period + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub offset: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

impl Sinusoid {
    pub fn constant(offset: f64) -> Self {
        Self { offset, amplitude: 0.0, period: 1.0, phase: 0.0 }
    }

    fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period
    }

    pub fn value(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.omega() * t + self.phase).sin()
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.amplitude * self.omega() * (self.omega() * t + self.phase).cos()
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.period > 0.0) || !self.offset.is_finite() || !self.amplitude.is_finite() {
            return Err(Error::Config(format!("{what}: sinusoid needs finite values and a positive period")));
        }
        Ok(())
    }
}

/// Desired orientation: a fixed attitude, optionally oscillating about a
/// body-fixed axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientationReference {
    #[serde(default)]
    pub rpy: [f64; 3],
    #[serde(default = "z_axis")]
    pub axis: [f64; 3],
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub period: f64,
}

fn z_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl Default for OrientationReference {
    fn default() -> Self {
        Self { rpy: [0.0; 3], axis: z_axis(), amplitude: 0.0, period: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskReference {
    pub force: Sinusoid,
    /// y and z on the surface.
    pub position: [Sinusoid; 2],
    #[serde(default)]
    pub orientation: OrientationReference,
}

/// Reference evaluated at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub force: f64,
    pub force_rate: f64,
    pub position: Vector2<f64>,
    pub position_rate: Vector2<f64>,
    pub rotation: Matrix3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl TaskReference {
    pub fn sample(&self, t: f64) -> ReferenceSample {
        let o = &self.orientation;
        let base = EulerConvention::Zyx.rotation(&Vector3::from(o.rpy));
        let axis = Vector3::from(o.axis).normalize();
        let w = 2.0 * std::f64::consts::PI / o.period;
        let angle = o.amplitude * (w * t).sin();
        let angle_rate = o.amplitude * w * (w * t).cos();
        ReferenceSample {
            force: self.force.value(t),
            force_rate: self.force.rate(t),
            position: Vector2::new(self.position[0].value(t), self.position[1].value(t)),
            position_rate: Vector2::new(self.position[0].rate(t), self.position[1].rate(t)),
            rotation: base * axis_angle(&axis, angle),
            angular_velocity: base * axis * angle_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.force.validate("force reference")?;
        self.position[0].validate("y reference")?;
        self.position[1].validate("z reference")?;
        let o = &self.orientation;
        if !(o.period > 0.0) || !(Vector3::from(o.axis).norm() > 0.0) {
            return Err(Error::Config("orientation reference needs a positive period and non-zero axis".into()));
        }
        Ok(())
    }
}

/// Stacked error `e = [e_f, e_y, e_z, e_o1, e_o2, e_o3]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskError(pub Vector6<f64>);

impl TaskError {
    pub fn force(&self) -> f64 {
        self.0[0]
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.0[1], self.0[2])
    }

    pub fn orientation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

/// `e_o = ½ (n_e × n_d + o_e × o_d + a_e × a_d)`.
pub fn orientation_error(r_e: &Matrix3<f64>, r_d: &Matrix3<f64>) -> Vector3<f64> {
    (0..3).fold(Vector3::zeros(), |acc, k| acc + r_e.column(k).cross(&r_d.column(k))) * 0.5
}

/// `L = ½ Σ_k S(r_e,k) S(r_d,k)` over the frame columns, without the
/// conditioning check.
pub fn interaction_matrix_unchecked(r_e: &Matrix3<f64>, r_d: &Matrix3<f64>) -> Matrix3<f64> {
    (0..3).fold(Matrix3::zeros(), |acc, k| {
        acc + skew(&r_e.column(k).into_owned()) * skew(&r_d.column(k).into_owned())
    }) * 0.5
}

/// `L`, rejected when its condition number exceeds
/// [`MAX_INTERACTION_CONDITION`].
pub fn interaction_matrix(r_e: &Matrix3<f64>, r_d: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let l = interaction_matrix_unchecked(r_e, r_d);
    let sv = l.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_INTERACTION_CONDITION) {
        return Err(Error::SingularInteraction { condition });
    }
    Ok(l)
}

/// Tracking errors given the measured normal force and the tool pose.
pub fn compute_errors(f: f64, x_e: &Vector3<f64>, r_e: &Matrix3<f64>, reference: &ReferenceSample) -> TaskError {
    let e_o = orientation_error(r_e, &reference.rotation);
    TaskError(Vector6::new(
        f - reference.force,
        x_e.y - reference.position.x,
        x_e.z - reference.position.y,
        e_o.x,
        e_o.y,
        e_o.z,
    ))
}

/// Matrix `E` with `ė = E ẋ + ∂e/∂t`, for tool twist `ẋ = [ṗ_e; ω_e]` and
/// normal-force gradient `gradient`. The orientation block is `Lᵀ`: the
/// exact derivative of `e_o` is `Lᵀ ω_e − L ω_d`.
pub fn error_rate_map(gradient: f64, l: &Matrix3<f64>) -> Matrix6<f64> {
    let mut e = Matrix6::zeros();
    e[(0, 0)] = gradient;
    e[(1, 1)] = 1.0;
    e[(2, 2)] = 1.0;
    e.fixed_view_mut::<3, 3>(3, 3).copy_from(&l.transpose());
    e
}

/// Explicit time dependence `∂e/∂t = −[ḟ_d, ṗ_d, L ω_d]`.
pub fn error_time_partial(reference: &ReferenceSample, l: &Matrix3<f64>) -> Vector6<f64> {
    let lw = l * reference.angular_velocity;
    -Vector6::new(
        reference.force_rate,
        reference.position_rate.x,
        reference.position_rate.y,
        lw.x,
        lw.y,
        lw.z,
    )
}

/// `ė` for tool twist `twist`.
pub fn error_rates(
    twist: &Vector6<f64>,
    reference: &ReferenceSample,
    gradient: f64,
    l: &Matrix3<f64>,
) -> Vector6<f64> {
    error_rate_map(gradient, l) * twist + error_time_partial(reference, l)
}
