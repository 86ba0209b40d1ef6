//! Configuration, forward kinematics and geometric Jacobian of a floating-base
//! serial chain.
//!
//! The configuration vector is `q = [η₁, η₂, q_m]`: vehicle position in the
//! inertial frame, vehicle Euler angles `(φ, θ, ψ)`, then the arm joint
//! angles. Velocities use the quasi-velocity vector `ζ = [v, ω, q̇_m]` where
//! `v` and `ω` are the vehicle body-frame linear and angular velocities.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum distance of the pitch angle from ±π/2.
pub const PITCH_GUARD: f64 = 1e-3;

/// Skew-symmetric cross-product matrix, `skew(d) * w == d × w`.
pub fn skew(d: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -d.z, d.y, d.z, 0.0, -d.x, -d.y, d.x, 0.0)
}

/// Rotation about a unit axis (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Euler-angle convention for the vehicle attitude `(φ, θ, ψ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerConvention {
    /// `R = Rz(ψ) Ry(θ) Rx(φ)`, the usual roll-pitch-yaw of marine vehicles.
    #[default]
    Zyx,
    /// `R = Rx(φ) Ry(θ) Rz(ψ)`.
    Xyz,
}

impl EulerConvention {
    pub fn rotation(self, rpy: &Vector3<f64>) -> Matrix3<f64> {
        let (phi, theta, psi) = (rpy.x, rpy.y, rpy.z);
        match self {
            EulerConvention::Zyx => rot_z(psi) * rot_y(theta) * rot_x(phi),
            EulerConvention::Xyz => rot_x(phi) * rot_y(theta) * rot_z(psi),
        }
    }

    /// Matrix `E` with `ω_body = E(η₂) η̇₂`.
    fn body_rate_matrix(self, rpy: &Vector3<f64>) -> Matrix3<f64> {
        let (phi, theta, psi) = (rpy.x, rpy.y, rpy.z);
        let (ex, ey, ez) = (Vector3::x(), Vector3::y(), Vector3::z());
        // Spatial angular velocity contributed by each angle rate.
        let (c_phi, c_theta, c_psi) = match self {
            EulerConvention::Zyx => {
                let rz = rot_z(psi);
                (rz * rot_y(theta) * ex, rz * ey, ez)
            }
            EulerConvention::Xyz => {
                let rx = rot_x(phi);
                (ex, rx * ey, rx * rot_y(theta) * ez)
            }
        };
        let r = self.rotation(rpy);
        r.transpose() * Matrix3::from_columns(&[c_phi, c_theta, c_psi])
    }

    /// Matrix mapping body angular velocity to Euler-angle rates.
    pub fn euler_rate_matrix(self, rpy: &Vector3<f64>) -> Result<Matrix3<f64>> {
        check_pitch(rpy.y)?;
        self.body_rate_matrix(rpy)
            .try_inverse()
            .ok_or(Error::RepresentationSingularity { pitch: rpy.y })
    }
}

fn check_pitch(theta: f64) -> Result<()> {
    if !theta.is_finite() || theta.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_GUARD {
        return Err(Error::RepresentationSingularity { pitch: theta });
    }
    Ok(())
}

/// Configuration and quasi-velocity of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub zeta: DVector<f64>,
}

impl GeneralizedState {
    pub fn new(q: DVector<f64>, zeta: DVector<f64>) -> Result<Self> {
        if q.len() != zeta.len() || q.len() < 7 {
            return Err(Error::Dimension {
                what: "generalized state",
                expected: q.len().max(7),
                got: zeta.len(),
            });
        }
        Ok(Self { q, zeta })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn vehicle_position(&self) -> Vector3<f64> {
        self.q.fixed_rows::<3>(0).into_owned()
    }

    pub fn vehicle_attitude(&self) -> Vector3<f64> {
        self.q.fixed_rows::<3>(3).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.zeta.iter()).all(|v| v.is_finite())
    }
}

/// Pose and twist of the end-effector frame `{E}` in the inertial frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EndEffectorState {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    /// `[ṗ_e; ω_e]`
    pub velocity: Vector6<f64>,
}

impl EndEffectorState {
    pub fn angular_velocity(&self) -> Vector3<f64> {
        self.velocity.fixed_rows::<3>(3).into_owned()
    }
}

/// One revolute joint: the joint frame sits at `offset` in its parent frame
/// and rotates about `axis` (parent-frame coordinates, normalized on load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointGeometry {
    pub offset: [f64; 3],
    pub axis: [f64; 3],
}

/// Geometry of the vehicle-mounted arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicModel {
    /// Arm base position in the vehicle frame.
    pub mount_offset: [f64; 3],
    /// Arm base orientation in the vehicle frame (roll, pitch, yaw).
    #[serde(default)]
    pub mount_rpy: [f64; 3],
    pub joints: Vec<JointGeometry>,
    /// Tool point in the last link frame.
    pub tool_offset: [f64; 3],
    #[serde(default)]
    pub tool_rpy: [f64; 3],
    #[serde(default)]
    pub euler: EulerConvention,
}

/// Arm frames expressed in the vehicle frame.
#[derive(Debug, Clone)]
pub struct ArmFrames {
    /// Joint origins `o_j`.
    pub origins: Vec<Vector3<f64>>,
    /// Joint axes `z_j` (unit).
    pub axes: Vec<Vector3<f64>>,
    /// Link orientations after the joint rotation.
    pub rotations: Vec<Matrix3<f64>>,
    pub tool_position: Vector3<f64>,
    pub tool_rotation: Matrix3<f64>,
}

impl KinematicModel {
    /// Vehicle (6) plus arm joints.
    pub fn dof(&self) -> usize {
        6 + self.joints.len()
    }

    pub fn arm_dof(&self) -> usize {
        self.joints.len()
    }

    /// Reference UVMS: a vehicle carrying a four-joint arm (yaw, then three
    /// pitch joints) mounted at its bow. With joint angles
    /// `[0, 0.6, -1.2, 0.6]` the tool frame is aligned with the vehicle frame.
    pub fn reference() -> Self {
        Self {
            mount_offset: [0.45, 0.0, 0.0],
            mount_rpy: [0.0; 3],
            joints: vec![
                JointGeometry { offset: [0.0, 0.0, 0.0], axis: [0.0, 0.0, 1.0] },
                JointGeometry { offset: [0.08, 0.0, 0.0], axis: [0.0, 1.0, 0.0] },
                JointGeometry { offset: [0.35, 0.0, 0.0], axis: [0.0, 1.0, 0.0] },
                JointGeometry { offset: [0.30, 0.0, 0.0], axis: [0.0, 1.0, 0.0] },
            ],
            tool_offset: [0.12, 0.0, 0.0],
            tool_rpy: [0.0; 3],
            euler: EulerConvention::Zyx,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::Config("kinematic model needs at least one arm joint".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            let a = Vector3::from(j.axis);
            if !(a.norm() > 1e-12) {
                return Err(Error::Config(format!("joint {i} has a zero axis")));
            }
        }
        Ok(())
    }

    fn check_len(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Dimension { what: "configuration", expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    /// Vehicle orientation `R(η₂)`.
    pub fn vehicle_rotation(&self, q: &DVector<f64>) -> Matrix3<f64> {
        self.euler.rotation(&q.fixed_rows::<3>(3).into_owned())
    }

    /// Arm frames relative to the vehicle. Depends only on the joint angles.
    pub fn arm_frames(&self, q: &DVector<f64>) -> ArmFrames {
        let n_arm = self.joints.len();
        let mut origins = Vec::with_capacity(n_arm);
        let mut axes = Vec::with_capacity(n_arm);
        let mut rotations = Vec::with_capacity(n_arm);
        let mut r = EulerConvention::Zyx.rotation(&Vector3::from(self.mount_rpy));
        let mut p = Vector3::from(self.mount_offset);
        for (j, joint) in self.joints.iter().enumerate() {
            p += r * Vector3::from(joint.offset);
            let local_axis = Vector3::from(joint.axis).normalize();
            axes.push(r * local_axis);
            origins.push(p);
            r *= axis_angle(&local_axis, q[6 + j]);
            rotations.push(r);
        }
        let tool_position = p + r * Vector3::from(self.tool_offset);
        let tool_rotation = r * EulerConvention::Zyx.rotation(&Vector3::from(self.tool_rpy));
        ArmFrames { origins, axes, rotations, tool_position, tool_rotation }
    }

    /// End-effector pose in the inertial frame. The velocity field is zero.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<EndEffectorState> {
        self.check_len(q)?;
        let rv = self.vehicle_rotation(q);
        let eta1: Vector3<f64> = q.fixed_rows::<3>(0).into_owned();
        let arm = self.arm_frames(q);
        Ok(EndEffectorState {
            position: eta1 + rv * arm.tool_position,
            rotation: rv * arm.tool_rotation,
            velocity: Vector6::zeros(),
        })
    }

    /// Pose together with the twist `J(q) ζ`.
    pub fn end_effector_state(&self, state: &GeneralizedState) -> Result<EndEffectorState> {
        let mut ee = self.forward_kinematics(&state.q)?;
        let j = self.jacobian(&state.q)?;
        ee.velocity = Vector6::from_iterator((&j * &state.zeta).iter().copied());
        Ok(ee)
    }

    /// Jacobian of a point attached to arm link `link` (or to the vehicle
    /// when `None`), in vehicle coordinates: rows 0..3 linear, 3..6 angular.
    pub fn point_jacobian_local(
        &self,
        arm: &ArmFrames,
        point: &Vector3<f64>,
        link: Option<usize>,
    ) -> DMatrix<f64> {
        let n = self.dof();
        let mut j = DMatrix::zeros(6, n);
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(point)));
        j.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::identity());
        if let Some(link) = link {
            for k in 0..=link {
                let z = arm.axes[k];
                j.fixed_view_mut::<3, 1>(0, 6 + k).copy_from(&z.cross(&(point - arm.origins[k])));
                j.fixed_view_mut::<3, 1>(3, 6 + k).copy_from(&z);
            }
        }
        j
    }

    /// Geometric Jacobian: `ẋ = J(q) ζ` with `ẋ = [ṗ_e; ω_e]` in the
    /// inertial frame.
    pub fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(q)?;
        let arm = self.arm_frames(q);
        let local = self.point_jacobian_local(&arm, &arm.tool_position, Some(self.joints.len() - 1));
        let rv = self.vehicle_rotation(q);
        let mut rot6 = Matrix6::zeros();
        rot6.fixed_view_mut::<3, 3>(0, 0).copy_from(&rv);
        rot6.fixed_view_mut::<3, 3>(3, 3).copy_from(&rv);
        let j = rot6 * local;
        Ok(DMatrix::from_column_slice(6, j.ncols(), j.as_slice()))
    }

    /// Map from full quasi-velocity to configuration rates, `q̇ = T(q) ζ`.
    pub fn configuration_rate_map(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(q)?;
        let n = self.dof();
        let mut t = DMatrix::identity(n, n);
        let tv = velocity_transform(self.euler, &q.fixed_rows::<6>(0).into_owned())?;
        t.fixed_view_mut::<6, 6>(0, 0).copy_from(&tv);
        Ok(t)
    }

    /// `q̇ = T(q) ζ`.
    pub fn configuration_rate(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.configuration_rate_map(q)? * zeta)
    }
}

/// Vehicle kinematic map `q̇_a = T(q_a) v`: body linear velocity rotated
/// into the inertial frame, body angular velocity mapped to Euler rates.
pub fn velocity_transform(euler: EulerConvention, q_a: &Vector6<f64>) -> Result<Matrix6<f64>> {
    let rpy: Vector3<f64> = q_a.fixed_rows::<3>(3).into_owned();
    let mut t = Matrix6::zeros();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&euler.rotation(&rpy));
    t.fixed_view_mut::<3, 3>(3, 3).copy_from(&euler.euler_rate_matrix(&rpy)?);
    Ok(t)
}
