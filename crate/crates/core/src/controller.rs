//! One control step: errors, nominal velocity, kinematic filter, redundancy
//! resolution, computed torque and the torque filter.

use nalgebra::{DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactKind, ContactModel, GradientBounds};
use crate::dyn_cbf::{
    energy_barrier, energy_constraint, safe_torque_filter, softmin_barrier, softmin_rate_lower_bound,
    softmin_weights, velocity_barrier, velocity_constraint, DynCbfParams, HalfSpace, VelocityBounds,
};
use crate::dynamics::RobotModel;
use crate::error::{Error, Result};
use crate::kin_cbf::{
    barrier_gradients, barrier_values, nominal_velocity, redundancy_resolution, safe_velocity_filter,
    FilterOutput, KinCbfParams, RateModel, SafetyBounds,
};
use crate::task::{compute_errors, interaction_matrix, TaskError, TaskReference};

/// What the controller is told about the surface: its law and a stiffness
/// range, never the true stiffness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactKnowledge {
    pub kind: ContactKind,
    pub stiffness_range: [f64; 2],
}

impl ContactKnowledge {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.stiffness_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config("stiffness range needs 0 < k_min ≤ k_max".into()));
        }
        Ok(())
    }

    pub fn gradient_bounds(&self, bounds: &SafetyBounds) -> GradientBounds {
        let [lo, hi] = self.stiffness_range;
        GradientBounds::over_corridor(self.kind, lo, hi, bounds.f_floor, bounds.f_ceiling)
    }

    /// Gradient at measured force `f` for the geometric-mean stiffness,
    /// clipped to `bounds`.
    pub fn nominal_gradient(&self, f: f64, bounds: &GradientBounds) -> f64 {
        let [lo, hi] = self.stiffness_range;
        let model = ContactModel { kind: self.kind, stiffness: (lo * hi).sqrt(), chi_star: 1e-3 };
        model.gradient_at_force(f).clamp(bounds.lower, bounds.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    pub kinematic: KinCbfParams,
    pub velocity: VelocityBounds,
    pub dynamic: DynCbfParams,
    pub contact: ContactKnowledge,
    /// `K_v` of the computed-torque law.
    pub velocity_gain: f64,
    /// Cutoff of the low-pass filter differentiating `ζ^r` [Hz].
    pub derivative_cutoff: f64,
    #[serde(default = "enabled")]
    pub kinematic_filter: bool,
    #[serde(default = "enabled")]
    pub torque_filter: bool,
}

fn enabled() -> bool {
    true
}

impl ControllerParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.kinematic.validate(n - 6)?;
        self.velocity.validate(n)?;
        self.dynamic.validate(n)?;
        self.contact.validate()?;
        if !(self.velocity_gain > 0.0) || !(self.derivative_cutoff > 0.0) {
            return Err(Error::Config("velocity gain and derivative cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// Measured signals handed to the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub q: DVector<f64>,
    pub zeta: DVector<f64>,
    /// Wrench the tool exerts on the surface.
    pub lambda: Vector6<f64>,
}

/// Controller-side barrier values, computed from measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBarriers {
    pub channels: Vector6<f64>,
    pub b_k: f64,
    pub b_vel: f64,
    pub b_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub tau: DVector<f64>,
    pub tau_des: DVector<f64>,
    pub errors: TaskError,
    pub x_c: Vector6<f64>,
    pub kinematic: FilterOutput,
    pub zeta_r: DVector<f64>,
    pub zeta_r_dot: DVector<f64>,
    pub barriers: ControlBarriers,
    /// Energy and velocity rows active in the torque filter.
    pub torque_active: [bool; 2],
    pub velocity_row: bool,
    pub feasible: bool,
}

/// Stateful wrapper: derivative filter of `ζ^r` and the last feasible torque.
#[derive(Debug, Clone)]
pub struct ControllerSession {
    robot: RobotModel,
    params: ControllerParams,
    reference: TaskReference,
    bounds: SafetyBounds,
    gradient_bounds: GradientBounds,
    dt: f64,
    prev_zeta_r: Option<DVector<f64>>,
    zeta_r_dot: DVector<f64>,
    last_tau: Option<DVector<f64>>,
}

impl ControllerSession {
    /// `bounds` are the ones the barriers enforce (already clipped to the
    /// force corridor).
    pub fn new(
        robot: RobotModel,
        params: ControllerParams,
        reference: TaskReference,
        bounds: SafetyBounds,
        dt: f64,
    ) -> Self {
        let n = robot.dof();
        let gradient_bounds = params.contact.gradient_bounds(&bounds);
        Self {
            robot,
            params,
            reference,
            bounds,
            gradient_bounds,
            dt,
            prev_zeta_r: None,
            zeta_r_dot: DVector::zeros(n),
            last_tau: None,
        }
    }

    pub fn gradient_bounds(&self) -> GradientBounds {
        self.gradient_bounds
    }

    pub fn bounds(&self) -> &SafetyBounds {
        &self.bounds
    }

    pub fn step(&mut self, t: f64, m: &Measurement) -> Result<ControlOutput> {
        let robot = &self.robot;
        let p = &self.params;
        let kin = &robot.kinematics;
        let n = robot.dof();

        let ee = kin.forward_kinematics(&m.q)?;
        let jac = kin.jacobian(&m.q)?;
        let sample = self.reference.sample(t);
        let f = m.lambda.fixed_rows::<3>(0).dot(&Vector3::x());
        let errors = compute_errors(f, &ee.position, &ee.rotation, &sample);
        let l = interaction_matrix(&ee.rotation, &sample.rotation)?;
        let rates = RateModel { gradient: self.gradient_bounds, l, reference: sample };

        let g_hat = p.contact.nominal_gradient(f, &self.gradient_bounds);
        let x_c = nominal_velocity(&errors, &sample, g_hat, &l, p.kinematic.gamma)?;
        let kinematic = if p.kinematic_filter {
            safe_velocity_filter(&x_c, &errors.0, &rates, &self.bounds, &p.kinematic.kappa, p.kinematic.form)?
        } else {
            FilterOutput { velocity: x_c, psi: Vector6::zeros(), active: [false; 6], correction: Vector6::zeros() }
        };

        let secondary = p.kinematic.joint_limits.as_ref().map(|jl| jl.secondary_velocity(&m.q));
        let zeta_r = redundancy_resolution(&kinematic.velocity, &jac, p.kinematic.damping, secondary.as_ref());
        if let Some(prev) = &self.prev_zeta_r {
            let raw = (&zeta_r - prev) / self.dt;
            let alpha = self.dt / (self.dt + 1.0 / (2.0 * std::f64::consts::PI * p.derivative_cutoff));
            self.zeta_r_dot += (raw - &self.zeta_r_dot) * alpha;
        }
        self.prev_zeta_r = Some(zeta_r.clone());

        // Barriers from measured signals.
        let channels = barrier_values(&errors.0, &self.bounds);
        let gradients = barrier_gradients(&errors.0, &self.bounds);
        let b_k = softmin_barrier(channels.as_slice(), p.dynamic.eta);
        let weights = Vector6::from_vec(softmin_weights(channels.as_slice(), p.dynamic.eta));
        let (b_vel, xi) = velocity_barrier(&m.zeta, &zeta_r, &p.velocity.rho);
        let mass = robot.mass_matrix(&m.q);
        let b_d = energy_barrier(&mass, &m.zeta, b_k, p.dynamic.gamma_energy);

        // Computed torque.
        let bias = robot.bias_forces(&m.q, &m.zeta);
        let contact_load = jac.transpose() * m.lambda;
        let accel = &self.zeta_r_dot - (&m.zeta - &zeta_r) * p.velocity_gain;
        let tau_des = bias.total() + &contact_load + &mass * accel;

        let twist = Vector6::from_iterator((&jac * &m.zeta).iter().copied());
        let bk_rate = softmin_rate_lower_bound(&weights, &gradients, &twist, &rates);
        let mut rows: Vec<HalfSpace> = vec![energy_constraint(
            &m.zeta,
            &bias.gravity,
            m.zeta.dot(&contact_load),
            p.dynamic.disturbance_support(&m.zeta),
            p.dynamic.gamma_energy,
            bk_rate,
            b_d,
            p.dynamic.kappa_d,
        )];
        let ff = p.dynamic.reference_feedforward.then_some(&self.zeta_r_dot);
        let velocity_row = velocity_constraint(
            &mass,
            &bias.total(),
            &contact_load,
            &xi,
            b_vel,
            &p.velocity,
            &p.dynamic,
            ff,
        )?;
        let has_velocity_row = velocity_row.is_some();
        rows.extend(velocity_row);

        let (tau, torque_active, feasible) = if p.torque_filter {
            match safe_torque_filter(&tau_des, &rows) {
                Ok(out) => {
                    let active = [out.active[0], out.active.get(1).copied().unwrap_or(false)];
                    (out.tau, active, true)
                }
                Err(Error::Infeasible) => {
                    let held = self.last_tau.clone().unwrap_or_else(|| tau_des.clone());
                    (held, [false; 2], false)
                }
                Err(e) => return Err(e),
            }
        } else {
            (tau_des.clone(), [false; 2], true)
        };
        if feasible {
            self.last_tau = Some(tau.clone());
        }
        debug_assert_eq!(tau.len(), n);

        Ok(ControlOutput {
            tau,
            tau_des,
            errors,
            x_c,
            kinematic,
            zeta_r,
            zeta_r_dot: self.zeta_r_dot.clone(),
            barriers: ControlBarriers { channels, b_k, b_vel, b_d },
            torque_active,
            velocity_row: has_velocity_row,
            feasible,
        })
    }
}
