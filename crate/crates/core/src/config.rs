//! Scenario description, loaded from TOML with unknown keys rejected.

use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactKind, ContactModel};
use crate::controller::{ContactKnowledge, ControllerParams, ControllerSession, Measurement};
use crate::dyn_cbf::{DynCbfParams, VelocityBounds};
use crate::dynamics::RobotModel;
use crate::error::{Error, Result};
use crate::kin_cbf::{FilterForm, JointLimitTask, KinCbfParams, SafetyBounds};
use crate::kinematics::GeneralizedState;
use crate::task::{compute_errors, Sinusoid, TaskReference};

/// Water current `amplitude_i · sin(2π t / period)` along each inertial axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentSpec {
    pub amplitude: [f64; 3],
    pub period: f64,
}

impl CurrentSpec {
    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let s = (2.0 * std::f64::consts::PI * t / self.period).sin();
        Vector3::from(self.amplitude) * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// True surface law; hidden from the controller.
    pub contact: ContactModel,
    /// Viscous resistance of the surface to tangential tool motion.
    pub tangential_damping: f64,
    pub current: CurrentSpec,
}

/// Measurement noise: `σ = fraction · scale`, truncated at ±3σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub fraction: f64,
    pub position: f64,
    pub angle: f64,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub force: f64,
    pub torque: f64,
}

impl NoiseSpec {
    pub fn silent() -> Self {
        Self { fraction: 0.0, ..Self::reference() }
    }

    pub fn reference() -> Self {
        Self {
            fraction: 0.05,
            position: 0.01,
            angle: 0.01,
            linear_velocity: 0.01,
            angular_velocity: 0.01,
            force: 1.0,
            torque: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub arm: Vec<f64>,
    /// Normal force at t = 0; fixes the initial deformation.
    pub force: f64,
    #[serde(default)]
    pub vehicle_rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub robot: RobotModel,
    pub plant: PlantSpec,
    pub reference: TaskReference,
    pub bounds: SafetyBounds,
    pub controller: ControllerParams,
    pub noise: NoiseSpec,
    pub initial: InitialSpec,
}

/// One named validation check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl ScenarioConfig {
    /// UVMS scenario with the paper's bounds, stiffness and currents.
    pub fn reference() -> Self {
        let robot = RobotModel::reference();
        let n = robot.dof();
        Self {
            dt: 1e-3,
            duration: 60.0,
            seed: 0,
            plant: PlantSpec {
                contact: ContactModel::quadratic(300.0),
                tangential_damping: 2.0,
                current: CurrentSpec { amplitude: [0.1; 3], period: 50.0 },
            },
            reference: TaskReference {
                force: Sinusoid::constant(1.0),
                position: [
                    Sinusoid { offset: 0.0, amplitude: 0.05, period: 20.0, phase: 0.0 },
                    Sinusoid { offset: 0.0, amplitude: 0.05, period: 20.0, phase: 0.0 },
                ],
                orientation: Default::default(),
            },
            bounds: SafetyBounds::reference(),
            controller: ControllerParams {
                kinematic: KinCbfParams {
                    gamma: 1.0,
                    kappa: [5.0; 6],
                    damping: 1e-3,
                    form: FilterForm::Decoupled,
                    joint_limits: Some(JointLimitTask {
                        lower: vec![-2.0, -0.5, -2.5, -1.0],
                        upper: vec![2.0, 1.7, 0.1, 2.2],
                        gain: 0.05,
                    }),
                },
                velocity: VelocityBounds::uniform(n, 0.5),
                dynamic: DynCbfParams {
                    eta: 2000.0,
                    gamma_energy: 100.0,
                    disturbance_bound: vec![10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                    kappa_d: 5.0,
                    kappa_v: 5.0,
                    reference_feedforward: false,
                },
                contact: ContactKnowledge { kind: ContactKind::Quadratic, stiffness_range: [100.0, 900.0] },
                velocity_gain: 5.0,
                derivative_cutoff: 20.0,
                kinematic_filter: true,
                torque_filter: true,
            },
            noise: NoiseSpec::reference(),
            initial: InitialSpec { arm: vec![0.0, 0.6, -1.2, 0.6], force: 0.45, vehicle_rpy: [0.0; 3] },
            robot,
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse { path: origin.to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Bounds the barriers enforce.
    pub fn effective_bounds(&self) -> Result<SafetyBounds> {
        self.bounds.clipped_to_corridor(&self.reference)
    }

    /// Vehicle placed so the tool touches the surface with the configured
    /// force at the reference position, at rest.
    pub fn initial_state(&self) -> Result<GeneralizedState> {
        let kin = &self.robot.kinematics;
        let n = kin.dof();
        if self.initial.arm.len() != kin.arm_dof() {
            return Err(Error::Dimension { what: "initial arm", expected: kin.arm_dof(), got: self.initial.arm.len() });
        }
        let mut q = DVector::zeros(n);
        q.fixed_rows_mut::<3>(3).copy_from(&Vector3::from(self.initial.vehicle_rpy));
        q.rows_mut(6, n - 6).copy_from_slice(&self.initial.arm);
        let tool = kin.forward_kinematics(&q)?.position;
        let p = self.reference.sample(0.0).position;
        let chi = self.plant.contact.deformation_for_force(self.initial.force);
        let target = Vector3::new(chi, p.x, p.y);
        q.fixed_rows_mut::<3>(0).copy_from(&(target - tool));
        GeneralizedState::new(q, DVector::zeros(n))
    }

    /// Every load-time check, each reported separately.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        let mut push = |name: &'static str, r: Result<String>| {
            let (passed, detail) = match r {
                Ok(d) => (true, d),
                Err(e) => (false, e.to_string()),
            };
            out.push(Check { name, passed, detail });
        };
        push(
            "timing",
            if self.dt > 0.0 && self.duration > 0.0 && self.duration >= self.dt {
                Ok(format!("dt = {}, duration = {}", self.dt, self.duration))
            } else {
                Err(Error::Config("dt and duration must be positive".into()))
            },
        );
        push("robot model", self.robot.validate().map(|_| format!("{} DoF", self.robot.dof())));
        push(
            "plant",
            self.plant.contact.validate().and_then(|_| {
                if self.plant.tangential_damping >= 0.0 && self.plant.current.period > 0.0 {
                    Ok(format!("k = {}", self.plant.contact.stiffness))
                } else {
                    Err(Error::Config("tangential damping must be ≥ 0 and current period > 0".into()))
                }
            }),
        );
        push("reference", self.reference.validate().map(|_| "bounded sinusoids".into()));
        push("safety bounds", self.bounds.validate().map(|_| "positive".into()));
        push("controller", self.controller.validate(self.robot.dof()).map(|_| "gains positive".into()));
        push(
            "noise",
            if self.noise.fraction >= 0.0 {
                Ok(format!("fraction {}", self.noise.fraction))
            } else {
                Err(Error::Config("noise fraction must be ≥ 0".into()))
            },
        );
        push("inf{−M̲_f + f^d} > f̲*", self.corridor_check(true));
        push("sup{M̄_f + f^d} < f̄*", self.corridor_check(false));
        push("initial errors inside bounds", self.initial_error_check());
        push("initial barriers non-negative", self.initial_barrier_check());
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.checks().into_iter().find(|c| !c.passed) {
            Some(c) => Err(Error::Config(format!("{}: {}", c.name, c.detail))),
            None => Ok(()),
        }
    }

    /// Samples `f^d` over the horizon against the clipped force bounds.
    fn corridor_check(&self, lower: bool) -> Result<String> {
        let b = self.bounds.clipped_to_corridor(&self.reference);
        let samples = 1000.max(self.steps().min(100_000));
        let fd = (0..=samples).map(|k| self.reference.force.value(self.duration * k as f64 / samples as f64));
        if lower {
            let lo = fd.fold(f64::INFINITY, f64::min);
            let b = b?;
            let v = lo - b.lower[0];
            if v > self.bounds.f_floor {
                Ok(format!("{v:.6} > {} (M̲_f used: {})", self.bounds.f_floor, b.lower[0]))
            } else {
                Err(Error::Config(format!("{v} ≤ {}", self.bounds.f_floor)))
            }
        } else {
            let hi = fd.fold(f64::NEG_INFINITY, f64::max);
            let b = b?;
            let v = hi + b.upper[0];
            if v < self.bounds.f_ceiling {
                Ok(format!("{v:.6} < {} (M̄_f used: {})", self.bounds.f_ceiling, b.upper[0]))
            } else {
                Err(Error::Config(format!("{v} ≥ {}", self.bounds.f_ceiling)))
            }
        }
    }

    fn initial_error_check(&self) -> Result<String> {
        let bounds = self.effective_bounds()?;
        let s = self.initial_state()?;
        let ee = self.robot.kinematics.forward_kinematics(&s.q)?;
        let f = self.plant.contact.force_magnitude(ee.position.x).value;
        let e = compute_errors(f, &ee.position, &ee.rotation, &self.reference.sample(0.0));
        if !bounds.contains(&e.0) {
            return Err(Error::Config(format!("e(0) = {:?} leaves (−M̲, M̄)", e.0.as_slice())));
        }
        let chi = ee.position.x;
        self.plant.contact.force_gradient(chi)?;
        Ok(format!("e_f(0) = {:.6}", e.force()))
    }

    fn initial_barrier_check(&self) -> Result<String> {
        let bounds = self.effective_bounds()?;
        let s = self.initial_state()?;
        let ee = self.robot.kinematics.forward_kinematics(&s.q)?;
        let f = self.plant.contact.force_magnitude(ee.position.x).value;
        let mut session =
            ControllerSession::new(self.robot.clone(), self.controller.clone(), self.reference, bounds, self.dt);
        let m = Measurement {
            q: s.q.clone(),
            zeta: s.zeta.clone(),
            lambda: nalgebra::Vector6::new(f, 0.0, 0.0, 0.0, 0.0, 0.0),
        };
        let out = session.step(0.0, &m)?;
        let b = &out.barriers;
        if b.b_k > 0.0 && b.b_vel > 0.0 && b.b_d >= 0.0 {
            Ok(format!("b_k = {:.6}, b = {:.6}, b_d = {:.6}", b.b_k, b.b_vel, b.b_d))
        } else {
            Err(Error::Config(format!(
                "b_k = {}, b = {}, b_d = {} (softmin sharpness or velocity bounds too tight)",
                b.b_k, b.b_vel, b.b_d
            )))
        }
    }
}
