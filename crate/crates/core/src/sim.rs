//! Closed-loop simulation: plant integration, measurement noise, logging.

use nalgebra::{DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{NoiseSpec, ScenarioConfig};
use crate::contact::{surface_wrench, NormalForce};
use crate::controller::{ControllerSession, Measurement};
use crate::dyn_cbf::{energy_barrier, softmin_barrier, velocity_barrier};
use crate::dynamics::RobotModel;
use crate::error::{Error, Result};
use crate::kin_cbf::{barrier_values, SafetyBounds};
use crate::kinematics::GeneralizedState;
use crate::task::{compute_errors, TaskReference};

/// Abort threshold on `‖(q, ζ)‖`.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Surface normal of the inertial frame.
pub fn surface_normal() -> Vector3<f64> {
    Vector3::x()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactState {
    pub lambda: Vector6<f64>,
    pub force: NormalForce,
    pub chi: f64,
}

/// The physical system: robot, true surface and water current.
#[derive(Debug, Clone)]
pub struct Plant {
    pub robot: RobotModel,
    pub spec: crate::config::PlantSpec,
}

impl Plant {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self { robot: cfg.robot.clone(), spec: cfg.plant }
    }

    pub fn contact(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> Result<ContactState> {
        let kin = &self.robot.kinematics;
        let ee = kin.forward_kinematics(q)?;
        let twist = kin.jacobian(q)? * zeta;
        let twist = Vector6::from_iterator(twist.iter().copied());
        let n = surface_normal();
        let chi = n.dot(&ee.position);
        let (lambda, force) = surface_wrench(&self.spec.contact, &n, chi, &twist, self.spec.tangential_damping);
        Ok(ContactState { lambda, force, chi })
    }

    /// Unmodelled load `δ = D(ν − ν_c)(ν − ν_c) − D(ν)ν` from the current.
    pub fn disturbance(&self, t: f64, q: &DVector<f64>, zeta: &DVector<f64>) -> DVector<f64> {
        let current = self.spec.current.velocity(t);
        self.robot.damping_forces_in_current(q, zeta, &current) - self.robot.damping_forces(q, zeta)
    }

    fn derivative(
        &self,
        t: f64,
        q: &DVector<f64>,
        zeta: &DVector<f64>,
        tau: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let contact = self.contact(q, zeta)?;
        let delta = self.disturbance(t, q, zeta);
        let qdot = self.robot.kinematics.configuration_rate(q, zeta)?;
        let zdot = self.robot.forward_dynamics(q, zeta, tau, &contact.lambda, &delta)?;
        Ok((qdot, zdot))
    }

    /// One RK4 step with `τ` held; the contact wrench is re-evaluated at
    /// every stage.
    pub fn step(&self, state: &GeneralizedState, tau: &DVector<f64>, t: f64, dt: f64) -> Result<GeneralizedState> {
        let (q, z) = (&state.q, &state.zeta);
        let (k1q, k1z) = self.derivative(t, q, z, tau)?;
        let (k2q, k2z) = self.derivative(t + 0.5 * dt, &(q + &k1q * (0.5 * dt)), &(z + &k1z * (0.5 * dt)), tau)?;
        let (k3q, k3z) = self.derivative(t + 0.5 * dt, &(q + &k2q * (0.5 * dt)), &(z + &k2z * (0.5 * dt)), tau)?;
        let (k4q, k4z) = self.derivative(t + dt, &(q + &k3q * dt), &(z + &k3z * dt), tau)?;
        let q1 = q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0);
        let z1 = z + (k1z + k2z * 2.0 + k3z * 2.0 + k4z) * (dt / 6.0);
        let norm = (q1.norm_squared() + z1.norm_squared()).sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { time: t + dt, norm });
        }
        GeneralizedState::new(q1, z1)
    }
}

/// Zero-mean Gaussian truncated at ±3σ by rejection.
pub fn truncated_gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 3.0 * sigma {
            return x;
        }
    }
}

/// Noisy copy of the state and the contact wrench.
pub fn measure<R: Rng>(
    state: &GeneralizedState,
    lambda: &Vector6<f64>,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Measurement {
    let k = noise.fraction;
    let mut q = state.q.clone();
    let mut zeta = state.zeta.clone();
    for i in 0..q.len() {
        let scale = if i < 3 { noise.position } else { noise.angle };
        q[i] += truncated_gaussian(rng, k * scale);
    }
    for i in 0..zeta.len() {
        let scale = if i < 3 { noise.linear_velocity } else { noise.angular_velocity };
        zeta[i] += truncated_gaussian(rng, k * scale);
    }
    let mut l = *lambda;
    for i in 0..6 {
        let scale = if i < 3 { noise.force } else { noise.torque };
        l[i] += truncated_gaussian(rng, k * scale);
    }
    Measurement { q, zeta, lambda: l }
}

/// Barrier values of the true state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueBarriers {
    pub channels: Vector6<f64>,
    pub b_k: f64,
    pub b_vel: f64,
    pub b_d: f64,
}

/// One control step.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub q: DVector<f64>,
    pub zeta: DVector<f64>,
    pub x_e: Vector3<f64>,
    pub f: f64,
    pub chi: f64,
    pub e: Vector6<f64>,
    pub barriers: TrueBarriers,
    pub tau: DVector<f64>,
    pub tau_des: DVector<f64>,
    pub x_star: Vector6<f64>,
    pub zeta_r: DVector<f64>,
    pub kin_active: [bool; 6],
    pub torque_active: [bool; 2],
    pub velocity_row: bool,
    pub feasible: bool,
    pub contact_lost: bool,
    pub delta_norm: f64,
    /// `max_i(|δ_i| − δ̄_i)`: positive when the realized disturbance leaves
    /// the box the controller was told about.
    pub delta_excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ContactLost,
    Infeasible,
    KinematicFilter(usize),
    EnergyRow,
    VelocityRow,
    Abort,
}

impl EventKind {
    pub fn label(&self) -> String {
        match self {
            EventKind::ContactLost => "contact_lost".into(),
            EventKind::Infeasible => "infeasible".into(),
            EventKind::KinematicFilter(i) => format!("kinematic_filter_{}", crate::CHANNELS[*i]),
            EventKind::EnergyRow => "energy_constraint".into(),
            EventKind::VelocityRow => "velocity_constraint".into(),
            EventKind::Abort => "abort".into(),
        }
    }
}

/// Onset of a condition (the step where it switches on).
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SimLog {
    pub records: Vec<Record>,
    pub events: Vec<Event>,
    /// Set when the run stopped early.
    pub abort: Option<String>,
}

/// Barrier values of the true state, against the enforced bounds.
#[allow(clippy::too_many_arguments)]
pub fn true_barriers(
    robot: &RobotModel,
    state: &GeneralizedState,
    f: f64,
    reference: &TaskReference,
    bounds: &SafetyBounds,
    t: f64,
    zeta_r: &DVector<f64>,
    cfg: &ScenarioConfig,
) -> Result<(Vector6<f64>, TrueBarriers)> {
    let ee = robot.kinematics.forward_kinematics(&state.q)?;
    let e = compute_errors(f, &ee.position, &ee.rotation, &reference.sample(t)).0;
    let channels = barrier_values(&e, bounds);
    let p = &cfg.controller;
    let b_k = softmin_barrier(channels.as_slice(), p.dynamic.eta);
    let (b_vel, _) = velocity_barrier(&state.zeta, zeta_r, &p.velocity.rho);
    let b_d = energy_barrier(&robot.mass_matrix(&state.q), &state.zeta, b_k, p.dynamic.gamma_energy);
    Ok((e, TrueBarriers { channels, b_k, b_vel, b_d }))
}

fn onset(events: &mut Vec<Event>, was: bool, now: bool, t: f64, kind: EventKind, detail: String) {
    if now && !was {
        events.push(Event { t, kind, detail });
    }
}

/// Runs the scenario with `seed`; on failure the partial log is kept and
/// the reason stored in `abort`.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<SimLog> {
    cfg.validate()?;
    let bounds = cfg.effective_bounds()?;
    let plant = Plant::new(cfg);
    let mut session = ControllerSession::new(cfg.robot.clone(), cfg.controller.clone(), cfg.reference, bounds, cfg.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = cfg.initial_state()?;
    let mut log = SimLog::default();
    let mut prev: Option<Record> = None;

    for k in 0..cfg.steps() {
        let t = k as f64 * cfg.dt;
        let result = (|| -> Result<(Record, GeneralizedState)> {
            let contact = plant.contact(&state.q, &state.zeta)?;
            let m = measure(&state, &contact.lambda, &cfg.noise, &mut rng);
            let out = session.step(t, &m)?;
            let (e, barriers) =
                true_barriers(&cfg.robot, &state, contact.force.value, &cfg.reference, &bounds, t, &out.zeta_r, cfg)?;
            let ee = cfg.robot.kinematics.forward_kinematics(&state.q)?;
            let delta = plant.disturbance(t, &state.q, &state.zeta);
            let rec = Record {
                t,
                q: state.q.clone(),
                zeta: state.zeta.clone(),
                x_e: ee.position,
                f: contact.force.value,
                chi: contact.chi,
                e,
                barriers,
                tau: out.tau.clone(),
                tau_des: out.tau_des,
                x_star: out.kinematic.velocity,
                zeta_r: out.zeta_r,
                kin_active: out.kinematic.active,
                torque_active: out.torque_active,
                velocity_row: out.velocity_row,
                feasible: out.feasible,
                contact_lost: contact.force.separated,
                delta_norm: delta.norm(),
                delta_excess: delta
                    .iter()
                    .zip(&cfg.controller.dynamic.disturbance_bound)
                    .map(|(d, b)| d.abs() - b)
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            let next = plant.step(&state, &out.tau, t, cfg.dt)?;
            Ok((rec, next))
        })();
        match result {
            Ok((rec, next)) => {
                let p = prev.as_ref();
                let ev = &mut log.events;
                onset(ev, p.is_some_and(|r| r.contact_lost), rec.contact_lost, t, EventKind::ContactLost, format!("chi = {:e}", rec.chi));
                onset(ev, p.is_some_and(|r| !r.feasible), !rec.feasible, t, EventKind::Infeasible, "held previous torque".into());
                for i in 0..6 {
                    onset(ev, p.is_some_and(|r| r.kin_active[i]), rec.kin_active[i], t, EventKind::KinematicFilter(i), format!("e = {:e}", rec.e[i]));
                }
                onset(ev, p.is_some_and(|r| r.torque_active[0]), rec.torque_active[0], t, EventKind::EnergyRow, format!("b_d = {:e}", rec.barriers.b_d));
                onset(ev, p.is_some_and(|r| r.torque_active[1]), rec.torque_active[1], t, EventKind::VelocityRow, format!("b = {:e}", rec.barriers.b_vel));
                state = next;
                log.records.push(rec.clone());
                prev = Some(rec);
            }
            Err(e) => {
                log.events.push(Event { t, kind: EventKind::Abort, detail: e.to_string() });
                log.abort = Some(e.to_string());
                break;
            }
        }
    }
    Ok(log)
}


/// Tolerance on the error bands when counting violations.
pub const BAND_TOLERANCE: f64 = 1e-3;

/// Aggregate figures of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub aborted: bool,
    pub max_error: [f64; 6],
    pub min_error: [f64; 6],
    pub min_force: f64,
    pub max_force: f64,
    /// Steps with some `e_i` outside `(−M̲_i, M̄_i)` widened by
    /// [`BAND_TOLERANCE`], or with `f` outside `(f̲*, f̄*)`.
    pub violations: usize,
    pub contact_lost: usize,
    pub infeasible: usize,
    pub kinematic_active: [usize; 6],
    pub energy_active: usize,
    pub velocity_active: usize,
    pub min_b_k: f64,
    pub min_b_vel: f64,
    pub min_b_d: f64,
    pub max_delta: f64,
    pub max_delta_excess: f64,
}

impl Summary {
    /// `bounds` are the configured (paper) bands.
    pub fn from_log(log: &SimLog, bounds: &SafetyBounds) -> Self {
        let mut s = Summary {
            steps: log.records.len(),
            aborted: log.abort.is_some(),
            max_error: [f64::NEG_INFINITY; 6],
            min_error: [f64::INFINITY; 6],
            min_force: f64::INFINITY,
            max_force: f64::NEG_INFINITY,
            violations: 0,
            contact_lost: 0,
            infeasible: 0,
            kinematic_active: [0; 6],
            energy_active: 0,
            velocity_active: 0,
            min_b_k: f64::INFINITY,
            min_b_vel: f64::INFINITY,
            min_b_d: f64::INFINITY,
            max_delta: 0.0,
            max_delta_excess: f64::NEG_INFINITY,
        };
        for r in &log.records {
            let mut bad = !(r.f > bounds.f_floor && r.f < bounds.f_ceiling);
            for i in 0..6 {
                s.max_error[i] = s.max_error[i].max(r.e[i]);
                s.min_error[i] = s.min_error[i].min(r.e[i]);
                bad |= !(r.e[i] > -bounds.lower[i] - BAND_TOLERANCE && r.e[i] < bounds.upper[i] + BAND_TOLERANCE);
                s.kinematic_active[i] += r.kin_active[i] as usize;
            }
            s.violations += bad as usize;
            s.min_force = s.min_force.min(r.f);
            s.max_force = s.max_force.max(r.f);
            s.contact_lost += r.contact_lost as usize;
            s.infeasible += !r.feasible as usize;
            s.energy_active += r.torque_active[0] as usize;
            s.velocity_active += r.torque_active[1] as usize;
            s.min_b_k = s.min_b_k.min(r.barriers.b_k);
            s.min_b_vel = s.min_b_vel.min(r.barriers.b_vel);
            s.min_b_d = s.min_b_d.min(r.barriers.b_d);
            s.max_delta = s.max_delta.max(r.delta_norm);
            s.max_delta_excess = s.max_delta_excess.max(r.delta_excess);
        }
        s
    }

    /// Exit-status contract: safe iff no violation, no lost contact and the
    /// run completed.
    pub fn is_safe(&self) -> bool {
        self.violations == 0 && self.contact_lost == 0 && !self.aborted
    }
}
