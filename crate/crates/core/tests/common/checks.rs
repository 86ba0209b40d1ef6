//! Measurements shared by the focused tests and the acceptance runner. Each
//! returns the worst case it saw so callers pick their own threshold.

use floatcbf::contact::{ContactModel, GradientBounds};
use floatcbf::dyn_cbf::{
    bk_jacobian, energy_barrier, energy_constraint, error_configuration_jacobian, project_halfspaces,
    softmin_barrier, softmin_weights, velocity_barrier, velocity_constraint, DynCbfParams, HalfSpace, VelocityBounds,
};
use floatcbf::dynamics::RobotModel;
use floatcbf::kin_cbf::{
    barrier_gradients, barrier_values, nominal_velocity, safe_velocity_filter, FilterForm, RateModel, SafetyBounds,
};
use floatcbf::kinematics::axis_angle;
use floatcbf::sim::surface_normal;
use floatcbf::task::{
    compute_errors, error_rate_map, interaction_matrix, interaction_matrix_unchecked, OrientationReference,
    ReferenceSample, Sinusoid, TaskError, TaskReference,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3, Vector6};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{derivative, qp_oracle, random_configuration, random_vector, rng, uniform, ToolPlant};

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Tool twist along `q(s) = q + s T(q) ζ`, by central differences.
fn fd_twist(robot: &RobotModel, q: &DVector<f64>, zeta: &DVector<f64>) -> Vector6<f64> {
    let kin = &robot.kinematics;
    let qdot = kin.configuration_rate(q, zeta).unwrap();
    let h = 1e-6;
    let p = |s: f64| kin.forward_kinematics(&(q + &qdot * s)).unwrap();
    let (plus, minus, mid) = (p(h), p(-h), p(0.0));
    let v = (plus.position - minus.position) / (2.0 * h);
    let w = vee(&((plus.rotation - minus.rotation) / (2.0 * h) * mid.rotation.transpose()));
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

/// Largest relative Frobenius error of the geometric Jacobian.
pub fn jacobian_fd_error(samples: usize, seed: u64) -> f64 {
    let robot = RobotModel::reference();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let q = random_configuration(&mut r);
        let j = robot.kinematics.jacobian(&q).unwrap();
        let mut fd = DMatrix::zeros(6, j.ncols());
        for c in 0..j.ncols() {
            let mut zeta = DVector::zeros(j.ncols());
            zeta[c] = 1.0;
            fd.set_column(c, &fd_twist(&robot, &q, &zeta));
        }
        worst = worst.max((&j - &fd).norm() / j.norm());
    }
    worst
}

/// Largest relative error of `∂Φ` for both laws over a deformation grid.
pub fn contact_gradient_fd_error() -> f64 {
    let mut worst: f64 = 0.0;
    for model in [
        ContactModel::quadratic(100.0),
        ContactModel::quadratic(300.0),
        ContactModel::quadratic(900.0),
        ContactModel::hertz(300.0),
    ] {
        for k in 0..40 {
            let chi = model.chi_star * (1.0 + 0.5 * k as f64);
            let fd = derivative(|c| model.force_magnitude(c).value, chi, 1e-7 * (1.0 + chi));
            let g = model.force_gradient(chi).unwrap();
            worst = worst.max((g - fd).abs() / g);
        }
    }
    worst
}

pub fn moving_reference() -> TaskReference {
    TaskReference {
        force: Sinusoid { offset: 1.0, amplitude: 0.1, period: 7.0, phase: 0.3 },
        position: [
            Sinusoid { offset: 0.0, amplitude: 0.05, period: 20.0, phase: 0.0 },
            Sinusoid { offset: 0.01, amplitude: 0.05, period: 13.0, phase: 1.0 },
        ],
        orientation: OrientationReference { rpy: [0.05, -0.1, 0.2], axis: [0.0, 0.6, 0.8], amplitude: 0.1, period: 9.0 },
    }
}

/// Tool in contact with deformation `chi`, arm perturbed about the reference
/// posture.
pub fn contact_configuration(r: &mut ChaCha8Rng, robot: &RobotModel, chi: f64) -> DVector<f64> {
    let mut q = random_configuration(r);
    q[3] *= 0.3;
    q[4] *= 0.3;
    let x = robot.kinematics.forward_kinematics(&q).unwrap().position;
    q[0] += chi - surface_normal().dot(&x);
    q
}

/// Largest relative error of `∂b_k/∂q` (true contact gradient in the chain).
pub fn bk_gradient_fd_error(samples: usize, eta: f64, seed: u64) -> f64 {
    let robot = RobotModel::reference();
    let contact = ContactModel::quadratic(300.0);
    let reference = moving_reference();
    let kin = &robot.kinematics;
    let bounds = SafetyBounds::reference();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let chi = uniform(&mut r, 0.04, 0.07);
        let q = contact_configuration(&mut r, &robot, chi);
        let sample = reference.sample(uniform(&mut r, 0.0, 20.0));
        let errors = |q: &DVector<f64>| {
            let ee = kin.forward_kinematics(q).unwrap();
            let f = contact.force_magnitude(surface_normal().dot(&ee.position)).value;
            compute_errors(f, &ee.position, &ee.rotation, &sample).0
        };
        let b_k = |q: &DVector<f64>| softmin_barrier(barrier_values(&errors(q), &bounds).as_slice(), eta);

        let e = errors(&q);
        let b = barrier_values(&e, &bounds);
        let weights = Vector6::from_vec(softmin_weights(b.as_slice(), eta));
        let ee = kin.forward_kinematics(&q).unwrap();
        let l = interaction_matrix_unchecked(&ee.rotation, &sample.rotation);
        let g = contact.gradient(surface_normal().dot(&ee.position));
        let chain = error_configuration_jacobian(
            &error_rate_map(g, &l),
            &kin.jacobian(&q).unwrap(),
            &kin.configuration_rate_map(&q).unwrap(),
        )
        .unwrap();
        let analytic = bk_jacobian(&weights, &barrier_gradients(&e, &bounds), &chain);
        let fd = DVector::from_fn(q.len(), |j, _| {
            derivative(
                |s| {
                    let mut qs = q.clone();
                    qs[j] += s;
                    b_k(&qs)
                },
                0.0,
                1e-6,
            )
        });
        worst = worst.max((&analytic - &fd).norm() / analytic.norm().max(1e-3));
    }
    worst
}

/// Largest `|ζᵀ(Ṁ − 2C)ζ| / ((‖Ṁ‖ + ‖C‖)‖ζ‖²)`.
pub fn skew_residual(samples: usize, seed: u64) -> f64 {
    let robot = RobotModel::reference();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let q = random_configuration(&mut r);
        let zeta = random_vector(&mut r, q.len(), 1.0);
        let m_dot = robot.mass_matrix_rate(&q, &zeta);
        let c = robot.coriolis_matrix(&q, &zeta);
        let s = zeta.dot(&((&m_dot - &c * 2.0) * &zeta));
        worst = worst.max(s.abs() / ((m_dot.norm() + c.norm()) * zeta.norm_squared()));
    }
    worst
}

/// Largest relative error of `Ṁ` against a central difference of `M` along
/// the motion.
pub fn inertia_rate_fd_error(samples: usize, seed: u64) -> f64 {
    let robot = RobotModel::reference();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let q = random_configuration(&mut r);
        let zeta = random_vector(&mut r, q.len(), 1.0);
        let m_dot = robot.mass_matrix_rate(&q, &zeta);
        let qdot = robot.kinematics.configuration_rate(&q, &zeta).unwrap();
        let h = 1e-6;
        let fd = (robot.mass_matrix(&(&q + &qdot * h)) - robot.mass_matrix(&(&q - &qdot * h))) / (2.0 * h);
        worst = worst.max((&fd - &m_dot).norm() / (1.0 + m_dot.norm()));
    }
    worst
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
pub fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off < 1e-30 * a.norm_squared() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = if theta == 0.0 { 1.0 } else { theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt()) };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

/// Counts states where `M` is not symmetric positive definite, its
/// eigenvalue bounds disagree with an independent Jacobi iteration, or a
/// Rayleigh quotient leaves `[λ_min, λ_max]`.
pub fn inertia_failures(samples: usize, seed: u64) -> usize {
    let robot = RobotModel::reference();
    let mut r = rng(seed);
    let mut failures = 0;
    for _ in 0..samples {
        let q = random_configuration(&mut r);
        let m = robot.mass_matrix(&q);
        let eig = jacobi_eigenvalues(m.clone());
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo_lib, hi_lib) = robot.inertia_eigen_bounds(&q);
        let mut ok = (&m - m.transpose()).norm() < 1e-12 * m.norm()
            && lo > 0.0
            && (lo - lo_lib).abs() < 1e-9 * hi
            && (hi - hi_lib).abs() < 1e-9 * hi;
        for _ in 0..20 {
            let w = random_vector(&mut r, q.len(), 1.0);
            let quad = w.dot(&(&m * &w));
            let n2 = w.norm_squared();
            ok &= lo * n2 <= quad * (1.0 + 1e-12) && quad <= hi * n2 * (1.0 + 1e-12);
        }
        failures += !ok as usize;
    }
    failures
}

fn random_rotation(r: &mut ChaCha8Rng, angle: f64) -> Matrix3<f64> {
    let axis = Vector3::new(uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0));
    axis_angle(&axis.normalize(), uniform(r, -angle, angle))
}

/// One random kinematic-filter instance.
pub struct KinInstance {
    pub x_c: Vector6<f64>,
    pub e: Vector6<f64>,
    pub rates: RateModel,
    pub bounds: SafetyBounds,
    pub kappa: [f64; 6],
}

pub fn kin_instance(r: &mut ChaCha8Rng) -> KinInstance {
    let lower = Vector6::from_fn(|_, _| uniform(r, 0.05, 1.0));
    let upper = Vector6::from_fn(|_, _| uniform(r, 0.05, 1.0));
    let bounds = SafetyBounds {
        lower: lower.into(),
        upper: upper.into(),
        f_floor: 0.2,
        f_ceiling: 1.8,
        corridor_margin: 0.05,
    };
    let e = Vector6::from_fn(|i, _| -lower[i] + uniform(r, 0.01, 0.99) * (lower[i] + upper[i]));
    let g_lo = uniform(r, 2.0, 50.0);
    let gradient = GradientBounds { lower: g_lo, upper: g_lo * uniform(r, 1.0, 6.0) };
    let r_d = random_rotation(r, 3.0);
    let r_e = random_rotation(r, 0.6) * r_d;
    let reference = ReferenceSample {
        force: 1.0,
        force_rate: uniform(r, -0.5, 0.5),
        position: Vector2::zeros(),
        position_rate: Vector2::new(uniform(r, -0.2, 0.2), uniform(r, -0.2, 0.2)),
        rotation: r_d,
        angular_velocity: Vector3::new(uniform(r, -0.3, 0.3), uniform(r, -0.3, 0.3), uniform(r, -0.3, 0.3)),
    };
    let l = interaction_matrix_unchecked(&r_e, &r_d);
    let scale = uniform(r, 0.1, 3.0);
    let x_c = Vector6::from_fn(|_, _| uniform(r, -scale, scale));
    let kappa = [(); 6].map(|_| uniform(r, 0.5, 10.0));
    KinInstance { x_c, e, rates: RateModel { gradient, l, reference }, bounds, kappa }
}

/// The filter's problem written as a generic QP in `u = [ẋ_n, ẏ, ż, Lᵀω]`.
fn kin_rows(inst: &KinInstance) -> (DVector<f64>, Vec<(DVector<f64>, f64)>) {
    let l = inst.rates.l;
    let w: Vector3<f64> = l.transpose() * inst.x_c.fixed_rows::<3>(3);
    let u_c = DVector::from_vec(vec![inst.x_c[0], inst.x_c[1], inst.x_c[2], w.x, w.y, w.z]);
    let b = barrier_values(&inst.e, &inst.bounds);
    let h = barrier_gradients(&inst.e, &inst.bounds);
    let s = &inst.rates.reference;
    let lw = l * s.angular_velocity;
    let drift = [-s.force_rate, -s.position_rate.x, -s.position_rate.y, -lw.x, -lw.y, -lw.z];
    let mut rows = Vec::new();
    for i in 0..6 {
        let gains: Vec<f64> =
            if i == 0 { vec![inst.rates.gradient.lower, inst.rates.gradient.upper] } else { vec![1.0] };
        for g in gains {
            let mut a = DVector::zeros(6);
            a[i] = h[i] * g;
            rows.push((a, -inst.kappa[i] * b[i] - h[i] * drift[i]));
        }
    }
    (u_c, rows)
}

fn to_u(x: &Vector6<f64>, l: &Matrix3<f64>) -> DVector<f64> {
    let w: Vector3<f64> = l.transpose() * x.fixed_rows::<3>(3);
    DVector::from_vec(vec![x[0], x[1], x[2], w.x, w.y, w.z])
}

/// Largest gap between the closed-form filter and the QP oracle (relative
/// to `1 + ‖u‖`) and the number of instances with an active channel.
pub fn kin_filter_qp_gap(instances: usize, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut active = 0;
    for _ in 0..instances {
        let inst = kin_instance(&mut r);
        let out = safe_velocity_filter(&inst.x_c, &inst.e, &inst.rates, &inst.bounds, &inst.kappa, FilterForm::Decoupled)
            .unwrap();
        let (u_c, rows) = kin_rows(&inst);
        let oracle = qp_oracle(&u_c, &rows).expect("decoupled instances are always feasible");
        let u = to_u(&out.velocity, &inst.rates.l);
        worst = worst.max((&u - &oracle).norm() / (1.0 + oracle.norm()));
        active += out.active.iter().any(|&a| a) as usize;
    }
    (worst, active)
}

/// Same comparison for the coupled form on instances where exactly one
/// channel needs correcting and the force-gradient bounds coincide, the
/// situation where it solves the QP exactly.
pub fn coupled_single_channel_gap(instances: usize, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut used = 0;
    while used < instances {
        let mut inst = kin_instance(&mut r);
        inst.rates.gradient.upper = inst.rates.gradient.lower;
        let out = safe_velocity_filter(&inst.x_c, &inst.e, &inst.rates, &inst.bounds, &inst.kappa, FilterForm::Coupled)
            .unwrap();
        if out.active.iter().filter(|&&a| a).count() != 1 {
            continue;
        }
        let (u_c, rows) = kin_rows(&inst);
        let oracle = qp_oracle(&u_c, &rows).unwrap();
        worst = worst.max((&to_u(&out.velocity, &inst.rates.l) - &oracle).norm() / (1.0 + oracle.norm()));
        used += 1;
    }
    (worst, used)
}

/// Torque-filter instances built from the energy and velocity rows at
/// random robot states. Returns the largest relative gap to the oracle and
/// the number of instances with an active row.
pub fn torque_filter_qp_gap(instances: usize, seed: u64) -> (f64, usize) {
    let robot = RobotModel::reference();
    let n = robot.dof();
    let mut r = rng(seed);
    let params = DynCbfParams {
        eta: 2000.0,
        gamma_energy: 100.0,
        disturbance_bound: vec![10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        kappa_d: 5.0,
        kappa_v: 5.0,
        reference_feedforward: false,
    };
    let vb = VelocityBounds::uniform(n, 0.5);
    let mut worst: f64 = 0.0;
    let mut active = 0;
    let mut done = 0;
    while done < instances {
        let q = random_configuration(&mut r);
        let zeta = random_vector(&mut r, n, 0.4);
        let zeta_r = &zeta + random_vector(&mut r, n, 0.25);
        let lambda = DVector::from_vec(vec![uniform(&mut r, 0.2, 1.8), 0.0, 0.0, 0.0, 0.0, 0.0]);
        let j = robot.kinematics.jacobian(&q).unwrap();
        let contact_load = j.transpose() * lambda;
        let mass = robot.mass_matrix(&q);
        let bias = robot.bias_forces(&q, &zeta);
        let b_k = uniform(&mut r, 0.0, 0.02);
        let b_d = energy_barrier(&mass, &zeta, b_k, params.gamma_energy);
        let (b_vel, xi) = velocity_barrier(&zeta, &zeta_r, &vb.rho);
        let mut rows: Vec<HalfSpace> = vec![energy_constraint(
            &zeta,
            &bias.gravity,
            zeta.dot(&contact_load),
            params.disturbance_support(&zeta),
            params.gamma_energy,
            uniform(&mut r, -0.5, 0.5),
            b_d,
            params.kappa_d,
        )];
        rows.extend(velocity_constraint(&mass, &bias.total(), &contact_load, &xi, b_vel, &vb, &params, None).unwrap());
        let scale = uniform(&mut r, 1.0, 200.0);
        let tau_des = bias.total() + random_vector(&mut r, n, scale);
        let oracle_rows: Vec<(DVector<f64>, f64)> = rows.iter().map(|h| (h.a.clone(), h.c)).collect();
        let Some(oracle) = qp_oracle(&tau_des, &oracle_rows) else { continue };
        let Ok(out) = project_halfspaces(&tau_des, &rows) else { continue };
        worst = worst.max((&out.tau - &oracle).norm() / (1.0 + oracle.norm()));
        active += out.active.iter().any(|&a| a) as usize;
        done += 1;
    }
    (worst, active)
}

/// Same comparison on generic random half-space pairs.
pub fn halfspace_qp_gap(instances: usize, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut active = 0;
    let mut done = 0;
    while done < instances {
        let n = r.random_range(2..12);
        let m = r.random_range(1..3);
        let tau_des = random_vector(&mut r, n, 10.0);
        let rows: Vec<HalfSpace> = (0..m)
            .map(|_| {
                let a = random_vector(&mut r, n, 1.0);
                let c = a.dot(&tau_des) + uniform(&mut r, -5.0, 5.0);
                HalfSpace { a, c }
            })
            .collect();
        let oracle_rows: Vec<(DVector<f64>, f64)> = rows.iter().map(|h| (h.a.clone(), h.c)).collect();
        let Some(oracle) = qp_oracle(&tau_des, &oracle_rows) else { continue };
        let out = project_halfspaces(&tau_des, &rows).expect("feasible instance");
        worst = worst.max((&out.tau - &oracle).norm() / (1.0 + oracle.norm()));
        active += out.active.iter().any(|&a| a) as usize;
        done += 1;
    }
    (worst, active)
}

/// Tool placed at the reference with the given error offsets.
pub fn tool_with_errors(contact: ContactModel, sample: &ReferenceSample, e0: &Vector6<f64>) -> ToolPlant {
    let f = sample.force + e0[0];
    let position = Vector3::new(contact.deformation_for_force(f), sample.position.x + e0[1], sample.position.y + e0[2]);
    // Small-angle offset: e_o ≈ −θ for R_e = exp(S(θ)) R_d, refined below.
    let mut theta = -Vector3::new(e0[3], e0[4], e0[5]);
    for _ in 0..50 {
        let r_e = axis_angle_vec(&theta) * sample.rotation;
        let e_o = compute_errors(f, &position, &r_e, sample).orientation();
        theta -= e0.fixed_rows::<3>(3) - e_o;
    }
    ToolPlant { position, rotation: axis_angle_vec(&theta) * sample.rotation, contact }
}

fn axis_angle_vec(theta: &Vector3<f64>) -> Matrix3<f64> {
    nalgebra::Rotation3::new(*theta).into_inner()
}

/// Velocity-resolved tracking with the exact contact gradient and no
/// filter. Returns the largest `‖e(t)‖ − ‖e(0)‖ e^{−γt}` over the horizon.
pub fn tracking_excess(gamma: f64, duration: f64, dt: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let reference = moving_reference();
    let contact = ContactModel::quadratic(uniform(&mut r, 100.0, 900.0));
    let e0 = Vector6::new(-0.4, 0.06, -0.05, 0.1, -0.08, 0.12);
    let mut tool = tool_with_errors(contact, &reference.sample(0.0), &e0);
    let norm0 = tool.errors(&reference.sample(0.0)).norm();
    let mut worst = f64::NEG_INFINITY;
    let steps = (duration / dt).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let sample = reference.sample(t);
        let e = tool.errors(&sample);
        worst = worst.max(e.norm() - norm0 * (-gamma * t).exp());
        if k == steps {
            break;
        }
        let l = interaction_matrix(&tool.rotation, &sample.rotation).unwrap();
        let x_c = nominal_velocity(&TaskError(e), &sample, tool.gradient(), &l, gamma).unwrap();
        // Apply over the step with the reference rate at mid-step so the
        // sampled-data error stays second order.
        let mid = reference.sample(t + 0.5 * dt);
        let x_mid = nominal_velocity(&TaskError(e), &mid, tool.gradient(), &l, gamma).unwrap();
        tool.advance(&(0.5 * (x_c + x_mid)), dt);
    }
    worst
}

/// Random reference whose force corridor fits the reference bounds.
pub fn random_reference(r: &mut ChaCha8Rng) -> TaskReference {
    loop {
        let reference = TaskReference {
            force: Sinusoid {
                offset: uniform(r, 0.8, 1.2),
                amplitude: uniform(r, 0.0, 0.15),
                period: uniform(r, 4.0, 20.0),
                phase: uniform(r, 0.0, 6.0),
            },
            position: [(); 2].map(|_| Sinusoid {
                offset: uniform(r, -0.05, 0.05),
                amplitude: uniform(r, 0.0, 0.1),
                period: uniform(r, 5.0, 30.0),
                phase: uniform(r, 0.0, 6.0),
            }),
            orientation: OrientationReference {
                rpy: [uniform(r, -0.3, 0.3), uniform(r, -0.3, 0.3), uniform(r, -1.0, 1.0)],
                axis: [uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0), uniform(r, 0.2, 1.0)],
                amplitude: uniform(r, 0.0, 0.2),
                period: uniform(r, 5.0, 20.0),
            },
        };
        if SafetyBounds::reference().clipped_to_corridor(&reference).is_ok() {
            return reference;
        }
    }
}

/// Velocity-resolved closed loop through the kinematic filter, with a
/// smooth adversarial term added to the nominal command and the true
/// stiffness hidden from the controller. Returns the smallest barrier value
/// seen and the number of steps with an active channel.
pub fn kinematic_invariance(references: usize, duration: f64, dt: f64, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let k_range = [100.0, 900.0];
    let mut min_b = f64::INFINITY;
    let mut active_steps = 0;
    for _ in 0..references {
        let reference = random_reference(&mut r);
        let bounds = SafetyBounds::reference().clipped_to_corridor(&reference).unwrap();
        let gradient = GradientBounds::over_corridor(
            floatcbf::contact::ContactKind::Quadratic,
            k_range[0],
            k_range[1],
            bounds.f_floor,
            bounds.f_ceiling,
        );
        let contact = ContactModel::quadratic(uniform(&mut r, k_range[0], k_range[1]));
        let e0 = Vector6::from_fn(|i, _| -bounds.lower[i] + uniform(&mut r, 0.1, 0.9) * (bounds.lower[i] + bounds.upper[i]));
        let mut tool = tool_with_errors(contact, &reference.sample(0.0), &e0);
        let kappa = [(); 6].map(|_| uniform(&mut r, 1.0, 8.0));
        let push_amp = Vector6::from_fn(|i, _| uniform(&mut r, 0.0, if i < 3 { 0.3 } else { 0.6 }));
        let push_freq = Vector6::from_fn(|_, _| uniform(&mut r, 0.1, 1.5));
        let push_phase = Vector6::from_fn(|_, _| uniform(&mut r, 0.0, 6.0));
        let steps = (duration / dt).round() as usize;
        let control = |tool: &ToolPlant, t: f64, active: &mut usize| {
            let sample = reference.sample(t);
            let e = tool.errors(&sample);
            let l = interaction_matrix(&tool.rotation, &sample.rotation).unwrap();
            let push = Vector6::from_fn(|i, _| push_amp[i] * (push_freq[i] * t + push_phase[i]).sin());
            let x_c = nominal_velocity(&TaskError(e), &sample, gradient.nominal(), &l, 1.0).unwrap() + push;
            let rates = RateModel { gradient, l, reference: sample };
            let out = safe_velocity_filter(&x_c, &e, &rates, &bounds, &kappa, FilterForm::Decoupled).unwrap();
            *active += out.active.iter().any(|&a| a) as usize;
            out.velocity
        };
        for k in 0..steps {
            let t = k as f64 * dt;
            let b = barrier_values(&tool.errors(&reference.sample(t)), &bounds);
            min_b = min_b.min(b.min());
            let mut stage_active = 0;
            tool.rk4_step(t, dt, |tool, t| control(tool, t, &mut stage_active));
            active_steps += (stage_active > 0) as usize;
        }
        let e = tool.errors(&reference.sample(duration));
        min_b = min_b.min(barrier_values(&e, &bounds).min());
    }
    (min_b, active_steps)
}

/// Largest `b_k − min_i b_i` over random barrier vectors.
pub fn softmin_excess(samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..samples {
        let eta = [0.1, 1.0, 10.0, 2000.0, 1e6][k % 5];
        let scale = [1e-3, 1.0, 100.0][k % 3];
        let b: Vec<f64> = (0..6).map(|_| uniform(&mut r, -scale, scale)).collect();
        let min = b.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max(softmin_barrier(&b, eta) - min);
    }
    worst
}

/// Counts sampled states with `b_d ≥ 0` but `b_k < 0` or some `b_i < 0`.
pub fn containment_failures(samples: usize, seed: u64) -> (usize, usize) {
    let robot = RobotModel::reference();
    let bounds = SafetyBounds::reference();
    let mut r = rng(seed);
    let mut failures = 0;
    let mut inside = 0;
    for _ in 0..samples {
        let q = random_configuration(&mut r);
        let speed = uniform(&mut r, 0.0, 0.3);
        let zeta = random_vector(&mut r, q.len(), speed);
        let e = Vector6::from_fn(|i, _| uniform(&mut r, -1.3 * bounds.lower[i], 1.3 * bounds.upper[i]));
        let b = barrier_values(&e, &bounds);
        let eta = [10.0, 2000.0][r.random_range(0..2)];
        let gamma = [1.0, 100.0][r.random_range(0..2)];
        let b_k = softmin_barrier(b.as_slice(), eta);
        let b_d = energy_barrier(&robot.mass_matrix(&q), &zeta, b_k, gamma);
        if b_d >= 0.0 {
            inside += 1;
            if b_k < 0.0 || b.min() < 0.0 {
                failures += 1;
            }
        }
    }
    (failures, inside)
}

/// Empirical standard deviation of the truncated noise over `samples`
/// draws, relative to σ.
pub fn noise_std_ratio(samples: usize, sigma: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let draws: Vec<f64> = (0..samples).map(|_| floatcbf::sim::truncated_gaussian(&mut r, sigma)).collect();
    let mean = draws.iter().sum::<f64>() / samples as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
    var.sqrt() / sigma
}
