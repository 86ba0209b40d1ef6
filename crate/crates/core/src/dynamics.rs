//! Rigid-body dynamics of the floating-base chain,
//!
//! ```text
//! M(q) ζ̇ + C(q, ζ) ζ + D(q, ζ) ζ + g(q) + Jᵀ(q) λ + δ = τ
//! ```
//!
//! Because the vehicle velocities are body-frame quasi-velocities, `M`
//! depends only on the arm joint angles. The equations are assembled with
//! Kane's method: each body contributes through its point and angular
//! Jacobians (vehicle coordinates) and their analytic time derivatives.
//! `C` is factored so that `Ṁ − 2C` is skew-symmetric.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{skew, ArmFrames, KinematicModel};

/// Vehicle hull parameters. The centre of gravity is the body-frame origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    /// Principal rotational inertia about the body axes.
    pub inertia: [f64; 3],
    /// Diagonal added mass (surge, sway, heave, roll, pitch, yaw).
    #[serde(default)]
    pub added_mass: [f64; 6],
    pub linear_damping: [f64; 6],
    pub quadratic_damping: [f64; 6],
    /// Buoyant force magnitude [N], acting opposite to gravity.
    pub buoyancy: f64,
    /// Centre of buoyancy in the body frame.
    pub center_of_buoyancy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub mass: f64,
    /// Centre of mass in the link frame; buoyancy acts at the same point.
    pub com: [f64; 3],
    /// Principal inertia about the centre of mass, link-frame axes.
    pub inertia: [f64; 3],
    pub buoyancy: f64,
    /// Viscous joint friction [N·m·s/rad].
    pub joint_damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsModel {
    pub gravity: [f64; 3],
    pub vehicle: VehicleParams,
    pub links: Vec<LinkParams>,
}

impl DynamicsModel {
    /// Neutrally buoyant reference vehicle with a light four-link arm.
    pub fn reference() -> Self {
        let g = 9.81;
        let link = |mass: f64, len: f64, com_x: f64| LinkParams {
            mass,
            com: [com_x, 0.0, 0.0],
            inertia: [0.002, mass * len * len / 12.0 + 0.001, mass * len * len / 12.0 + 0.001],
            buoyancy: mass * g,
            joint_damping: 0.5,
        };
        Self {
            gravity: [0.0, 0.0, -g],
            vehicle: VehicleParams {
                mass: 40.0,
                inertia: [2.0, 3.0, 3.0],
                added_mass: [12.0, 25.0, 25.0, 0.8, 1.5, 1.5],
                linear_damping: [20.0, 30.0, 30.0, 4.0, 6.0, 6.0],
                quadratic_damping: [30.0, 50.0, 50.0, 2.0, 3.0, 3.0],
                buoyancy: 40.0 * g,
                center_of_buoyancy: [0.0, 0.0, 0.05],
            },
            links: vec![
                link(1.2, 0.08, 0.04),
                link(1.5, 0.35, 0.175),
                link(1.2, 0.30, 0.15),
                link(0.6, 0.12, 0.06),
            ],
        }
    }

    /// Copy with every mass, inertia and buoyancy multiplied by `mass` and
    /// every damping coefficient by `damping`.
    pub fn scaled(&self, mass: f64, damping: f64) -> Self {
        let mut out = self.clone();
        let v = &mut out.vehicle;
        v.mass *= mass;
        v.inertia.iter_mut().for_each(|x| *x *= mass);
        v.added_mass.iter_mut().for_each(|x| *x *= mass);
        v.buoyancy *= mass;
        v.linear_damping.iter_mut().for_each(|x| *x *= damping);
        v.quadratic_damping.iter_mut().for_each(|x| *x *= damping);
        for l in &mut out.links {
            l.mass *= mass;
            l.inertia.iter_mut().for_each(|x| *x *= mass);
            l.buoyancy *= mass;
            l.joint_damping *= damping;
        }
        out
    }

    pub fn validate(&self, kin: &KinematicModel) -> Result<()> {
        if self.links.len() != kin.arm_dof() {
            return Err(Error::Config(format!(
                "{} link parameter sets for {} arm joints",
                self.links.len(),
                kin.arm_dof()
            )));
        }
        let v = &self.vehicle;
        let positive = v.mass > 0.0
            && v.inertia.iter().all(|&x| x > 0.0)
            && self.links.iter().all(|l| l.mass > 0.0 && l.inertia.iter().all(|&x| x > 0.0));
        if !positive {
            return Err(Error::Config("masses and principal inertias must be positive".into()));
        }
        let nonneg = v.added_mass.iter().all(|&x| x >= 0.0)
            && v.linear_damping.iter().all(|&x| x >= 0.0)
            && v.quadratic_damping.iter().all(|&x| x >= 0.0)
            && self.links.iter().all(|l| l.joint_damping >= 0.0);
        if !nonneg {
            return Err(Error::Config("added mass and damping coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// Bounded generalized disturbance `δ(q, ζ, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub bound: f64,
}

impl Disturbance {
    /// Scale `raw` back onto the ball of radius `bound` when it leaves it.
    pub fn clamp(&self, raw: DVector<f64>) -> DVector<f64> {
        let norm = raw.norm();
        if norm > self.bound && norm > 0.0 {
            raw * (self.bound / norm)
        } else {
            raw
        }
    }
}

/// `Cζ`, `Dζ` and `g` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasForces {
    pub coriolis: DVector<f64>,
    pub damping: DVector<f64>,
    pub gravity: DVector<f64>,
}

impl BiasForces {
    pub fn total(&self) -> DVector<f64> {
        &self.coriolis + &self.damping + &self.gravity
    }
}

/// Kinematic and dynamic description of the whole system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    pub kinematics: KinematicModel,
    pub dynamics: DynamicsModel,
}

/// Per-link quantities in vehicle coordinates.
struct LinkTerms {
    mass: f64,
    inertia: Matrix3<f64>,
    jv: DMatrix<f64>,
    jw: DMatrix<f64>,
    jv_dot: DMatrix<f64>,
    jw_dot: DMatrix<f64>,
    omega_rel: Vector3<f64>,
}

impl RobotModel {
    pub fn reference() -> Self {
        Self { kinematics: KinematicModel::reference(), dynamics: DynamicsModel::reference() }
    }

    pub fn dof(&self) -> usize {
        self.kinematics.dof()
    }

    pub fn validate(&self) -> Result<()> {
        self.kinematics.validate()?;
        self.dynamics.validate(&self.kinematics)
    }

    fn vehicle_inertia(&self) -> nalgebra::Matrix6<f64> {
        let v = &self.dynamics.vehicle;
        let mut m = nalgebra::Matrix6::zeros();
        for i in 0..3 {
            m[(i, i)] = v.mass + v.added_mass[i];
            m[(i + 3, i + 3)] = v.inertia[i] + v.added_mass[i + 3];
        }
        m
    }

    fn link_com(&self, arm: &ArmFrames, j: usize) -> Vector3<f64> {
        arm.origins[j] + arm.rotations[j] * Vector3::from(self.dynamics.links[j].com)
    }

    /// Link terms. Derivatives are taken along the joint rates in `zeta`
    /// (pass zeros when only the Jacobians are needed).
    fn link_terms(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> Vec<LinkTerms> {
        let kin = &self.kinematics;
        let n = kin.dof();
        let n_arm = kin.arm_dof();
        let arm = kin.arm_frames(q);
        let qd = zeta.rows(6, n_arm);

        let mut omega_rel = Vec::with_capacity(n_arm);
        let mut acc = Vector3::zeros();
        for k in 0..n_arm {
            acc += arm.axes[k] * qd[k];
            omega_rel.push(acc);
        }
        let z_dot: Vec<Vector3<f64>> = (0..n_arm)
            .map(|k| if k == 0 { Vector3::zeros() } else { omega_rel[k - 1].cross(&arm.axes[k]) })
            .collect();
        let o_dot: Vec<Vector3<f64>> = (0..n_arm)
            .map(|k| {
                (0..k).fold(Vector3::zeros(), |s, l| {
                    s + arm.axes[l].cross(&(arm.origins[k] - arm.origins[l])) * qd[l]
                })
            })
            .collect();

        (0..n_arm)
            .map(|j| {
                let link = &self.dynamics.links[j];
                let c = self.link_com(&arm, j);
                let c_dot = (0..=j).fold(Vector3::zeros(), |s, l| {
                    s + arm.axes[l].cross(&(c - arm.origins[l])) * qd[l]
                });
                let full = kin.point_jacobian_local(&arm, &c, Some(j));
                let jv = full.rows(0, 3).into_owned();
                let jw = full.rows(3, 3).into_owned();
                let mut jv_dot = DMatrix::zeros(3, n);
                let mut jw_dot = DMatrix::zeros(3, n);
                jv_dot.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&c_dot)));
                for k in 0..=j {
                    let d = z_dot[k].cross(&(c - arm.origins[k])) + arm.axes[k].cross(&(c_dot - o_dot[k]));
                    jv_dot.fixed_view_mut::<3, 1>(0, 6 + k).copy_from(&d);
                    jw_dot.fixed_view_mut::<3, 1>(0, 6 + k).copy_from(&z_dot[k]);
                }
                let r = arm.rotations[j];
                let inertia = r * Matrix3::from_diagonal(&Vector3::from(link.inertia)) * r.transpose();
                LinkTerms {
                    mass: link.mass,
                    inertia,
                    jv,
                    jw,
                    jv_dot,
                    jw_dot,
                    omega_rel: omega_rel[j],
                }
            })
            .collect()
    }

    /// Generalized inertia matrix `M(q)`, symmetric positive definite.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let mut m = DMatrix::zeros(n, n);
        m.fixed_view_mut::<6, 6>(0, 0).copy_from(&self.vehicle_inertia());
        for t in self.link_terms(q, &DVector::zeros(n)) {
            m += t.jv.transpose() * &t.jv * t.mass + t.jw.transpose() * t.inertia * &t.jw;
        }
        m
    }

    /// `C(q, ζ)` with `ζᵀ(Ṁ − 2C)w = 0`-type skew symmetry of `Ṁ − 2C`.
    pub fn coriolis_matrix(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let mut c = DMatrix::zeros(n, n);

        let nu: Vector6<f64> = zeta.fixed_rows::<6>(0).into_owned();
        let mv = self.vehicle_inertia();
        let h = mv * nu;
        let p_lin: Vector3<f64> = h.fixed_rows::<3>(0).into_owned();
        let p_ang: Vector3<f64> = h.fixed_rows::<3>(3).into_owned();
        c.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&p_lin)));
        c.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-skew(&p_lin)));
        c.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-skew(&p_ang)));

        let w: Vector3<f64> = zeta.fixed_rows::<3>(3).into_owned();
        let sw = skew(&w);
        for t in self.link_terms(q, zeta) {
            let omega_link = &t.jw * zeta;
            let omega_link = Vector3::new(omega_link[0], omega_link[1], omega_link[2]);
            let i = t.inertia;
            let sr = skew(&t.omega_rel);
            let i_dot = sr * i - i * sr;
            let x = 0.5 * i_dot - 0.5 * skew(&(i * omega_link)) + 0.5 * (sw * i + i * sw);
            c += t.jv.transpose() * (&t.jv_dot + sw * &t.jv) * t.mass
                + t.jw.transpose() * (i * &t.jw_dot + x * &t.jw);
        }
        c
    }

    /// Time derivative of `M` along `ζ`, assembled analytically.
    pub fn mass_matrix_rate(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let mut md = DMatrix::zeros(n, n);
        for t in self.link_terms(q, zeta) {
            let sr = skew(&t.omega_rel);
            let i_dot = sr * t.inertia - t.inertia * sr;
            let lin = t.jv_dot.transpose() * &t.jv * t.mass;
            let ang = t.jw_dot.transpose() * t.inertia * &t.jw;
            md += &lin + lin.transpose() + &ang + ang.transpose() + t.jw.transpose() * i_dot * &t.jw;
        }
        md
    }

    /// Points where gravity and buoyancy act, with their Jacobians.
    fn body_loads(&self, q: &DVector<f64>) -> Vec<(Vector3<f64>, DMatrix<f64>, Vector3<f64>)> {
        let kin = &self.kinematics;
        let arm = kin.arm_frames(q);
        let gvec = Vector3::from(self.dynamics.gravity);
        let up = if gvec.norm() > 0.0 { -gvec.normalize() } else { Vector3::zeros() };
        let rv_t = kin.vehicle_rotation(q).transpose();
        let v = &self.dynamics.vehicle;
        let mut loads = Vec::new();
        let origin = Vector3::zeros();
        loads.push((origin, kin.point_jacobian_local(&arm, &origin, None), rv_t * gvec * v.mass));
        let cob = Vector3::from(v.center_of_buoyancy);
        loads.push((cob, kin.point_jacobian_local(&arm, &cob, None), rv_t * up * v.buoyancy));
        for (j, link) in self.dynamics.links.iter().enumerate() {
            let c = self.link_com(&arm, j);
            let jac = kin.point_jacobian_local(&arm, &c, Some(j));
            loads.push((c, jac, rv_t * (gvec * link.mass + up * link.buoyancy)));
        }
        loads
    }

    /// Gravity and buoyancy term `g(q)` (left-hand side convention).
    pub fn gravity_forces(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dof());
        for (_, jac, force) in self.body_loads(q) {
            g -= jac.rows(0, 3).transpose() * force;
        }
        g
    }

    /// Potential of the gravity and buoyancy loads; `d/dt U = ζᵀ g`.
    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        let rv = self.kinematics.vehicle_rotation(q);
        let eta1: Vector3<f64> = q.fixed_rows::<3>(0).into_owned();
        self.body_loads(q)
            .into_iter()
            .map(|(p, _, f_body)| -(rv * f_body).dot(&(eta1 + rv * p)))
            .sum()
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> f64 {
        0.5 * zeta.dot(&(self.mass_matrix(q) * zeta))
    }

    /// `D(ζ_r) ζ_r` with the vehicle velocity taken relative to a water
    /// current (inertial frame); joints are purely viscous.
    pub fn damping_forces_in_current(
        &self,
        q: &DVector<f64>,
        zeta: &DVector<f64>,
        current: &Vector3<f64>,
    ) -> DVector<f64> {
        let v = &self.dynamics.vehicle;
        let current_body = self.kinematics.vehicle_rotation(q).transpose() * current;
        let mut d = DVector::zeros(self.dof());
        for i in 0..6 {
            let rel = if i < 3 { zeta[i] - current_body[i] } else { zeta[i] };
            d[i] = (v.linear_damping[i] + v.quadratic_damping[i] * rel.abs()) * rel;
        }
        for (j, link) in self.dynamics.links.iter().enumerate() {
            d[6 + j] = link.joint_damping * zeta[6 + j];
        }
        d
    }

    /// `D(ζ) ζ` in still water.
    pub fn damping_forces(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> DVector<f64> {
        self.damping_forces_in_current(q, zeta, &Vector3::zeros())
    }

    pub fn bias_forces(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> BiasForces {
        BiasForces {
            coriolis: self.coriolis_matrix(q, zeta) * zeta,
            damping: self.damping_forces(q, zeta),
            gravity: self.gravity_forces(q),
        }
    }

    /// Solve the equations of motion for `ζ̇` given every force term.
    pub fn forward_dynamics(
        &self,
        q: &DVector<f64>,
        zeta: &DVector<f64>,
        tau: &DVector<f64>,
        contact_wrench: &Vector6<f64>,
        delta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let bias = self.bias_forces(q, zeta);
        let jac = self.kinematics.jacobian(q)?;
        let rhs = tau - bias.total() - jac.transpose() * contact_wrench - delta;
        self.solve_mass(q, rhs)
    }

    /// `M(q)⁻¹ rhs` via Cholesky.
    pub fn solve_mass(&self, q: &DVector<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
        let chol = self
            .mass_matrix(q)
            .cholesky()
            .ok_or_else(|| Error::Config("inertia matrix is not positive definite".into()))?;
        Ok(chol.solve(&rhs))
    }

    /// Extreme eigenvalues of `M(q)`.
    pub fn inertia_eigen_bounds(&self, q: &DVector<f64>) -> (f64, f64) {
        let eig = SymmetricEigen::new(self.mass_matrix(q));
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }
}
