#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random configuration around the reference posture, pitch kept away from
/// the Euler singularity.
pub fn random_configuration(rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut q = DVector::zeros(10);
    for i in 0..3 {
        q[i] = rng.random_range(-1.0..1.0);
    }
    q[3] = rng.random_range(-0.8..0.8);
    q[4] = rng.random_range(-0.8..0.8);
    q[5] = rng.random_range(-3.0..3.0);
    let home = [0.0, 0.6, -1.2, 0.6];
    for i in 0..4 {
        q[6 + i] = home[i] + rng.random_range(-1.0..1.0);
    }
    q
}

/// Central difference of `f` at `x` along every coordinate; columns are
/// partial derivatives.
pub fn central_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        out.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    out
}

/// Fourth-order central difference of a scalar function.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// `argmin ½‖x − x0‖²` subject to `a_jᵀ x ≥ c_j`, solved by Hildreth's dual
/// coordinate ascent and then polished by solving the KKT system on the
/// active set it finds. Returns `None` when the dual iteration does not
/// settle (which, for these sizes, means the constraints are infeasible).
pub fn qp_oracle(x0: &DVector<f64>, rows: &[(DVector<f64>, f64)]) -> Option<DVector<f64>> {
    let m = rows.len();
    let mut lambda = vec![0.0; m];
    let mut x = x0.clone();
    let mut converged = false;
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for (j, (a, c)) in rows.iter().enumerate() {
            let n2 = a.norm_squared();
            if n2 == 0.0 {
                continue;
            }
            let step = (c - a.dot(&x)) / n2;
            let next = (lambda[j] + step).max(0.0);
            let d = next - lambda[j];
            if d != 0.0 {
                x += a * d;
                lambda[j] = next;
                change = change.max(d.abs() * n2.sqrt());
            }
        }
        if change < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }

    let scale = lambda.iter().copied().fold(0.0, f64::max).max(1.0);
    let active: Vec<usize> = (0..m).filter(|&j| lambda[j] > 1e-12 * scale).collect();
    if active.is_empty() {
        return Some(x);
    }
    let k = active.len();
    let gram = DMatrix::from_fn(k, k, |r, s| rows[active[r]].0.dot(&rows[active[s]].0));
    let rhs = DVector::from_fn(k, |r, _| rows[active[r]].1 - rows[active[r]].0.dot(x0));
    if let Some(mu) = gram.clone().lu().solve(&rhs) {
        let mut polished = x0.clone();
        for (r, &j) in active.iter().enumerate() {
            polished += &rows[j].0 * mu[r];
        }
        let ok = mu.iter().all(|&v| v >= -1e-12)
            && rows.iter().all(|(a, c)| a.dot(&polished) - c >= -1e-9 * (1.0 + c.abs()));
        if ok {
            return Some(polished);
        }
    }
    Some(x)
}

pub mod checks;

use floatcbf::contact::ContactModel;
use floatcbf::task::{compute_errors, ReferenceSample};
use nalgebra::{Matrix3, Rotation3, Vector3, Vector6};

/// Velocity-resolved tool: the commanded twist is applied exactly over each
/// step (`ṗ = v`, `Ṙ = S(ω) R`), the normal force follows the surface law.
#[derive(Debug, Clone)]
pub struct ToolPlant {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub contact: ContactModel,
}

impl ToolPlant {
    pub fn force(&self) -> f64 {
        self.contact.force_magnitude(self.position.x).value
    }

    pub fn gradient(&self) -> f64 {
        self.contact.gradient(self.position.x)
    }

    pub fn errors(&self, sample: &ReferenceSample) -> Vector6<f64> {
        compute_errors(self.force(), &self.position, &self.rotation, sample).0
    }

    /// One RK4 step of the closed loop `ẋ = control(tool, t)`, the rotation
    /// integrated as a matrix and projected back onto SO(3).
    pub fn rk4_step<F>(&mut self, t: f64, dt: f64, mut control: F)
    where
        F: FnMut(&ToolPlant, f64) -> Vector6<f64>,
    {
        let rate = |tool: &ToolPlant, t: f64, control: &mut F| {
            let x = control(tool, t);
            let w: Vector3<f64> = x.fixed_rows::<3>(3).into_owned();
            (x.fixed_rows::<3>(0).into_owned(), floatcbf::kinematics::skew(&w) * tool.rotation)
        };
        let at = |dp: Vector3<f64>, dr: Matrix3<f64>, s: f64| ToolPlant {
            position: self.position + dp * s,
            rotation: self.rotation + dr * s,
            contact: self.contact,
        };
        let (p1, r1) = rate(self, t, &mut control);
        let (p2, r2) = rate(&at(p1, r1, 0.5 * dt), t + 0.5 * dt, &mut control);
        let (p3, r3) = rate(&at(p2, r2, 0.5 * dt), t + 0.5 * dt, &mut control);
        let (p4, r4) = rate(&at(p3, r3, dt), t + dt, &mut control);
        self.position += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (dt / 6.0);
        let r = self.rotation + (r1 + r2 * 2.0 + r3 * 2.0 + r4) * (dt / 6.0);
        let svd = r.svd(true, true);
        self.rotation = svd.u.unwrap() * svd.v_t.unwrap();
    }

    pub fn advance(&mut self, twist: &Vector6<f64>, dt: f64) {
        self.position += twist.fixed_rows::<3>(0) * dt;
        let w: Vector3<f64> = twist.fixed_rows::<3>(3).into_owned();
        self.rotation = Rotation3::new(w * dt).into_inner() * self.rotation;
    }
}
