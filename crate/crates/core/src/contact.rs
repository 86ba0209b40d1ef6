//! Compliant planar contact: deformation, force-deformation laws and
//! decomposition of the interaction wrench.

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    /// `Φ(χ) = k χ^{3/2}`
    Hertz,
    /// `Φ(χ) = k χ²`
    Quadratic,
}

impl ContactKind {
    fn exponent(self) -> f64 {
        match self {
            ContactKind::Hertz => 1.5,
            ContactKind::Quadratic => 2.0,
        }
    }
}

/// Force-deformation law of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactModel {
    pub kind: ContactKind,
    pub stiffness: f64,
    /// Deformation floor χ* above which the gradient is bounded away from 0.
    #[serde(default = "default_chi_star")]
    pub chi_star: f64,
}

fn default_chi_star() -> f64 {
    1e-3
}

/// Normal force with a flag for lost contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalForce {
    pub value: f64,
    pub separated: bool,
}

impl ContactModel {
    pub fn quadratic(stiffness: f64) -> Self {
        Self { kind: ContactKind::Quadratic, stiffness, chi_star: default_chi_star() }
    }

    pub fn hertz(stiffness: f64) -> Self {
        Self { kind: ContactKind::Hertz, stiffness, chi_star: default_chi_star() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) || !(self.chi_star > 0.0) {
            return Err(Error::Config("contact stiffness and χ* must be positive".into()));
        }
        Ok(())
    }

    /// `f = Φ(χ)`; zero and flagged when the tool has left the surface.
    pub fn force_magnitude(&self, chi: f64) -> NormalForce {
        if chi < 0.0 {
            return NormalForce { value: 0.0, separated: true };
        }
        NormalForce { value: self.stiffness * chi.powf(self.kind.exponent()), separated: false }
    }

    /// `dΦ/dχ` without the floor check (zero when separated).
    pub fn gradient(&self, chi: f64) -> f64 {
        if chi <= 0.0 {
            return 0.0;
        }
        let p = self.kind.exponent();
        p * self.stiffness * chi.powf(p - 1.0)
    }

    /// `dΦ/dχ`, rejecting deformations below χ*.
    pub fn force_gradient(&self, chi: f64) -> Result<f64> {
        if chi < self.chi_star {
            return Err(Error::BelowGradientFloor { chi, chi_star: self.chi_star });
        }
        Ok(self.gradient(chi))
    }

    /// Deformation producing force `f ≥ 0`.
    pub fn deformation_for_force(&self, f: f64) -> f64 {
        (f.max(0.0) / self.stiffness).powf(1.0 / self.kind.exponent())
    }

    /// Gradient at the deformation that produces force `f`.
    pub fn gradient_at_force(&self, f: f64) -> f64 {
        self.gradient(self.deformation_for_force(f))
    }
}

/// Bounds `0 < ∂f̲ ≤ ∂Φ(χ) ≤ ∂f̄` the controller relies on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientBounds {
    pub lower: f64,
    pub upper: f64,
}

impl GradientBounds {
    /// Bounds valid for every stiffness in `[k_min, k_max]` while the force
    /// stays in `[f_floor, f_ceiling]`. Both laws have a gradient that grows
    /// with force and with stiffness at fixed force.
    pub fn over_corridor(kind: ContactKind, k_min: f64, k_max: f64, f_floor: f64, f_ceiling: f64) -> Self {
        let soft = ContactModel { kind, stiffness: k_min, chi_star: default_chi_star() };
        let stiff = ContactModel { kind, stiffness: k_max, chi_star: default_chi_star() };
        Self { lower: soft.gradient_at_force(f_floor), upper: stiff.gradient_at_force(f_ceiling) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.lower <= self.upper) {
            return Err(Error::Config(format!(
                "gradient bounds must satisfy 0 < lower ≤ upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn contains(&self, gradient: f64) -> bool {
        gradient >= self.lower && gradient <= self.upper
    }

    /// Geometric mean, used as the nominal gradient estimate.
    pub fn nominal(&self) -> f64 {
        (self.lower * self.upper).sqrt()
    }
}

/// Deformation `χ = n_sᵀ x_e`.
pub fn deformation(x_e: &Vector3<f64>, n_s: &Vector3<f64>) -> f64 {
    n_s.dot(x_e)
}

/// Interaction wrench exerted on the surface, with the surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionWrench {
    pub lambda: Vector6<f64>,
    pub surface_normal: Vector3<f64>,
}

impl InteractionWrench {
    pub fn generalized_normal(&self) -> Vector6<f64> {
        let n = self.surface_normal;
        Vector6::new(n.x, n.y, n.z, 0.0, 0.0, 0.0)
    }

    /// Normal force magnitude `f = nᵀλ`.
    pub fn normal_force(&self) -> f64 {
        self.generalized_normal().dot(&self.lambda)
    }

    /// `(n nᵀ λ, (I − n nᵀ) λ)`.
    pub fn decompose(&self) -> (Vector6<f64>, Vector6<f64>) {
        let n = self.generalized_normal();
        let normal = n * n.dot(&self.lambda);
        (normal, self.lambda - normal)
    }
}

/// Projector `(I − n nᵀ)` onto the tangential wrench/twist directions.
pub fn tangential_projector(n_s: &Vector3<f64>) -> Matrix6<f64> {
    let n = Vector6::new(n_s.x, n_s.y, n_s.z, 0.0, 0.0, 0.0);
    Matrix6::identity() - n * n.transpose()
}

/// Wrench the tool exerts on a compliant surface with viscous tangential
/// resistance, given the deformation and the tool twist.
pub fn surface_wrench(
    model: &ContactModel,
    n_s: &Vector3<f64>,
    chi: f64,
    twist: &Vector6<f64>,
    tangential_damping: f64,
) -> (Vector6<f64>, NormalForce) {
    let force = model.force_magnitude(chi);
    if force.separated {
        return (Vector6::zeros(), force);
    }
    let n = Vector6::new(n_s.x, n_s.y, n_s.z, 0.0, 0.0, 0.0);
    let lambda = n * force.value + tangential_projector(n_s) * twist * tangential_damping;
    (lambda, force)
}
