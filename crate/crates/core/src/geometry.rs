//! Closed-form torus geometry, the tanh interface profile and the manufactured
//! solenoidal test field.
//!
//! Everything here is a pure function of its inputs. Extended quantities
//! (normal, solution, covariant gradient) are constant along normal lines: they
//! are evaluated at the closest point on the torus.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Relative finite-difference step used for Jacobians of analytic fields.
pub const FD_STEP_FACTOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid torus radii R = {major}, r = {minor}; need 0 < r < R")]
    InvalidRadii { major: f64, minor: f64 },
    #[error("interface width {0} must be positive and finite")]
    InvalidWidth(f64),
    #[error("interface width {epsilon} violates epsilon * kappa_max < 1 (kappa_max = {kappa_max})")]
    WidthTooLarge { epsilon: f64, kappa_max: f64 },
    #[error("point ({x}, {y}, {z}) lies on the medial axis of the torus")]
    Degenerate { x: f64, y: f64, z: f64 },
    #[error("normal has length {0}, expected a unit vector")]
    NonUnitNormal(f64),
}

fn degenerate(x: &Vec3) -> GeometryError {
    GeometryError::Degenerate {
        x: x.x,
        y: x.y,
        z: x.z,
    }
}

/// A ring torus around the z-axis with major radius `R` and tube radius `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGeometry {
    major: f64,
    minor: f64,
}

/// Cylindrical decomposition of a point: distance from the axis and the
/// offset from the tube centre circle in the meridian plane.
struct Meridian {
    s: f64,
    ds: f64,
    q: f64,
}

impl TorusGeometry {
    pub fn new(major: f64, minor: f64) -> Result<Self, GeometryError> {
        if !(minor > 0.0 && minor < major && major.is_finite()) {
            return Err(GeometryError::InvalidRadii { major, minor });
        }
        Ok(Self { major, minor })
    }

    /// The benchmark torus, `R = 1`, `r = 0.5`.
    pub fn benchmark() -> Self {
        Self {
            major: 1.0,
            minor: 0.5,
        }
    }

    pub fn major_radius(&self) -> f64 {
        self.major
    }

    pub fn minor_radius(&self) -> f64 {
        self.minor
    }

    /// Largest principal curvature magnitude, `max(1/r, 1/(R - r))`.
    pub fn curvature_bound(&self) -> f64 {
        (1.0 / self.minor).max(1.0 / (self.major - self.minor))
    }

    /// Surface area `4 pi^2 R r`.
    pub fn area(&self) -> f64 {
        4.0 * std::f64::consts::PI * std::f64::consts::PI * self.major * self.minor
    }

    /// Enclosed volume `2 pi^2 R r^2`.
    pub fn volume(&self) -> f64 {
        2.0 * std::f64::consts::PI * std::f64::consts::PI * self.major * self.minor * self.minor
    }

    /// Point on the surface for major angle `u` and tube angle `v`.
    pub fn parametric_point(&self, u: f64, v: f64) -> Vec3 {
        let w = self.major + self.minor * v.cos();
        Vec3::new(w * u.cos(), w * u.sin(), self.minor * v.sin())
    }

    fn meridian(&self, x: &Vec3) -> Result<Meridian, GeometryError> {
        let s = x.x.hypot(x.y);
        let ds = s - self.major;
        if s == 0.0 || (ds == 0.0 && x.z == 0.0) {
            return Err(degenerate(x));
        }
        Ok(Meridian {
            s,
            ds,
            q: ds.hypot(x.z),
        })
    }

    /// Signed distance, negative inside the tube. Total on all of R^3.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        let s = x.x.hypot(x.y);
        (s - self.major).hypot(x.z) - self.minor
    }

    /// Outward unit normal `grad rho`, constant along normal lines.
    pub fn normal(&self, x: &Vec3) -> Result<Vec3, GeometryError> {
        let m = self.meridian(x)?;
        let radial = m.ds / m.q;
        Ok(Vec3::new(
            radial * x.x / m.s,
            radial * x.y / m.s,
            x.z / m.q,
        ))
    }

    /// Closest point projection `x - rho(x) nu(x)`.
    pub fn closest_point(&self, x: &Vec3) -> Result<Vec3, GeometryError> {
        let m = self.meridian(x)?;
        let w = self.major + self.minor * m.ds / m.q;
        Ok(Vec3::new(
            w * x.x / m.s,
            w * x.y / m.s,
            self.minor * x.z / m.q,
        ))
    }

    /// Shape operator `-Pi grad(nu)` of the extended normal field at `x`,
    /// by central differences with step `1e-5 r`.
    pub fn shape_operator(&self, x: &Vec3) -> Result<Mat3, GeometryError> {
        let nu = self.normal(x)?;
        let jac = self.central_jacobian(x, |p| self.normal(p))?;
        Ok(-(projector_unchecked(&nu) * jac))
    }

    /// Manufactured tangential field `u = nu x grad_S(x^2 y - 5 z^3)`, extended
    /// constantly along normal lines.
    pub fn exact_solution(&self, x: &Vec3) -> Result<Vec3, GeometryError> {
        let y = self.closest_point(x)?;
        let nu = self.normal(&y)?;
        let grad = potential_gradient(&y);
        let tangential = projector_unchecked(&nu) * grad;
        Ok(nu.cross(&tangential))
    }

    /// Covariant gradient of the manufactured field, `Pi J_U Pi` at the
    /// closest point. The shape-operator term drops out since `U . nu = 0`.
    pub fn ext_grad_solution(&self, x: &Vec3) -> Result<Mat3, GeometryError> {
        self.ext_grad_solution_with_step(x, FD_STEP_FACTOR * self.minor)
    }

    /// As [`Self::ext_grad_solution`] with an explicit difference step.
    pub fn ext_grad_solution_with_step(&self, x: &Vec3, step: f64) -> Result<Mat3, GeometryError> {
        let y = self.closest_point(x)?;
        let pi = projector_unchecked(&self.normal(&y)?);
        let jac = self.central_jacobian_with_step(&y, step, |p| self.exact_solution(p))?;
        Ok(pi * jac * pi)
    }

    fn central_jacobian<F>(&self, x: &Vec3, f: F) -> Result<Mat3, GeometryError>
    where
        F: Fn(&Vec3) -> Result<Vec3, GeometryError>,
    {
        self.central_jacobian_with_step(x, FD_STEP_FACTOR * self.minor, f)
    }

    /// `J[(i, k)] = d f_i / d x_k`.
    fn central_jacobian_with_step<F>(&self, x: &Vec3, step: f64, f: F) -> Result<Mat3, GeometryError>
    where
        F: Fn(&Vec3) -> Result<Vec3, GeometryError>,
    {
        let mut jac = Mat3::zeros();
        for k in 0..3 {
            let mut plus = *x;
            let mut minus = *x;
            plus[k] += step;
            minus[k] -= step;
            let column = (f(&plus)? - f(&minus)?) / (2.0 * step);
            jac.set_column(k, &column);
        }
        Ok(jac)
    }
}

/// Gradient of the potential `psi = x^2 y - 5 z^3`.
pub fn potential_gradient(x: &Vec3) -> Vec3 {
    Vec3::new(2.0 * x.x * x.y, x.x * x.x, -15.0 * x.z * x.z)
}

/// Tangential projector `I - nu nu^T`.
pub fn projector(nu: &Vec3) -> Result<Mat3, GeometryError> {
    let len = nu.norm();
    if !((len - 1.0).abs() <= 1e-12) {
        return Err(GeometryError::NonUnitNormal(len));
    }
    Ok(projector_unchecked(nu))
}

pub(crate) fn projector_unchecked(nu: &Vec3) -> Mat3 {
    Mat3::identity() - nu * nu.transpose()
}

/// Width of the diffuse interface and the tanh phase-field profile built on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceProfile {
    epsilon: f64,
}

impl InterfaceProfile {
    pub fn new(epsilon: f64) -> Result<Self, GeometryError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(GeometryError::InvalidWidth(epsilon));
        }
        Ok(Self { epsilon })
    }

    /// Profile that also satisfies `epsilon * kappa_max < 1` for `torus`.
    pub fn for_torus(epsilon: f64, torus: &TorusGeometry) -> Result<Self, GeometryError> {
        let profile = Self::new(epsilon)?;
        let kappa_max = torus.curvature_bound();
        if epsilon * kappa_max >= 1.0 {
            return Err(GeometryError::WidthTooLarge { epsilon, kappa_max });
        }
        Ok(profile)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `phi = (1 - tanh(3 rho / eps)) / 2`.
    pub fn phase_field(&self, rho: f64) -> f64 {
        0.5 * (1.0 - (3.0 * rho / self.epsilon).tanh())
    }

    /// Double-well `W(phi) = 36/eps (1 - phi)^2 phi^2`.
    pub fn well_potential(&self, phi: f64) -> f64 {
        let q = phi * (1.0 - phi);
        36.0 / self.epsilon * q * q
    }

    /// `W(phi(rho))`.
    pub fn weight(&self, rho: f64) -> f64 {
        self.well_potential(self.phase_field(rho))
    }

    /// Signed distance at which the profile takes the value `phi`.
    pub fn rho_at(&self, phi: f64) -> f64 {
        self.epsilon / 3.0 * (1.0 - 2.0 * phi).atanh()
    }

    /// Distance across `phi in [lo, hi]` measured along a normal line.
    pub fn band_width(&self, lo: f64, hi: f64) -> f64 {
        self.rho_at(lo) - self.rho_at(hi)
    }
}
