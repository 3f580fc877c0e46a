//! The complex phi-kernel and its partial derivatives.
//!
//! A boundary point `q` seen from a query point `p` maps to the complex
//! number `zeta = xi + i*eta`, where `xi` is the signed distance of `p` to the
//! surface and `eta = |p - q|`. The kernel
//!
//! ```text
//! phi(zeta) = lambda / sqrt(2 pi) * zeta^-2 * g_sigma(eta/|xi| - 1)
//! ```
//!
//! combines an inverse-square proximal factor with a Gaussian medial factor
//! that peaks when `q` is an exact nearest neighbour (`eta = |xi|`). `lambda`
//! is `+lambda1` outside the solid and `-lambda2` inside.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Complex;

/// Smallest truncation width, in units of sigma, accepted by [`KernelParams`].
pub const MIN_EPSILON_OVER_SIGMA: f64 = 3.4;

/// Kernel and quadrature parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Thickness of the medial Gaussian, on the dimensionless `eta/|xi| - 1` axis.
    pub sigma: f64,
    /// Weight of exterior points.
    pub lambda1: f64,
    /// Weight of interior points; must exceed `lambda1`.
    pub lambda2: f64,
    /// Width of the approximate-nearest-neighbour shell: faces with
    /// `eta > (1 + epsilon)|xi|` are left out of the sum.
    pub epsilon: f64,
    /// Faces seen under `|cos(theta)| dA > kappa * eta^2` are subdivided.
    pub subdivision_kappa: f64,
    pub subdivision_max_depth: u32,
}

impl Default for KernelParams {
    fn default() -> Self {
        let sigma = 0.3;
        KernelParams {
            sigma,
            lambda1: 1.0,
            lambda2: 3.0,
            epsilon: MIN_EPSILON_OVER_SIGMA * sigma,
            subdivision_kappa: 0.05,
            subdivision_max_depth: 4,
        }
    }
}

impl KernelParams {
    /// Default quadrature settings with the given kernel constants; `epsilon`
    /// defaults to `3.4 * sigma` when `None`.
    pub fn new(sigma: f64, lambda1: f64, lambda2: f64, epsilon: Option<f64>) -> Result<Self> {
        let p = KernelParams {
            sigma,
            lambda1,
            lambda2,
            epsilon: epsilon.unwrap_or(MIN_EPSILON_OVER_SIGMA * sigma),
            ..KernelParams::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.lambda1 > 0.0 && self.lambda1 < self.lambda2 && self.lambda2.is_finite()) {
            return bad(format!(
                "need 0 < lambda1 < lambda2, got {} and {}",
                self.lambda1, self.lambda2
            ));
        }
        // small slack so that 3.4 * sigma computed elsewhere passes
        if !(self.epsilon >= MIN_EPSILON_OVER_SIGMA * self.sigma * (1.0 - 1e-12))
            || !self.epsilon.is_finite()
        {
            return bad(format!(
                "epsilon must be at least {MIN_EPSILON_OVER_SIGMA} sigma = {}, got {}",
                MIN_EPSILON_OVER_SIGMA * self.sigma,
                self.epsilon
            ));
        }
        if !(self.subdivision_kappa > 0.0) {
            return bad("subdivision_kappa must be positive".into());
        }
        Ok(())
    }

    /// `lambda2 / lambda1`.
    pub fn penalty_factor(&self) -> f64 {
        self.lambda2 / self.lambda1
    }

    /// Same parameters with both weights multiplied by `c`.
    pub fn scaled_weights(&self, c: f64) -> Self {
        KernelParams {
            lambda1: self.lambda1 * c,
            lambda2: self.lambda2 * c,
            ..*self
        }
    }

    fn lambda(&self, xi: f64) -> f64 {
        if xi > 0.0 {
            self.lambda1
        } else {
            -self.lambda2
        }
    }

    /// `g_sigma(x)`.
    pub fn gaussian(&self, x: f64) -> f64 {
        let s = self.sigma;
        (-0.5 * (x / s) * (x / s)).exp() / ((2.0 * PI).sqrt() * s)
    }
}

/// One point of the complex spread, `zeta = xi + i*eta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexSpreadSample {
    xi: f64,
    eta: f64,
}

impl ComplexSpreadSample {
    /// Requires `xi != 0`, `eta > 0` and `eta >= |xi| - 1e-9`.
    pub fn new(xi: f64, eta: f64) -> Result<Self> {
        if xi == 0.0 || !xi.is_finite() {
            return Err(Error::KernelDomain(format!(
                "xi must be finite and non-zero, got {xi}"
            )));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::KernelDomain(format!(
                "eta must be positive, got {eta}"
            )));
        }
        if eta < xi.abs() - 1e-9 {
            return Err(Error::KernelDomain(format!(
                "eta = {eta} is closer than the nearest-neighbour distance {}",
                xi.abs()
            )));
        }
        Ok(ComplexSpreadSample { xi, eta })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn zeta(&self) -> Complex {
        Complex::new(self.xi, self.eta)
    }
}

pub fn phi_kernel(zeta: ComplexSpreadSample, params: &KernelParams) -> Complex {
    phi_unchecked(zeta.xi, zeta.eta, params)
}

/// `(d phi / d xi, d phi / d eta)`.
pub fn phi_partials(zeta: ComplexSpreadSample, params: &KernelParams) -> (Complex, Complex) {
    let (_, d_xi, d_eta) = phi_with_partials(zeta.xi, zeta.eta, params);
    (d_xi, d_eta)
}

#[inline]
pub(crate) fn phi_unchecked(xi: f64, eta: f64, params: &KernelParams) -> Complex {
    let z = Complex::new(xi, eta);
    let inv2 = (z * z).inv();
    let x = eta / xi.abs() - 1.0;
    inv2 * (params.lambda(xi) / (2.0 * PI).sqrt() * params.gaussian(x))
}

/// Kernel value together with both partials.
#[inline]
pub(crate) fn phi_with_partials(
    xi: f64,
    eta: f64,
    params: &KernelParams,
) -> (Complex, Complex, Complex) {
    let z = Complex::new(xi, eta);
    let inv = z.inv();
    let inv2 = inv * inv;
    let inv3 = inv2 * inv;
    let a = xi.abs();
    let x = eta / a - 1.0;
    let s2 = params.sigma * params.sigma;
    let g = params.gaussian(x);
    let dg = -x / s2 * g;
    let c = params.lambda(xi) / (2.0 * PI).sqrt();
    let value = inv2 * (c * g);
    // d x / d xi = -eta sign(xi) / xi^2, d x / d eta = 1 / |xi|
    let dx_dxi = -eta * xi.signum() / (xi * xi);
    let d_xi = (inv3 * (-2.0 * g) + inv2 * (dg * dx_dxi)) * c;
    let d_eta = (inv3 * Complex::new(0.0, -2.0 * g) + inv2 * (dg / a)) * c;
    (value, d_xi, d_eta)
}
