//! Physical constants, the Planckian, the Larsen opacity and its weighted
//! means, and the `kappa_L` dimensionless number.
//!
//! Everything here works in the unit system (eV, cm, s) with the Boltzmann
//! constant equal to one, so temperatures and photon energies are both in eV.
//! All functions are pure; frequency integrals run over the substituted
//! variable `x = h nu / k T` on `[0, X_MAX]` with an analytic tail estimate.

use crate::error::{Error, Result};
use crate::quad::integrate;
use serde::{Deserialize, Serialize};

/// Planck constant in eV s.
pub const H_EV_S: f64 = 4.135667696e-15;
/// Speed of light in cm/s.
pub const C_CM_S: f64 = 2.99792458e10;
/// Boltzmann constant; exactly one in this unit system.
pub const K_BOLTZMANN: f64 = 1.0;
/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577215664901532860606512;
/// pi^4.
pub const PI4: f64 = 97.40909103400243723644033;
/// ergs per eV, for converting fields to erg-based energy units.
pub const ERG_PER_EV: f64 = 1.602176634e-12;

/// Upper limit of the substituted frequency integrals.
const X_MAX: f64 = 50.0;
/// Relative tolerance for the adaptive quadratures.
const QUAD_TOL: f64 = 1e-11;

/// The integral `int_0^inf x^7 e^{2x} (e^x - 1)^{-3} dx = 2520 (zeta(6) + zeta(7))`.
pub const ROSSELAND_INTEGRAL: f64 = 5104.744695203257;

/// Unit system with derived radiation constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UnitSystem {
    /// Planck constant (eV s).
    pub h: f64,
    /// Speed of light (cm/s).
    pub c: f64,
    /// Boltzmann constant (1 by construction).
    pub k: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        UnitSystem {
            h: H_EV_S,
            c: C_CM_S,
            k: K_BOLTZMANN,
        }
    }
}

impl UnitSystem {
    /// `a c = 8 pi^5 k^4 / (15 h^3 c^2)`, the radiation constant times c.
    pub fn ac(&self) -> f64 {
        let pi = std::f64::consts::PI;
        8.0 * pi.powi(5) * self.k.powi(4) / (15.0 * self.h.powi(3) * self.c * self.c)
    }

    /// Radiation constant `a` such that the equilibrium energy density is `a T^4`.
    pub fn radiation_a(&self) -> f64 {
        self.ac() / self.c
    }

    /// Stefan–Boltzmann constant, `a c / 4`.
    pub fn sigma_sb(&self) -> f64 {
        self.ac() / 4.0
    }

    /// Black-body spectral radiance `B(nu, T) = 2 h nu^3 / c^2 (e^{h nu / k T} - 1)^{-1}`.
    ///
    /// Returns 0 in the `nu -> 0` and `T -> 0` limits.
    pub fn planck_b(&self, nu: f64, t: f64) -> f64 {
        if nu <= 0.0 || t <= 0.0 {
            return 0.0;
        }
        let x = self.h * nu / (self.k * t);
        let prefactor = 2.0 * self.h * nu * nu * nu / (self.c * self.c);
        if x > 700.0 {
            prefactor * (-x).exp()
        } else {
            prefactor / x.exp_m1()
        }
    }

    /// Frequency integral of the Planckian by adaptive quadrature.
    pub fn planck_integral(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        // int B dnu = 2 (kT)^4 / (h^3 c^2) * int x^3 / (e^x - 1) dx
        let core = integrate(|x: f64| x * x * x / x.exp_m1(), 0.0, X_MAX, QUAD_TOL);
        let tail = (-X_MAX).exp() * (X_MAX.powi(3) + 3.0 * X_MAX.powi(2) + 6.0 * X_MAX + 6.0);
        2.0 * (self.k * t).powi(4) / (self.h.powi(3) * self.c * self.c) * (core + tail)
    }

    /// Closed form of the Planck integral, `(a c / 4 pi) T^4`.
    pub fn planck_integral_closed(&self, t: f64) -> f64 {
        self.ac() / (4.0 * std::f64::consts::PI) * t.powi(4)
    }
}

/// Larsen-type opacity `sigma(nu, T) = gamma (h nu)^{-3} (1 - e^{-h nu / k T})`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OpacitySpec {
    pub gamma: f64,
}

/// Cross-temperature Planck mean: exact quadrature plus the closed
/// log-harmonic approximation.
#[derive(Debug, Clone, Copy)]
pub struct CrossPlanckMean {
    pub exact: f64,
    /// `15 gamma / (pi^4 (k T_in)^3) * (ln(T_in/T_o) + gamma_EM)`; only
    /// meaningful when `T_o < T_in`.
    pub approx: f64,
    pub approx_valid: bool,
}

impl OpacitySpec {
    pub fn larsen(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "opacity scale gamma must be positive, got {gamma}"
            )));
        }
        Ok(OpacitySpec { gamma })
    }

    /// Pointwise opacity in 1/cm. `nu = 0` is a pole and is rejected.
    pub fn sigma(&self, nu: f64, t: f64, units: &UnitSystem) -> Result<f64> {
        if nu <= 0.0 {
            return Err(Error::Domain(format!(
                "larsen opacity has a nu^-3 pole; got nu = {nu}"
            )));
        }
        if t < 0.0 {
            return Err(Error::Domain(format!("negative temperature {t}")));
        }
        let hnu = units.h * nu;
        if t == 0.0 {
            // limit of (1 - e^{-h nu / k T}) as T -> 0+
            return Ok(self.gamma / hnu.powi(3));
        }
        let x = hnu / (units.k * t);
        Ok(self.gamma / hnu.powi(3) * (-(-x).exp_m1()))
    }

    /// Planck-mean opacity, closed form `15 gamma / (pi^4 k^3) T^-3`.
    pub fn sigma_p(&self, t: f64, units: &UnitSystem) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!(
                "Planck mean undefined at T = {t}"
            )));
        }
        Ok(15.0 * self.gamma / (PI4 * (units.k * t).powi(3)))
    }

    /// Planck-mean opacity via quadrature of its defining frequency integrals.
    pub fn sigma_p_quadrature(&self, t: f64, units: &UnitSystem) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!(
                "Planck mean undefined at T = {t}"
            )));
        }
        // numerator: int sigma B dnu = gamma/(kT)^3 * int B-weight * (1-e^-x)/(x^3...) dx
        // after substitution the weighted integrand collapses to e^{-x}
        let num_core = integrate(
            |x: f64| (-(-x).exp_m1()) / x.exp_m1(),
            0.0,
            X_MAX,
            QUAD_TOL,
        );
        let num = (num_core + (-X_MAX).exp()) * self.gamma / (units.k * t).powi(3);
        let den_core = integrate(|x: f64| x * x * x / x.exp_m1(), 0.0, X_MAX, QUAD_TOL);
        let den_tail = (-X_MAX).exp() * (X_MAX.powi(3) + 3.0 * X_MAX.powi(2) + 6.0 * X_MAX + 6.0);
        Ok(num / (den_core + den_tail))
    }

    /// The emission coefficient `alpha` with `a c sigma_P(T) T^4 = alpha T`:
    /// `alpha = 15 a c gamma / (pi^4 k^3)`.
    pub fn alpha(&self, units: &UnitSystem) -> f64 {
        15.0 * units.ac() * self.gamma / (PI4 * units.k.powi(3))
    }

    /// Same `alpha` through the Stefan–Boltzmann route, `60 sigma_SB gamma / (pi^4 k^3)`.
    pub fn alpha_via_stefan(&self, units: &UnitSystem) -> f64 {
        60.0 * units.sigma_sb() * self.gamma / (PI4 * units.k.powi(3))
    }

    /// Rosseland-mean opacity, closed form `(4 pi^4 / (15 I_7)) gamma / (k T)^3 / ...`
    /// evaluating to approximately `5.0886e-3 gamma k^-3 T^-3`.
    pub fn sigma_r(&self, t: f64, units: &UnitSystem) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!(
                "Rosseland mean undefined at T = {t}"
            )));
        }
        let constant = 4.0 * PI4 / (15.0 * ROSSELAND_INTEGRAL);
        Ok(constant * self.gamma / (units.k * t).powi(3))
    }

    /// Rosseland mean by quadrature of the temperature-derivative integrals.
    pub fn sigma_r_quadrature(&self, t: f64, units: &UnitSystem) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!(
                "Rosseland mean undefined at T = {t}"
            )));
        }
        let i4 = integrate(
            |x: f64| {
                let em = x.exp_m1();
                x.powi(4) * x.exp() / (em * em)
            },
            0.0,
            X_MAX,
            QUAD_TOL,
        ) + (-X_MAX).exp()
            * (X_MAX.powi(4) + 4.0 * X_MAX.powi(3) + 12.0 * X_MAX.powi(2) + 24.0 * X_MAX + 24.0);
        let i7 = rosseland_integral_quadrature();
        Ok(i4 / i7 * self.gamma / (units.k * t).powi(3))
    }

    /// Cross-temperature Planck mean `int sigma(nu, T_o) B(nu, T_in) dnu / int B(nu, T_in) dnu`.
    ///
    /// The closed approximation keeps the Euler–Mascheroni term of the
    /// harmonic-number integral; the leading-log form alone is several percent
    /// low even at `T_in/T_o = 1000`.
    pub fn sigma_p_cross(&self, t_o: f64, t_in: f64, units: &UnitSystem) -> Result<CrossPlanckMean> {
        if !(t_o > 0.0) || !(t_in > 0.0) {
            return Err(Error::Domain(format!(
                "cross Planck mean needs positive temperatures, got ({t_o}, {t_in})"
            )));
        }
        let eta = t_in / t_o;
        // integrand (1 - e^{-eta x}) / (e^x - 1); boundary layer of width 1/eta at zero
        let core = integrate(
            |x: f64| (-(-eta * x).exp_m1()) / x.exp_m1(),
            0.0,
            X_MAX,
            QUAD_TOL,
        );
        let j = core + (-X_MAX).exp();
        let scale = 15.0 * self.gamma / (PI4 * (units.k * t_in).powi(3));
        let approx_valid = t_o < t_in;
        Ok(CrossPlanckMean {
            exact: scale * j,
            approx: scale * (eta.ln() + EULER_GAMMA),
            approx_valid,
        })
    }
}

/// Quadrature of the Rosseland integral `int x^7 e^{2x} (e^x-1)^{-3} dx`.
pub fn rosseland_integral_quadrature() -> f64 {
    let core = integrate(
        |x: f64| {
            let em = x.exp_m1();
            x.powi(7) * (2.0 * x).exp() / (em * em * em)
        },
        0.0,
        X_MAX,
        QUAD_TOL,
    );
    // integrand ~ x^7 e^{-x} for large x
    let x = X_MAX;
    let tail = (-x).exp()
        * (x.powi(7)
            + 7.0 * x.powi(6)
            + 42.0 * x.powi(5)
            + 210.0 * x.powi(4)
            + 840.0 * x.powi(3)
            + 2520.0 * x.powi(2)
            + 5040.0 * x
            + 5040.0);
    core + tail
}

/// Knudsen-like dimensionless number `kappa_L = 1 / (L sigma_P(T_o; T_in))`
/// using the exact cross-temperature quadrature.
pub fn kappa_l(t_o: f64, t_in: f64, gamma: f64, l: f64, units: &UnitSystem) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "characteristic length must be positive, got {l}"
        )));
    }
    let opacity = OpacitySpec::larsen(gamma)?;
    let cross = opacity.sigma_p_cross(t_o, t_in, units)?;
    Ok(1.0 / (l * cross.exact))
}

/// `kappa_L` from the closed approximation, for scaling checks.
pub fn kappa_l_approx(t_o: f64, t_in: f64, gamma: f64, l: f64, units: &UnitSystem) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "characteristic length must be positive, got {l}"
        )));
    }
    let opacity = OpacitySpec::larsen(gamma)?;
    let cross = opacity.sigma_p_cross(t_o, t_in, units)?;
    Ok(1.0 / (l * cross.approx))
}
