//! Physical and reduced parameter sets.
//!
//! The dynamics are fully determined by the dimensionless triple
//! `(g, q0, tau)`: feedback gain `g = gamma_fb / gamma0`, quality factor
//! `q0 = omega0 / gamma0` and delay `tau = t_fb * omega0`. Time is measured in
//! units of `1/omega0` and position in units of the thermal amplitude `x_th`.

use crate::error::{Error, Result};

/// Exact SI values (2019 redefinition).
pub mod constants {
    /// Boltzmann constant, J/K.
    pub const BOLTZMANN: f64 = 1.380649e-23;
    /// Minimal loop delay of the reference setup, s.
    pub const MIN_FEEDBACK_DELAY: f64 = 2.6e-6;
    /// Delay adjustment step of the reference setup, s.
    pub const FEEDBACK_DELAY_STEP: f64 = 100e-9;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    /// kg
    pub mass: f64,
    /// Natural angular frequency, rad/s.
    pub omega0: f64,
    /// Damping rate, rad/s.
    pub gamma0: f64,
    /// Bath temperature, K.
    pub temp0: f64,
    /// Feedback delay, s.
    pub t_fb: f64,
    /// Feedback damping, rad/s.
    pub gamma_fb: f64,
}

impl PhysicalParams {
    pub fn new(
        mass: f64,
        omega0: f64,
        gamma0: f64,
        temp0: f64,
        t_fb: f64,
        gamma_fb: f64,
    ) -> Result<Self> {
        let p = Self {
            mass,
            omega0,
            gamma0,
            temp0,
            t_fb,
            gamma_fb,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("mass", self.mass)?;
        positive("omega0", self.omega0)?;
        positive("gamma0", self.gamma0)?;
        positive("temp0", self.temp0)?;
        non_negative("t_fb", self.t_fb)?;
        non_negative("gamma_fb", self.gamma_fb)?;
        if self.omega0 <= self.gamma0 / 2.0 {
            return Err(Error::InvalidParameter {
                name: "omega0",
                value: self.omega0,
                reason: "must exceed gamma0/2 (underdamped regime)",
            });
        }
        Ok(())
    }
}

/// Dimensionless parameters of the normalized delayed Langevin equation
/// `q'' + q'/q0 + q - (g/q0) q(t - tau) = sqrt(2/q0) xi(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedParams {
    pub g: f64,
    pub q0: f64,
    pub tau: f64,
}

impl ReducedParams {
    pub fn new(g: f64, q0: f64, tau: f64) -> Result<Self> {
        let r = Self { g, q0, tau };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        non_negative("g", self.g)?;
        positive("q0", self.q0)?;
        non_negative("tau", self.tau)?;
        Ok(())
    }

    /// Coefficient of the delayed position in the equation of motion, `g/q0`.
    pub fn feedback_coupling(&self) -> f64 {
        self.g / self.q0
    }

    pub fn with_tau(self, tau: f64) -> Self {
        Self { tau, ..self }
    }

    pub fn with_g(self, g: f64) -> Self {
        Self { g, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalScale {
    /// Thermal rms position, m.
    pub x_th: f64,
    /// Thermal rms velocity, m/s.
    pub v_th: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidityFlags {
    /// The long-delay asymptotic expressions apply.
    pub underdamped_asymptotics: bool,
}

pub fn reduce(p: &PhysicalParams) -> Result<ReducedParams> {
    p.validate()?;
    ReducedParams::new(
        p.gamma_fb / p.gamma0,
        p.omega0 / p.gamma0,
        p.t_fb * p.omega0,
    )
}

/// Builds a physical realization of `r` at the given frequency, temperature and mass.
pub fn realize(r: &ReducedParams, omega0: f64, temp0: f64, mass: f64) -> Result<PhysicalParams> {
    r.validate()?;
    let gamma0 = omega0 / r.q0;
    PhysicalParams::new(mass, omega0, gamma0, temp0, r.tau / omega0, r.g * gamma0)
}

pub fn thermal_scale(p: &PhysicalParams) -> Result<ThermalScale> {
    p.validate()?;
    let x_th = (constants::BOLTZMANN * p.temp0 / (p.mass * p.omega0 * p.omega0)).sqrt();
    Ok(ThermalScale {
        x_th,
        v_th: x_th * p.omega0,
    })
}

pub fn validity_domain(r: &ReducedParams) -> ValidityFlags {
    let ok = r.q0 > 0.5 && r.g < (1.0 - 1.0 / (4.0 * r.q0 * r.q0)).sqrt();
    ValidityFlags {
        underdamped_asymptotics: ok,
    }
}

/// Mass of a homogeneous sphere, kg.
pub fn sphere_mass(diameter: f64, density: f64) -> Result<f64> {
    positive("diameter", diameter)?;
    positive("density", density)?;
    let r = diameter / 2.0;
    Ok(4.0 / 3.0 * std::f64::consts::PI * r * r * r * density)
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be non-negative and finite",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn experiment() -> PhysicalParams {
        let mass = sphere_mass(969e-9, 1850.0).unwrap();
        PhysicalParams::new(
            mass,
            2.0 * PI * 404e3,
            2.0 * PI * 7.37e3,
            293.0,
            constants::MIN_FEEDBACK_DELAY,
            0.36 * 2.0 * PI * 7.37e3,
        )
        .unwrap()
    }

    #[test]
    fn reference_quality_factor_rounds_to_55() {
        let r = reduce(&experiment()).unwrap();
        assert_eq!(r.q0.round(), 55.0);
        assert!((r.g - 0.36).abs() < 1e-12);
    }

    #[test]
    fn minimal_delay_is_about_2_10_pi() {
        let r = reduce(&experiment()).unwrap();
        assert!((r.tau / PI - 2.1008).abs() < 1e-4, "{}", r.tau / PI);
    }

    #[test]
    fn zero_delay_reduces_to_zero() {
        let mut p = experiment();
        p.t_fb = 0.0;
        assert_eq!(reduce(&p).unwrap().tau, 0.0);
    }

    #[test]
    fn rejects_non_positive_fields() {
        let mut p = experiment();
        p.gamma0 = 0.0;
        assert!(matches!(
            reduce(&p),
            Err(Error::InvalidParameter { name: "gamma0", .. })
        ));
        let mut p = experiment();
        p.mass = -1.0;
        assert!(thermal_scale(&p).is_err());
        let mut p = experiment();
        p.omega0 = p.gamma0 / 4.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn thermal_scale_homogeneity() {
        let p = experiment();
        let a = thermal_scale(&p).unwrap();
        let heavy = PhysicalParams {
            mass: 2.0 * p.mass,
            ..p
        };
        let b = thermal_scale(&heavy).unwrap();
        assert!((b.x_th / a.x_th - 1.0 / 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(a.v_th, a.x_th * p.omega0);
        let cold = PhysicalParams { temp0: 1e-300, ..p };
        assert!(thermal_scale(&cold).unwrap().x_th < 1e-150);
    }

    #[test]
    fn thermal_scale_of_reference_particle() {
        // 969 nm silica sphere at an assumed 1850 kg/m^3, evaluated by hand.
        let s = thermal_scale(&experiment()).unwrap();
        assert!(
            (s.x_th / 8.440018082971409e-10 - 1.0).abs() < 1e-12,
            "{}",
            s.x_th
        );
    }

    #[test]
    fn validity_flags() {
        let v = |g, q0| {
            validity_domain(&ReducedParams::new(g, q0, 1.0).unwrap()).underdamped_asymptotics
        };
        assert!(v(0.36, 55.0));
        assert!(!v(1.2, 55.0));
        assert!(!v(0.1, 0.4));
        assert!(v(0.99995, 55.0));
        assert!(!v(0.99997, 55.0));
    }

    proptest! {
        #[test]
        fn reduce_is_scale_invariant(k in 1e-3f64..1e3) {
            let p = experiment();
            let scaled = PhysicalParams {
                omega0: p.omega0 * k,
                gamma0: p.gamma0 * k,
                gamma_fb: p.gamma_fb * k,
                t_fb: p.t_fb / k,
                ..p
            };
            let a = reduce(&p).unwrap();
            let b = reduce(&scaled).unwrap();
            prop_assert!((a.g - b.g).abs() <= 4.0 * f64::EPSILON * a.g);
            prop_assert!((a.q0 - b.q0).abs() <= 4.0 * f64::EPSILON * a.q0);
            prop_assert!((a.tau - b.tau).abs() <= 4.0 * f64::EPSILON * a.tau);
        }

        #[test]
        fn realize_round_trips(g in 0.0f64..5.0, q0 in 0.6f64..1e4, tau in 0.0f64..1e3, w in 1.0f64..1e7) {
            let r = ReducedParams::new(g, q0, tau).unwrap();
            let back = reduce(&realize(&r, w, 300.0, 1e-15).unwrap()).unwrap();
            prop_assert!((back.g - g).abs() <= 4.0 * f64::EPSILON * g.max(1.0));
            prop_assert!((back.q0 - q0).abs() <= 4.0 * f64::EPSILON * q0);
            prop_assert!((back.tau - tau).abs() <= 4.0 * f64::EPSILON * tau.max(1.0));
        }
    }
}
