//! Physical constants and the gravitational unit system.
//!
//! Every length, time, energy and velocity in the simulation is measured in
//! the units set by the free-fall acceleration currently under evaluation:
//!
//! ```text
//! l_g   = (hbar^2 / (2 m^2 g))^(1/3)
//! eps_g = m g l_g
//! t_g   = hbar / eps_g
//! v_g   = g t_g
//! ```
//!
//! The Airy zeros that label the bound states above the mirror carry no `g`
//! dependence, so re-deriving a [`ScaleSet`] at a different `g` is the single
//! entry point through which the acceleration reaches the rest of the code.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Joules per electron-volt (exact SI value).
pub const JOULE_PER_EV: f64 = 1.602_176_634e-19;

/// Standard Earth gravity used as the reference acceleration `g_0`.
pub const G_REF: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Reduced Planck constant (J s).
    pub hbar: f64,
    /// Mass of the (anti)hydrogen atom (kg).
    pub m_atom: f64,
    /// Positron mass (kg).
    pub m_positron: f64,
    /// Reference acceleration (m/s^2).
    pub g_ref: f64,
    /// Joules per electron-volt.
    pub e_charge: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: 1.054_571_817e-34,
            m_atom: 1.6735e-27,
            m_positron: 9.109_383_701_5e-31,
            g_ref: G_REF,
            e_charge: JOULE_PER_EV,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.hbar,
            self.m_atom,
            self.m_positron,
            self.g_ref,
            self.e_charge,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(domain("physcore", "physical constants must be positive"));
        }
        if self.m_positron / self.m_atom >= 1e-3 {
            return Err(domain(
                "physcore",
                "positron/atom mass ratio must be < 1e-3",
            ));
        }
        Ok(())
    }

    /// Planck constant `h = 2 pi hbar`.
    pub fn planck(&self) -> f64 {
        std::f64::consts::TAU * self.hbar
    }
}

/// Gravitational scales for one value of the acceleration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub g: f64,
    pub l_g: f64,
    pub eps_g: f64,
    pub t_g: f64,
    pub v_g: f64,
    pub hbar: f64,
    pub mass: f64,
}

impl ScaleSet {
    pub fn new(constants: &PhysicalConstants, g: f64) -> Result<Self> {
        if !(g.is_finite() && g > 0.0) {
            return Err(domain(
                "physcore",
                format!("acceleration must be > 0, got {g}"),
            ));
        }
        let hbar = constants.hbar;
        let m = constants.m_atom;
        let l_g = (hbar * hbar / (2.0 * m * m * g)).cbrt();
        let eps_g = m * g * l_g;
        let t_g = hbar / eps_g;
        let v_g = g * t_g;
        Ok(Self {
            g,
            l_g,
            eps_g,
            t_g,
            v_g,
            hbar,
            mass: m,
        })
    }

    /// Momentum unit `hbar / l_g`, equal to `m v_g`.
    pub fn p_g(&self) -> f64 {
        self.hbar / self.l_g
    }

    fn unit_of(&self, kind: QuantityKind) -> f64 {
        match kind {
            QuantityKind::Length => self.l_g,
            QuantityKind::Time => self.t_g,
            QuantityKind::Energy => self.eps_g,
            QuantityKind::Velocity => self.v_g,
            QuantityKind::Momentum => self.p_g(),
        }
    }

    /// Converts an SI quantity to gravitational units.
    pub fn nondimensionalize(&self, q: SiQuantity, kind: QuantityKind) -> Result<f64> {
        if q.unit != kind.si_unit() {
            return Err(domain(
                "physcore",
                format!("cannot express {:?} as a {:?}", q.unit, kind),
            ));
        }
        Ok(q.value / self.unit_of(kind))
    }

    /// Inverse of [`ScaleSet::nondimensionalize`].
    pub fn dimensionalize(&self, value: f64, kind: QuantityKind) -> SiQuantity {
        SiQuantity {
            value: value * self.unit_of(kind),
            unit: kind.si_unit(),
        }
    }
}

/// Derives the gravitational scales with the default constants.
pub fn derive_scales(g: f64) -> Result<ScaleSet> {
    ScaleSet::new(&PhysicalConstants::default(), g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantityKind {
    Length,
    Time,
    Energy,
    Velocity,
    Momentum,
}

impl QuantityKind {
    pub fn si_unit(self) -> SiUnit {
        match self {
            QuantityKind::Length => SiUnit::Meter,
            QuantityKind::Time => SiUnit::Second,
            QuantityKind::Energy => SiUnit::Joule,
            QuantityKind::Velocity => SiUnit::MeterPerSecond,
            QuantityKind::Momentum => SiUnit::KilogramMeterPerSecond,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiUnit {
    Meter,
    Second,
    Joule,
    MeterPerSecond,
    KilogramMeterPerSecond,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiQuantity {
    pub value: f64,
    pub unit: SiUnit,
}

impl SiQuantity {
    pub fn new(value: f64, unit: SiUnit) -> Self {
        Self { value, unit }
    }

    pub fn meters(value: f64) -> Self {
        Self::new(value, SiUnit::Meter)
    }

    pub fn seconds(value: f64) -> Self {
        Self::new(value, SiUnit::Second)
    }
}
