//! Initial state of the atom after photo-detachment.
//!
//! The trap prepares a minimum-uncertainty Gaussian; photo-detachment adds
//! a recoil of fixed magnitude `q = sqrt(2 m_e dE)` whose direction follows
//! the dipolar law `3 (q.n)^2 dOmega / 4 pi` about the laser polarization.
//! The resulting state is an incoherent mixture over recoil directions,
//! discretized here by a product quadrature on the sphere.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::physcore::PhysicalConstants;
use crate::quadrature::gauss_legendre;

pub type Vec3 = [f64; 3];

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    /// Trap frequency (Hz).
    pub f: f64,
    /// Release height above the mirror (m).
    pub h: f64,
    /// Position dispersion (m).
    pub zeta: f64,
    /// Momentum dispersion (kg m/s).
    pub delta_p: f64,
}

impl TrapConfig {
    pub fn new(constants: &PhysicalConstants, f: f64, h: f64) -> Result<Self> {
        if !(f.is_finite() && f > 0.0) {
            return Err(domain(
                "source",
                format!("trap frequency must be > 0, got {f}"),
            ));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(domain(
                "source",
                format!("release height must be > 0, got {h}"),
            ));
        }
        let omega = 2.0 * PI * f;
        let zeta = (constants.hbar / (2.0 * constants.m_atom * omega)).sqrt();
        Ok(Self {
            f,
            h,
            zeta,
            delta_p: constants.hbar / (2.0 * zeta),
        })
    }

    /// Velocity dispersion `delta_p / m`.
    pub fn delta_v(&self, constants: &PhysicalConstants) -> f64 {
        self.delta_p / constants.m_atom
    }
}

/// Trap state for frequency `f` released at the default height of 10 um.
pub fn build_trap(f: f64) -> Result<TrapConfig> {
    TrapConfig::new(&PhysicalConstants::default(), f, 10e-6)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotodetachConfig {
    /// Excess energy above threshold (J).
    pub delta_e: f64,
    /// Recoil momentum magnitude (kg m/s).
    pub q_mag: f64,
    /// Recoil velocity `q / m` (m/s).
    pub v_r: f64,
    /// Unit polarization axis.
    pub pol_axis: Vec3,
}

impl PhotodetachConfig {
    /// The momentum scale is set by the positron mass: `q = sqrt(2 m_e dE)`.
    pub fn new(constants: &PhysicalConstants, delta_e: f64, pol_axis: Vec3) -> Result<Self> {
        if !(delta_e.is_finite() && delta_e >= 0.0) {
            return Err(domain(
                "source",
                format!("excess energy must be >= 0, got {delta_e}"),
            ));
        }
        let pol_axis = unit(pol_axis)?;
        let q_mag = (2.0 * constants.m_positron * delta_e).sqrt();
        Ok(Self {
            delta_e,
            q_mag,
            v_r: q_mag / constants.m_atom,
            pol_axis,
        })
    }
}

fn unit(v: Vec3) -> Result<Vec3> {
    let n = norm(&v);
    if !(n.is_finite() && n > 0.0) {
        return Err(domain(
            "source",
            "polarization axis must be a non-zero vector",
        ));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

/// Photo-detachment with default constants.
pub fn build_photodetach(delta_e: f64, pol_axis: Vec3) -> Result<PhotodetachConfig> {
    PhotodetachConfig::new(&PhysicalConstants::default(), delta_e, pol_axis)
}

/// One direction of the recoil quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoilNode {
    pub q_hat: Vec3,
    pub weight: f64,
}

/// Resolution of the recoil quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoilOrder {
    /// Equal panels in `cos(theta)` on `[-1, 1]`.
    pub polar_panels: usize,
    /// Gauss-Legendre points per polar panel.
    pub polar_points: usize,
    /// Uniform azimuth nodes.
    pub azimuth: usize,
}

impl Default for RecoilOrder {
    fn default() -> Self {
        Self {
            polar_panels: 40,
            polar_points: 4,
            azimuth: 16,
        }
    }
}

impl RecoilOrder {
    pub fn doubled(self) -> Self {
        Self {
            polar_panels: 2 * self.polar_panels,
            polar_points: self.polar_points,
            azimuth: 2 * self.azimuth,
        }
    }
}

/// All recoil directions sharing one polar angle (measured from the
/// vertical, so they share the vertical recoil `q_z = q u`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarRing {
    /// `cos(theta)`.
    pub u: f64,
    /// Sum of the weights of the ring's nodes.
    pub weight: f64,
    pub nodes: Vec<RecoilNode>,
}

/// Product rule on the sphere for the dipolar recoil law: composite
/// Gauss-Legendre in `cos(theta)` times a uniform trapezoid in azimuth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoilQuadrature {
    pub pol_axis: Vec3,
    pub order: RecoilOrder,
    pub rings: Vec<PolarRing>,
}

impl RecoilQuadrature {
    pub fn nodes(&self) -> impl Iterator<Item = &RecoilNode> + '_ {
        self.rings.iter().flat_map(|r| r.nodes.iter())
    }

    pub fn len(&self) -> usize {
        self.rings.iter().map(|r| r.nodes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dipolar weight `3 (q.n)^2` relative to the isotropic measure.
pub fn dipole_weight(q_hat: &Vec3, pol_axis: &Vec3) -> f64 {
    let c = dot(q_hat, pol_axis);
    3.0 * c * c
}

pub fn recoil_quadrature(pol_axis: Vec3, order: RecoilOrder) -> Result<RecoilQuadrature> {
    if order.polar_panels * order.polar_points < 2 || order.polar_points == 0 {
        return Err(domain("source", "recoil quadrature needs >= 2 polar nodes"));
    }
    if order.azimuth < 4 {
        return Err(domain(
            "source",
            "recoil quadrature needs >= 4 azimuth nodes",
        ));
    }
    let pol_axis = unit(pol_axis)?;
    let (gx, gw) = gauss_legendre(order.polar_points);
    let width = 2.0 / order.polar_panels as f64;
    let mut rings = Vec::with_capacity(order.polar_panels * order.polar_points);
    for p in 0..order.polar_panels {
        let mid = -1.0 + width * (p as f64 + 0.5);
        for (x, w) in gx.iter().zip(&gw) {
            let u = mid + 0.5 * width * x;
            let du = 0.5 * width * w;
            let s = (1.0 - u * u).max(0.0).sqrt();
            let mut nodes = Vec::with_capacity(order.azimuth);
            for k in 0..order.azimuth {
                let phi = 2.0 * PI * k as f64 / order.azimuth as f64;
                let q_hat = [s * phi.cos(), s * phi.sin(), u];
                // du dphi / 4 pi with dphi = 2 pi / N
                let weight = du / (2.0 * order.azimuth as f64) * dipole_weight(&q_hat, &pol_axis);
                nodes.push(RecoilNode { q_hat, weight });
            }
            let weight = nodes.iter().map(|n| n.weight).sum();
            rings.push(PolarRing { u, weight, nodes });
        }
    }
    Ok(RecoilQuadrature {
        pol_axis,
        order,
        rings,
    })
}

/// Horizontal momentum amplitude `phi~_0`, centered at the horizontal recoil.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizontalGaussian {
    pub center: [f64; 2],
    pub delta_p: f64,
}

impl HorizontalGaussian {
    pub fn amplitude(&self, p: [f64; 2]) -> f64 {
        let d2 = (p[0] - self.center[0]).powi(2) + (p[1] - self.center[1]).powi(2);
        (-d2 / (4.0 * self.delta_p * self.delta_p)).exp() / ((2.0 * PI).sqrt() * self.delta_p)
    }

    /// `|phi~_0(p)|^2`, normalized over the horizontal momentum plane.
    pub fn density(&self, p: [f64; 2]) -> f64 {
        self.amplitude(p).powi(2)
    }
}

/// Vertical wave function `psi_0(z)` right after photo-detachment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalGaussian {
    pub h: f64,
    pub zeta: f64,
    pub q_z: f64,
    pub hbar: f64,
}

impl VerticalGaussian {
    pub fn value(&self, z: f64) -> Complex64 {
        let dz = z - self.h;
        let amp = (2.0 * PI * self.zeta * self.zeta).powf(-0.25)
            * (-dz * dz / (4.0 * self.zeta * self.zeta)).exp();
        Complex64::from_polar(amp, self.q_z * dz / self.hbar)
    }

    /// Probability of finding the atom above the mirror, `int_0^inf |psi_0|^2`.
    pub fn norm_above_mirror(&self) -> f64 {
        0.5 * libm::erfc(-self.h / (std::f64::consts::SQRT_2 * self.zeta))
    }
}

/// Factored initial state for one recoil vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub horizontal: HorizontalGaussian,
    pub vertical: VerticalGaussian,
}

pub fn initial_wavefunction(
    constants: &PhysicalConstants,
    trap: &TrapConfig,
    q: Vec3,
) -> InitialState {
    InitialState {
        horizontal: HorizontalGaussian {
            center: [q[0], q[1]],
            delta_p: trap.delta_p,
        },
        vertical: VerticalGaussian {
            h: trap.h,
            zeta: trap.zeta,
            q_z: q[2],
            hbar: constants.hbar,
        },
    }
}

/// Velocity distribution `Pi_0` right after photo-detachment: the isotropic
/// trap Gaussian (width `dv`) convolved with the dipolar shell of radius
/// `v_r`.
///
/// The angular convolution is done in closed form. Around the direction of
/// `v`, the dipolar weight averaged over azimuth is a quadratic in
/// `mu = v_hat . q_hat`, and `int mu^k exp(a mu) dmu` is elementary, so the
/// density is exact even when `dv / v_r` is much smaller than any practical
/// angular node spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityDistribution {
    pub v_r: f64,
    pub delta_v: f64,
    pub pol_axis: Vec3,
}

impl VelocityDistribution {
    pub fn new(constants: &PhysicalConstants, trap: &TrapConfig, pd: &PhotodetachConfig) -> Self {
        Self {
            v_r: pd.v_r,
            delta_v: trap.delta_v(constants),
            pol_axis: pd.pol_axis,
        }
    }

    pub fn density(&self, v: Vec3) -> f64 {
        let s2 = self.delta_v * self.delta_v;
        let vn = norm(&v);
        let pref = (2.0 * PI * s2).powf(-1.5);
        let d = vn - self.v_r;
        if vn == 0.0 || self.v_r == 0.0 {
            return pref * (-(vn * vn + self.v_r * self.v_r) / (2.0 * s2)).exp();
        }
        let c = dot(&v, &self.pol_axis) / vn;
        let a = vn * self.v_r / s2;
        let (m0, m2) = scaled_moments(a);
        // weight(mu) = alpha + beta mu^2
        let alpha = 1.5 * (1.0 - c * c);
        let beta = 3.0 * c * c - alpha;
        pref * (-d * d / (2.0 * s2)).exp() * (alpha * m0 + beta * m2)
    }
}

/// `M_k(a) = e^{-a} int_{-1}^{1} mu^k e^{a mu} dmu / 2` for k = 0, 2.
fn scaled_moments(a: f64) -> (f64, f64) {
    if a < 2.0 {
        let e = (-a).exp();
        let mut m0 = 0.0;
        let mut m2 = 0.0;
        let mut term = 1.0; // a^{2k} / (2k)!
        for k in 0..30 {
            let kf = k as f64;
            m0 += term / (2.0 * kf + 1.0);
            m2 += term / (2.0 * kf + 3.0);
            term *= a * a / ((2.0 * kf + 1.0) * (2.0 * kf + 2.0));
        }
        (e * m0, e * m2)
    } else {
        let e2 = (-2.0 * a).exp();
        let m0 = (1.0 - e2) / (2.0 * a);
        let hi = 1.0 / a - 2.0 / (a * a) + 2.0 / (a * a * a);
        let lo = 1.0 / a + 2.0 / (a * a) + 2.0 / (a * a * a);
        (m0, 0.5 * (hi - e2 * lo))
    }
}

pub fn velocity_distribution(dist: &VelocityDistribution, grid: &[Vec3]) -> Vec<f64> {
    grid.iter().map(|v| dist.density(*v)).collect()
}

/// Exponentially scaled modified Bessel functions `e^{-x} I_k(x)` for
/// `k = 0, 1, 2` and `x >= 0`.
pub fn bessel_i012_scaled(x: f64) -> [f64; 3] {
    debug_assert!(x >= 0.0);
    if x < 30.0 {
        let h = 0.5 * x;
        let mut out = [0.0; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            // (x/2)^k / k! as first term
            let mut term = h.powi(k as i32) / [1.0, 1.0, 2.0][k];
            let mut sum = term;
            let mut j = 1.0;
            while term > 1e-17 * sum {
                term *= h * h / (j * (j + k as f64));
                sum += term;
                j += 1.0;
            }
            *slot = sum * (-x).exp();
        }
        out
    } else {
        let mut out = [0.0; 3];
        let pref = 1.0 / (2.0 * PI * x).sqrt();
        for (k, slot) in out.iter_mut().enumerate() {
            let mu = 4.0 * (k * k) as f64;
            let mut term = 1.0;
            let mut sum = 1.0;
            for j in 1..40 {
                let jf = j as f64;
                let next = -term * (mu - (2.0 * jf - 1.0).powi(2)) / (jf * 8.0 * x);
                if next.abs() > term.abs() {
                    break;
                }
                term = next;
                sum += term;
                if term.abs() < 1e-17 * sum.abs() {
                    break;
                }
            }
            *slot = pref * sum;
        }
        out
    }
}

/// How the recoil directions of one ring are spread in azimuth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RingAzimuth {
    /// Continuous dipolar distribution about `pol_axis`, integrated in
    /// closed form.
    Dipole { pol_axis: Vec3 },
    /// A single horizontal recoil vector.
    Point { q_perp: [f64; 2] },
}

/// Recoil vectors sharing one vertical component `q_z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoilRing {
    pub q_z: f64,
    /// Magnitude of the horizontal recoil on this ring.
    pub q_perp: f64,
    /// Probability carried by the ring.
    pub weight: f64,
    pub azimuth: RingAzimuth,
}

impl RecoilRing {
    /// Weighted horizontal momentum density `sum_ring w |phi~_0(p - q_perp)|^2`
    /// at horizontal momentum `p`.
    pub fn horizontal_density(&self, p: [f64; 2], delta_p: f64) -> f64 {
        let s2 = delta_p * delta_p;
        match self.azimuth {
            RingAzimuth::Point { q_perp } => {
                let d2 = (p[0] - q_perp[0]).powi(2) + (p[1] - q_perp[1]).powi(2);
                self.weight * (-d2 / (2.0 * s2)).exp() / (2.0 * PI * s2)
            }
            RingAzimuth::Dipole { pol_axis } => {
                let pm = p[0].hypot(p[1]);
                let q = self.q_perp;
                let qm = (q * q + self.q_z * self.q_z).sqrt();
                if qm == 0.0 {
                    return self.weight * (-pm * pm / (2.0 * s2)).exp() / (2.0 * PI * s2);
                }
                let (sn, u) = (q / qm, self.q_z / qm);
                let rho = pol_axis[0].hypot(pol_axis[1]);
                let c = pol_axis[2];
                let alpha = pol_axis[1].atan2(pol_axis[0]);
                let phi = p[1].atan2(p[0]);
                let [i0, i1, i2] = bessel_i012_scaled(pm * q / s2);
                let ang = phi - alpha;
                let shape = 1.5
                    * (0.5 * sn * sn * rho * rho * (i0 + i2 * (2.0 * ang).cos())
                        + 2.0 * sn * rho * c * u * i1 * ang.cos()
                        + c * c * u * u * i0);
                // ring weight = du * 1.5 * (s^2 rho^2 / 2 + c^2 u^2)
                let norm = 1.5 * (0.5 * sn * sn * rho * rho + c * c * u * u);
                let du = if norm > 0.0 { self.weight / norm } else { 0.0 };
                du * shape * (-(pm - q).powi(2) / (2.0 * s2)).exp() / (2.0 * PI * s2)
            }
        }
    }

    /// Horizontal density integrated over the azimuth of `p`, as a function
    /// of `|p|`: `int dPhi horizontal_density`.
    pub fn folded_density(&self, p_mag: f64, delta_p: f64) -> f64 {
        let s2 = delta_p * delta_p;
        let [i0, _, _] = bessel_i012_scaled(p_mag * self.q_perp / s2);
        self.weight * i0 * (-(p_mag - self.q_perp).powi(2) / (2.0 * s2)).exp() / s2
    }
}

/// The incoherent mixture of recoil vectors, grouped in rings of equal `q_z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoilSet {
    pub rings: Vec<RecoilRing>,
}

impl RecoilSet {
    pub fn dipole(pd: &PhotodetachConfig, quad: &RecoilQuadrature) -> Self {
        let q = pd.q_mag;
        if q == 0.0 {
            return Self::kick([0.0; 3]);
        }
        let rings = quad
            .rings
            .iter()
            .map(|r| RecoilRing {
                q_z: q * r.u,
                q_perp: q * (1.0 - r.u * r.u).max(0.0).sqrt(),
                weight: r.weight,
                azimuth: RingAzimuth::Dipole {
                    pol_axis: quad.pol_axis,
                },
            })
            .collect();
        Self { rings }
    }

    /// A single deterministic recoil vector.
    pub fn kick(q: Vec3) -> Self {
        Self {
            rings: vec![RecoilRing {
                q_z: q[2],
                q_perp: q[0].hypot(q[1]),
                weight: 1.0,
                azimuth: RingAzimuth::Point {
                    q_perp: [q[0], q[1]],
                },
            }],
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.rings.iter().map(|r| r.weight).sum()
    }
}
