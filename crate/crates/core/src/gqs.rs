//! Decomposition of the vertical state on gravitational quantum states.
//!
//! The absorber is an ideal projector on the states `n = 1..=n_max`. Every
//! quantity here is computed in the dimensionless height `s = z / l_g`, so
//! the same zero table serves every value of `g`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airy::{ai_pair, AiryZeroTable, MODE_TAIL};
use crate::error::{domain, numeric, Result};
use crate::physcore::ScaleSet;
use crate::quadrature::CompositeRule;
use crate::source::{RecoilRing, RecoilSet, TrapConfig, VerticalGaussian};

/// Half-width of the overlap window in units of the position dispersion.
const WINDOW_SIGMAS: f64 = 8.0;

/// Slack allowed on the Bessel inequality before reporting a quadrature failure.
const BESSEL_SLACK: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GQSBasis {
    pub n_max: usize,
    pub zero_table: Arc<AiryZeroTable>,
    pub scales: ScaleSet,
    /// Absorber height (m).
    pub z_max: f64,
}

impl GQSBasis {
    /// `z_max` defaults to `(lambda_{n_max} + 10) l_g`.
    pub fn new(
        zero_table: Arc<AiryZeroTable>,
        scales: ScaleSet,
        n_max: usize,
        z_max: Option<f64>,
    ) -> Result<Self> {
        if n_max == 0 {
            return Err(domain("gqs", "n_max must be >= 1"));
        }
        if zero_table.len() < n_max {
            return Err(domain(
                "gqs",
                format!("zero table holds {} zeros, need {n_max}", zero_table.len()),
            ));
        }
        let lambda_max = zero_table.lambdas()[n_max - 1];
        let z_max = z_max.unwrap_or((lambda_max + 10.0) * scales.l_g);
        if !(z_max >= lambda_max * scales.l_g) {
            return Err(domain(
                "gqs",
                format!(
                    "absorber height {z_max:e} m is below the turning point {:e} m of state {n_max}",
                    lambda_max * scales.l_g
                ),
            ));
        }
        Ok(Self {
            n_max,
            zero_table,
            scales,
            z_max,
        })
    }

    /// The same states seen at another acceleration. `z_max` follows the
    /// default rule so that it stays above the top turning point.
    pub fn with_scales(&self, scales: ScaleSet) -> Self {
        let lambda_max = self.lambdas()[self.n_max - 1];
        Self {
            n_max: self.n_max,
            zero_table: Arc::clone(&self.zero_table),
            scales,
            z_max: self.z_max.max((lambda_max + 10.0) * scales.l_g),
        }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.zero_table.lambdas()[..self.n_max]
    }

    pub fn aiprime(&self) -> &[f64] {
        &self.zero_table.aiprime()[..self.n_max]
    }

    /// Dimensionless absorber height.
    pub fn s_max(&self) -> f64 {
        self.z_max / self.scales.l_g
    }

    /// Dimensionless extent of mode `n` (1-based), clipped at the absorber.
    pub fn mode_extent(&self, n: usize) -> f64 {
        (self.lambdas()[n - 1] + MODE_TAIL).min(self.s_max())
    }

    /// `Ai(s - lambda_n) / Ai'(-lambda_n)` for all retained modes, written
    /// into `out` (length `n_max`).
    pub fn profiles_at(&self, s: f64, out: &mut [f64]) {
        for ((o, &l), &d) in out.iter_mut().zip(self.lambdas()).zip(self.aiprime()) {
            *o = if s < 0.0 { 0.0 } else { ai_pair(s - l).0 / d };
        }
    }
}

/// Amplitudes `c_n`, `n = 1..=n_max`, for one vertical recoil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAmplitudes {
    /// Vertical recoil momentum (kg m/s).
    pub q_z: f64,
    pub c: Vec<Complex64>,
}

impl ModeAmplitudes {
    pub fn norm_sqr(&self) -> f64 {
        self.c.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `sum_{n <= k} |c_n|^2`.
    pub fn norm_sqr_up_to(&self, k: usize) -> f64 {
        self.c.iter().take(k).map(|c| c.norm_sqr()).sum()
    }
}

/// Mode profiles tabulated once on the overlap window so that the
/// amplitudes for many recoil momenta cost one matrix-vector product each.
pub struct OverlapTable {
    n_max: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Row-major `n_max x nodes`.
    profiles: Vec<f64>,
    s_h: f64,
    sigma: f64,
    k_per_momentum: f64,
}

impl OverlapTable {
    /// `q_max` bounds the vertical recoil momenta that will be requested.
    pub fn new(basis: &GQSBasis, psi0: &VerticalGaussian, q_max: f64) -> Result<Self> {
        if !(psi0.h > 0.0 && psi0.zeta > 0.0) {
            return Err(domain("gqs", "release height and dispersion must be > 0"));
        }
        let l = basis.scales.l_g;
        let s_h = psi0.h / l;
        let sigma = psi0.zeta / l;
        let k_per_momentum = l / psi0.hbar;
        let lo = (s_h - WINDOW_SIGMAS * sigma).max(0.0);
        let hi = s_h + WINDOW_SIGMAS * sigma;
        let lambda_max = basis.lambdas()[basis.n_max - 1];
        let k_max = lambda_max.sqrt() + q_max.abs() * k_per_momentum + 1.0 / sigma;
        let mut rule = CompositeRule::resolving(lo, hi, k_max, 2.0, 16);
        if rule.len() < 16 * 16 {
            rule = CompositeRule::new(lo, hi, 16, 16);
        }
        let n_max = basis.n_max;
        let mut profiles = vec![0.0; n_max * rule.len()];
        let mut column = vec![0.0; n_max];
        for (j, &s) in rule.nodes.iter().enumerate() {
            basis.profiles_at(s, &mut column);
            for n in 0..n_max {
                profiles[n * rule.len() + j] = column[n];
            }
        }
        Ok(Self {
            n_max,
            nodes: rule.nodes,
            weights: rule.weights,
            profiles,
            s_h,
            sigma,
            k_per_momentum,
        })
    }

    pub fn amplitudes(&self, q_z: f64) -> Result<ModeAmplitudes> {
        let k = q_z * self.k_per_momentum;
        let norm = (2.0 * PI * self.sigma * self.sigma).powf(-0.25);
        let w: Vec<Complex64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| {
                let d = s - self.s_h;
                let amp = w * norm * (-d * d / (4.0 * self.sigma * self.sigma)).exp();
                Complex64::from_polar(amp, k * d)
            })
            .collect();
        let m = self.nodes.len();
        let c: Vec<Complex64> = (0..self.n_max)
            .map(|n| {
                let row = &self.profiles[n * m..(n + 1) * m];
                row.iter()
                    .zip(&w)
                    .fold(Complex64::new(0.0, 0.0), |acc, (&p, &x)| acc + x * p)
            })
            .collect();
        let amps = ModeAmplitudes { q_z, c };
        let total = amps.norm_sqr();
        if !total.is_finite() || total > 1.0 + BESSEL_SLACK {
            return Err(numeric(
                "gqs",
                format!(
                    "overlap quadrature failed the Bessel bound: sum |c_n|^2 = {total} \
                     (q_z = {q_z:e}, {m} nodes, {} modes)",
                    self.n_max
                ),
            ));
        }
        Ok(amps)
    }
}

/// `c_n = int_0^inf psi_0(z) chi_n(z) dz` for all retained modes.
pub fn overlap_coefficients(psi0: &VerticalGaussian, basis: &GQSBasis) -> Result<ModeAmplitudes> {
    OverlapTable::new(basis, psi0, psi0.q_z)?.amplitudes(psi0.q_z)
}

/// Amplitudes of every recoil ring of the mixture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureAmplitudes {
    pub rings: Vec<RecoilRing>,
    pub amplitudes: Vec<ModeAmplitudes>,
}

impl MixtureAmplitudes {
    pub fn fraction(&self) -> f64 {
        self.rings
            .iter()
            .zip(&self.amplitudes)
            .map(|(r, a)| r.weight * a.norm_sqr())
            .sum()
    }

    /// Transmitted fraction if only the first `k` states were kept.
    pub fn fraction_up_to(&self, k: usize) -> f64 {
        self.rings
            .iter()
            .zip(&self.amplitudes)
            .map(|(r, a)| r.weight * a.norm_sqr_up_to(k))
            .sum()
    }

    /// Drops rings whose transmitted weight is below `rel_tol` times the
    /// largest one. The discarded weight is returned alongside.
    pub fn pruned(&self, rel_tol: f64) -> (Self, f64) {
        let contrib: Vec<f64> = self
            .rings
            .iter()
            .zip(&self.amplitudes)
            .map(|(r, a)| r.weight * a.norm_sqr())
            .collect();
        let top = contrib.iter().cloned().fold(0.0, f64::max);
        let mut out = Self {
            rings: Vec::new(),
            amplitudes: Vec::new(),
        };
        let mut dropped = 0.0;
        for ((r, a), &w) in self.rings.iter().zip(&self.amplitudes).zip(&contrib) {
            if w > rel_tol * top {
                out.rings.push(*r);
                out.amplitudes.push(a.clone());
            } else {
                dropped += w;
            }
        }
        (out, dropped)
    }
}

pub fn mixture_amplitudes(
    trap: &TrapConfig,
    recoil: &RecoilSet,
    basis: &GQSBasis,
) -> Result<MixtureAmplitudes> {
    let psi0 = VerticalGaussian {
        h: trap.h,
        zeta: trap.zeta,
        q_z: 0.0,
        hbar: basis.scales.hbar,
    };
    let q_max = recoil.rings.iter().map(|r| r.q_z.abs()).fold(0.0, f64::max);
    let table = OverlapTable::new(basis, &psi0, q_max)?;
    let amplitudes = recoil
        .rings
        .par_iter()
        .map(|r| table.amplitudes(r.q_z))
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureAmplitudes {
        rings: recoil.rings.clone(),
        amplitudes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub fraction: f64,
}

impl Transmission {
    /// Expected number of transmitted atoms out of `n`, rounded.
    pub fn n_c(&self, n: u64) -> u64 {
        (n as f64 * self.fraction).round() as u64
    }
}

/// `int dOmega w(q) sum_n |c_n(q_z)|^2`.
pub fn transmitted_fraction(
    trap: &TrapConfig,
    recoil: &RecoilSet,
    basis: &GQSBasis,
) -> Result<Transmission> {
    Ok(Transmission {
        fraction: mixture_amplitudes(trap, recoil, basis)?.fraction(),
    })
}
