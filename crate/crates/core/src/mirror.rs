//! Evolution above the mirror and the momentum distribution at its end.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gqs::{GQSBasis, MixtureAmplitudes, ModeAmplitudes};
use crate::quadrature::CompositeRule;
use crate::source::RecoilRing;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Horizontal distance travelled above the mirror (m).
    pub d: f64,
    /// Free-fall height from the mirror to the detector plane (m).
    pub height: f64,
}

impl Geometry {
    pub fn new(d: f64, height: f64) -> Result<Self> {
        if !(d.is_finite() && d > 0.0 && height.is_finite() && height > 0.0) {
            return Err(domain(
                "mirror",
                format!("geometry needs d > 0 and H > 0, got d = {d}, H = {height}"),
            ));
        }
        Ok(Self { d, height })
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            d: 0.05,
            height: 0.30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    /// Time above the mirror (s).
    pub t: f64,
    /// Horizontal speed `R / T` (m/s).
    pub v_bar: f64,
}

/// `t = T d / R` for a detection at horizontal distance `R` and time `T`.
/// Events with `t > T` cannot have crossed the mirror and are rejected.
pub fn time_above_mirror(r_bar: f64, t_total: f64, geom: &Geometry) -> Result<Kinematics> {
    if !(r_bar > 0.0 && t_total > 0.0) {
        return Err(domain(
            "mirror",
            format!("need R > 0 and T > 0, got R = {r_bar}, T = {t_total}"),
        ));
    }
    let t = t_total * geom.d / r_bar;
    if t > t_total {
        return Err(domain(
            "mirror",
            format!("R = {r_bar} m is shorter than the mirror, t = {t} s exceeds T = {t_total} s"),
        ));
    }
    Ok(Kinematics {
        t,
        v_bar: r_bar / t_total,
    })
}

/// Multiplies each `c_n` by `exp(-i lambda_n t / t_g)`.
pub fn evolve_to_end_of_disk(
    amplitudes: &ModeAmplitudes,
    t: f64,
    basis: &GQSBasis,
) -> ModeAmplitudes {
    let w = t / basis.scales.t_g;
    let c = amplitudes
        .c
        .iter()
        .zip(basis.lambdas())
        .map(|(c, &l)| c * Complex64::from_polar(1.0, -l * w))
        .collect();
    ModeAmplitudes {
        q_z: amplitudes.q_z,
        c,
    }
}

/// The mixture after a time `t` above the mirror.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndOfDiskState {
    pub t: f64,
    pub rings: Vec<RecoilRing>,
    pub amplitudes: Vec<ModeAmplitudes>,
}

pub fn end_of_disk_state(
    mix: &MixtureAmplitudes,
    t: f64,
    basis: &GQSBasis,
) -> Result<EndOfDiskState> {
    if !(t >= 0.0) {
        return Err(domain(
            "mirror",
            format!("time above mirror must be >= 0, got {t}"),
        ));
    }
    Ok(EndOfDiskState {
        t,
        rings: mix.rings.clone(),
        amplitudes: mix
            .amplitudes
            .iter()
            .map(|a| evolve_to_end_of_disk(a, t, basis))
            .collect(),
    })
}

/// Half-line transforms `chi~_n(kappa)` of all retained modes on a fixed
/// grid of dimensionless momenta `kappa = p / p_g`, computed together as two
/// real matrix products.
pub struct MomentumTable {
    pub kappas: Vec<f64>,
    /// `n_max x K`.
    pub re: Array2<f64>,
    pub im: Array2<f64>,
}

const COLUMN_BLOCK: usize = 4096;

impl MomentumTable {
    pub fn new(basis: &GQSBasis, kappas: &[f64]) -> Self {
        let n_max = basis.n_max;
        let extent = basis.mode_extent(n_max);
        let k_abs = kappas.iter().fold(0.0f64, |m, k| m.max(k.abs()));
        let lambda_max = basis.lambdas()[n_max - 1];
        let rule = CompositeRule::resolving(0.0, extent, lambda_max.sqrt() + k_abs + 1.0, 2.0, 16);
        let extents: Vec<f64> = (1..=n_max).map(|n| basis.mode_extent(n)).collect();
        let kk = kappas.len();
        let mut re = Array2::<f64>::zeros((n_max, kk));
        let mut im = Array2::<f64>::zeros((n_max, kk));
        let mut column = vec![0.0; n_max];
        for start in (0..rule.len()).step_by(COLUMN_BLOCK) {
            let end = (start + COLUMN_BLOCK).min(rule.len());
            let width = end - start;
            let mut x = Array2::<f64>::zeros((n_max, width));
            let mut cos = Array2::<f64>::zeros((width, kk));
            let mut sin = Array2::<f64>::zeros((width, kk));
            for j in 0..width {
                let s = rule.nodes[start + j];
                let w = rule.weights[start + j];
                basis.profiles_at(s, &mut column);
                for n in 0..n_max {
                    if s <= extents[n] {
                        x[[n, j]] = w * column[n];
                    }
                }
                for (k, &kappa) in kappas.iter().enumerate() {
                    let (sn, cs) = (kappa * s).sin_cos();
                    cos[[j, k]] = cs;
                    sin[[j, k]] = -sn;
                }
            }
            re += &x.dot(&cos);
            im += &x.dot(&sin);
        }
        let norm = 1.0 / (2.0 * PI).sqrt();
        re *= norm;
        im *= norm;
        Self {
            kappas: kappas.to_vec(),
            re,
            im,
        }
    }

    /// `|sum_n a_n chi~_n(kappa_k)|^2` for every grid momentum.
    pub fn intensity(&self, a: &[Complex64]) -> Vec<f64> {
        let are: Vec<f64> = a.iter().map(|c| c.re).collect();
        let aim: Vec<f64> = a.iter().map(|c| c.im).collect();
        let are = ndarray::ArrayView1::from(&are);
        let aim = ndarray::ArrayView1::from(&aim);
        let rr = self.re.t().dot(&are);
        let ii = self.im.t().dot(&aim);
        let ri = self.re.t().dot(&aim);
        let ir = self.im.t().dot(&are);
        (0..self.kappas.len())
            .map(|k| (rr[k] - ii[k]).powi(2) + (ri[k] + ir[k]).powi(2))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.re.len_of(Axis(1))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Momentum distribution at the end of the mirror, resolved per recoil ring.
#[derive(Clone, Debug)]
pub struct EndMomentumDistribution {
    /// Vertical momenta (kg m/s).
    pub p_z: Vec<f64>,
    pub rings: Vec<RecoilRing>,
    /// Per ring, `|sum_n c_n chi~_n(p_z) e^{-i lambda_n t/t_g}|^2` in (kg m/s)^-1.
    pub vertical: Vec<Vec<f64>>,
    pub delta_p: f64,
}

impl EndMomentumDistribution {
    /// Horizontal momenta integrated out.
    pub fn vertical_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p_z.len()];
        for (r, v) in self.rings.iter().zip(&self.vertical) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += r.weight * x;
            }
        }
        out
    }

    /// Full density at horizontal momentum `p_perp` and the `k`-th vertical node.
    pub fn density(&self, p_perp: [f64; 2], k: usize) -> f64 {
        self.rings
            .iter()
            .zip(&self.vertical)
            .map(|(r, v)| r.horizontal_density(p_perp, self.delta_p) * v[k])
            .sum()
    }
}

pub fn momentum_distribution_end(
    p_z: &[f64],
    t: f64,
    mix: &MixtureAmplitudes,
    basis: &GQSBasis,
    delta_p: f64,
) -> Result<EndMomentumDistribution> {
    let table = MomentumTable::new(basis, &scaled_momenta(p_z, basis));
    momentum_distribution_with(&table, p_z, t, mix, basis, delta_p)
}

fn scaled_momenta(p_z: &[f64], basis: &GQSBasis) -> Vec<f64> {
    let p_g = basis.scales.p_g();
    p_z.iter().map(|p| p / p_g).collect()
}

/// Same as [`momentum_distribution_end`] with a prebuilt transform table,
/// for scans over `t`.
pub fn momentum_distribution_with(
    table: &MomentumTable,
    p_z: &[f64],
    t: f64,
    mix: &MixtureAmplitudes,
    basis: &GQSBasis,
    delta_p: f64,
) -> Result<EndMomentumDistribution> {
    let state = end_of_disk_state(mix, t, basis)?;
    let p_g = basis.scales.p_g();
    let vertical = state
        .amplitudes
        .par_iter()
        .map(|a| table.intensity(&a.c).into_iter().map(|x| x / p_g).collect())
        .collect();
    Ok(EndMomentumDistribution {
        p_z: p_z.to_vec(),
        rings: state.rings,
        vertical,
        delta_p,
    })
}

/// Rows `(v_z, t, density)` of the recoil-averaged vertical velocity
/// distribution at the end of the mirror, for plotting fringes.
pub fn fringe_grid(
    v_z: &[f64],
    times: &[f64],
    mix: &MixtureAmplitudes,
    basis: &GQSBasis,
    delta_p: f64,
) -> Result<Vec<[f64; 3]>> {
    let m = basis.scales.mass;
    let p_z: Vec<f64> = v_z.iter().map(|v| m * v).collect();
    let table = MomentumTable::new(basis, &scaled_momenta(&p_z, basis));
    let mut rows = Vec::with_capacity(v_z.len() * times.len());
    for &t in times {
        let dist = momentum_distribution_with(&table, &p_z, t, mix, basis, delta_p)?;
        for (v, x) in v_z.iter().zip(dist.vertical_marginal()) {
            // density per unit velocity
            rows.push([*v, t, x * m]);
        }
    }
    Ok(rows)
}
