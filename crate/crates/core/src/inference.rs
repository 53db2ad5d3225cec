//! Detection events, likelihood of `g`, and the accuracy of its estimator.
//!
//! Everything here works on folded densities tabulated on the native grid
//! `(t, tau)` (time above the mirror, fall time). Densities at different
//! accelerations share that grid, and the change of variables to the
//! detector coordinates `(R, T)` does not depend on `g`, so likelihood
//! differences and Fisher information can be evaluated natively.
//!
//! Negative grid values, which the quantum current can show at round-off
//! level in interference minima, are clipped to zero before any
//! probabilistic use; [`NormalizedMap::new`] refuses maps whose clipped
//! mass is not negligible.

use std::f64::consts::PI;

use log::warn;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, numeric, Error, Result};
use crate::experiment::Experiment;
use crate::freefall::{linspace, locate, CurrentMap};
use crate::gqs::MixtureAmplitudes;
use crate::quadrature::gauss_legendre;

/// Largest clipped (negative) mass tolerated relative to the total.
pub const MAX_CLIP_FRACTION: f64 = 1e-3;

/// One annihilation on the detector plate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Horizontal distance of the impact from the release axis (m).
    pub r_bar: f64,
    /// Azimuth of the impact (rad).
    pub phi: f64,
    /// Time of flight from release (s).
    pub t_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub events: Vec<Event>,
    pub seed: u64,
    /// Incident atoms.
    pub n: u64,
    /// Detected atoms, the number of events.
    pub n_c: usize,
}

/// How the number of detected atoms in a draw is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountMode {
    /// Binomial with the transmitted fraction.
    #[default]
    Binomial,
    /// Always the rounded expectation.
    Expected,
}

/// A folded density clipped to be non-negative, with the data needed to
/// sample it and to evaluate it as a probability density.
#[derive(Clone, Debug)]
pub struct NormalizedMap {
    pub map: CurrentMap,
    /// Integral of the clipped bilinear interpolant: the detected fraction.
    pub weight: f64,
    /// Negative mass removed by clipping, relative to `weight`.
    pub clip_fraction: f64,
    /// Cumulative cell masses in row-major cell order.
    cdf: Vec<f64>,
    peak: f64,
}

impl NormalizedMap {
    pub fn new(mut map: CurrentMap) -> Result<Self> {
        let (nt, ntau) = map.density.dim();
        if nt < 2 || ntau < 2 {
            return Err(domain("inference", "map needs at least 2 x 2 nodes"));
        }
        let mut negative = 0.0;
        let mut total = 0.0;
        let mut cdf = Vec::with_capacity((nt - 1) * (ntau - 1));
        for a in 0..nt - 1 {
            for b in 0..ntau - 1 {
                let area = (map.t[a + 1] - map.t[a]) * (map.tau[b + 1] - map.tau[b]);
                let corners = [
                    map.density[[a, b]],
                    map.density[[a + 1, b]],
                    map.density[[a, b + 1]],
                    map.density[[a + 1, b + 1]],
                ];
                let neg: f64 = corners.iter().map(|v| v.min(0.0)).sum();
                let pos: f64 = corners.iter().map(|v| v.max(0.0)).sum();
                negative -= 0.25 * area * neg;
                total += 0.25 * area * pos;
                cdf.push(total);
            }
        }
        if !(total > 0.0) {
            return Err(domain("inference", "map carries no probability"));
        }
        let clip_fraction = negative / total;
        if clip_fraction > MAX_CLIP_FRACTION {
            return Err(numeric(
                "inference",
                format!("negative current carries {clip_fraction:.3e} of the map weight"),
            ));
        }
        map.density.mapv_inplace(|v| v.max(0.0));
        let peak = map.max();
        Ok(Self {
            map,
            weight: total,
            clip_fraction,
            cdf,
            peak,
        })
    }

    pub fn g(&self) -> f64 {
        self.map.g
    }

    /// Unnormalized clipped density per incident atom at native `(t, tau)`.
    pub fn raw(&self, t: f64, tau: f64) -> Option<f64> {
        self.map.interpolate(t, tau)
    }

    /// Conditional density of detection at native `(t, tau)`.
    pub fn native_density(&self, t: f64, tau: f64) -> Option<f64> {
        Some(self.raw(t, tau)? / self.weight)
    }

    /// Conditional density `p(R, T)` of a detected atom.
    pub fn density(&self, r_bar: f64, t_total: f64) -> Option<f64> {
        let (t, tau) = self.map.native(r_bar, t_total);
        Some(self.native_density(t, tau)? / self.map.jacobian(t, tau))
    }

    /// Largest conditional native density.
    pub fn peak(&self) -> f64 {
        self.peak / self.weight
    }

    /// Probability of the cell `(a, b)` under the normalized map.
    pub fn cell_probability(&self, a: usize, b: usize) -> f64 {
        let ntau = self.map.tau.len() - 1;
        let k = a * ntau + b;
        let lo = if k == 0 { 0.0 } else { self.cdf[k - 1] };
        (self.cdf[k] - lo) / self.weight
    }

    /// Native point for three uniform variates: a cell by inverse CDF, then
    /// the exact bilinear law inside it.
    fn draw(&self, u_cell: f64, u_x: f64, u_y: f64) -> (f64, f64) {
        let ntau = self.map.tau.len() - 1;
        let target = u_cell * self.weight;
        let k = self
            .cdf
            .partition_point(|&c| c <= target)
            .min(self.cdf.len() - 1);
        let (a, b) = (k / ntau, k % ntau);
        let d = &self.map.density;
        let (v00, v10, v01, v11) = (d[[a, b]], d[[a + 1, b]], d[[a, b + 1]], d[[a + 1, b + 1]]);
        let x = linear_inverse(v00 + v01, v10 + v11, u_x);
        let y = linear_inverse((1.0 - x) * v00 + x * v10, (1.0 - x) * v01 + x * v11, u_y);
        let t = self.map.t[a] + x * (self.map.t[a + 1] - self.map.t[a]);
        let tau = self.map.tau[b] + y * (self.map.tau[b + 1] - self.map.tau[b]);
        (t, tau)
    }
}

/// Inverse CDF on `[0, 1]` of the density proportional to `p (1 - u) + q u`.
fn linear_inverse(p: f64, q: f64, r: f64) -> f64 {
    let s = p + q;
    if !(s > 0.0) {
        return r;
    }
    if (q - p).abs() <= 1e-12 * s {
        return r;
    }
    let disc = p * p + (q * q - p * p) * r;
    ((disc.max(0.0).sqrt() - p) / (q - p)).clamp(0.0, 1.0)
}

/// Tabulated azimuth law of the horizontal momentum at each magnitude,
/// from the recoil rings weighted by their transmitted fractions.
#[derive(Clone, Debug)]
pub struct AzimuthSampler {
    mass: f64,
    d: f64,
    p: Vec<f64>,
    /// Row `k`: cumulative azimuth distribution at `p[k]` on `PHI_NODES` cells.
    cdf: Array2<f64>,
}

const PHI_NODES: usize = 720;
const P_NODES: usize = 160;

impl AzimuthSampler {
    /// Table covering the times above the mirror `t_range`.
    pub fn new(
        mix: &MixtureAmplitudes,
        delta_p: f64,
        mass: f64,
        d: f64,
        t_range: (f64, f64),
    ) -> Self {
        let p = linspace(mass * d / t_range.1, mass * d / t_range.0, P_NODES);
        let fractions: Vec<f64> = mix.amplitudes.iter().map(|a| a.norm_sqr()).collect();
        let rows: Vec<Vec<f64>> = p
            .par_iter()
            .map(|&pm| {
                let mut acc = 0.0;
                let mut row = Vec::with_capacity(PHI_NODES + 1);
                row.push(0.0);
                for k in 0..PHI_NODES {
                    let phi = 2.0 * PI * (k as f64 + 0.5) / PHI_NODES as f64;
                    let q = [pm * phi.cos(), pm * phi.sin()];
                    let v: f64 = mix
                        .rings
                        .iter()
                        .zip(&fractions)
                        .map(|(r, f)| f * r.horizontal_density(q, delta_p))
                        .sum();
                    acc += v.max(0.0);
                    row.push(acc);
                }
                row
            })
            .collect();
        let mut cdf = Array2::zeros((P_NODES, PHI_NODES + 1));
        for (k, row) in rows.iter().enumerate() {
            let top = row[PHI_NODES];
            for (j, v) in row.iter().enumerate() {
                cdf[[k, j]] = if top > 0.0 {
                    v / top
                } else {
                    j as f64 / PHI_NODES as f64
                };
            }
        }
        Self { mass, d, p, cdf }
    }

    /// Azimuth for an atom that spent `t` above the mirror.
    pub fn sample(&self, t: f64, u: f64) -> f64 {
        let pm = self.mass * self.d / t;
        let k = match locate(&self.p, pm) {
            Some((i, f)) => {
                if f < 0.5 {
                    i
                } else {
                    i + 1
                }
            }
            None if pm < self.p[0] => 0,
            None => self.p.len() - 1,
        };
        let row = self.cdf.row(k);
        let j = row
            .as_slice()
            .map(|r| r.partition_point(|&c| c <= u))
            .unwrap_or(1)
            .clamp(1, PHI_NODES);
        let (c0, c1) = (row[j - 1], row[j]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        2.0 * PI * (j as f64 - 1.0 + frac.clamp(0.0, 1.0)) / PHI_NODES as f64
    }
}

/// Draws one event set of `n` incident atoms from `map`.
///
/// The random stream is keyed by `(seed, event index)`, so each event is
/// reproducible on its own.
pub fn sample_events(
    map: &NormalizedMap,
    azimuth: &AzimuthSampler,
    n: u64,
    seed: u64,
    mode: CountMode,
) -> Result<EventSet> {
    let fraction = map.weight.min(1.0);
    let n_c = match mode {
        CountMode::Expected => (n as f64 * fraction).round() as usize,
        CountMode::Binomial => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(0);
            Binomial::new(n, fraction)
                .map_err(|e| domain("inference", format!("detected fraction {fraction}: {e}")))?
                .sample(&mut rng) as usize
        }
    };
    let events = (0..n_c)
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(1);
            rng.set_word_pos((i as u128) << 6);
            let (t, tau) = map.draw(rng.random(), rng.random(), rng.random());
            let phi = azimuth.sample(t, rng.random());
            let (r_bar, t_total) = map.map.detector(t, tau);
            Event {
                r_bar,
                phi,
                t_total,
            }
        })
        .collect();
    Ok(EventSet {
        events,
        seed,
        n,
        n_c,
    })
}

/// Which likelihood is maximized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LikelihoodKind {
    /// Product of densities conditional on detection.
    #[default]
    Conditional,
    /// Extended likelihood: adds the Poisson term of the detected count.
    Unconditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodOptions {
    pub kind: LikelihoodKind,
    /// Density floor for events where the map vanishes or that fall outside
    /// it, relative to the map's peak.
    pub floor: f64,
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        Self {
            kind: LikelihoodKind::Conditional,
            floor: 1e-12,
        }
    }
}

/// Log-likelihood of `events` under `map`, and the number of events that
/// hit the floor.
pub fn log_likelihood_on(
    events: &EventSet,
    map: &NormalizedMap,
    opts: &LikelihoodOptions,
) -> (f64, usize) {
    let floor = opts.floor * map.peak();
    let mut floored = 0;
    let mut sum = 0.0;
    for e in &events.events {
        let (t, tau) = map.map.native(e.r_bar, e.t_total);
        let p = match map.native_density(t, tau) {
            Some(p) if p > floor => p,
            _ => {
                floored += 1;
                floor
            }
        };
        let jac = if t > 0.0 && tau > 0.0 {
            map.map.jacobian(t, tau)
        } else {
            1.0
        };
        sum += (p / jac).ln();
    }
    if opts.kind == LikelihoodKind::Unconditional {
        let n = events.n as f64;
        sum += events.n_c as f64 * (n * map.weight).ln() - n * map.weight;
    }
    (sum, floored)
}

/// Source of normalized folded densities at arbitrary `g`.
pub trait MapProvider: Sync {
    fn normalized_at(&self, g: f64) -> Result<NormalizedMap>;
}

impl MapProvider for Experiment {
    fn normalized_at(&self, g: f64) -> Result<NormalizedMap> {
        NormalizedMap::new(self.map_at(g)?)
    }
}

pub fn log_likelihood(
    events: &EventSet,
    g: f64,
    provider: &dyn MapProvider,
    opts: &LikelihoodOptions,
) -> Result<f64> {
    let map = provider.normalized_at(g)?;
    let (value, floored) = log_likelihood_on(events, &map, opts);
    if floored > 0 {
        warn!(
            "{floored} of {} events below the density floor at g = {g}",
            events.n_c
        );
    }
    Ok(value)
}

/// Grid of relative offsets `(g - g0) / g0` scanned for the maximum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub points: usize,
    pub half_width: f64,
    /// Times the range may be doubled when a maximum sits on its edge.
    pub max_widen: usize,
    /// Points within this drop of the maximum log-likelihood enter the fit.
    pub fit_drop: f64,
    /// Largest accepted RMS residual of the quadratic fit.
    pub max_residual: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            points: 61,
            half_width: 3e-5,
            max_widen: 3,
            fit_drop: 4.5,
            max_residual: 0.2,
        }
    }
}

impl ScanSpec {
    /// Default scan widened to cover `reach` standard deviations of an
    /// estimator whose expected relative spread is `sigma_rel`.
    pub fn covering(sigma_rel: f64, reach: f64) -> Self {
        let base = Self::default();
        Self {
            half_width: base.half_width.max(reach * sigma_rel),
            ..base
        }
    }

    pub fn offsets(&self) -> Vec<f64> {
        linspace(-self.half_width, self.half_width, self.points)
    }

    fn step(&self) -> f64 {
        2.0 * self.half_width / (self.points.max(2) - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodScan {
    pub g0: f64,
    /// Relative offsets `(g - g0) / g0`, ascending.
    pub offsets: Vec<f64>,
    pub log_l: Vec<f64>,
    pub g_hat: f64,
    pub sigma: f64,
    /// RMS residual of the quadratic fit.
    pub residual: f64,
}

/// Quadratic fit of a log-likelihood scan around its grid maximum.
pub fn fit_scan(
    g0: f64,
    offsets: &[f64],
    log_l: &[f64],
    spec: &ScanSpec,
) -> Result<LikelihoodScan> {
    let n = offsets.len();
    let k = log_l
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| numeric("inference", "log-likelihood scan has no finite value"))?;
    if k < 2 || k + 2 >= n {
        return Err(Error::ScanBoundary { index: k, len: n });
    }
    let top = log_l[k];
    let mut lo = k - 2;
    while lo > 0 && log_l[lo - 1] >= top - spec.fit_drop {
        lo -= 1;
    }
    let mut hi = k + 2;
    while hi + 1 < n && log_l[hi + 1] >= top - spec.fit_drop {
        hi += 1;
    }
    let xc = offsets[k];
    let scale = spec.step().max(f64::MIN_POSITIVE);
    // Least squares for y = c0 + c1 u + c2 u^2 with u = (x - xc) / scale.
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for i in lo..=hi {
        let u = (offsets[i] - xc) / scale;
        let basis = [1.0, u, u * u];
        let y = log_l[i] - top;
        for p in 0..3 {
            for q in 0..3 {
                m[p][q] += basis[p] * basis[q];
            }
            r[p] += basis[p] * y;
        }
    }
    let c = solve3(m, r).ok_or_else(|| numeric("inference", "singular quadratic fit"))?;
    if !(c[2] < 0.0) {
        return Err(numeric(
            "inference",
            "log-likelihood is not concave around its maximum",
        ));
    }
    let mut ss = 0.0;
    for i in lo..=hi {
        let u = (offsets[i] - xc) / scale;
        let y = log_l[i] - top;
        ss += (y - (c[0] + c[1] * u + c[2] * u * u)).powi(2);
    }
    let residual = (ss / (hi - lo + 1) as f64).sqrt();
    if residual > spec.max_residual {
        return Err(numeric(
            "inference",
            format!(
                "quadratic fit residual {residual:.3e} exceeds {:.3e}",
                spec.max_residual
            ),
        ));
    }
    let a = c[2] / (scale * scale);
    let x_hat = xc - c[1] * scale / (2.0 * c[2]);
    Ok(LikelihoodScan {
        g0,
        offsets: offsets.to_vec(),
        log_l: log_l.to_vec(),
        g_hat: g0 * (1.0 + x_hat),
        sigma: g0 * (-2.0 * a).powf(-0.5),
        residual,
    })
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (r[row] - s) / m[row][row];
    }
    Some(x)
}

/// Log-likelihood of every event set at each relative offset. One map is
/// alive at a time.
pub fn scan_many(
    sets: &[EventSet],
    g0: f64,
    offsets: &[f64],
    provider: &dyn MapProvider,
    opts: &LikelihoodOptions,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(offsets.len()); sets.len()];
    for &x in offsets {
        let map = provider.normalized_at(g0 * (1.0 + x))?;
        let column: Vec<(f64, usize)> = sets
            .par_iter()
            .map(|s| log_likelihood_on(s, &map, opts))
            .collect();
        let floored: usize = column.iter().map(|c| c.1).sum();
        if floored > 0 {
            warn!("{floored} events below the density floor at offset {x:e}");
        }
        for (row, (v, _)) in out.iter_mut().zip(column) {
            row.push(v);
        }
    }
    Ok(out)
}

/// Log-likelihood columns computed so far, keyed by offset in units of the
/// initial scan step. Widening doubles the range and the step while keeping
/// the point count, so half of the old nodes are reused.
struct ScanState<'a> {
    sets: &'a [EventSet],
    g0: f64,
    unit: f64,
    columns: std::collections::BTreeMap<i64, Vec<f64>>,
}

impl<'a> ScanState<'a> {
    fn new(sets: &'a [EventSet], g0: f64, spec: &ScanSpec) -> Self {
        Self {
            sets,
            g0,
            unit: spec.step(),
            columns: Default::default(),
        }
    }

    fn key(&self, x: f64) -> i64 {
        (x / self.unit).round() as i64
    }

    fn ensure(
        &mut self,
        spec: &ScanSpec,
        provider: &dyn MapProvider,
        opts: &LikelihoodOptions,
    ) -> Result<()> {
        let missing: Vec<f64> = spec
            .offsets()
            .into_iter()
            .filter(|&x| !self.columns.contains_key(&self.key(x)))
            .collect();
        let values = scan_many(self.sets, self.g0, &missing, provider, opts)?;
        for (j, &x) in missing.iter().enumerate() {
            let column = values.iter().map(|row| row[j]).collect();
            self.columns.insert(self.key(x), column);
        }
        Ok(())
    }

    fn fit(&self, draw: usize, spec: &ScanSpec) -> Result<LikelihoodScan> {
        let offsets = spec.offsets();
        let values: Vec<f64> = offsets
            .iter()
            .map(|&x| self.columns[&self.key(x)][draw])
            .collect();
        fit_scan(self.g0, &offsets, &values, spec)
    }
}

/// The scan with twice the range and step.
fn widened(spec: &ScanSpec) -> ScanSpec {
    ScanSpec {
        half_width: 2.0 * spec.half_width,
        ..*spec
    }
}

/// Maximum-likelihood estimate of `g` for one event set, widening the scan
/// when the maximum falls on its edge.
pub fn estimate_g(
    events: &EventSet,
    g0: f64,
    spec: &ScanSpec,
    provider: &dyn MapProvider,
    opts: &LikelihoodOptions,
) -> Result<LikelihoodScan> {
    let sets = std::slice::from_ref(events);
    let mut state = ScanState::new(sets, g0, spec);
    let mut spec = *spec;
    state.ensure(&spec, provider, opts)?;
    let mut widen = 0;
    loop {
        match state.fit(0, &spec) {
            Err(Error::ScanBoundary { .. }) if widen < spec.max_widen => {
                spec = widened(&spec);
                state.ensure(&spec, provider, opts)?;
                widen += 1;
            }
            other => return other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub draws: usize,
    pub base_seed: u64,
    pub count: CountMode,
    pub scan: ScanSpec,
    pub likelihood: LikelihoodOptions,
    pub bins: usize,
    /// Bootstrap resamples for the error of the dispersion.
    pub bootstrap: usize,
    /// Likelihood scans kept for the first draws.
    pub keep_scans: usize,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        Self {
            draws: 200,
            base_seed: 1,
            count: CountMode::Binomial,
            scan: ScanSpec::default(),
            likelihood: LikelihoodOptions::default(),
            bins: 30,
            bootstrap: 1000,
            keep_scans: 10,
        }
    }
}

/// Normalized histogram of the relative variation `(g_hat - g0) / g0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if samples.is_empty() || !(hi > lo) {
            let c = if samples.is_empty() { 0.0 } else { lo };
            return Self {
                edges: vec![c - 0.5, c + 0.5],
                density: vec![if samples.is_empty() { 0.0 } else { 1.0 }],
            };
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &s in samples {
            let k = (((s - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let n = samples.len() as f64;
        Self {
            edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
            density: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
        }
    }

    pub fn integral(&self) -> f64 {
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }
}

/// Estimate of one draw of a campaign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawEstimate {
    pub index: usize,
    pub seed: u64,
    pub n_c: usize,
    pub g_hat: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub m: usize,
    pub g0: f64,
    pub n: u64,
    pub estimates: Vec<DrawEstimate>,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub mean: f64,
    pub sigma_mc: f64,
    /// Bootstrap standard error of `sigma_mc`.
    pub sigma_mc_error: f64,
    /// Mean of the per-draw fitted widths.
    pub mean_fitted_sigma: f64,
    pub mean_n_c: f64,
    pub excess_kurtosis: f64,
    pub histogram: Histogram,
    /// Scans of the first draws, `None` where the draw failed.
    pub scans: Vec<Option<LikelihoodScan>>,
}

/// Seed of draw `index` of a campaign.
pub fn draw_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

/// Runs `spec.draws` independent draws from `truth` (the normalized map at
/// `g0`) and estimates `g` in each from densities supplied by `provider`.
pub fn run_campaign(
    truth: &NormalizedMap,
    azimuth: &AzimuthSampler,
    provider: &dyn MapProvider,
    n: u64,
    spec: &CampaignSpec,
) -> Result<CampaignResult> {
    if spec.draws == 0 {
        return Err(domain("inference", "a campaign needs at least one draw"));
    }
    let g0 = truth.g();
    let sets = (0..spec.draws)
        .into_par_iter()
        .map(|i| sample_events(truth, azimuth, n, draw_seed(spec.base_seed, i), spec.count))
        .collect::<Result<Vec<_>>>()?;

    let mut scan = spec.scan;
    let mut state = ScanState::new(&sets, g0, &scan);
    state.ensure(&scan, provider, &spec.likelihood)?;
    let mut fits: Vec<Result<LikelihoodScan>> =
        (0..sets.len()).map(|i| state.fit(i, &scan)).collect();
    let mut scans: Vec<Option<LikelihoodScan>> = vec![None; spec.keep_scans.min(sets.len())];
    for (slot, fit) in scans.iter_mut().zip(&fits) {
        *slot = fit.as_ref().ok().cloned();
    }
    for _ in 0..spec.scan.max_widen {
        if !fits
            .iter()
            .any(|f| matches!(f, Err(Error::ScanBoundary { .. })))
        {
            break;
        }
        scan = widened(&scan);
        state.ensure(&scan, provider, &spec.likelihood)?;
        for (i, fit) in fits.iter_mut().enumerate() {
            if matches!(fit, Err(Error::ScanBoundary { .. })) {
                *fit = state.fit(i, &scan);
                if let (Some(slot), Ok(f)) = (scans.get_mut(i), fit.as_ref()) {
                    *slot = Some(f.clone());
                }
            }
        }
    }

    let mut estimates = Vec::new();
    let mut failure_messages = Vec::new();
    for (i, (fit, set)) in fits.into_iter().zip(&sets).enumerate() {
        match fit {
            Ok(f) => estimates.push(DrawEstimate {
                index: i,
                seed: set.seed,
                n_c: set.n_c,
                g_hat: f.g_hat,
                sigma: f.sigma,
            }),
            Err(e) => failure_messages.push(format!("draw {i}: {e}")),
        }
    }
    let failures = failure_messages.len();
    if failures > 0 {
        warn!("{failures} of {} draws failed", spec.draws);
    }
    if estimates.len() < 2 {
        return Err(numeric(
            "inference",
            format!("only {} draws could be estimated", estimates.len()),
        ));
    }
    let g_hats: Vec<f64> = estimates.iter().map(|e| e.g_hat).collect();
    let (mean, sigma_mc) = mean_std(&g_hats);
    let sigma_mc_error = bootstrap_std_error(&g_hats, spec.bootstrap, spec.base_seed);
    let mean_fitted_sigma = estimates.iter().map(|e| e.sigma).sum::<f64>() / estimates.len() as f64;
    let mean_n_c = sets.iter().map(|s| s.n_c as f64).sum::<f64>() / sets.len() as f64;
    let relative: Vec<f64> = g_hats.iter().map(|g| (g - g0) / g0).collect();
    Ok(CampaignResult {
        m: spec.draws,
        g0,
        n,
        failures,
        failure_messages,
        mean,
        sigma_mc,
        sigma_mc_error,
        mean_fitted_sigma,
        mean_n_c,
        excess_kurtosis: excess_kurtosis(&g_hats),
        histogram: Histogram::new(&relative, spec.bins),
        estimates,
        scans,
    })
}

/// Sample mean and standard deviation (with `n - 1`).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    if m2 > 0.0 {
        m4 / (m2 * m2) - 3.0
    } else {
        0.0
    }
}

fn bootstrap_std_error(x: &[f64], resamples: usize, seed: u64) -> f64 {
    if resamples < 2 || x.len() < 2 {
        return 0.0;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut buf = vec![0.0; x.len()];
    let stds: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = x[rng.random_range(0..x.len())];
            }
            mean_std(&buf).1
        })
        .collect();
    mean_std(&stds).1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherSpec {
    /// Relative steps `dg / g0` of the central differences; the smallest one
    /// gives the reported value.
    pub steps: Vec<f64>,
    /// Gauss-Legendre points per cell and axis.
    pub order: usize,
    /// Density floor relative to the peak below which cells are skipped.
    pub floor: f64,
}

impl Default for FisherSpec {
    fn default() -> Self {
        Self {
            steps: vec![1e-4, 5e-5],
            order: 3,
            floor: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub g0: f64,
    pub n: u64,
    /// Fisher information per incident atom (s^4/m^2).
    pub i_g: f64,
    /// Information for each step of [`FisherSpec::steps`].
    pub by_step: Vec<(f64, f64)>,
    /// Information per incident atom once the detected count is conditioned
    /// on: `I_g - (dF/dg)^2 / F`.
    pub i_conditional: f64,
    pub sigma_cr: f64,
    pub sigma_cr_relative: f64,
    /// `(sigma_cr / sigma_mc)^2` when a campaign dispersion is supplied.
    pub efficiency: Option<f64>,
    /// Squared-derivative mass skipped below the floor, relative to the total.
    pub clipped: f64,
}

impl FisherResult {
    pub fn with_sigma_mc(mut self, sigma_mc: f64) -> Self {
        self.efficiency = Some((self.sigma_cr / sigma_mc).powi(2));
        self
    }

    /// Cramér-Rao bound for another number of incident atoms.
    pub fn sigma_cr_for(&self, n: u64) -> f64 {
        1.0 / (n as f64 * self.i_g).sqrt()
    }
}

/// `int (dJ/dg)^2 / J` by central differences of the tabulated densities and
/// Gauss-Legendre quadrature inside every grid cell.
pub fn fisher_information(
    provider: &dyn MapProvider,
    g0: f64,
    n: u64,
    spec: &FisherSpec,
) -> Result<FisherResult> {
    if spec.steps.is_empty() {
        return Err(domain(
            "inference",
            "at least one finite-difference step is required",
        ));
    }
    let center = provider.normalized_at(g0)?;
    let (x, w) = gauss_legendre(spec.order.max(1));
    let finest = (0..spec.steps.len())
        .min_by(|&a, &b| spec.steps[a].total_cmp(&spec.steps[b]))
        .unwrap_or(0);
    let mut by_step = Vec::with_capacity(spec.steps.len());
    let mut clipped_first = 0.0;
    let mut d_weight_first = 0.0;
    for (k, &step) in spec.steps.iter().enumerate() {
        if !(step > 0.0) {
            return Err(domain(
                "inference",
                format!("finite-difference step must be > 0, got {step}"),
            ));
        }
        let dg = g0 * step;
        let plus = provider.normalized_at(g0 + dg)?;
        let minus = provider.normalized_at(g0 - dg)?;
        let (info, clipped) = fisher_integral(&center, &plus, &minus, dg, &x, &w, spec.floor)?;
        if clipped > 1e-6 {
            warn!("Fisher integrand clipped below the density floor: {clipped:.3e} of the derivative mass");
        }
        if k == finest {
            clipped_first = clipped;
            d_weight_first = (plus.weight - minus.weight) / (2.0 * dg);
        }
        by_step.push((step, info));
    }
    let i_g = by_step[finest].1;
    let i_conditional = i_g - d_weight_first.powi(2) / center.weight;
    let sigma_cr = 1.0 / (n as f64 * i_g).sqrt();
    Ok(FisherResult {
        g0,
        n,
        i_g,
        by_step,
        i_conditional,
        sigma_cr,
        sigma_cr_relative: sigma_cr / g0,
        efficiency: None,
        clipped: clipped_first,
    })
}

fn fisher_integral(
    center: &NormalizedMap,
    plus: &NormalizedMap,
    minus: &NormalizedMap,
    dg: f64,
    x: &[f64],
    w: &[f64],
    floor_rel: f64,
) -> Result<(f64, f64)> {
    let (t, tau) = (&center.map.t, &center.map.tau);
    if plus.map.t != *t || plus.map.tau != *tau || minus.map.t != *t || minus.map.tau != *tau {
        return Err(domain(
            "inference",
            "maps for the finite differences must share one grid",
        ));
    }
    let floor = floor_rel * center.peak;
    let (dc, dp, dm) = (&center.map.density, &plus.map.density, &minus.map.density);
    let nodes: Vec<(f64, f64)> = x
        .iter()
        .map(|&u| 0.5 * (u + 1.0))
        .zip(w.iter().map(|&v| 0.5 * v))
        .collect();
    let rows: Vec<(f64, f64, f64)> = (0..t.len() - 1)
        .into_par_iter()
        .map(|a| {
            let (mut info, mut skipped, mut total) = (0.0, 0.0, 0.0);
            for b in 0..tau.len() - 1 {
                let area = (t[a + 1] - t[a]) * (tau[b + 1] - tau[b]);
                let bil = |d: &Array2<f64>, fx: f64, fy: f64| {
                    (1.0 - fx) * (1.0 - fy) * d[[a, b]]
                        + fx * (1.0 - fy) * d[[a + 1, b]]
                        + (1.0 - fx) * fy * d[[a, b + 1]]
                        + fx * fy * d[[a + 1, b + 1]]
                };
                for &(fx, wx) in &nodes {
                    for &(fy, wy) in &nodes {
                        let j = bil(dc, fx, fy);
                        let dj = (bil(dp, fx, fy) - bil(dm, fx, fy)) / (2.0 * dg);
                        let wt = area * wx * wy;
                        total += wt * dj * dj;
                        if j > floor {
                            info += wt * dj * dj / j;
                        } else {
                            skipped += wt * dj * dj;
                        }
                    }
                }
            }
            (info, skipped, total)
        })
        .collect();
    let info: f64 = rows.iter().map(|r| r.0).sum();
    let skipped: f64 = rows.iter().map(|r| r.1).sum();
    let total: f64 = rows.iter().map(|r| r.2).sum();
    if !info.is_finite() {
        return Err(numeric("inference", "Fisher integral is not finite"));
    }
    Ok((info, if total > 0.0 { skipped / total } else { 0.0 }))
}
