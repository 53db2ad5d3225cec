//! Free fall from the end of the mirror to the detector plane.
//!
//! The gravity propagator factorizes into a global phase times the free
//! propagator evaluated at the shifted altitude `Z' = Z + g tau^2 / 2`, so
//! every detector amplitude reduces to the per-mode Fresnel integrals
//!
//! ```text
//! F_n(tau) = int exp(i m (Z' - z)^2 / (2 hbar tau)) chi_n(z) dz
//! G_n(tau) = int V(z) exp(i m (Z' - z)^2 / (2 hbar tau)) chi_n(z) dz
//! ```
//!
//! with `V = (Z' - z) / tau - g tau` the classical vertical velocity at the
//! detector. [`FresnelEngine`] evaluates them for many fall times at once as
//! a real matrix product between a tabulated mode matrix and a chirp matrix.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2};
use num_complex::Complex64;
use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, numeric, Result};
use crate::gqs::{GQSBasis, MixtureAmplitudes};
use crate::mirror::Geometry;
use crate::physcore::ScaleSet;
use crate::quadrature::CompositeRule;

/// Largest phase advance tolerated across one 16-point Gauss-Legendre panel.
const PANEL_PHASE: f64 = 4.0;
const PANEL_ORDER: usize = 16;
/// Refuse to build mode tables beyond this many nodes.
const MAX_NODES: usize = 4_000_000;
const MAP_TAU_CHUNK: usize = 512;
const MAP_ROW_BLOCK: usize = 64;
const TAU_BATCH: usize = 128;

/// Jacobian factor in front of the recoil-averaged current.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Prefactor {
    /// `m^2 / T^2`, the Jacobian of `p = m R / T`.
    #[default]
    TotalTime,
    /// `m^2 / tau^2`.
    FallTime,
}

impl Prefactor {
    fn factor(self, mass: f64, t_total: f64, tau: f64) -> f64 {
        match self {
            Prefactor::TotalTime => mass * mass / (t_total * t_total),
            Prefactor::FallTime => mass * mass / (tau * tau),
        }
    }
}

/// Geometry of one free fall of duration `tau` to altitude `z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationContext {
    pub tau: f64,
    /// Detector altitude (m), `-H` for the detector plane.
    pub z: f64,
    /// `z + g tau^2 / 2`.
    pub z_prime: f64,
    /// Global phase `(m g tau / hbar)(z + g tau^2 / 6)`.
    pub phi: f64,
    pub g: f64,
    /// Gravitational length at `g` (m).
    pub l_g: f64,
    pub mass: f64,
    pub hbar: f64,
}

impl PropagationContext {
    /// Fall of duration `tau` from the mirror plane to the detector `height` below.
    pub fn new(tau: f64, height: f64, scales: &ScaleSet) -> Result<Self> {
        Self::at_altitude(tau, -height, scales)
    }

    pub fn at_altitude(tau: f64, z: f64, scales: &ScaleSet) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(domain(
                "freefall",
                format!("fall time must be > 0, got {tau}"),
            ));
        }
        let g = scales.g;
        Ok(Self {
            tau,
            z,
            z_prime: z + 0.5 * g * tau * tau,
            phi: scales.mass * g * tau / scales.hbar * (z + g * tau * tau / 6.0),
            g,
            l_g: scales.l_g,
            mass: scales.mass,
            hbar: scales.hbar,
        })
    }

    /// `sqrt(m / (2 pi i hbar tau))`.
    pub fn kernel_prefactor(&self) -> Complex64 {
        let r = (self.mass / (2.0 * PI * self.hbar * self.tau)).sqrt();
        Complex64::from_polar(r, -PI / 4.0)
    }
}

/// Free-fall propagator in a uniform field `g` from `z` to `zz` in time `tau`.
pub fn propagator_kernel(z: f64, zz: f64, tau: f64, scales: &ScaleSet) -> Result<Complex64> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(domain(
            "freefall",
            format!("fall time must be > 0, got {tau}"),
        ));
    }
    let g = scales.g;
    let action =
        (zz - z).powi(2) / (2.0 * tau) - g * tau * (zz + z) / 2.0 - g * g * tau.powi(3) / 24.0;
    let r = (scales.mass / (2.0 * PI * scales.hbar * tau)).sqrt();
    Ok(Complex64::from_polar(
        r,
        -PI / 4.0 + scales.mass * action / scales.hbar,
    ))
}

/// Propagates an arbitrary initial profile `psi0(z)` supported on
/// `[z_lo, z_hi]`, returning `(psi(Z), (hbar / i m) d psi / dZ)`.
/// `k_max` bounds the local wave number of `psi0` (1/m).
pub fn propagate_profile<F: Fn(f64) -> Complex64>(
    psi0: F,
    z_lo: f64,
    z_hi: f64,
    k_max: f64,
    ctx: &PropagationContext,
) -> Result<(Complex64, Complex64)> {
    let a = ctx.mass / (2.0 * ctx.hbar * ctx.tau);
    let chirp = 2.0 * a * (ctx.z_prime - z_lo).abs().max((ctx.z_prime - z_hi).abs());
    let rule = CompositeRule::resolving(z_lo, z_hi, k_max + chirp, PANEL_PHASE, PANEL_ORDER);
    if rule.len() > MAX_NODES {
        return Err(numeric(
            "freefall",
            format!(
                "oscillation unresolved: {} nodes needed for tau = {}",
                rule.len(),
                ctx.tau
            ),
        ));
    }
    let mut f = Complex64::new(0.0, 0.0);
    let mut gr = Complex64::new(0.0, 0.0);
    let zp = ctx.z_prime;
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let d = zp - z;
        // a d^2 minus the z-independent part a Z'^2, which is applied once below
        let e = Complex64::from_polar(w, a * z * (z - 2.0 * zp)) * psi0(z);
        f += e;
        gr += e * (d / ctx.tau - ctx.g * ctx.tau);
    }
    let pref = ctx.kernel_prefactor() * Complex64::from_polar(1.0, a * zp * zp - ctx.phi);
    Ok((pref * f, pref * gr))
}

/// Per-mode Fresnel integrals for a batch of fall times.
#[derive(Clone, Debug)]
pub struct FresnelBlock {
    pub contexts: Vec<PropagationContext>,
    /// `n_max x batch`, in m^(1/2).
    pub f_re: Array2<f64>,
    pub f_im: Array2<f64>,
    /// Velocity-weighted integrals, in m^(3/2)/s.
    pub g_re: Array2<f64>,
    pub g_im: Array2<f64>,
}

impl FresnelBlock {
    pub fn f(&self, n: usize, b: usize) -> Complex64 {
        Complex64::new(self.f_re[[n, b]], self.f_im[[n, b]])
    }

    pub fn g(&self, n: usize, b: usize) -> Complex64 {
        Complex64::new(self.g_re[[n, b]], self.g_im[[n, b]])
    }
}

/// Mode profiles tabulated on one quadrature grid in `s = z / l_g`, sized
/// for the fastest chirp among the fall times it will serve. The table is
/// dimensionless, so one engine serves every `g` whose contexts stay within
/// its chirp bound.
pub struct FresnelEngine {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `n_max x nodes`, zero beyond each mode's extent.
    profiles: Array2<f64>,
    max_chirp: f64,
}

impl FresnelEngine {
    /// `max_chirp` bounds `2 a l_g^2 |Z'/l_g - s|` (radians per unit `s`)
    /// over every context later passed to [`FresnelEngine::evaluate`].
    pub fn new(basis: &GQSBasis, max_chirp: f64) -> Result<Self> {
        Self::with_panel_phase(basis, max_chirp, PANEL_PHASE)
    }

    pub fn with_panel_phase(basis: &GQSBasis, max_chirp: f64, panel_phase: f64) -> Result<Self> {
        let n_max = basis.n_max;
        let extent = basis.mode_extent(n_max);
        let k = basis.lambdas()[n_max - 1].sqrt() + max_chirp + 1.0;
        let panels = ((extent * k / panel_phase).ceil() as usize).max(1);
        if panels * PANEL_ORDER > MAX_NODES {
            return Err(numeric(
                "freefall",
                format!(
                    "oscillation unresolved: {} nodes needed (chirp {max_chirp:.3e}, {n_max} modes)",
                    panels * PANEL_ORDER
                ),
            ));
        }
        let rule = CompositeRule::new(0.0, extent, panels, PANEL_ORDER);
        let extents: Vec<f64> = (1..=n_max).map(|n| basis.mode_extent(n)).collect();
        let mut profiles = Array2::<f64>::zeros((n_max, rule.len()));
        let mut column = vec![0.0; n_max];
        for (j, &s) in rule.nodes.iter().enumerate() {
            basis.profiles_at(s, &mut column);
            for n in 0..n_max {
                if s <= extents[n] {
                    profiles[[n, j]] = column[n];
                }
            }
        }
        Ok(Self {
            nodes: rule.nodes,
            weights: rule.weights,
            profiles,
            max_chirp,
        })
    }

    /// Engine sized for the given contexts.
    pub fn for_contexts(basis: &GQSBasis, contexts: &[PropagationContext]) -> Result<Self> {
        let extent = basis.mode_extent(basis.n_max);
        let rate = contexts
            .iter()
            .map(|c| chirp_rate(c, extent))
            .fold(0.0, f64::max);
        Self::new(basis, rate)
    }

    pub fn n_max(&self) -> usize {
        self.profiles.nrows()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_chirp(&self) -> f64 {
        self.max_chirp
    }

    /// Upper end of the tabulated `s` range.
    pub fn extent(&self) -> f64 {
        self.nodes.last().copied().unwrap_or(0.0)
    }

    pub fn evaluate(&self, contexts: &[PropagationContext]) -> Result<FresnelBlock> {
        let n_max = self.n_max();
        let nb = contexts.len();
        let mut block = FresnelBlock {
            contexts: contexts.to_vec(),
            f_re: Array2::zeros((n_max, nb)),
            f_im: Array2::zeros((n_max, nb)),
            g_re: Array2::zeros((n_max, nb)),
            g_im: Array2::zeros((n_max, nb)),
        };
        let extent = self.extent();
        for ctx in contexts {
            let rate = chirp_rate(ctx, extent);
            if rate > self.max_chirp * (1.0 + 1e-9) {
                return Err(numeric(
                    "freefall",
                    format!(
                        "oscillation unresolved: chirp {rate:.4e} at tau = {} exceeds the table's {:.4e}",
                        ctx.tau, self.max_chirp
                    ),
                ));
            }
        }
        for (chunk_index, chunk) in contexts.chunks(TAU_BATCH).enumerate() {
            let b0 = chunk_index * TAU_BATCH;
            let w = chunk.len();
            let mut e = Array2::<f64>::zeros((self.len(), 4 * w));
            for (b, ctx) in chunk.iter().enumerate() {
                let l = ctx.l_g;
                let sqrt_l = l.sqrt();
                let a_l2 = ctx.mass * l * l / (2.0 * ctx.hbar * ctx.tau);
                let sp = ctx.z_prime / l;
                let global = Complex64::from_polar(sqrt_l, a_l2 * sp * sp);
                for (j, (&s, &wt)) in self.nodes.iter().zip(&self.weights).enumerate() {
                    let d = sp - s;
                    let c = global * Complex64::from_polar(wt, a_l2 * s * (s - 2.0 * sp));
                    let v = l * d / ctx.tau - ctx.g * ctx.tau;
                    e[[j, b]] = c.re;
                    e[[j, w + b]] = c.im;
                    e[[j, 2 * w + b]] = c.re * v;
                    e[[j, 3 * w + b]] = c.im * v;
                }
            }
            let out = self.profiles.dot(&e);
            block
                .f_re
                .slice_mut(s![.., b0..b0 + w])
                .assign(&out.slice(s![.., 0..w]));
            block
                .f_im
                .slice_mut(s![.., b0..b0 + w])
                .assign(&out.slice(s![.., w..2 * w]));
            block
                .g_re
                .slice_mut(s![.., b0..b0 + w])
                .assign(&out.slice(s![.., 2 * w..3 * w]));
            block
                .g_im
                .slice_mut(s![.., b0..b0 + w])
                .assign(&out.slice(s![.., 3 * w..4 * w]));
        }
        Ok(block)
    }
}

/// Largest chirp wave number `2 a l^2 |Z'/l - s|` over `s in [0, extent]`.
pub fn chirp_rate(ctx: &PropagationContext, extent: f64) -> f64 {
    let l = ctx.l_g;
    let a_l2 = ctx.mass * l * l / (2.0 * ctx.hbar * ctx.tau);
    let sp = ctx.z_prime / l;
    2.0 * a_l2 * sp.abs().max((sp - extent).abs())
}

/// Detector amplitude and velocity term for phased mode amplitudes `a_n`
/// (the state at the end of the mirror), at the context's altitude.
pub fn detector_wavefunction(
    a: &[Complex64],
    ctx: &PropagationContext,
    engine: &FresnelEngine,
) -> Result<(Complex64, Complex64)> {
    let block = engine.evaluate(std::slice::from_ref(ctx))?;
    let (f, g) = contract(a, &block, 0);
    let pref = ctx.kernel_prefactor() * Complex64::from_polar(1.0, -ctx.phi);
    Ok((pref * f, pref * g))
}

fn contract(a: &[Complex64], block: &FresnelBlock, b: usize) -> (Complex64, Complex64) {
    let mut f = Complex64::new(0.0, 0.0);
    let mut g = Complex64::new(0.0, 0.0);
    for (n, an) in a.iter().enumerate() {
        f += an * block.f(n, b);
        g += an * block.g(n, b);
    }
    (f, g)
}

/// Downward probability current `-Re(psi* (hbar / i m) d psi / dZ)` of a pure state.
pub fn pure_state_current(
    a: &[Complex64],
    ctx: &PropagationContext,
    engine: &FresnelEngine,
) -> Result<f64> {
    let (psi, grad) = detector_wavefunction(a, ctx, engine)?;
    Ok(-(psi.conj() * grad).re)
}

fn phased(c: &[Complex64], lambdas: &[f64], t_over_tg: f64) -> Vec<Complex64> {
    c.iter()
        .zip(lambdas)
        .map(|(c, &l)| c * Complex64::from_polar(1.0, -l * t_over_tg))
        .collect()
}

/// Fresnel integrals cached per fall time, for point evaluations sharing `tau`.
#[derive(Default)]
pub struct FresnelCache {
    map: RwLock<HashMap<u64, Arc<FresnelBlock>>>,
}

impl FresnelCache {
    pub fn get_or_insert(
        &self,
        ctx: &PropagationContext,
        engine: &FresnelEngine,
    ) -> Result<Arc<FresnelBlock>> {
        let key = ctx.tau.to_bits();
        if let Some(b) = self.map.read().get(&key) {
            return Ok(Arc::clone(b));
        }
        let block = Arc::new(engine.evaluate(std::slice::from_ref(ctx))?);
        self.map.write().insert(key, Arc::clone(&block));
        Ok(block)
    }

    pub fn insert_block(&self, block: &FresnelBlock) {
        let mut map = self.map.write();
        for (b, ctx) in block.contexts.iter().enumerate() {
            let one = FresnelBlock {
                contexts: vec![*ctx],
                f_re: block.f_re.slice(s![.., b..b + 1]).to_owned(),
                f_im: block.f_im.slice(s![.., b..b + 1]).to_owned(),
                g_re: block.g_re.slice(s![.., b..b + 1]).to_owned(),
                g_im: block.g_im.slice(s![.., b..b + 1]).to_owned(),
            };
            map.insert(ctx.tau.to_bits(), Arc::new(one));
        }
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything needed to evaluate the recoil-averaged annihilation current
/// at one value of `g`.
pub struct CurrentModel {
    pub basis: GQSBasis,
    pub geometry: Geometry,
    pub delta_p: f64,
    pub prefactor: Prefactor,
    pub mixture: MixtureAmplitudes,
    pub engine: Arc<FresnelEngine>,
    pub cache: FresnelCache,
}

/// Extent of the detection window in the native coordinates
/// `t` (time above the mirror) and `tau` (fall time).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t: (f64, f64),
    pub tau: (f64, f64),
}

impl TimeWindow {
    /// Window containing the transmitted atoms up to a mass `tail` left
    /// outside in `t`. The `t` range follows from the horizontal speed
    /// marginal of the transmitted rings; the `tau` range is bounded by the
    /// vertical speed of the top retained state plus a margin.
    pub fn covering(
        mixture: &MixtureAmplitudes,
        basis: &GQSBasis,
        geometry: &Geometry,
        delta_p: f64,
        tail: f64,
    ) -> Result<Self> {
        let m = basis.scales.mass;
        let (mut p_lo, mut p_hi) = (f64::INFINITY, 0.0f64);
        for r in &mixture.rings {
            p_lo = p_lo.min(r.q_perp - 7.0 * delta_p);
            p_hi = p_hi.max(r.q_perp + 7.0 * delta_p);
        }
        if !(p_hi > 0.0) {
            return Err(domain("freefall", "no transmitted recoil ring"));
        }
        let p_lo = p_lo.max(p_hi / 100.0);
        // Marginal in t: sum_i f_i (m^2 d^2 / t^3) folded_i(m d / t), on a
        // grid uniform in horizontal momentum.
        let ps = linspace(p_lo, p_hi, 8001);
        let fractions: Vec<f64> = mixture.amplitudes.iter().map(|a| a.norm_sqr()).collect();
        let dens: Vec<f64> = ps
            .iter()
            .map(|&p| {
                mixture
                    .rings
                    .iter()
                    .zip(&fractions)
                    .map(|(r, f)| f * p * r.folded_density(p, delta_p))
                    .sum()
            })
            .collect();
        let total: f64 = dens.iter().sum();
        let cut = 0.5 * tail * total;
        let mut lo = 0;
        let mut acc = 0.0;
        while lo + 1 < ps.len() && acc + dens[lo] <= cut {
            acc += dens[lo];
            lo += 1;
        }
        let mut hi = ps.len() - 1;
        acc = 0.0;
        while hi > lo + 1 && acc + dens[hi] <= cut {
            acc += dens[hi];
            hi -= 1;
        }
        let (p0, p1) = (ps[lo.saturating_sub(1)], ps[(hi + 1).min(ps.len() - 1)]);
        let t = (m * geometry.d / p1, m * geometry.d / p0);
        let sc = &basis.scales;
        let v_top = (2.0 * sc.g * sc.l_g * basis.lambdas()[basis.n_max - 1]).sqrt();
        let v = 1.15 * v_top + 6.0 * sc.v_g;
        let g = sc.g;
        let h = geometry.height;
        let tau_lo = (-v + (v * v + 2.0 * g * h).sqrt()) / g;
        let tau_hi = (v + (v * v + 2.0 * g * (h + basis.z_max)).sqrt()) / g;
        Ok(Self {
            t,
            tau: (tau_lo, tau_hi),
        })
    }

    /// Smallest window, aligned to the grid of `map`, outside of which each
    /// side of each marginal carries at most `tail / 4` of the map weight.
    pub fn bulk(map: &CurrentMap, tail: f64) -> Result<Self> {
        let (nt, ntau) = map.density.dim();
        if nt < 2 || ntau < 2 {
            return Err(domain("freefall", "map too small to crop"));
        }
        let mut mt = vec![0.0; nt];
        let mut mtau = vec![0.0; ntau];
        for ((a, b), &v) in map.density.indexed_iter() {
            mt[a] += v.max(0.0);
            mtau[b] += v.max(0.0);
        }
        let total: f64 = mt.iter().sum();
        if !(total > 0.0) {
            return Err(domain("freefall", "map carries no weight"));
        }
        let cut = 0.25 * tail * total;
        let span = |m: &[f64]| {
            let (mut lo, mut acc) = (0, 0.0);
            while lo + 1 < m.len() && acc + m[lo] <= cut {
                acc += m[lo];
                lo += 1;
            }
            let (mut hi, mut acc) = (m.len() - 1, 0.0);
            while hi > lo + 1 && acc + m[hi] <= cut {
                acc += m[hi];
                hi -= 1;
            }
            (lo.saturating_sub(1), (hi + 1).min(m.len() - 1))
        };
        let (a0, a1) = span(&mt);
        let (b0, b1) = span(&mtau);
        Ok(Self {
            t: (map.t[a0], map.t[a1]),
            tau: (map.tau[b0], map.tau[b1]),
        })
    }

    /// Grid with steps no larger than `dt` and `dtau`.
    pub fn grid(&self, dt: f64, dtau: f64) -> (Vec<f64>, Vec<f64>) {
        let count = |(a, b): (f64, f64), h: f64| (((b - a) / h).ceil() as usize).max(1) + 1;
        (
            linspace(self.t.0, self.t.1, count(self.t, dt)),
            linspace(self.tau.0, self.tau.1, count(self.tau, dtau)),
        )
    }
}

impl CurrentModel {
    /// Builds the model; rings carrying less than `prune` of the largest
    /// transmitted weight are dropped. The Fresnel table is sized for
    /// `window`.
    pub fn new(
        basis: GQSBasis,
        geometry: Geometry,
        delta_p: f64,
        prefactor: Prefactor,
        mixture: &MixtureAmplitudes,
        window: &TimeWindow,
        prune: f64,
    ) -> Result<Self> {
        let engine = Arc::new(engine_for_window(&basis, &geometry, window, 1.0)?);
        Self::with_engine(basis, geometry, delta_p, prefactor, mixture, engine, prune)
    }

    /// Builds the model around an existing Fresnel table, typically one
    /// shared between neighbouring values of `g`.
    pub fn with_engine(
        basis: GQSBasis,
        geometry: Geometry,
        delta_p: f64,
        prefactor: Prefactor,
        mixture: &MixtureAmplitudes,
        engine: Arc<FresnelEngine>,
        prune: f64,
    ) -> Result<Self> {
        if engine.n_max() != basis.n_max {
            return Err(domain(
                "freefall",
                format!(
                    "Fresnel table holds {} states, basis has {}",
                    engine.n_max(),
                    basis.n_max
                ),
            ));
        }
        let (mixture, _) = mixture.pruned(prune);
        Ok(Self {
            basis,
            geometry,
            delta_p,
            prefactor,
            mixture,
            engine,
            cache: FresnelCache::default(),
        })
    }

    pub fn context(&self, tau: f64) -> Result<PropagationContext> {
        PropagationContext::new(tau, self.geometry.height, &self.basis.scales)
    }

    /// Pure-state currents `j_i(t, tau)` of every retained ring.
    fn ring_currents(&self, block: &FresnelBlock, b: usize, t: f64) -> Vec<f64> {
        let ctx = &block.contexts[b];
        let norm = ctx.mass / (2.0 * PI * ctx.hbar * ctx.tau);
        let w = t / self.basis.scales.t_g;
        self.mixture
            .amplitudes
            .iter()
            .map(|amp| {
                let a = phased(&amp.c, self.basis.lambdas(), w);
                let (f, g) = contract(&a, block, b);
                -norm * (f.conj() * g).re
            })
            .collect()
    }

    /// `J(X, Y, T)` in atoms per m^2 per s per incident atom. Points that
    /// cannot have crossed the mirror give zero.
    pub fn annihilation_current(&self, x: f64, y: f64, t_total: f64) -> Result<f64> {
        let Some((t, tau)) = self.split(x, y, t_total) else {
            return Ok(0.0);
        };
        let ctx = self.context(tau)?;
        let block = self.cache.get_or_insert(&ctx, &self.engine)?;
        Ok(self.assemble(x, y, t_total, t, &block, 0))
    }

    fn split(&self, x: f64, y: f64, t_total: f64) -> Option<(f64, f64)> {
        let r = x.hypot(y);
        if !(r > 0.0 && t_total > 0.0) {
            return None;
        }
        let t = t_total * self.geometry.d / r;
        let tau = t_total - t;
        (tau > 0.0).then_some((t, tau))
    }

    fn assemble(
        &self,
        x: f64,
        y: f64,
        t_total: f64,
        t: f64,
        block: &FresnelBlock,
        b: usize,
    ) -> f64 {
        let m = self.basis.scales.mass;
        let p = [m * x / t_total, m * y / t_total];
        let tau = block.contexts[b].tau;
        let js = self.ring_currents(block, b, t);
        let sum: f64 = self
            .mixture
            .rings
            .iter()
            .zip(js)
            .map(|(r, j)| r.horizontal_density(p, self.delta_p) * j)
            .sum();
        self.prefactor.factor(m, t_total, tau) * sum
    }

    /// Current at many points, sharing one batched Fresnel evaluation.
    pub fn annihilation_current_points(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        let mut ctxs = Vec::new();
        let mut index = Vec::with_capacity(points.len());
        for p in points {
            match self.split(p[0], p[1], p[2]) {
                Some((t, tau)) => {
                    index.push(Some((t, ctxs.len())));
                    ctxs.push(self.context(tau)?);
                }
                None => index.push(None),
            }
        }
        let block = self.engine.evaluate(&ctxs)?;
        Ok(points
            .par_iter()
            .zip(index.par_iter())
            .map(|(p, ix)| match ix {
                Some((t, b)) => self.assemble(p[0], p[1], p[2], *t, &block, *b),
                None => 0.0,
            })
            .collect())
    }

    /// Folded density on a native `(t, tau)` grid.
    pub fn current_map(&self, t: &[f64], tau: &[f64]) -> Result<CurrentMap> {
        let (nt, ntau) = (t.len(), tau.len());
        let mut density = Array2::<f64>::zeros((nt, ntau));
        let mut b0 = 0;
        for chunk in tau.chunks(MAP_TAU_CHUNK) {
            let part = self.map_columns(t, chunk)?;
            density
                .slice_mut(s![.., b0..b0 + chunk.len()])
                .assign(&part);
            b0 += chunk.len();
        }
        if density.iter().any(|v| !v.is_finite()) {
            return Err(numeric(
                "freefall",
                "current map contains non-finite values",
            ));
        }
        Ok(CurrentMap {
            t: t.to_vec(),
            tau: tau.to_vec(),
            density,
            g: self.basis.scales.g,
            d: self.geometry.d,
            fraction: self.mixture.fraction(),
            config_hash: String::new(),
        })
    }

    fn map_columns(&self, t: &[f64], tau: &[f64]) -> Result<Array2<f64>> {
        let ctxs = tau
            .iter()
            .map(|&x| self.context(x))
            .collect::<Result<Vec<_>>>()?;
        let block = self.engine.evaluate(&ctxs)?;
        let n = self.basis.n_max;
        let (nt, ntau) = (t.len(), tau.len());
        // Right factor [[Fr Fi Gr Gi], [-Fi Fr -Gi Gr]] for [Ar | Ai].
        let mut right = Array2::<f64>::zeros((2 * n, 4 * ntau));
        right.slice_mut(s![0..n, 0..ntau]).assign(&block.f_re);
        right
            .slice_mut(s![0..n, ntau..2 * ntau])
            .assign(&block.f_im);
        right
            .slice_mut(s![0..n, 2 * ntau..3 * ntau])
            .assign(&block.g_re);
        right
            .slice_mut(s![0..n, 3 * ntau..4 * ntau])
            .assign(&block.g_im);
        right.slice_mut(s![n.., 0..ntau]).assign(&(-&block.f_im));
        right.slice_mut(s![n.., ntau..2 * ntau]).assign(&block.f_re);
        right
            .slice_mut(s![n.., 2 * ntau..3 * ntau])
            .assign(&(-&block.g_im));
        right
            .slice_mut(s![n.., 3 * ntau..4 * ntau])
            .assign(&block.g_re);

        let sc = &self.basis.scales;
        let m = sc.mass;
        let d = self.geometry.d;
        let flux: Vec<f64> = tau.iter().map(|&x| m / (2.0 * PI * sc.hbar * x)).collect();
        let lambdas = self.basis.lambdas();

        // Rows are split into fixed blocks, each summing the rings in order,
        // so the result does not depend on the thread count.
        let block_rows = |rows: &[f64]| {
            let nr = rows.len();
            let mut acc = Array2::<f64>::zeros((nr, ntau));
            let mut left = Array2::<f64>::zeros((nr, 2 * n));
            let mut hw = vec![0.0; nr];
            for (ring, amp) in self.mixture.rings.iter().zip(&self.mixture.amplitudes) {
                for (a, &ta) in rows.iter().enumerate() {
                    hw[a] =
                        m * m * d * d / ta.powi(3) * ring.folded_density(m * d / ta, self.delta_p);
                    let ph = phased(&amp.c, lambdas, ta / sc.t_g);
                    for (k, c) in ph.iter().enumerate() {
                        left[[a, k]] = c.re;
                        left[[a, n + k]] = c.im;
                    }
                }
                if hw.iter().all(|&h| h == 0.0) {
                    continue;
                }
                let out = left.dot(&right);
                for a in 0..nr {
                    if hw[a] == 0.0 {
                        continue;
                    }
                    for b in 0..ntau {
                        let j = -flux[b]
                            * (out[[a, b]] * out[[a, 2 * ntau + b]]
                                + out[[a, ntau + b]] * out[[a, 3 * ntau + b]]);
                        acc[[a, b]] += hw[a] * j;
                    }
                }
            }
            acc
        };
        let parts: Vec<Array2<f64>> = t.par_chunks(MAP_ROW_BLOCK).map(block_rows).collect();
        let mut density = Array2::<f64>::zeros((nt, ntau));
        let mut a0 = 0;
        for part in parts {
            let r = part.nrows();
            density.slice_mut(s![a0..a0 + r, ..]).assign(&part);
            a0 += r;
        }
        if self.prefactor == Prefactor::FallTime {
            for a in 0..nt {
                for b in 0..ntau {
                    let tt = t[a] + tau[b];
                    density[[a, b]] *= tt * tt / (tau[b] * tau[b]);
                }
            }
        }
        Ok(density)
    }
}

/// Fresnel table able to serve every fall time in `window`, with the chirp
/// bound inflated by `headroom` so that nearby `g` can reuse it.
pub fn engine_for_window(
    basis: &GQSBasis,
    geometry: &Geometry,
    window: &TimeWindow,
    headroom: f64,
) -> Result<FresnelEngine> {
    let extent = basis.mode_extent(basis.n_max);
    let mut rate = 0.0f64;
    for tau in [window.tau.0, window.tau.1] {
        let ctx = PropagationContext::new(tau, geometry.height, &basis.scales)?;
        rate = rate.max(chirp_rate(&ctx, extent));
    }
    FresnelEngine::new(basis, rate * headroom)
}

/// Uniformly spaced grid of `n` points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Folded annihilation density on a `(t, tau)` grid.
///
/// `density[[a, b]]` is the probability per unit `t` and `tau` per incident
/// atom. It relates to the folded current in detector coordinates by
/// `J_fold(R, T) = density(t, tau) t^2 / (d T)` with `t = T d / R`,
/// `tau = T - t`; that Jacobian does not depend on `g`.
#[derive(Clone, Debug)]
pub struct CurrentMap {
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
    pub density: Array2<f64>,
    pub g: f64,
    /// Mirror travel distance (m).
    pub d: f64,
    /// Transmitted fraction of the rings that enter the map.
    pub fraction: f64,
    pub config_hash: String,
}

impl CurrentMap {
    /// Integral of the bilinear interpolant over the grid.
    pub fn weight(&self) -> f64 {
        trapezoid_2d(&self.t, &self.tau, &self.density)
    }

    /// Native coordinates of a detection at `(R, T)`.
    pub fn native(&self, r: f64, t_total: f64) -> (f64, f64) {
        let t = t_total * self.d / r;
        (t, t_total - t)
    }

    /// Detector coordinates `(R, T)` of native `(t, tau)`.
    pub fn detector(&self, t: f64, tau: f64) -> (f64, f64) {
        let tt = t + tau;
        (tt * self.d / t, tt)
    }

    /// `|d(R, T) / d(t, tau)| = d T / t^2`.
    pub fn jacobian(&self, t: f64, tau: f64) -> f64 {
        self.d * (t + tau) / (t * t)
    }

    /// Bilinear interpolation in `(t, tau)`; `None` outside the grid.
    pub fn interpolate(&self, t: f64, tau: f64) -> Option<f64> {
        let (i, fx) = locate(&self.t, t)?;
        let (j, fy) = locate(&self.tau, tau)?;
        let d = &self.density;
        Some(
            (1.0 - fx) * (1.0 - fy) * d[[i, j]]
                + fx * (1.0 - fy) * d[[i + 1, j]]
                + (1.0 - fx) * fy * d[[i, j + 1]]
                + fx * fy * d[[i + 1, j + 1]],
        )
    }

    /// Folded current `J_fold(R, T) = int J R dPhi`.
    pub fn j_fold(&self, r: f64, t_total: f64) -> Option<f64> {
        let (t, tau) = self.native(r, t_total);
        Some(self.interpolate(t, tau)? / self.jacobian(t, tau))
    }

    pub fn max(&self) -> f64 {
        self.density
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.density.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Native coordinates of the largest grid value.
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for ((a, b), &v) in self.density.indexed_iter() {
            if v > best.2 {
                best = (a, b, v);
            }
        }
        (self.t[best.0], self.tau[best.1])
    }
}

/// Cell index and fractional offset of `x` in the sorted grid `xs`.
pub(crate) fn locate(xs: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = xs.len();
    if n < 2 || !(x >= xs[0] && x <= xs[n - 1]) {
        return None;
    }
    let i = match xs.partition_point(|&v| v <= x) {
        0 => 0,
        k if k >= n => n - 2,
        k => k - 1,
    };
    Some((i, (x - xs[i]) / (xs[i + 1] - xs[i])))
}

pub(crate) fn trapezoid_2d(x: &[f64], y: &[f64], v: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for a in 0..x.len().saturating_sub(1) {
        for b in 0..y.len().saturating_sub(1) {
            let area = (x[a + 1] - x[a]) * (y[b + 1] - y[b]);
            total += 0.25 * area * (v[[a, b]] + v[[a + 1, b]] + v[[a, b + 1]] + v[[a + 1, b + 1]]);
        }
    }
    total
}
