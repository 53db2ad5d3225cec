//! One experimental configuration, from the trap to the detector grid.
//!
//! [`Experiment`] owns everything that does not change with the
//! acceleration under test: the Airy zero table, the source, the geometry,
//! the Fresnel table and the `(t, tau)` grid on which folded densities are
//! tabulated. [`Experiment::map_at`] then produces the density at any `g`
//! close to the reference value on that common grid.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::airy::AiryZeroTable;
use crate::error::{domain, Result};
use crate::freefall::{
    chirp_rate, engine_for_window, linspace, CurrentMap, CurrentModel, FresnelEngine, Prefactor,
    PropagationContext, TimeWindow,
};
use crate::gqs::{mixture_amplitudes, GQSBasis, MixtureAmplitudes};
use crate::mirror::Geometry;
use crate::physcore::{PhysicalConstants, ScaleSet, G_REF};
use crate::source::{recoil_quadrature, PhotodetachConfig, RecoilOrder, RecoilSet, TrapConfig};

/// Physical parameters of a run, in SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Acceleration the events are generated with (m/s^2).
    pub g0: f64,
    /// Trap frequency (Hz).
    pub f: f64,
    /// Trap center above the mirror (m).
    pub h: f64,
    /// Photo-detachment excess energy (J).
    pub delta_e: f64,
    pub pol_axis: [f64; 3],
    /// When set, the photo-detachment recoil is replaced by a deterministic
    /// horizontal kick of this speed (m/s) along `x`.
    pub kick: Option<f64>,
    /// Travel distance above the mirror (m).
    pub d: f64,
    /// Fall height from the mirror to the detector (m).
    pub height: f64,
    pub n_max: usize,
    /// Absorber height (m); defaults to a few lengths above the top state.
    pub z_max: Option<f64>,
    /// Incident atoms per draw.
    pub n_atoms: u64,
    pub numerics: Numerics,
}

/// Resolution knobs that do not change the physics when converged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    pub recoil: RecoilOrder,
    /// Rings below this fraction of the largest transmitted weight are dropped.
    pub prune: f64,
    /// Probability mass allowed outside the tabulation window.
    pub tail: f64,
    /// Grid steps in time above the mirror and fall time (s).
    pub dt: f64,
    pub dtau: f64,
    /// Points per axis of the coarse map used to crop the window.
    pub coarse: usize,
    /// Relative padding added around the cropped window.
    pub pad: f64,
    pub prefactor: Prefactor,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            recoil: RecoilOrder::default(),
            prune: 1e-6,
            tail: 1e-6,
            dt: 20e-6,
            dtau: 20e-6,
            coarse: 200,
            pad: 0.02,
            prefactor: Prefactor::TotalTime,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            g0: G_REF,
            f: 20e3,
            h: 10e-6,
            delta_e: 10e-6 * crate::physcore::JOULE_PER_EV,
            pol_axis: [0.0, 1.0, 0.0],
            kick: None,
            d: 0.05,
            height: 0.30,
            n_max: 1000,
            z_max: None,
            n_atoms: 1000,
            numerics: Numerics::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reduced configuration with the 50 lowest states.
    pub fn desk() -> Self {
        Self {
            n_max: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g0", self.g0),
            ("f", self.f),
            ("h", self.h),
            ("d", self.d),
            ("height", self.height),
            ("dt", self.numerics.dt),
            ("dtau", self.numerics.dtau),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(domain("experiment", format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.delta_e >= 0.0) {
            return Err(domain("experiment", "delta_e must be >= 0"));
        }
        if let Some(v) = self.kick {
            if !(v.is_finite() && v > 0.0) {
                return Err(domain("experiment", format!("kick must be > 0, got {v}")));
            }
        }
        if self.n_max == 0 {
            return Err(domain("experiment", "n_max must be >= 1"));
        }
        if !(self.numerics.tail > 0.0 && self.numerics.tail < 1e-2) {
            return Err(domain("experiment", "tail must lie in (0, 1e-2)"));
        }
        if self.numerics.coarse < 8 {
            return Err(domain(
                "experiment",
                "coarse grid needs at least 8 points per axis",
            ));
        }
        Ok(())
    }
}

/// Built configuration, shared read-only by every evaluation of `g`.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub constants: PhysicalConstants,
    pub trap: TrapConfig,
    pub recoil: RecoilSet,
    pub geometry: Geometry,
    basis: GQSBasis,
    mixture: MixtureAmplitudes,
    window: TimeWindow,
    engine: Arc<FresnelEngine>,
    grid: OnceLock<(Vec<f64>, Vec<f64>)>,
}

/// Headroom on the chirp bound of the shared Fresnel table, enough for the
/// accelerations explored around `g0`.
const ENGINE_HEADROOM: f64 = 1.05;

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let constants = PhysicalConstants::default();
        let trap = TrapConfig::new(&constants, config.f, config.h)?;
        let recoil = match config.kick {
            Some(v) => RecoilSet::kick([constants.m_atom * v, 0.0, 0.0]),
            None => {
                let pd = PhotodetachConfig::new(&constants, config.delta_e, config.pol_axis)?;
                let quad = recoil_quadrature(pd.pol_axis, config.numerics.recoil)?;
                RecoilSet::dipole(&pd, &quad)
            }
        };
        let geometry = Geometry::new(config.d, config.height)?;
        let table = Arc::new(AiryZeroTable::new(config.n_max)?);
        let scales = ScaleSet::new(&constants, config.g0)?;
        let basis = GQSBasis::new(table, scales, config.n_max, config.z_max)?;
        let mixture = mixture_amplitudes(&trap, &recoil, &basis)?;
        let window = TimeWindow::covering(
            &mixture,
            &basis,
            &geometry,
            trap.delta_p,
            config.numerics.tail,
        )?;
        let engine = Arc::new(engine_for_window(
            &basis,
            &geometry,
            &window,
            ENGINE_HEADROOM,
        )?);
        Ok(Self {
            config,
            constants,
            trap,
            recoil,
            geometry,
            basis,
            mixture,
            window,
            engine,
            grid: OnceLock::new(),
        })
    }

    pub fn g0(&self) -> f64 {
        self.config.g0
    }

    /// Reference basis at `g0`.
    pub fn basis(&self) -> &GQSBasis {
        &self.basis
    }

    /// Mixture amplitudes at `g0`.
    pub fn mixture(&self) -> &MixtureAmplitudes {
        &self.mixture
    }

    /// Transmitted fraction at `g0`.
    pub fn fraction(&self) -> f64 {
        self.mixture.fraction()
    }

    /// Window covering the transmitted atoms at `g0`.
    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn engine(&self) -> &Arc<FresnelEngine> {
        &self.engine
    }

    pub fn basis_at(&self, g: f64) -> Result<GQSBasis> {
        Ok(self.basis.with_scales(ScaleSet::new(&self.constants, g)?))
    }

    pub fn mixture_at(&self, g: f64) -> Result<MixtureAmplitudes> {
        if g == self.config.g0 {
            return Ok(self.mixture.clone());
        }
        mixture_amplitudes(&self.trap, &self.recoil, &self.basis_at(g)?)
    }

    /// Current model at `g`. The shared Fresnel table is reused when its
    /// chirp bound covers `g`; otherwise a table is built for this `g` alone.
    pub fn model_at(&self, g: f64) -> Result<CurrentModel> {
        let basis = self.basis_at(g)?;
        let mixture = self.mixture_at(g)?;
        let engine = if self.engine_covers(&basis)? {
            Arc::clone(&self.engine)
        } else {
            log::debug!("shared Fresnel table too narrow at g = {g}; building a dedicated one");
            Arc::new(engine_for_window(
                &basis,
                &self.geometry,
                &self.window,
                ENGINE_HEADROOM,
            )?)
        };
        CurrentModel::with_engine(
            basis,
            self.geometry,
            self.trap.delta_p,
            self.config.numerics.prefactor,
            &mixture,
            engine,
            self.config.numerics.prune,
        )
    }

    fn engine_covers(&self, basis: &GQSBasis) -> Result<bool> {
        let extent = basis.mode_extent(basis.n_max);
        for tau in [self.window.tau.0, self.window.tau.1] {
            let ctx = PropagationContext::new(tau, self.geometry.height, &basis.scales)?;
            if chirp_rate(&ctx, extent) > self.engine.max_chirp() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The common `(t, tau)` grid: the covering window cropped to the bulk
    /// of a coarse map at `g0`, padded, and sampled with the configured steps.
    pub fn grid(&self) -> Result<&(Vec<f64>, Vec<f64>)> {
        if let Some(g) = self.grid.get() {
            return Ok(g);
        }
        let nc = self.config.numerics.coarse;
        let w = self.window;
        let model = self.model_at(self.config.g0)?;
        let coarse =
            model.current_map(&linspace(w.t.0, w.t.1, nc), &linspace(w.tau.0, w.tau.1, nc))?;
        let bulk = TimeWindow::bulk(&coarse, self.config.numerics.tail)?;
        let pad = self.config.numerics.pad;
        let widen = |(a, b): (f64, f64), (lo, hi): (f64, f64)| {
            let m = pad * (b - a);
            ((a - m).max(lo), (b + m).min(hi))
        };
        let padded = TimeWindow {
            t: widen(bulk.t, w.t),
            tau: widen(bulk.tau, w.tau),
        };
        let grid = padded.grid(self.config.numerics.dt, self.config.numerics.dtau);
        Ok(self.grid.get_or_init(|| grid))
    }

    /// Folded density at acceleration `g` on the common grid.
    pub fn map_at(&self, g: f64) -> Result<CurrentMap> {
        let (t, tau) = self.grid()?;
        self.model_at(g)?.current_map(t, tau)
    }
}
