//! Acceptance suite: one line per criterion.
//!
//! Criteria 1 to 7 and 10 always run. The full-scale campaigns of
//! criteria 8 and 9 run only with `GQSFALL_LONG=1`; otherwise their cheap
//! parts run and the line says what was skipped. Pass criterion numbers as
//! arguments to run a subset.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;

use gqs_freefall::airy::AiryZeroTable;
use gqs_freefall::experiment::{Experiment, ExperimentConfig};
use gqs_freefall::freefall::{
    linspace, propagate_profile, propagator_kernel, pure_state_current, FresnelEngine,
    PropagationContext,
};
use gqs_freefall::gqs::{transmitted_fraction, GQSBasis};
use gqs_freefall::inference::{
    fisher_information, run_campaign, AzimuthSampler, CampaignResult, CampaignSpec, FisherResult,
    FisherSpec, LikelihoodKind, LikelihoodOptions, MapProvider, ScanSpec,
};
use gqs_freefall::physcore::{derive_scales, PhysicalConstants, ScaleSet, JOULE_PER_EV};
use gqs_freefall::quadrature::CompositeRule;
use gqs_freefall::source::{
    build_photodetach, build_trap, recoil_quadrature, RecoilOrder, RecoilSet,
};
use gqsfall_cli::config::RunConfig;
use gqsfall_cli::execute;

enum Verdict {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail,
        }
    }
}

type Criterion = fn() -> Outcome;

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, Criterion); 10] = [
        (1, "scales", scales),
        (2, "source numbers", source_numbers),
        (3, "Airy layer", airy_layer),
        (4, "transmission", transmission),
        (5, "peak location", peak_location),
        (6, "propagator properties", propagator),
        (7, "desk statistics", desk_statistics),
        (8, "full-scale dispersion", full_scale),
        (9, "no-recoil cross-check", no_recoil),
        (10, "determinism", determinism),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::check(false, format!("panicked: {msg}"))
        });
        let tag = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::NotRun => "NOT RUN",
        };
        println!(
            "criterion {n:>2} [{tag}] {name}: {} ({:.1} s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run_command(text: &str, command: &str, out: &Path) -> f64 {
    let mut cfg = RunConfig::parse(text).unwrap();
    cfg.set("run.command", command, 0).unwrap();
    cfg.set("run.out", out.to_str().unwrap(), 0).unwrap();
    let start = Instant::now();
    execute(&cfg).unwrap();
    start.elapsed().as_secs_f64()
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x / target - 1.0).abs() <= rel
}

fn scales() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let secs = run_command("", "scales", dir.path());
    let s = json(&dir.path().join("scales.json"));
    let l_g = s["l_g_m"].as_f64().unwrap();
    let eps = s["eps_g_pev"].as_f64().unwrap();
    Outcome::check(
        within(l_g, 5.87e-6, 5e-3) && within(eps, 0.602, 5e-3) && secs < 1.0,
        format!(
            "l_g = {:.4} um, eps_g = {eps:.4} peV in {secs:.3} s",
            l_g * 1e6
        ),
    )
}

fn source_numbers() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let secs = run_command("", "source-dist", dir.path());
    let s = json(&dir.path().join("source.json"));
    let zeta = s["zeta_m"].as_f64().unwrap();
    let dv = s["delta_v_m_per_s"].as_f64().unwrap();
    let v_r = s["v_r_m_per_s"].as_f64().unwrap();
    Outcome::check(
        within(zeta, 0.5e-6, 0.01)
            && within(dv, 0.063, 0.01)
            && within(v_r, 1.02, 0.01)
            && secs < 1.0,
        format!(
            "zeta = {:.4} um, dv = {:.3} cm/s, v_r = {v_r:.4} m/s in {secs:.3} s",
            zeta * 1e6,
            dv * 100.0
        ),
    )
}

/// `Ai` and `Ai'` by fourth-order Runge-Kutta integration of `y'' = x y`
/// from the origin, independent of the library's evaluation scheme.
struct AiryOracle {
    xs: Vec<f64>,
    ys: Vec<(f64, f64)>,
    h: f64,
}

impl AiryOracle {
    const AI0: f64 = 0.355_028_053_887_817_2;
    const AIP0: f64 = -0.258_819_403_792_806_8;

    fn new(x_min: f64, h: f64) -> Self {
        let steps = (-x_min / h).ceil() as usize;
        let mut xs = Vec::with_capacity(steps + 1);
        let mut ys = Vec::with_capacity(steps + 1);
        let (mut x, mut y) = (0.0, (Self::AI0, Self::AIP0));
        xs.push(x);
        ys.push(y);
        for _ in 0..steps {
            y = Self::step(x, y, -h);
            x -= h;
            xs.push(x);
            ys.push(y);
        }
        Self { xs, ys, h }
    }

    fn step(x: f64, (y, p): (f64, f64), h: f64) -> (f64, f64) {
        let f = |x: f64, y: f64, p: f64| (p, x * y);
        let k1 = f(x, y, p);
        let k2 = f(x + h / 2.0, y + h / 2.0 * k1.0, p + h / 2.0 * k1.1);
        let k3 = f(x + h / 2.0, y + h / 2.0 * k2.0, p + h / 2.0 * k2.1);
        let k4 = f(x + h, y + h * k3.0, p + h * k3.1);
        (
            y + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            p + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        )
    }

    /// `Ai(x)` for `x` between grid nodes `i` and `i + 1`.
    fn at(&self, i: usize, x: f64) -> f64 {
        Self::step(self.xs[i], self.ys[i], x - self.xs[i]).0
    }

    /// Zeros `a_1 > a_2 > ...` by bisection inside each sign change.
    fn zeros(&self, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        for i in 0..self.xs.len() - 1 {
            if out.len() == count {
                break;
            }
            if self.ys[i].0 * self.ys[i + 1].0 > 0.0 {
                continue;
            }
            let (mut hi, mut lo) = (self.xs[i], self.xs[i] - self.h);
            let s_hi = self.ys[i].0.signum();
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if self.at(i, mid).signum() == s_hi {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        out
    }
}

fn airy_layer() -> Outcome {
    let start = Instant::now();
    let table = AiryZeroTable::new(100).unwrap();
    let oracle = AiryOracle::new(-62.0, 2e-5);
    let zeros = oracle.zeros(100);
    let zero_err = table
        .lambdas()
        .iter()
        .zip(&zeros)
        .map(|(l, a)| ((-l - a) / a).abs())
        .fold(0.0, f64::max);

    let sc = derive_scales(9.81).unwrap();
    let modes: Vec<_> = (1..=20).map(|n| table.mode(n).unwrap()).collect();
    let top = (table.lambdas()[19] + 25.0) * sc.l_g;
    let rule = CompositeRule::new(0.0, top, 400, 16);
    let values: Vec<Vec<f64>> = modes
        .iter()
        .map(|m| {
            rule.nodes
                .iter()
                .map(|&z| m.eigenfunction(z, &sc))
                .collect()
        })
        .collect();
    let mut ortho_err = 0.0f64;
    for (m, vm) in values.iter().enumerate() {
        for (n, vn) in values.iter().enumerate() {
            let s: f64 = rule
                .weights
                .iter()
                .zip(vm.iter().zip(vn))
                .map(|(w, (a, b))| w * a * b)
                .sum();
            ortho_err = ortho_err.max((s - if m == n { 1.0 } else { 0.0 }).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        zeros.len() == 100 && zero_err < 1e-9 && ortho_err < 1e-6 && secs < 30.0,
        format!(
            "{} zeros, max error {zero_err:.2e}, max orthonormality error {ortho_err:.2e}",
            zeros.len()
        ),
    )
}

fn basis(n_max: usize) -> GQSBasis {
    GQSBasis::new(
        Arc::new(AiryZeroTable::new(n_max).unwrap()),
        derive_scales(9.81).unwrap(),
        n_max,
        None,
    )
    .unwrap()
}

fn transmission() -> Outcome {
    let start = Instant::now();
    let trap = build_trap(20e3).unwrap();
    let pd = build_photodetach(10e-6 * JOULE_PER_EV, [0.0, 1.0, 0.0]).unwrap();
    let recoil = RecoilSet::dipole(
        &pd,
        &recoil_quadrature(pd.pol_axis, RecoilOrder::default()).unwrap(),
    );
    let f = transmitted_fraction(&trap, &recoil, &basis(1000))
        .unwrap()
        .fraction;
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        (f - 0.26).abs() <= 0.02 && secs < 600.0,
        format!("transmitted fraction {f:.4} in {secs:.1} s"),
    )
}

fn peak_location() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let secs = run_command("", "current-map", dir.path());
    let m = json(&dir.path().join("current_map.json"));
    let y = m["argmax_y_m"].as_f64().unwrap();
    let t = m["argmax_t_s"].as_f64().unwrap();
    Outcome::check(
        (y - 0.302).abs() <= 2e-3 && (t - 0.296).abs() <= 2e-3 && secs < 3600.0,
        format!(
            "arg-max at ({:.2} mm, {:.2} ms) in {secs:.1} s",
            y * 1e3,
            t * 1e3
        ),
    )
}

fn gaussian_oracle(sc: &ScaleSet, s: f64, z0: f64, k: f64, zz: f64, tau: f64) -> Complex64 {
    let ctx = PropagationContext::at_altitude(tau, zz, sc).unwrap();
    let x = ctx.z_prime - z0;
    let a = Complex64::new(1.0 / (4.0 * s * s), 0.0);
    let b = sc.mass / (2.0 * sc.hbar * tau);
    let i = Complex64::i();
    let pref = (2.0 * PI * s * s).powf(-0.25) / (Complex64::new(1.0, 0.0) + i * a / b).sqrt();
    let q = Complex64::new(k - 2.0 * b * x, 0.0);
    let expo = i * b * x * x - q * q / (4.0 * (a - i * b));
    pref * expo.exp() * Complex64::from_polar(1.0, -ctx.phi)
}

fn propagator() -> Outcome {
    let start = Instant::now();

    // Gravity factorization on a deterministic scatter of arguments.
    let mut factor_err = 0.0f64;
    for i in 0..400 {
        let u =
            |k: u32| ((i as f64 + 1.0) * (0.618_033_988_7 + k as f64 * 0.414_213_562_3)).fract();
        let (z, zz, tau, g) = (
            u(0) * 2e-4,
            (u(1) - 0.5) * 6e-4,
            1e-3 + u(2) * 4e-3,
            1.0 + u(3) * 19.0,
        );
        let sc = derive_scales(g).unwrap();
        let free = ScaleSet { g: 0.0, ..sc };
        let ctx = PropagationContext::at_altitude(tau, zz, &sc).unwrap();
        let lhs = propagator_kernel(z, zz, tau, &sc).unwrap();
        let rhs = Complex64::from_polar(1.0, -ctx.phi)
            * propagator_kernel(z, ctx.z_prime, tau, &free).unwrap();
        factor_err = factor_err.max((lhs - rhs).norm() / lhs.norm());
    }

    // Free Gaussian against its closed form.
    let sc = derive_scales(9.81).unwrap();
    let (s, z0, v) = (1e-6, 20e-6, 0.05);
    let k = sc.mass * v / sc.hbar;
    let mut gauss_err = 0.0f64;
    for tau in [5e-3, 0.25] {
        let center = z0 + v * tau - 0.5 * sc.g * tau * tau;
        let beta = sc.hbar * tau / (2.0 * sc.mass * s * s);
        let width = s * (1.0 + beta * beta).sqrt();
        let (mut num, mut den) = (0.0, 0.0);
        for zz in linspace(center - 6.0 * width, center + 6.0 * width, 241) {
            let ctx = PropagationContext::at_altitude(tau, zz, &sc).unwrap();
            let (psi, _) = propagate_profile(
                |z| {
                    let u = z - z0;
                    Complex64::from_polar(
                        (2.0 * PI * s * s).powf(-0.25) * (-u * u / (4.0 * s * s)).exp(),
                        k * u,
                    )
                },
                z0 - 12.0 * s,
                z0 + 12.0 * s,
                k + 6.0 / s,
                &ctx,
            )
            .unwrap();
            let want = gaussian_oracle(&sc, s, z0, k, zz, tau);
            num += (psi - want).norm_sqr();
            den += want.norm_sqr();
        }
        gauss_err = gauss_err.max((num / den).sqrt());
    }

    // Flux of a dropped ground state through the detector plane.
    let b = basis(1);
    let h = 0.3;
    let vmax = 10.0 * sc.v_g;
    let lo = (-vmax + (vmax * vmax + 2.0 * sc.g * h).sqrt()) / sc.g;
    let hi = (vmax + (vmax * vmax + 2.0 * sc.g * (h + b.z_max)).sqrt()) / sc.g;
    let rule = CompositeRule::new(lo, hi, 200, 8);
    let ctxs: Vec<_> = rule
        .nodes
        .iter()
        .map(|&t| PropagationContext::new(t, h, &sc).unwrap())
        .collect();
    let engine = FresnelEngine::for_contexts(&b, &ctxs).unwrap();
    let a = [Complex64::new(1.0, 0.0)];
    let flux: f64 = ctxs
        .iter()
        .zip(&rule.weights)
        .map(|(c, w)| w * pure_state_current(&a, c, &engine).unwrap())
        .sum();

    // Far field at an artificially long fall time.
    let b = basis(10);
    let tau = 50.0;
    let c: Vec<Complex64> = (0..10)
        .map(|n| Complex64::from_polar(1.0 / 10f64.sqrt(), 0.7 * n as f64))
        .collect();
    let v_top = (2.0 * sc.g * sc.l_g * b.lambdas()[9]).sqrt();
    let ctxs: Vec<_> = linspace(-1.5 * v_top, 1.5 * v_top, 301)
        .iter()
        .map(|&v| {
            PropagationContext::at_altitude(tau, v * tau - 0.5 * sc.g * tau * tau, &sc).unwrap()
        })
        .collect();
    let engine = FresnelEngine::for_contexts(&b, &ctxs).unwrap();
    let block = engine.evaluate(&ctxs).unwrap();
    let (mut diff, mut norm) = (0.0, 0.0);
    for (k, ctx) in ctxs.iter().enumerate() {
        let mut f = Complex64::new(0.0, 0.0);
        let mut p = Complex64::new(0.0, 0.0);
        for (n, cn) in c.iter().enumerate() {
            f += cn * block.f(n, k);
            p += cn
                * b.zero_table
                    .mode(n + 1)
                    .unwrap()
                    .eigenfunction_momentum(sc.mass * ctx.z_prime / tau, &sc);
        }
        let near = ctx.kernel_prefactor().norm_sqr() * f.norm_sqr();
        let far = sc.mass / tau * p.norm_sqr();
        diff += (near - far).abs();
        norm += far;
    }
    let far_err = diff / norm;

    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        factor_err <= 1e-12 && gauss_err <= 1e-6 && (flux - 1.0).abs() <= 1e-2 && far_err <= 0.02 && secs < 600.0,
        format!(
            "factorization {factor_err:.1e}, Gaussian L2 {gauss_err:.1e}, flux {flux:.5}, far-field L1 {far_err:.2e}"
        ),
    )
}

struct Campaign {
    fisher: FisherResult,
    result: CampaignResult,
}

impl Campaign {
    fn run(cfg: ExperimentConfig, draws: usize, kind: LikelihoodKind) -> Self {
        let exp = Experiment::new(cfg).unwrap();
        let fisher =
            fisher_information(&exp, exp.g0(), exp.config.n_atoms, &FisherSpec::default()).unwrap();
        let truth = exp.normalized_at(exp.g0()).unwrap();
        let t = &truth.map.t;
        let az = AzimuthSampler::new(
            exp.mixture(),
            exp.trap.delta_p,
            exp.constants.m_atom,
            exp.config.d,
            (t[0], t[t.len() - 1]),
        );
        let spec = CampaignSpec {
            draws,
            scan: ScanSpec::covering(fisher.sigma_cr_relative, 6.0),
            likelihood: LikelihoodOptions {
                kind,
                ..LikelihoodOptions::default()
            },
            ..CampaignSpec::default()
        };
        let result = run_campaign(&truth, &az, &exp, exp.config.n_atoms, &spec).unwrap();
        Self { fisher, result }
    }

    fn efficiency(&self) -> f64 {
        (self.fisher.sigma_cr / self.result.sigma_mc).powi(2)
    }

    fn bias(&self) -> f64 {
        (self.result.mean - self.result.g0).abs()
    }

    fn summary(&self) -> String {
        let g0 = self.result.g0;
        format!(
            "sigma_MC/g0 = {:.3e} +- {:.1e}, sigma_CR/g0 = {:.3e}, e = {:.3}, bias/g0 = {:.1e}, N_c = {:.1}, failures {}",
            self.result.sigma_mc / g0,
            self.result.sigma_mc_error / g0,
            self.fisher.sigma_cr_relative,
            self.efficiency(),
            self.bias() / g0,
            self.result.mean_n_c,
            self.result.failures,
        )
    }
}

fn desk_statistics() -> Outcome {
    let start = Instant::now();
    let m = 200;
    let cond = Campaign::run(ExperimentConfig::desk(), m, LikelihoodKind::Conditional);
    let unc = Campaign::run(ExperimentConfig::desk(), m, LikelihoodKind::Unconditional);
    let secs = start.elapsed().as_secs_f64();
    let r = &cond.result;
    let ok = r.sigma_mc >= cond.fisher.sigma_cr
        && (0.7..=1.05).contains(&cond.efficiency())
        && cond.bias() < 2.0 * r.sigma_mc / (m as f64).sqrt()
        && secs < 7200.0;
    Outcome::check(
        ok,
        format!(
            "conditional: {}; unconditional: e = {:.3}, sigma_MC/g0 = {:.3e}",
            cond.summary(),
            unc.efficiency(),
            unc.result.sigma_mc / unc.result.g0
        ),
    )
}

fn long_runs() -> bool {
    std::env::var("GQSFALL_LONG").is_ok_and(|v| v == "1")
}

fn full_scale() -> Outcome {
    if !long_runs() {
        return Outcome {
            verdict: Verdict::NotRun,
            detail: "1000-state campaign with M = 1000 needs GQSFALL_LONG=1".into(),
        };
    }
    let c = Campaign::run(
        ExperimentConfig::default(),
        1000,
        LikelihoodKind::Conditional,
    );
    let g0 = c.result.g0;
    Outcome::check(
        within(c.result.sigma_mc / g0, 1.0e-5, 0.3)
            && within(c.fisher.sigma_cr_relative, 0.98e-5, 0.3),
        c.summary(),
    )
}

fn no_recoil() -> Outcome {
    let trap = build_trap(20e3).unwrap();
    let m = PhysicalConstants::default().m_atom;
    let kick = RecoilSet::kick([m * 1.02, 0.0, 0.0]);
    let n_c = transmitted_fraction(&trap, &kick, &basis(1000))
        .unwrap()
        .n_c(1000);
    if !long_runs() {
        return Outcome {
            verdict: Verdict::NotRun,
            detail: format!("N_c = {n_c}/1000; the 1000-state campaign needs GQSFALL_LONG=1"),
        };
    }
    let cfg = ExperimentConfig {
        delta_e: 0.0,
        kick: Some(1.02),
        ..ExperimentConfig::default()
    };
    let c = Campaign::run(cfg, 1000, LikelihoodKind::Conditional);
    Outcome::check(
        (n_c as i64 - 995).abs() <= 2 && within(c.result.sigma_mc / c.result.g0, 5.8e-6, 0.3),
        format!("N_c = {n_c}/1000, {}", c.summary()),
    )
}

/// Small configuration that exercises every command quickly.
const SMALL: &str = "\
basis.n_max = 10
numerics.dt = 100 us
numerics.dtau = 100 us
numerics.coarse = 80
scan.points = 31
campaign.m = 6
campaign.bootstrap = 50
output.map_ny = 20
output.map_nt = 20
output.cut_nt = 51
output.fold_nt = 40
output.fold_ntau = 40
";

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    let mut files = 0;
    let snapshot = |out: &Path| -> std::collections::BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(out)
            .unwrap()
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
            .filter(|(n, _)| n != "manifest.json")
            .map(|(n, p)| (n, std::fs::read(p).unwrap()))
            .collect()
    };
    for command in gqsfall_cli::config::COMMANDS {
        let out = dir.path().join(command);
        run_command(SMALL, command, &out);
        let first = snapshot(&out);
        run_command(SMALL, command, &out);
        let second = snapshot(&out);
        files += first.len();
        for name in first
            .keys()
            .chain(second.keys().filter(|n| !first.contains_key(*n)))
        {
            if first.get(name) != second.get(name) {
                differing.push(format!("{command}/{name}"));
            }
        }
    }
    Outcome::check(
        differing.is_empty() && files > 0,
        if differing.is_empty() {
            format!(
                "{files} data files identical across {} commands",
                gqsfall_cli::config::COMMANDS.len()
            )
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}
