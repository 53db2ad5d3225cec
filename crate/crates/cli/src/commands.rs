//! One function per command. Each reads the resolved configuration and
//! writes its data files through [`Output`].

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use gqs_freefall::airy::AiryZeroTable;
use gqs_freefall::experiment::Experiment;
use gqs_freefall::freefall::{linspace, CurrentModel, TimeWindow};
use gqs_freefall::inference::{
    estimate_g, fisher_information, run_campaign, sample_events, AzimuthSampler, Event, EventSet,
    FisherResult, MapProvider, NormalizedMap, ScanSpec,
};
use gqs_freefall::mirror::fringe_grid;
use gqs_freefall::physcore::{PhysicalConstants, ScaleSet, JOULE_PER_EV};
use gqs_freefall::source::{PhotodetachConfig, TrapConfig, VelocityDistribution};

use crate::config::RunConfig;
use crate::output::{read_csv, Output};

/// How far a command got. A campaign whose draws partly failed is
/// `Incomplete`; its outputs cover the successful draws only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Complete,
    Incomplete,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Complete => "complete",
            Status::Incomplete => "incomplete",
        }
    }
}

pub fn run(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    if cfg.command() == "campaign" {
        return campaign(cfg, out);
    }
    match cfg.command() {
        "scales" => scales(cfg, out),
        "basis" => basis(cfg, out),
        "source-dist" => source_dist(cfg, out),
        "end-of-mirror" => end_of_mirror(cfg, out),
        "current-map" => current_map(cfg, out),
        "simulate" => simulate(cfg, out),
        "estimate" => estimate(cfg, out),
        "fisher" => fisher(cfg, out),
        other => bail!("unknown command `{other}`"),
    }?;
    Ok(Status::Complete)
}

fn experiment(cfg: &RunConfig) -> Result<Experiment> {
    Experiment::new(cfg.experiment()).context("building the experiment")
}

#[derive(Serialize)]
struct ScalesReport {
    g: f64,
    l_g_m: f64,
    eps_g_j: f64,
    eps_g_pev: f64,
    t_g_s: f64,
    v_g_m_per_s: f64,
    p_g_kg_m_per_s: f64,
}

fn scales(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let s = ScaleSet::new(&PhysicalConstants::default(), cfg.real("gravity.g0"))?;
    out.json(
        "scales.json",
        &ScalesReport {
            g: s.g,
            l_g_m: s.l_g,
            eps_g_j: s.eps_g,
            eps_g_pev: s.eps_g / JOULE_PER_EV * 1e12,
            t_g_s: s.t_g,
            v_g_m_per_s: s.v_g,
            p_g_kg_m_per_s: s.p_g(),
        },
    )
}

fn basis(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let s = ScaleSet::new(&PhysicalConstants::default(), cfg.real("gravity.g0"))?;
    let table = AiryZeroTable::new(cfg.count("basis.n_max") as usize)?;
    let rows = table
        .lambdas()
        .iter()
        .zip(table.aiprime())
        .enumerate()
        .map(|(i, (&l, &a))| vec![(i + 1) as f64, l, a, l * s.eps_g, l * s.l_g]);
    out.csv(
        "basis.csv",
        &[("g_m_per_s2", s.g.to_string())],
        &["n", "lambda", "ai_prime", "energy_J", "turning_height_m"],
        rows,
    )
}

#[derive(Serialize)]
struct SourceReport {
    zeta_m: f64,
    delta_v_m_per_s: f64,
    delta_p_kg_m_per_s: f64,
    v_r_m_per_s: f64,
    q_kg_m_per_s: f64,
}

fn source_dist(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let c = PhysicalConstants::default();
    let e = cfg.experiment();
    let trap = TrapConfig::new(&c, e.f, e.h)?;
    let pd = PhotodetachConfig::new(&c, e.delta_e, e.pol_axis)?;
    let dist = VelocityDistribution::new(&c, &trap, &pd);
    out.json(
        "source.json",
        &SourceReport {
            zeta_m: trap.zeta,
            delta_v_m_per_s: trap.delta_v(&c),
            delta_p_kg_m_per_s: trap.delta_p,
            v_r_m_per_s: pd.v_r,
            q_kg_m_per_s: pd.q_mag,
        },
    )?;
    let reach = 1.4 * pd.v_r + 5.0 * trap.delta_v(&c);
    let vs = linspace(-reach, reach, cfg.count("output.source_nv") as usize);
    let mut rows = Vec::with_capacity(vs.len() * vs.len());
    for &vy in &vs {
        for &vz in &vs {
            rows.push(vec![vy, vz, dist.density([0.0, vy, vz])]);
        }
    }
    out.csv(
        "source_dist.csv",
        &[("slice", "v_x = 0".to_string())],
        &["v_y_m_per_s", "v_z_m_per_s", "density_s3_per_m3"],
        rows,
    )
}

fn end_of_mirror(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let exp = experiment(cfg)?;
    let basis = exp.basis();
    let sc = basis.scales;
    let v_top = (2.0 * sc.g * sc.l_g * basis.lambdas()[basis.n_max - 1]).sqrt();
    let vz = linspace(
        -1.2 * v_top,
        1.2 * v_top,
        cfg.count("output.mirror_nv") as usize,
    );
    let w = exp.window();
    let times = linspace(w.t.0, w.t.1, cfg.count("output.mirror_nt") as usize);
    let rows = fringe_grid(&vz, &times, exp.mixture(), basis, exp.trap.delta_p)?;
    out.csv(
        "end_of_mirror.csv",
        &[("n_max", basis.n_max.to_string())],
        &["v_z_m_per_s", "t_s", "density_s_per_m"],
        rows.into_iter().map(|r| r.to_vec()),
    )
}

#[derive(Serialize)]
struct MapReport {
    g: f64,
    transmitted_fraction: f64,
    folded_weight: f64,
    argmax_y_m: f64,
    argmax_t_s: f64,
    peak_current: f64,
    min_current: f64,
    window: TimeWindow,
}

fn current_map(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let exp = experiment(cfg)?;
    let g0 = exp.g0();
    let ys = linspace(
        cfg.real("output.map_y_min"),
        cfg.real("output.map_y_max"),
        cfg.count("output.map_ny") as usize,
    );
    let ts = linspace(
        cfg.real("output.map_t_min"),
        cfg.real("output.map_t_max"),
        cfg.count("output.map_nt") as usize,
    );
    let points: Vec<[f64; 3]> = ys
        .iter()
        .flat_map(|&y| ts.iter().map(move |&t| [0.0, y, t]))
        .collect();
    let v_r = match exp.config.kick {
        Some(v) => v,
        None => {
            PhotodetachConfig::new(&exp.constants, exp.config.delta_e, exp.config.pol_axis)?.v_r
        }
    };
    let cut_t = linspace(
        cfg.real("output.map_t_min"),
        cfg.real("output.map_t_max"),
        cfg.count("output.cut_nt") as usize,
    );
    let cut: Vec<[f64; 3]> = cut_t.iter().map(|&t| [0.0, v_r * t, t]).collect();
    let model = CurrentModel::new(
        exp.basis().clone(),
        exp.geometry,
        exp.trap.delta_p,
        exp.config.numerics.prefactor,
        exp.mixture(),
        &window_over(exp.window(), points.iter().chain(&cut), exp.config.d),
        exp.config.numerics.prune,
    )?;
    let values = model.annihilation_current_points(&points)?;
    let (mut best, mut low) = ((0.0, 0.0, f64::NEG_INFINITY), f64::INFINITY);
    for (p, &v) in points.iter().zip(&values) {
        if v > best.2 {
            best = (p[1], p[2], v);
        }
        low = low.min(v);
    }
    out.csv(
        "current_map.csv",
        &[("g_m_per_s2", g0.to_string()), ("x_m", "0".to_string())],
        &["y_m", "t_s", "j_per_m2_s"],
        points
            .iter()
            .zip(&values)
            .map(|(p, v)| vec![p[1], p[2], *v]),
    )?;

    let cut_values = model.annihilation_current_points(&cut)?;
    out.csv(
        "current_cut.csv",
        &[
            ("g_m_per_s2", g0.to_string()),
            ("cut", format!("x = 0, y = {v_r} m/s * t")),
        ],
        &["t_s", "y_m", "j_per_m2_s"],
        cut.iter()
            .zip(&cut_values)
            .map(|(p, v)| vec![p[2], p[1], *v]),
    )?;

    let w = exp.window();
    let t = linspace(w.t.0, w.t.1, cfg.count("output.fold_nt") as usize);
    let tau = linspace(w.tau.0, w.tau.1, cfg.count("output.fold_ntau") as usize);
    let mut folded = model.current_map(&t, &tau)?;
    folded.config_hash = cfg.hash();
    let mut rows = Vec::with_capacity(t.len() * tau.len());
    for (a, &ta) in t.iter().enumerate() {
        for (b, &tb) in tau.iter().enumerate() {
            let (r, tt) = folded.detector(ta, tb);
            let d = folded.density[[a, b]];
            rows.push(vec![ta, tb, r, tt, d, d / folded.jacobian(ta, tb)]);
        }
    }
    out.csv(
        "folded_map.csv",
        &[
            ("g_m_per_s2", g0.to_string()),
            ("d_m", folded.d.to_string()),
        ],
        &[
            "t_s",
            "tau_s",
            "r_bar_m",
            "t_total_s",
            "density_per_s2",
            "j_fold_per_m_s",
        ],
        rows,
    )?;
    out.json(
        "current_map.json",
        &MapReport {
            g: g0,
            transmitted_fraction: exp.fraction(),
            folded_weight: folded.weight(),
            argmax_y_m: best.0,
            argmax_t_s: best.1,
            peak_current: best.2,
            min_current: low,
            window: w,
        },
    )
}

/// Smallest window holding `base` and the `(t, tau)` of every detector
/// point `[x, y, T]` downstream of the mirror.
fn window_over<'a>(
    base: TimeWindow,
    points: impl Iterator<Item = &'a [f64; 3]>,
    d: f64,
) -> TimeWindow {
    let mut w = base;
    for p in points {
        let r = p[0].hypot(p[1]);
        if r <= d {
            continue;
        }
        let t = p[2] * d / r;
        let tau = p[2] - t;
        w.t = (w.t.0.min(t), w.t.1.max(t));
        w.tau = (w.tau.0.min(tau), w.tau.1.max(tau));
    }
    w
}

/// Normalized map at `g0` and the azimuth table over its time range.
fn truth(exp: &Experiment) -> Result<(NormalizedMap, AzimuthSampler)> {
    let map = exp.normalized_at(exp.g0())?;
    let t = &map.map.t;
    let az = AzimuthSampler::new(
        exp.mixture(),
        exp.trap.delta_p,
        exp.constants.m_atom,
        exp.config.d,
        (t[0], t[t.len() - 1]),
    );
    Ok((map, az))
}

#[derive(Serialize)]
struct EventSummary {
    n: u64,
    n_c: usize,
    detected_fraction: f64,
    g0: f64,
}

fn write_events(out: &mut Output, set: &EventSet, fraction: f64, g0: f64) -> Result<()> {
    out.csv(
        "events.csv",
        &[("n", set.n.to_string()), ("n_c", set.n_c.to_string())],
        &["r_bar_m", "phi_rad", "t_s"],
        set.events.iter().map(|e| vec![e.r_bar, e.phi, e.t_total]),
    )?;
    out.json(
        "events.json",
        &EventSummary {
            n: set.n,
            n_c: set.n_c,
            detected_fraction: fraction,
            g0,
        },
    )
}

fn simulate(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let exp = experiment(cfg)?;
    let (map, az) = truth(&exp)?;
    let set = sample_events(
        &map,
        &az,
        exp.config.n_atoms,
        cfg.seed(),
        cfg.campaign().count,
    )?;
    write_events(out, &set, map.weight, exp.g0())
}

fn read_events(path: &Path, n: u64, seed: u64) -> Result<EventSet> {
    let (header, rows) = read_csv(path)?;
    if header.len() != 3 {
        bail!("{}: expected columns r_bar_m, phi_rad, t_s", path.display());
    }
    let events: Vec<Event> = rows
        .iter()
        .map(|r| Event {
            r_bar: r[0],
            phi: r[1],
            t_total: r[2],
        })
        .collect();
    Ok(EventSet {
        n_c: events.len(),
        events,
        seed,
        n,
    })
}

fn estimate(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let exp = experiment(cfg)?;
    let set = match cfg.word("run.events") {
        Some(path) => read_events(Path::new(path), exp.config.n_atoms, cfg.seed())?,
        None => {
            let (map, az) = truth(&exp)?;
            let set = sample_events(
                &map,
                &az,
                exp.config.n_atoms,
                cfg.seed(),
                cfg.campaign().count,
            )?;
            write_events(out, &set, map.weight, exp.g0())?;
            set
        }
    };
    let spec = if cfg.real("scan.reach") > 0.0 {
        scan_spec(cfg, &fisher_result(cfg, &exp)?)
    } else {
        cfg.scan()
    };
    let scan = estimate_g(&set, exp.g0(), &spec, &exp, &cfg.likelihood())?;
    let g0 = exp.g0();
    out.csv(
        "likelihood_scan.csv",
        &[("g0_m_per_s2", g0.to_string())],
        &["relative_offset", "g_m_per_s2", "log_likelihood"],
        scan.offsets
            .iter()
            .zip(&scan.log_l)
            .map(|(x, l)| vec![*x, g0 * (1.0 + x), *l]),
    )?;
    out.json("estimate.json", &scan)
}

fn fisher_result(cfg: &RunConfig, exp: &Experiment) -> Result<FisherResult> {
    Ok(fisher_information(
        exp,
        exp.g0(),
        exp.config.n_atoms,
        &cfg.fisher(),
    )?)
}

/// Configured scan, widened to `scan.reach` Cramer-Rao deviations.
fn scan_spec(cfg: &RunConfig, fisher: &FisherResult) -> ScanSpec {
    let spec = cfg.scan();
    ScanSpec {
        half_width: spec
            .half_width
            .max(cfg.real("scan.reach") * fisher.sigma_cr_relative),
        ..spec
    }
}

fn fisher(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let exp = experiment(cfg)?;
    out.json("fisher.json", &fisher_result(cfg, &exp)?)
}

#[derive(Serialize)]
struct CampaignReport<'a> {
    campaign: &'a gqs_freefall::inference::CampaignResult,
    fisher: &'a FisherResult,
    sigma_mc_relative: f64,
    sigma_cr_relative: f64,
    efficiency: f64,
    /// `sigma_mc >= sigma_cr (1 - 3 / sqrt(M))`.
    cramer_rao_ordering: bool,
    bias_relative: f64,
}

fn campaign(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    let exp = experiment(cfg)?;
    let fisher = fisher_result(cfg, &exp)?;
    let (map, az) = truth(&exp)?;
    let mut spec = cfg.campaign();
    spec.scan = scan_spec(cfg, &fisher);
    let result = run_campaign(&map, &az, &exp, exp.config.n_atoms, &spec)?;
    let g0 = exp.g0();
    out.csv(
        "estimates.csv",
        &[("g0_m_per_s2", g0.to_string())],
        &["draw", "seed", "n_c", "g_hat_m_per_s2", "sigma_m_per_s2"],
        result.estimates.iter().map(|e| {
            vec![
                e.index as f64,
                e.seed as f64,
                e.n_c as f64,
                e.g_hat,
                e.sigma,
            ]
        }),
    )?;
    let h = &result.histogram;
    out.csv(
        "histogram.csv",
        &[("variable", "(g_hat - g0) / g0".to_string())],
        &["lower", "upper", "density"],
        h.edges
            .windows(2)
            .zip(&h.density)
            .map(|(e, d)| vec![e[0], e[1], *d]),
    )?;
    let mut scan_rows = Vec::new();
    for (i, s) in result.scans.iter().enumerate() {
        if let Some(s) = s {
            for (x, l) in s.offsets.iter().zip(&s.log_l) {
                scan_rows.push(vec![i as f64, *x, *l]);
            }
        }
    }
    out.csv(
        "likelihood_scans.csv",
        &[("g0_m_per_s2", g0.to_string())],
        &["draw", "relative_offset", "log_likelihood"],
        scan_rows,
    )?;
    let m = result.estimates.len() as f64;
    let report = CampaignReport {
        sigma_mc_relative: result.sigma_mc / g0,
        sigma_cr_relative: fisher.sigma_cr_relative,
        efficiency: (fisher.sigma_cr / result.sigma_mc).powi(2),
        cramer_rao_ordering: result.sigma_mc >= fisher.sigma_cr * (1.0 - 3.0 / m.sqrt()),
        bias_relative: (result.mean - g0) / g0,
        campaign: &result,
        fisher: &fisher,
    };
    out.json("campaign.json", &report)?;
    Ok(if result.failures == 0 {
        Status::Complete
    } else {
        Status::Incomplete
    })
}
