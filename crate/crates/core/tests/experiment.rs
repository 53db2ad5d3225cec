use gqs_freefall::experiment::{Experiment, ExperimentConfig};
use gqs_freefall::inference::{
    log_likelihood, sample_events, AzimuthSampler, CountMode, LikelihoodOptions, MapProvider,
};
use gqs_freefall::Error;

/// Ten states on a coarse grid: cheap enough for a test, same pipeline.
fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        n_max: 10,
        ..ExperimentConfig::default()
    };
    cfg.numerics.dt = 100e-6;
    cfg.numerics.dtau = 100e-6;
    cfg.numerics.coarse = 80;
    cfg
}

#[test]
fn invalid_configurations_are_rejected() {
    let bad = [
        ExperimentConfig {
            g0: -9.81,
            ..small()
        },
        ExperimentConfig { d: 0.0, ..small() },
        ExperimentConfig {
            n_max: 0,
            ..small()
        },
        ExperimentConfig {
            kick: Some(-1.0),
            ..small()
        },
        ExperimentConfig {
            delta_e: f64::NAN,
            ..small()
        },
    ];
    for cfg in bad {
        assert!(matches!(Experiment::new(cfg), Err(Error::Domain { .. })));
    }
}

#[test]
fn the_map_carries_the_transmitted_fraction() {
    let exp = Experiment::new(small()).unwrap();
    let map = exp.map_at(exp.g0()).unwrap();
    let f = exp.fraction();
    assert!(f > 0.0 && f < 1.0, "fraction {f}");
    assert!(
        (map.weight() / f - 1.0).abs() < 0.02,
        "map {} vs fraction {f}",
        map.weight()
    );
    assert!(map.min() > -1e-3 * map.max());
}

#[test]
fn maps_at_nearby_g_share_the_grid() {
    let exp = Experiment::new(small()).unwrap();
    let a = exp.map_at(exp.g0()).unwrap();
    let b = exp.map_at(exp.g0() * (1.0 + 1e-3)).unwrap();
    assert_eq!(a.t, b.t);
    assert_eq!(a.tau, b.tau);
    assert_ne!(a.density, b.density);
    // Stronger gravity shortens the fall: the mean fall time decreases.
    let mean_tau = |m: &gqs_freefall::freefall::CurrentMap| {
        let mut s = (0.0, 0.0);
        for (i, _) in m.t.iter().enumerate() {
            for (j, tau) in m.tau.iter().enumerate() {
                s.0 += m.density[[i, j]] * tau;
                s.1 += m.density[[i, j]];
            }
        }
        s.0 / s.1
    };
    assert!(mean_tau(&b) < mean_tau(&a));
}

#[test]
fn maps_are_reproducible() {
    let exp = Experiment::new(small()).unwrap();
    let a = exp.map_at(9.8).unwrap();
    let b = exp.map_at(9.8).unwrap();
    assert_eq!(a.density, b.density);
}

#[test]
fn the_truth_is_preferred_over_distant_accelerations() {
    let exp = Experiment::new(ExperimentConfig {
        n_atoms: 20_000,
        ..small()
    })
    .unwrap();
    let map = exp.normalized_at(exp.g0()).unwrap();
    let t = &map.map.t;
    let az = AzimuthSampler::new(
        exp.mixture(),
        exp.trap.delta_p,
        exp.constants.m_atom,
        exp.config.d,
        (t[0], t[t.len() - 1]),
    );
    let set = sample_events(&map, &az, exp.config.n_atoms, 3, CountMode::Binomial).unwrap();
    assert!(set.n_c > 100);
    let opts = LikelihoodOptions::default();
    let at = |g: f64| log_likelihood(&set, g, &exp, &opts).unwrap();
    let center = at(exp.g0());
    assert!(center > at(exp.g0() * 0.995));
    assert!(center > at(exp.g0() * 1.005));
}

#[test]
fn a_horizontal_kick_replaces_the_recoil_shell() {
    let exp = Experiment::new(ExperimentConfig {
        kick: Some(1.0),
        ..small()
    })
    .unwrap();
    assert_eq!(exp.recoil.rings.len(), 1);
    assert_eq!(exp.mixture().rings.len(), 1);
    assert!(exp.fraction() > 0.0 && exp.fraction() < 1.0);
}
