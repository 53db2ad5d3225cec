#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use gqs_freefall::airy::AiryZeroTable;
use gqs_freefall::freefall::{
    linspace, propagate_profile, pure_state_current, FresnelEngine, PropagationContext,
};
use gqs_freefall::gqs::GQSBasis;
use gqs_freefall::physcore::{derive_scales, ScaleSet};
use gqs_freefall::quadrature::CompositeRule;

fn basis(n_max: usize) -> GQSBasis {
    let table = Arc::new(AiryZeroTable::new(n_max).unwrap());
    GQSBasis::new(table, derive_scales(9.81).unwrap(), n_max, None).unwrap()
}

/// Free spreading of `exp(-(z - z0)^2 / (4 s^2) + i k (z - z0))` written as a
/// complex Gaussian integral, shifted into the falling frame.
fn gaussian_oracle(sc: &ScaleSet, s: f64, z0: f64, k: f64, zz: f64, tau: f64) -> Complex64 {
    let ctx = PropagationContext::at_altitude(tau, zz, sc).unwrap();
    let x = ctx.z_prime - z0;
    let a = Complex64::new(1.0 / (4.0 * s * s), 0.0);
    let b = sc.mass / (2.0 * sc.hbar * tau);
    let i = Complex64::i();
    let n = (2.0 * PI * s * s).powf(-0.25);
    let pref = n / (Complex64::new(1.0, 0.0) + i * a / b).sqrt();
    let q = Complex64::new(k - 2.0 * b * x, 0.0);
    let expo = i * b * x * x - q * q / (4.0 * (a - i * b));
    pref * expo.exp() * Complex64::from_polar(1.0, -ctx.phi)
}

#[test]
fn freely_falling_gaussian_matches_closed_form() {
    let sc = derive_scales(9.81).unwrap();
    let (s, z0) = (1e-6, 20e-6);
    let v = 0.05;
    let k = sc.mass * v / sc.hbar;
    for tau in [5e-3, 0.25] {
        let center = z0 + v * tau - 0.5 * sc.g * tau * tau;
        let beta = sc.hbar * tau / (2.0 * sc.mass * s * s);
        let width = s * (1.0 + beta * beta).sqrt();
        let zs = linspace(center - 6.0 * width, center + 6.0 * width, 241);
        let (mut num, mut den) = (0.0, 0.0);
        for &zz in &zs {
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
        let rel = (num / den).sqrt();
        assert!(rel < 1e-6, "tau = {tau}: relative L2 error {rel:e}");
    }
}

#[test]
fn velocity_term_of_a_gaussian_is_its_group_velocity() {
    let sc = derive_scales(9.81).unwrap();
    let (s, z0, v, tau) = (1e-6, 20e-6, 0.05, 5e-3);
    let k = sc.mass * v / sc.hbar;
    // At the packet center the local velocity is the classical one.
    let center = z0 + v * tau - 0.5 * sc.g * tau * tau;
    let ctx = PropagationContext::at_altitude(tau, center, &sc).unwrap();
    let (psi, grad) = propagate_profile(
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
    let local_v = (psi.conj() * grad).re / psi.norm_sqr();
    assert!((local_v - (v - sc.g * tau)).abs() < 1e-9, "{local_v}");
}

#[test]
fn dropped_ground_state_is_fully_absorbed() {
    let b = basis(1);
    let sc = b.scales;
    let h = 0.3;
    let v = 10.0 * sc.v_g;
    let lo = (-v + (v * v + 2.0 * sc.g * h).sqrt()) / sc.g;
    let hi = (v + (v * v + 2.0 * sc.g * (h + b.z_max)).sqrt()) / sc.g;
    let rule = CompositeRule::new(lo, hi, 200, 8);
    let ctxs: Vec<_> = rule
        .nodes
        .iter()
        .map(|&t| PropagationContext::new(t, h, &sc).unwrap())
        .collect();
    let engine = FresnelEngine::for_contexts(&b, &ctxs).unwrap();
    let a = [Complex64::new(1.0, 0.0)];
    let mut total = 0.0;
    let mut min = f64::INFINITY;
    for (ctx, w) in ctxs.iter().zip(&rule.weights) {
        let j = pure_state_current(&a, ctx, &engine).unwrap();
        min = min.min(j);
        total += w * j;
    }
    assert!((total - 1.0).abs() < 1e-2, "integrated flux {total}");
    assert!(min > -1e-6, "{min}");
}

#[test]
fn far_field_reproduces_the_momentum_distribution() {
    let b = basis(10);
    let sc = b.scales;
    let tau = 50.0;
    // Check the Fraunhofer condition m z_max^2 / h << tau.
    let fraunhofer = sc.mass * b.z_max * b.z_max / (2.0 * PI * sc.hbar);
    assert!(tau > 100.0 * fraunhofer);
    let c: Vec<Complex64> = (0..10)
        .map(|n| Complex64::from_polar(1.0 / (10f64).sqrt(), 0.7 * n as f64))
        .collect();
    let v_top = (2.0 * sc.g * sc.l_g * b.lambdas()[9]).sqrt();
    let vs = linspace(-1.5 * v_top, 1.5 * v_top, 301);
    let ctxs: Vec<_> = vs
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
        for n in 0..10 {
            f += c[n] * block.f(n, k);
            let mode = b.zero_table.mode(n + 1).unwrap();
            p += c[n] * mode.eigenfunction_momentum(sc.mass * ctx.z_prime / tau, &sc);
        }
        let near = ctx.kernel_prefactor().norm_sqr() * f.norm_sqr();
        let far = sc.mass / tau * p.norm_sqr();
        diff += (near - far).abs();
        norm += far;
    }
    assert!(diff / norm < 0.02, "L1 mismatch {}", diff / norm);
}

#[test]
fn halving_the_step_leaves_the_current_unchanged() {
    let b = basis(40);
    let sc = b.scales;
    let ctxs: Vec<_> = linspace(0.235, 0.26, 9)
        .into_iter()
        .map(|t| PropagationContext::new(t, 0.3, &sc).unwrap())
        .collect();
    let rate = ctxs
        .iter()
        .map(|c| gqs_freefall::freefall::chirp_rate(c, b.mode_extent(40)))
        .fold(0.0, f64::max);
    let coarse = FresnelEngine::with_panel_phase(&b, rate, 4.0).unwrap();
    let fine = FresnelEngine::with_panel_phase(&b, rate, 2.0).unwrap();
    let a: Vec<Complex64> = (0..40)
        .map(|n| Complex64::from_polar((-(n as f64 - 20.0).powi(2) / 50.0).exp(), 1.3 * n as f64))
        .collect();
    let jc: Vec<f64> = ctxs
        .iter()
        .map(|c| pure_state_current(&a, c, &coarse).unwrap())
        .collect();
    let jf: Vec<f64> = ctxs
        .iter()
        .map(|c| pure_state_current(&a, c, &fine).unwrap())
        .collect();
    let peak = jf.iter().cloned().fold(0.0, f64::max);
    for (x, y) in jc.iter().zip(&jf) {
        assert!((x - y).abs() < 1e-3 * peak);
    }
}
