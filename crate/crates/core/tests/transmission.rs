use std::sync::Arc;

use gqs_freefall::airy::AiryZeroTable;
use gqs_freefall::gqs::{mixture_amplitudes, transmitted_fraction, GQSBasis};
use gqs_freefall::physcore::{derive_scales, PhysicalConstants, JOULE_PER_EV};
use gqs_freefall::source::{
    build_photodetach, build_trap, recoil_quadrature, RecoilOrder, RecoilSet,
};

fn basis(n_max: usize) -> GQSBasis {
    let table = Arc::new(AiryZeroTable::new(n_max).unwrap());
    GQSBasis::new(table, derive_scales(9.81).unwrap(), n_max, None).unwrap()
}

fn dipole_set(order: RecoilOrder) -> RecoilSet {
    let pd = build_photodetach(10e-6 * JOULE_PER_EV, [0.0, 1.0, 0.0]).unwrap();
    let q = recoil_quadrature(pd.pol_axis, order).unwrap();
    RecoilSet::dipole(&pd, &q)
}

#[test]
fn about_a_quarter_of_the_atoms_pass_the_absorber() {
    let trap = build_trap(20e3).unwrap();
    let t = transmitted_fraction(&trap, &dipole_set(RecoilOrder::default()), &basis(1000)).unwrap();
    eprintln!("transmitted fraction {:.6}", t.fraction);
    assert!((t.fraction - 0.26).abs() < 0.01, "{}", t.fraction);
    assert!((255..=265).contains(&t.n_c(1000)));
}

#[test]
fn horizontal_kick_alone_keeps_nearly_every_atom() {
    let trap = build_trap(20e3).unwrap();
    let m = PhysicalConstants::default().m_atom;
    let set = RecoilSet::kick([m * 1.02, 0.0, 0.0]);
    let t = transmitted_fraction(&trap, &set, &basis(1000)).unwrap();
    eprintln!("no-recoil fraction {:.6}", t.fraction);
    assert!((t.n_c(1000) as i64 - 995).abs() <= 2, "{}", t.n_c(1000));
}

#[test]
fn recoil_quadrature_is_converged() {
    let trap = build_trap(20e3).unwrap();
    let b = basis(1000);
    let order = RecoilOrder::default();
    let a = transmitted_fraction(&trap, &dipole_set(order), &b)
        .unwrap()
        .fraction;
    let d = transmitted_fraction(&trap, &dipole_set(order.doubled()), &b)
        .unwrap()
        .fraction;
    assert!(((a - d) / d).abs() < 1e-4, "{a} vs {d}");
}

#[test]
fn fraction_grows_with_the_number_of_states() {
    let trap = build_trap(20e3).unwrap();
    let mix = mixture_amplitudes(&trap, &dipole_set(RecoilOrder::default()), &basis(1000)).unwrap();
    let f50 = mix.fraction_up_to(50);
    let f1000 = mix.fraction();
    assert!(f50 < f1000);
    assert!(f50 > 0.05 && f50 < 0.2, "{f50}");
}
