//! Airy function `Ai`, its derivative, its zeros, and the gravitational
//! quantum states built from them.
//!
//! Evaluation strategy for `Ai(x)` and `Ai'(x)`:
//!
//! * `x > 10`: the decaying asymptotic expansion (DLMF 9.7.5/9.7.6); the
//!   optimally truncated remainder is below `exp(-2 zeta) < 1e-18` there.
//! * `x < -12`: the oscillatory expansion (DLMF 9.7.9/9.7.10).
//! * otherwise: a Taylor series of the Airy equation `y'' = x y` about the
//!   nearest tabulated anchor point (spacing 0.5, so `|h| <= 0.25`).
//!
//! The anchors are generated once at first use. Anchors on `[-12, 0]` are
//! obtained by stepping forward from the exact values at the origin
//! (oscillatory side, errors grow only linearly). Anchors on `(0, 10]` are
//! obtained by stepping *backward* from the asymptotic value at `x = 10`,
//! the direction in which the recessive solution dominates and rounding
//! errors are damped.

use std::f64::consts::{FRAC_PI_4, PI};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{domain, numeric, Result};
use crate::physcore::ScaleSet;
use crate::quadrature::CompositeRule;

/// `Ai(0) = 3^(-2/3) / Gamma(2/3)`.
pub const AI_ZERO: f64 = 0.355_028_053_887_817_2;
/// `Ai'(0) = -3^(-1/3) / Gamma(1/3)`.
pub const AI_PRIME_ZERO: f64 = -0.258_819_403_792_806_8;

/// Largest table size accepted by [`airy_zeros`].
pub const MAX_ZEROS: usize = 5000;

/// Dimensionless distance past the classical turning point beyond which
/// a mode is treated as zero (`Ai(15) ~ 3e-18`).
pub const MODE_TAIL: f64 = 15.0;

const POS_ASYMPTOTIC: f64 = 10.0;
const NEG_ASYMPTOTIC: f64 = -12.0;
const ANCHOR_STEP: f64 = 0.5;
const ANCHOR_ORIGIN_INDEX: usize = 24; // (0 - NEG_ASYMPTOTIC) / ANCHOR_STEP
const ANCHOR_COUNT: usize = 45;

fn anchors() -> &'static [(f64, f64)] {
    static ANCHORS: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    ANCHORS.get_or_init(build_anchors)
}

fn anchor_x(i: usize) -> f64 {
    NEG_ASYMPTOTIC + ANCHOR_STEP * i as f64
}

fn build_anchors() -> Vec<(f64, f64)> {
    let mut table = vec![(0.0, 0.0); ANCHOR_COUNT];
    table[ANCHOR_COUNT - 1] = asymptotic_positive(POS_ASYMPTOTIC);
    for i in (ANCHOR_ORIGIN_INDEX + 1..ANCHOR_COUNT - 1).rev() {
        let (y, dy) = table[i + 1];
        table[i] = taylor(anchor_x(i + 1), y, dy, -ANCHOR_STEP);
    }
    table[ANCHOR_ORIGIN_INDEX] = (AI_ZERO, AI_PRIME_ZERO);
    for i in (0..ANCHOR_ORIGIN_INDEX).rev() {
        let (y, dy) = table[i + 1];
        table[i] = taylor(anchor_x(i + 1), y, dy, -ANCHOR_STEP);
    }
    table
}

/// Value and derivative at `x0 + h` of the solution of `y'' = x y` with
/// `y(x0) = y0`, `y'(x0) = dy0`.
fn taylor(x0: f64, y0: f64, dy0: f64, h: f64) -> (f64, f64) {
    // a_k = y^(k)(x0) / k!, with (k+2)(k+1) a_{k+2} = x0 a_k + a_{k-1}
    let mut a_km1 = y0; // a_{k-1}
    let mut a_k = dy0; // a_k
    let mut a_km2 = 0.0; // a_{k-2}
    let mut hk = h; // h^k
    let mut hkm1: f64; // h^(k-1)
    let mut y = y0 + dy0 * h;
    let mut dy = dy0;
    let scale = y0.abs() + dy0.abs();
    let mut small = 0;
    let mut k = 1usize;
    while k < 200 {
        // a_{k+1} = (x0 a_{k-1} + a_{k-2}) / ((k+1) k)
        let kf = k as f64;
        let a_kp1 = (x0 * a_km1 + a_km2) / ((kf + 1.0) * kf);
        hkm1 = hk;
        hk *= h;
        let term = a_kp1 * hk;
        let dterm = (kf + 1.0) * a_kp1 * hkm1;
        y += term;
        dy += dterm;
        if term.abs() <= 1e-18 * scale && dterm.abs() <= 1e-18 * scale {
            small += 1;
            if small >= 3 {
                break;
            }
        } else {
            small = 0;
        }
        a_km2 = a_km1;
        a_km1 = a_k;
        a_k = a_kp1;
        k += 1;
    }
    (y, dy)
}

fn u_coefficients() -> &'static [f64] {
    static U: OnceLock<Vec<f64>> = OnceLock::new();
    U.get_or_init(|| {
        let mut u = vec![1.0];
        for k in 1..40 {
            let kf = k as f64;
            let prev = u[k - 1];
            u.push(
                prev * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
                    / ((2.0 * kf - 1.0) * 216.0 * kf),
            );
        }
        u
    })
}

fn v_coefficient(k: usize) -> f64 {
    let kf = k as f64;
    -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u_coefficients()[k]
}

/// Sums `sum_k (-1)^k c_k zeta^-k` over the selected parity, truncated at
/// the smallest term.
fn asymptotic_sum(zeta: f64, coeff: impl Fn(usize) -> f64, start: usize, step: usize) -> f64 {
    let n = u_coefficients().len();
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    let mut sign = 1.0;
    let mut k = start;
    while k < n {
        let term = coeff(k) / zeta.powi(k as i32);
        if term.abs() > last {
            break;
        }
        sum += sign * term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        last = term.abs();
        sign = -sign;
        k += step;
    }
    sum
}

fn asymptotic_positive(x: f64) -> (f64, f64) {
    let zeta = 2.0 / 3.0 * x * x.sqrt();
    let e = (-zeta).exp();
    if e == 0.0 {
        return (0.0, 0.0);
    }
    let x4 = x.sqrt().sqrt();
    let u = u_coefficients();
    let su = asymptotic_sum(zeta, |k| u[k], 0, 1);
    let sv = asymptotic_sum(zeta, |k| if k == 0 { 1.0 } else { v_coefficient(k) }, 0, 1);
    let c = 0.5 / PI.sqrt();
    (c * e / x4 * su, -c * x4 * e * sv)
}

fn asymptotic_negative(x: f64) -> (f64, f64) {
    let z = -x;
    let zeta = 2.0 / 3.0 * z * z.sqrt();
    let z4 = z.sqrt().sqrt();
    let u = u_coefficients();
    let v = |k: usize| if k == 0 { 1.0 } else { v_coefficient(k) };
    let ue = asymptotic_sum(zeta, |k| u[k], 0, 2);
    let uo = asymptotic_sum(zeta, |k| u[k], 1, 2);
    let ve = asymptotic_sum(zeta, v, 0, 2);
    let vo = asymptotic_sum(zeta, v, 1, 2);
    let (s, c) = (zeta - FRAC_PI_4).sin_cos();
    let rp = 1.0 / PI.sqrt();
    let ai = rp / z4 * (c * ue + s * uo);
    let aip = rp * z4 * (s * ve - c * vo);
    (ai, aip)
}

/// `(Ai(x), Ai'(x))` without argument checks.
#[inline]
pub(crate) fn ai_pair(x: f64) -> (f64, f64) {
    if x > POS_ASYMPTOTIC {
        asymptotic_positive(x)
    } else if x < NEG_ASYMPTOTIC {
        asymptotic_negative(x)
    } else {
        let table = anchors();
        let i = ((x - NEG_ASYMPTOTIC) / ANCHOR_STEP).round() as usize;
        let i = i.min(ANCHOR_COUNT - 1);
        let x0 = anchor_x(i);
        let (y0, dy0) = table[i];
        taylor(x0, y0, dy0, x - x0)
    }
}

fn check_arg(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(domain("airy", format!("argument must be finite, got {x}")))
    }
}

/// `Ai(x)`.
pub fn airy_ai(x: f64) -> Result<f64> {
    check_arg(x)?;
    Ok(ai_pair(x).0)
}

/// `Ai'(x)`.
pub fn airy_ai_prime(x: f64) -> Result<f64> {
    check_arg(x)?;
    Ok(ai_pair(x).1)
}

/// `(Ai(x), Ai'(x))` in one evaluation.
pub fn airy_pair(x: f64) -> Result<(f64, f64)> {
    check_arg(x)?;
    Ok(ai_pair(x))
}

/// Leading asymptotic estimate `(3 pi (4n - 1) / 8)^(2/3)` of `lambda_n`.
pub fn asymptotic_zero(n: usize) -> f64 {
    (3.0 * PI * (4.0 * n as f64 - 1.0) / 8.0).powf(2.0 / 3.0)
}

/// Higher-order asymptotic estimate (DLMF 9.9.6, 9.9.18).
fn refined_zero_guess(n: usize) -> f64 {
    let t = 3.0 * PI * (4.0 * n as f64 - 1.0) / 8.0;
    let t2 = 1.0 / (t * t);
    t.powf(2.0 / 3.0) * (1.0 + t2 * (5.0 / 48.0 + t2 * (-5.0 / 36.0 + t2 * (77125.0 / 82944.0))))
}

/// Negated zeros `lambda_n` of `Ai`, `Ai(-lambda_n) = 0`, with `Ai'(-lambda_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AiryZeroTable {
    lambdas: Vec<f64>,
    aiprime: Vec<f64>,
}

/// One gravitational quantum state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GQSMode {
    /// 1-based state index.
    pub n: usize,
    pub lambda_n: f64,
    pub aiprime_at_zero: f64,
}

/// Builds the table of the first `n_max` zeros.
pub fn airy_zeros(n_max: usize) -> Result<AiryZeroTable> {
    AiryZeroTable::new(n_max)
}

fn find_zero(n: usize) -> Result<(f64, f64)> {
    let guess = refined_zero_guess(n);
    let f = |lam: f64| ai_pair(-lam);
    // Half the local spacing pi / sqrt(lambda).
    let half = 0.5 * PI / guess.sqrt();
    let (mut lo, mut hi) = (guess - 0.6 * half, guess + 0.6 * half);
    let (mut flo, mut fhi) = (f(lo).0, f(hi).0);
    if flo * fhi > 0.0 {
        return Err(numeric(
            "airy",
            format!("no sign change bracketing zero {n}"),
        ));
    }
    let mut lam = guess;
    for _ in 0..100 {
        let (v, d) = f(lam);
        if v == 0.0 {
            break;
        }
        // d/d(lambda) Ai(-lambda) = -Ai'(-lambda)
        let mut next = lam + v / d;
        if v * flo > 0.0 {
            lo = lam;
            flo = v;
        } else {
            hi = lam;
            fhi = v;
        }
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - lam).abs();
        lam = next;
        if step <= 4.0 * f64::EPSILON * lam {
            break;
        }
    }
    let _ = fhi;
    let (_, d) = f(lam);
    Ok((lam, d))
}

impl AiryZeroTable {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max == 0 || n_max > MAX_ZEROS {
            return Err(domain(
                "airy",
                format!("zero table size must lie in [1, {MAX_ZEROS}], got {n_max}"),
            ));
        }
        let mut lambdas = Vec::with_capacity(n_max);
        let mut aiprime = Vec::with_capacity(n_max);
        for n in 1..=n_max {
            let (lam, d) = find_zero(n)?;
            lambdas.push(lam);
            aiprime.push(d);
        }
        for w in lambdas.windows(2) {
            if w[1] <= w[0] {
                return Err(numeric("airy", "zero table is not strictly increasing"));
            }
        }
        Ok(Self { lambdas, aiprime })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `Ai'(-lambda_n)` for every entry.
    pub fn aiprime(&self) -> &[f64] {
        &self.aiprime
    }

    /// `lambda_n` for the 1-based index `n`.
    pub fn lambda(&self, n: usize) -> Result<f64> {
        Ok(self.mode(n)?.lambda_n)
    }

    pub fn mode(&self, n: usize) -> Result<GQSMode> {
        if n == 0 || n > self.len() {
            return Err(domain(
                "airy",
                format!("state index {n} outside [1, {}]", self.len()),
            ));
        }
        Ok(GQSMode {
            n,
            lambda_n: self.lambdas[n - 1],
            aiprime_at_zero: self.aiprime[n - 1],
        })
    }

    pub fn modes(&self) -> impl Iterator<Item = GQSMode> + '_ {
        self.lambdas
            .iter()
            .zip(&self.aiprime)
            .enumerate()
            .map(|(i, (&l, &d))| GQSMode {
                n: i + 1,
                lambda_n: l,
                aiprime_at_zero: d,
            })
    }

    /// Table restricted to its first `n` entries.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(domain("airy", format!("cannot truncate to {n} entries")));
        }
        Ok(Self {
            lambdas: self.lambdas[..n].to_vec(),
            aiprime: self.aiprime[..n].to_vec(),
        })
    }

    /// Plain-text cache: one `lambda_n` per line, 15 significant digits.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for l in &self.lambdas {
            writeln!(out, "{l:.14e}")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a cache written by [`AiryZeroTable::write_cache`] and polishes
    /// each entry with a Newton step.
    pub fn read_cache(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lambdas = Vec::new();
        let mut aiprime = Vec::new();
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut lam: f64 = line.parse().map_err(|_| {
                domain(
                    "airy",
                    format!("cache line {}: not a number: {line}", i + 1),
                )
            })?;
            for _ in 0..2 {
                let (v, d) = ai_pair(-lam);
                lam += v / d;
            }
            lambdas.push(lam);
            aiprime.push(ai_pair(-lam).1);
        }
        if lambdas.is_empty() {
            return Err(domain("airy", "empty zero cache"));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("airy", "cached zeros are not strictly increasing"));
        }
        Ok(Self { lambdas, aiprime })
    }
}

impl GQSMode {
    /// Dimensionless profile `Ai(s - lambda_n) / Ai'(-lambda_n)` for `s >= 0`,
    /// zero below the mirror. `chi_n(z) = scaled(z / l_g) / sqrt(l_g)`.
    pub fn scaled(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        ai_pair(s - self.lambda_n).0 / self.aiprime_at_zero
    }

    /// Dimensionless extent of the mode, `lambda_n + 15`.
    pub fn support(&self) -> f64 {
        self.lambda_n + MODE_TAIL
    }

    /// `chi_n(z)` in m^(-1/2).
    pub fn eigenfunction(&self, z: f64, scales: &ScaleSet) -> f64 {
        self.scaled(z / scales.l_g) / scales.l_g.sqrt()
    }

    /// Half-line Fourier transform in dimensionless momentum
    /// `kappa = p l_g / hbar`:
    /// `(2 pi)^(-1/2) int_0^inf scaled(s) exp(-i kappa s) ds`.
    pub fn momentum_scaled(&self, kappa: f64) -> Complex64 {
        let rule = self.momentum_rule(kappa);
        let mut acc = Complex64::new(0.0, 0.0);
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            let (si, co) = (kappa * s).sin_cos();
            acc += Complex64::new(co, -si) * (w * self.scaled(s));
        }
        acc / (2.0 * PI).sqrt()
    }

    fn momentum_rule(&self, kappa: f64) -> CompositeRule {
        let k_max = self.lambda_n.sqrt() + kappa.abs() + 1.0;
        CompositeRule::resolving(0.0, self.support(), k_max, 3.0, 16)
    }

    /// `chi~_n(p)` in (kg m/s)^(-1/2).
    pub fn eigenfunction_momentum(&self, p: f64, scales: &ScaleSet) -> Complex64 {
        let kappa = p / scales.p_g();
        self.momentum_scaled(kappa) / scales.p_g().sqrt()
    }
}

/// `chi_n(z)` for the 1-based state `n` of `table`.
pub fn eigenfunction(table: &AiryZeroTable, n: usize, z: f64, scales: &ScaleSet) -> Result<f64> {
    Ok(table.mode(n)?.eigenfunction(z, scales))
}

/// `chi~_n(p_z)` for the 1-based state `n` of `table`.
pub fn eigenfunction_momentum(
    table: &AiryZeroTable,
    n: usize,
    p_z: f64,
    scales: &ScaleSet,
) -> Result<Complex64> {
    Ok(table.mode(n)?.eigenfunction_momentum(p_z, scales))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physcore::derive_scales;

    /// mpmath (40 digits) reference values of (x, Ai(x), Ai'(x)).
    const REFERENCE: &[(f64, f64, f64)] = &[
        (-50.0, -0.161_881_423_612_320_9, 0.968_989_837_276_749),
        (-37.7, -0.209_321_616_363_866_4, 0.548_687_682_922_841_6),
        (-20.0, -0.176_406_127_077_984_7, 0.892_862_856_736_471_3),
        (-12.3, -0.287_472_080_256_441_6, 0.310_078_788_142_014_1),
        (-10.0, 0.040_241_238_486_443_19, 0.996_265_044_132_79),
        (-8.7, -0.269_204_540_700_509_7, -0.562_976_849_501_853),
        (-7.1, 0.254_036_328_561_978_16, -0.615_528_787_540_228_8),
        (-5.5, 0.017_781_541_276_574_976, 0.864_197_217_771_398_4),
        (-4.2, 0.089_210_763_239_450_72, -0.782_215_607_862_451_9),
        (-3.0, -0.378_814_293_677_658_06, 0.314_583_769_216_598_8),
        (-2.33, 0.005_684_858_596_471_405, 0.701_157_065_509_024_7),
        (-1.0, 0.535_560_883_292_352_1, -0.010_160_567_116_645_21),
        (-0.4, 0.454_225_613_888_667_4, -0.225_031_409_302_415_03),
        (0.0, 0.355_028_053_887_817_2, -0.258_819_403_792_806_8),
        (0.3, 0.278_806_481_955_004_9, -0.245_146_364_219_054_8),
        (1.0, 0.135_292_416_312_881_41, -0.159_147_441_296_793_2),
        (1.7, 0.054_324_792_732_919_47, -0.077_374_889_525_325_04),
        (2.5, 0.015_725_923_380_470_49, -0.026_250_881_035_903_232),
        (3.3, 0.003_787_288_426_826_754_7, -0.007_142_487_785_884_74),
        (
            4.9,
            0.000_135_992_117_015_067_43,
            -0.000_307_615_996_337_649_5,
        ),
        (
            6.0,
            9.947_694_360_252_889e-6,
            -0.000_024_765_200_397_034_955,
        ),
        (7.4, 2.527_171_939_266_75e-7, -6.957_555_402_080_587e-7),
        (8.8, 4.512_440_519_153_694e-9, -1.351_134_935_995_57e-8),
        (
            10.0,
            1.104_753_255_289_868_6e-10,
            -3.520_633_676_738_923_7e-10,
        ),
        (12.5, 2.396_827_826_078_05e-14, -8.521_346_564_673_856e-14),
        (
            20.0,
            1.691_672_868_670_540_4e-27,
            -7.586_391_625_748_354e-27,
        ),
        (37.0, 7.869_720_746_886_6e-67, -4.792_266_958_198_736e-66),
        (
            50.0,
            4.584_941_724_074_828_5e-104,
            -3.244_331_819_828_799e-103,
        ),
    ];

    #[test]
    fn matches_high_precision_reference() {
        for &(x, ai, aip) in REFERENCE {
            let (a, d) = airy_pair(x).unwrap();
            assert!(((a - ai) / ai).abs() < 1e-10, "Ai({x}) = {a}, want {ai}");
            assert!(
                ((d - aip) / aip).abs() < 1e-10,
                "Ai'({x}) = {d}, want {aip}"
            );
        }
    }

    #[test]
    fn large_negative_arguments() {
        for &(x, ai, aip) in &[
            (-800.5, 0.104_145_552_713_583_22, -0.568_752_267_144_529_8),
            (-200.25, -0.144_461_479_328_265_67, -0.570_577_611_136_004_5),
        ] {
            let (a, d) = airy_pair(x).unwrap();
            let x4 = (-x).powf(0.25);
            assert!((a - ai).abs() < 1e-10 / x4, "Ai({x})");
            assert!((d - aip).abs() < 1e-10 * x4, "Ai'({x})");
        }
    }

    #[test]
    fn value_at_origin() {
        assert!((airy_ai(0.0).unwrap() - 0.3550280539).abs() < 1e-10);
    }

    #[test]
    fn decays_for_positive_arguments() {
        let v = airy_ai(10.0).unwrap();
        assert!(v > 0.0 && v < 1e-9);
        assert_eq!(airy_ai(1000.0).unwrap(), 0.0);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(airy_ai(f64::NAN).is_err());
        assert!(airy_ai_prime(f64::INFINITY).is_err());
    }

    #[test]
    fn backward_anchor_chain_reaches_exact_origin() {
        // Step from the asymptotic value at x = 10 down to 0 and compare
        // with the closed-form Ai(0), Ai'(0).
        let (mut y, mut dy) = asymptotic_positive(POS_ASYMPTOTIC);
        let mut x = POS_ASYMPTOTIC;
        while x > 1e-12 {
            let r = taylor(x, y, dy, -ANCHOR_STEP);
            y = r.0;
            dy = r.1;
            x -= ANCHOR_STEP;
        }
        assert!((y - AI_ZERO).abs() < 1e-14, "{y}");
        assert!((dy - AI_PRIME_ZERO).abs() < 1e-14, "{dy}");
    }

    #[test]
    fn seams_are_continuous() {
        for x in [POS_ASYMPTOTIC, NEG_ASYMPTOTIC] {
            let series = {
                let i = ((x - NEG_ASYMPTOTIC) / ANCHOR_STEP).round() as usize;
                let j = if x > 0.0 { i - 1 } else { i + 1 };
                let (y, dy) = anchors()[j];
                taylor(anchor_x(j), y, dy, x - anchor_x(j))
            };
            let asym = if x > 0.0 {
                asymptotic_positive(x)
            } else {
                asymptotic_negative(x)
            };
            assert!(((series.0 - asym.0) / asym.0).abs() < 1e-12, "seam {x}");
            assert!(((series.1 - asym.1) / asym.1).abs() < 1e-12, "seam {x}");
        }
    }

    #[test]
    fn satisfies_airy_equation() {
        let h = 1e-3;
        for i in 0..200 {
            let x = -40.0 + 0.25 * i as f64;
            let f = |x| airy_ai(x).unwrap();
            let second = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
            let scale = 1.0 + x.abs();
            assert!((second - x * f(x)).abs() < 1e-5 * scale, "x = {x}");
        }
    }

    fn bisect_zero(mut lo: f64, mut hi: f64) -> f64 {
        let f = |l: f64| airy_ai(-l).unwrap();
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) * flo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn first_zeros() {
        let t = airy_zeros(3).unwrap();
        let l1 = bisect_zero(2.0, 3.0);
        let l2 = bisect_zero(3.5, 4.5);
        assert!((t.lambda(1).unwrap() - 2.338107410).abs() < 1e-9);
        assert!((t.lambda(2).unwrap() - 4.087949444).abs() < 1e-9);
        assert!((t.lambda(1).unwrap() - l1).abs() < 1e-12);
        assert!((t.lambda(2).unwrap() - l2).abs() < 1e-12);
        assert!((t.lambda(3).unwrap() - 5.520_559_828_095_551).abs() < 1e-12);
    }

    #[test]
    fn far_zeros_match_reference() {
        let t = airy_zeros(1000).unwrap();
        let want = [
            (10, 12.828_776_752_865_757),
            (100, 60.455_557_274_116_7),
            (1000, 281.031_519_612_521_55),
        ];
        for (n, l) in want {
            let got = t.lambda(n).unwrap();
            assert!(((got - l) / l).abs() < 1e-12, "lambda_{n} = {got}");
        }
        for (i, l) in t.lambdas().iter().enumerate().skip(19) {
            let a = asymptotic_zero(i + 1);
            assert!(((l - a) / l).abs() < 1e-3);
        }
        for m in t.modes() {
            assert!(airy_ai(-m.lambda_n).unwrap().abs() < 1e-9);
            assert!(m.aiprime_at_zero != 0.0);
        }
    }

    #[test]
    fn table_size_limits() {
        assert!(airy_zeros(0).is_err());
        assert!(airy_zeros(MAX_ZEROS + 1).is_err());
        let t = airy_zeros(5).unwrap();
        assert!(t.mode(0).is_err());
        assert!(t.mode(6).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let t = airy_zeros(50).unwrap();
        let dir = std::env::temp_dir().join(format!("airy-cache-{}", std::process::id()));
        t.write_cache(&dir).unwrap();
        let back = AiryZeroTable::read_cache(&dir).unwrap();
        std::fs::remove_file(&dir).ok();
        for (a, b) in t.lambdas().iter().zip(back.lambdas()) {
            assert!((a - b).abs() < 1e-13 * a);
        }
    }

    fn overlap(a: &GQSMode, b: &GQSMode) -> f64 {
        let top = a.support().max(b.support());
        CompositeRule::resolving(
            0.0,
            top,
            a.lambda_n.sqrt().max(b.lambda_n.sqrt()) + 1.0,
            2.0,
            16,
        )
        .integrate(|s| a.scaled(s) * b.scaled(s))
    }

    #[test]
    fn eigenfunctions_are_orthonormal() {
        let t = airy_zeros(20).unwrap();
        let modes: Vec<_> = t.modes().collect();
        for a in &modes {
            for b in &modes {
                let want = if a.n == b.n { 1.0 } else { 0.0 };
                let got = overlap(a, b);
                assert!((got - want).abs() < 1e-8, "<{}|{}> = {got}", a.n, b.n);
            }
        }
    }

    #[test]
    fn eigenfunction_vanishes_on_mirror() {
        let s = derive_scales(9.81).unwrap();
        let t = airy_zeros(30).unwrap();
        for n in 1..=30 {
            assert!(eigenfunction(&t, n, 0.0, &s).unwrap().abs() < 1e-9 / s.l_g.sqrt());
            assert_eq!(eigenfunction(&t, n, -1e-6, &s).unwrap(), 0.0);
        }
        assert!(eigenfunction(&t, 31, 1e-6, &s).is_err());
    }

    #[test]
    fn eigen_equation_residual() {
        // -chi'' + s chi - lambda chi = 0 in gravitational units.
        let t = airy_zeros(10).unwrap();
        let h = 1e-3;
        for m in t.modes() {
            let mut res = 0.0;
            let mut norm = 0.0;
            let steps = 2000;
            for i in 1..steps {
                let s = m.lambda_n * i as f64 / steps as f64;
                let f = |s| m.scaled(s);
                let d2 = (f(s + h) - 2.0 * f(s) + f(s - h)) / (h * h);
                let r = -d2 + (s - m.lambda_n) * f(s);
                res += r * r;
                norm += d2 * d2 + (s * f(s)).powi(2) + (m.lambda_n * f(s)).powi(2);
            }
            assert!((res / norm).sqrt() < 1e-4, "mode {}", m.n);
        }
    }

    #[test]
    fn momentum_transform_parseval_and_symmetry() {
        let t = airy_zeros(3).unwrap();
        for m in t.modes() {
            let rule = CompositeRule::new(-60.0, 60.0, 480, 8);
            let norm = rule.integrate(|k| m.momentum_scaled(k).norm_sqr());
            assert!((norm - 1.0).abs() < 1e-6, "mode {} norm {norm}", m.n);
            for k in [0.3, 1.7, 4.0] {
                let a = m.momentum_scaled(k);
                let b = m.momentum_scaled(-k);
                assert!((a - b.conj()).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn ground_state_momentum_peak() {
        // Direct fine-grid trapezoid oracle for |chi~_1|^2 on a momentum grid.
        let s = derive_scales(9.81).unwrap();
        let t = airy_zeros(1).unwrap();
        let m = t.mode(1).unwrap();
        let oracle = |kappa: f64| {
            let n = 40_000;
            let top = m.support();
            let h = top / n as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..=n {
                let x = i as f64 * h;
                let w = if i == 0 || i == n { 0.5 * h } else { h };
                acc += Complex64::from_polar(w * m.scaled(x), -kappa * x);
            }
            (acc / (2.0 * PI).sqrt()).norm_sqr()
        };
        let mut best = (0.0, 0.0);
        for i in 0..=80 {
            let kappa = i as f64 * 0.05;
            let v = m.momentum_scaled(kappa).norm_sqr();
            assert!((v - oracle(kappa)).abs() < 1e-7);
            if v > best.1 {
                best = (kappa, v);
            }
        }
        let p_peak = best.0 * s.p_g();
        assert!(p_peak <= s.mass * s.v_g * m.lambda_n.sqrt());
    }
}
