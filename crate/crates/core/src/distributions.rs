//! Zero-mean, unit-variance innovation distributions: normal, Student-t and
//! the Fernandez–Steel skewed Student-t, re-centred and re-scaled.
//!
//! Every family is expressed through a symmetric unit-variance base density
//! `s`, its CDF `S` and its lower partial first moment
//! `P(a) = ∫_{-∞}^{a} u s(u) du`. The skewed family splits the base at zero
//! with inverse scale factors `xi` and `1/xi`, which keeps the CDF, quantile
//! and partial moment in closed form.

use libm::erfc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT as TDist};
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, gamma::ln_gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistributionKind {
    Normal,
    StudentT,
    SkewStudentT,
}

impl std::str::FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "norm" | "n" => Ok(DistributionKind::Normal),
            "std" | "t" | "student" | "student-t" => Ok(DistributionKind::StudentT),
            "sstd" | "skew-t" | "skewt" | "skew-student-t" => Ok(DistributionKind::SkewStudentT),
            other => Err(Error::Domain(format!("unknown distribution '{other}'"))),
        }
    }
}

impl std::fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistributionKind::Normal => "normal",
            DistributionKind::StudentT => "student-t",
            DistributionKind::SkewStudentT => "skew-t",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    /// Degrees of freedom, `> 2`. Unused for the normal.
    pub nu: Option<f64>,
    /// Skew parameter, `> 0`; `1` is symmetric. Skewed family only.
    pub xi: Option<f64>,
}

impl DistributionSpec {
    pub fn normal() -> Self {
        Self { kind: DistributionKind::Normal, nu: None, xi: None }
    }

    pub fn student_t(nu: f64) -> Self {
        Self { kind: DistributionKind::StudentT, nu: Some(nu), xi: None }
    }

    pub fn skew_t(nu: f64, xi: f64) -> Self {
        Self { kind: DistributionKind::SkewStudentT, nu: Some(nu), xi: Some(xi) }
    }

    pub fn validate(&self) -> Result<()> {
        let need_nu = |nu: Option<f64>| match nu {
            Some(v) if v > 2.0 && v.is_finite() => Ok(v),
            other => Err(Error::Domain(format!("degrees of freedom must be finite and > 2, got {other:?}"))),
        };
        match self.kind {
            DistributionKind::Normal => Ok(()),
            DistributionKind::StudentT => need_nu(self.nu).map(|_| ()),
            DistributionKind::SkewStudentT => {
                need_nu(self.nu)?;
                match self.xi {
                    Some(x) if x > 0.0 && x.is_finite() => Ok(()),
                    other => Err(Error::Domain(format!("skew parameter must be > 0, got {other:?}"))),
                }
            }
        }
    }

    /// Validates and precomputes the constants shared by every evaluation.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let base = match self.nu {
            Some(nu) if self.kind != DistributionKind::Normal => Base::student(nu),
            _ => Base::Normal,
        };
        let skew = match (self.kind, self.xi) {
            (DistributionKind::SkewStudentT, Some(xi)) => Some(Skew::new(&base, xi)),
            _ => None,
        };
        Ok(Prepared { base, skew })
    }
}

pub fn density(spec: &DistributionSpec, z: f64) -> Result<f64> {
    Ok(spec.prepare()?.pdf(z))
}

pub fn cdf(spec: &DistributionSpec, z: f64) -> Result<f64> {
    Ok(spec.prepare()?.cdf(z))
}

pub fn quantile(spec: &DistributionSpec, alpha: f64) -> Result<f64> {
    spec.prepare()?.quantile(alpha)
}

/// `E|z|`.
pub fn abs_moment(spec: &DistributionSpec) -> Result<f64> {
    Ok(spec.prepare()?.abs_moment())
}

/// `E(z | z < q_alpha)`.
pub fn tail_expectation(spec: &DistributionSpec, alpha: f64) -> Result<f64> {
    spec.prepare()?.tail_expectation(alpha)
}

/// `n` deterministic draws for the given seed.
pub fn sample(spec: &DistributionSpec, seed: u64, n: usize) -> Result<Vec<f64>> {
    let prepared = spec.prepare()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| prepared.draw(&mut rng)).collect())
}

/// Symmetric unit-variance base law.
#[derive(Debug, Clone, Copy)]
enum Base {
    Normal,
    T {
        nu: f64,
        /// `sqrt((nu - 2) / nu)`, maps the classical t onto unit variance.
        k: f64,
        /// Log normalising constant of the classical t density.
        ln_c: f64,
    },
}

impl Base {
    fn student(nu: f64) -> Self {
        let ln_c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
        Base::T { nu, k: ((nu - 2.0) / nu).sqrt(), ln_c }
    }

    fn ln_pdf(&self, u: f64) -> f64 {
        match *self {
            Base::Normal => -0.5 * u * u - LN_SQRT_2PI,
            Base::T { nu, k, ln_c } => {
                let b = u / k;
                ln_c - 0.5 * (nu + 1.0) * (b * b / nu).ln_1p() - k.ln()
            }
        }
    }

    fn pdf(&self, u: f64) -> f64 {
        self.ln_pdf(u).exp()
    }

    fn cdf(&self, u: f64) -> f64 {
        match *self {
            Base::Normal => normal_cdf(u),
            Base::T { nu, k, .. } => t_cdf(u / k, nu),
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        match *self {
            Base::Normal => normal_quantile(p),
            Base::T { nu, k, .. } => k * t_quantile(p, nu),
        }
    }

    fn partial_moment(&self, a: f64) -> f64 {
        match *self {
            Base::Normal => -INV_SQRT_2PI * (-0.5 * a * a).exp(),
            Base::T { nu, k, ln_c } => {
                if a == f64::NEG_INFINITY {
                    return 0.0;
                }
                let b = a / k;
                let t_pdf = (ln_c - 0.5 * (nu + 1.0) * (b * b / nu).ln_1p()).exp();
                -k * (nu + b * b) / (nu - 1.0) * t_pdf
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Base::Normal => rng.sample(StandardNormal),
            Base::T { nu, k, .. } => {
                let t = TDist::new(nu).expect("nu validated");
                k * t.sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Skew {
    xi: f64,
    /// `2 / (xi + 1/xi)`
    g: f64,
    mu: f64,
    sigma: f64,
    /// Mass of the raw skewed variable below zero, `1 / (1 + xi^2)`.
    p0: f64,
}

impl Skew {
    fn new(base: &Base, xi: f64) -> Self {
        let m1 = -2.0 * base.partial_moment(0.0);
        let mu = m1 * (xi - 1.0 / xi);
        let var = (1.0 - m1 * m1) * (xi * xi + 1.0 / (xi * xi)) + 2.0 * m1 * m1 - 1.0;
        Self { xi, g: 2.0 / (xi + 1.0 / xi), mu, sigma: var.sqrt(), p0: 1.0 / (1.0 + xi * xi) }
    }

    fn raw_pdf(&self, base: &Base, x: f64) -> f64 {
        if x < 0.0 {
            self.g * base.pdf(x * self.xi)
        } else {
            self.g * base.pdf(x / self.xi)
        }
    }

    fn raw_cdf(&self, base: &Base, x: f64) -> f64 {
        if x < 0.0 {
            self.g / self.xi * base.cdf(x * self.xi)
        } else {
            self.p0 + self.g * self.xi * (base.cdf(x / self.xi) - 0.5)
        }
    }

    fn raw_quantile(&self, base: &Base, p: f64) -> f64 {
        if p < self.p0 {
            base.quantile(p * self.xi / self.g) / self.xi
        } else {
            self.xi * base.quantile((p - self.p0) / (self.g * self.xi) + 0.5)
        }
    }

    fn raw_partial_moment(&self, base: &Base, c: f64) -> f64 {
        let xi2 = self.xi * self.xi;
        if c < 0.0 {
            self.g / xi2 * base.partial_moment(c * self.xi)
        } else {
            let at_zero = base.partial_moment(0.0);
            self.g / xi2 * at_zero + self.g * xi2 * (base.partial_moment(c / self.xi) - at_zero)
        }
    }
}

/// A validated distribution with its constants precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Prepared {
    base: Base,
    skew: Option<Skew>,
}

impl Prepared {
    pub fn ln_pdf(&self, z: f64) -> f64 {
        match &self.skew {
            None => self.base.ln_pdf(z),
            Some(s) => {
                let x = z * s.sigma + s.mu;
                let u = if x < 0.0 { x * s.xi } else { x / s.xi };
                s.g.ln() + self.base.ln_pdf(u) + s.sigma.ln()
            }
        }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        match &self.skew {
            None => self.base.pdf(z),
            Some(s) => s.sigma * s.raw_pdf(&self.base, z * s.sigma + s.mu),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match &self.skew {
            None => self.base.cdf(z),
            Some(s) => s.raw_cdf(&self.base, z * s.sigma + s.mu),
        }
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(match &self.skew {
            None => self.base.quantile(alpha),
            Some(s) => (s.raw_quantile(&self.base, alpha) - s.mu) / s.sigma,
        })
    }

    /// `E[z; z < q] = ∫_{-∞}^{q} z f(z) dz`.
    pub fn partial_moment(&self, q: f64) -> f64 {
        match &self.skew {
            None => self.base.partial_moment(q),
            Some(s) => {
                let c = q * s.sigma + s.mu;
                (s.raw_partial_moment(&self.base, c) - s.mu * s.raw_cdf(&self.base, c)) / s.sigma
            }
        }
    }

    pub fn abs_moment(&self) -> f64 {
        // zero mean: E|z| = -2 E[z; z < 0]
        -2.0 * self.partial_moment(0.0)
    }

    pub fn tail_expectation(&self, alpha: f64) -> Result<f64> {
        let q = self.quantile(alpha)?;
        Ok(self.partial_moment(q) / alpha)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.skew {
            None => self.base.draw(rng),
            Some(s) => {
                let w = self.base.draw(rng).abs();
                let u: f64 = rng.random();
                let x = if u < 1.0 - s.p0 { s.xi * w } else { -w / s.xi };
                (x - s.mu) / s.sigma
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability must lie in (0, 1), got {alpha}")))
    }
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Acklam's rational approximation refined by one Halley step.
pub(crate) fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] =
        [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e / normal_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Classical Student-t CDF with `nu` degrees of freedom.
pub(crate) fn t_cdf(t: f64, nu: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = nu / (nu + t * t);
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, x);
    if t < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn t_pdf(t: f64, nu: f64) -> f64 {
    let ln_c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_c - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()).exp()
}

/// Classical Student-t quantile: safeguarded Newton inside a bisection bracket.
pub(crate) fn t_quantile(p: f64, nu: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    // solve in the lower half and reflect, which keeps the CDF evaluation
    // in its accurate tail branch
    let (target, lower) = if p < 0.5 { (p, true) } else { (1.0 - p, false) };
    let mut hi = 0.0;
    let mut lo = -1.0;
    while t_cdf(lo, nu) > target {
        hi = lo;
        lo *= 2.0;
        if lo < -1e300 {
            break;
        }
    }
    let mut x = normal_quantile(target).clamp(lo, hi);
    for _ in 0..200 {
        let f = t_cdf(x, nu) - target;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = t_pdf(x, nu);
        let mut next = x - f / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-14 * x.abs().max(1.0) || hi - lo <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    if lower {
        x
    } else {
        -x
    }
}

/// Upper tail of the chi-squared distribution with `k` degrees of freedom.
pub(crate) fn chi2_sf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(0.5 * k, 0.5 * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_density_at_mode() {
        let d = density(&DistributionSpec::normal(), 0.0).unwrap();
        assert!((d - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn student_density_limit() {
        let d = density(&DistributionSpec::student_t(1e6), 0.0).unwrap();
        assert!((d - 0.398_94).abs() < 1e-3);
    }

    #[test]
    fn normal_quantile_median_and_tails() {
        let n = DistributionSpec::normal();
        assert_eq!(quantile(&n, 0.5).unwrap(), 0.0);
        assert!((quantile(&n, 0.05).unwrap() + 1.644_853_626_951_472_9).abs() < 1e-13);
        assert!((quantile(&n, 0.99).unwrap() - 2.326_347_874_040_840_8).abs() < 1e-13);
    }

    #[test]
    fn t_quantile_matches_tabulated() {
        assert!((t_quantile(0.95, 5.0) - 2.015_048_373_333_023).abs() < 1e-12);
        assert!((t_quantile(0.05, 5.0) + 2.015_048_373_333_023).abs() < 1e-12);
        assert!((t_quantile(0.975, 30.0) - 2.042_272_456_301_237).abs() < 1e-12);
    }

    #[test]
    fn quantile_domain_errors() {
        let n = DistributionSpec::normal();
        assert!(matches!(quantile(&n, 0.0), Err(Error::Domain(_))));
        assert!(matches!(quantile(&n, 1.0), Err(Error::Domain(_))));
        assert!(matches!(tail_expectation(&n, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_specs() {
        assert!(DistributionSpec::student_t(2.0).validate().is_err());
        assert!(DistributionSpec::skew_t(5.0, 0.0).validate().is_err());
        assert!(DistributionSpec { kind: DistributionKind::StudentT, nu: None, xi: None }.validate().is_err());
    }

    #[test]
    fn normal_tail_expectation_closed_form() {
        let n = DistributionSpec::normal();
        let q = quantile(&n, 0.05).unwrap();
        let te = tail_expectation(&n, 0.05).unwrap();
        assert!((te + normal_pdf(q) / 0.05).abs() < 1e-14);
    }

    #[test]
    fn normal_tail_expectation_near_one() {
        let te = tail_expectation(&DistributionSpec::normal(), 1.0 - 1e-6).unwrap();
        assert!(te.abs() < 1e-3);
    }

    #[test]
    fn abs_moment_normal() {
        let m = abs_moment(&DistributionSpec::normal()).unwrap();
        assert!((m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let m = abs_moment(&DistributionSpec::student_t(1e6)).unwrap();
        assert!((m - 0.797_88).abs() < 1e-4);
    }

    #[test]
    fn chi2_tail_values() {
        assert!((chi2_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-12);
        assert!((chi2_sf(5.991_464_547_107_979, 2.0) - 0.05).abs() < 1e-12);
        assert_eq!(chi2_sf(0.0, 1.0), 1.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = DistributionSpec::skew_t(5.0, 1.5);
        assert_eq!(sample(&s, 7, 100).unwrap(), sample(&s, 7, 100).unwrap());
        assert_ne!(sample(&s, 7, 100).unwrap(), sample(&s, 8, 100).unwrap());
    }
}
