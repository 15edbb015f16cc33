//! Closed-form exponents, amplitudes and asymptotic regimes of self-similar
//! solutions for the kernel `K(x, y) = (xy)^s`, `s < 1/2`.
//!
//! Everything here is an explicit formula; the only numerics are the special
//! functions from [`crate::specfun`]. The Laplace-space helpers
//! (`laplace_*`, [`residual_lb`]) reproduce the first-order perturbation
//! around the constant kernel and check that the order-ε compatibility
//! condition singles out `β = -1 - 2ε`.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{dilog, gamma_fn, EULER_GAMMA};

/// Sign class of the kernel exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Negative,
    Zero,
    Positive,
}

/// Kernel exponent `s` of `K(x, y) = (xy)^s`, restricted to `s < 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    s: f64,
}

impl KernelSpec {
    pub fn new(s: f64) -> Result<Self> {
        if !s.is_finite() || s >= 0.5 {
            return Err(Error::domain("kernel exponent", s, "s < 1/2"));
        }
        Ok(Self { s })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn regime(&self) -> Regime {
        if self.s < 0.0 {
            Regime::Negative
        } else if self.s == 0.0 {
            Regime::Zero
        } else {
            Regime::Positive
        }
    }

    /// `K(x, y) = (xy)^s`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (x * y).powf(self.s)
    }
}

/// Similarity exponents of `c(x, t) ~ t^α f(t^β x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityExponents {
    pub beta: f64,
    pub alpha: f64,
    /// Set when `beta` is a truncated expansion rather than an exact value.
    pub approximate: bool,
}

impl SimilarityExponents {
    /// Builds the pair from `β`, with `α = (2s+1)β - 1`.
    pub fn from_beta(s: f64, beta: f64, approximate: bool) -> Self {
        Self {
            beta,
            alpha: alpha_from_beta(s, beta),
            approximate,
        }
    }
}

pub fn alpha_from_beta(s: f64, beta: f64) -> f64 {
    (2.0 * s + 1.0) * beta - 1.0
}

/// Exact `β = -1/(1-2s)` for `s <= 0`; first-order `β ≈ -1 - 2s` for `0 < s < 1/2`.
pub fn exponents_for(kernel: KernelSpec) -> SimilarityExponents {
    let s = kernel.s();
    match kernel.regime() {
        Regime::Negative => SimilarityExponents::from_beta(s, -1.0 / (1.0 - 2.0 * s), false),
        Regime::Zero => SimilarityExponents::from_beta(s, -1.0, false),
        Regime::Positive => SimilarityExponents::from_beta(s, -1.0 - 2.0 * s, true),
    }
}

/// Amplitude `A = -2Γ(-2s)/Γ²(-s)` of the origin power law `f ~ A ξ^{-1-2s}`, `0 < s < 1/2`.
pub fn origin_amplitude(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 0.5) {
        return Err(Error::domain("origin amplitude", s, "0 < s < 1/2"));
    }
    let g = gamma_fn(-s)?;
    Ok(-2.0 * gamma_fn(-2.0 * s)? / (g * g))
}

/// Prefactor convention for the Gamma-distribution tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPrefactor {
    /// `Γ(2+2s)/Γ²(1+s)`, as usually quoted.
    #[default]
    Printed,
    /// `Γ(2-2s)/Γ²(1-s)`, the Beta integral evaluated with `δ = -2s`.
    BetaIntegral,
}

/// Tail constant `B = -2β·amplitude·Γ(..)/Γ²(..)`.
pub fn tail_constant(s: f64, beta: f64, amplitude: f64, prefactor: TailPrefactor) -> Result<f64> {
    let ratio = match prefactor {
        TailPrefactor::Printed => {
            let g = gamma_fn(1.0 + s)?;
            gamma_fn(2.0 + 2.0 * s)? / (g * g)
        }
        TailPrefactor::BetaIntegral => {
            let g = gamma_fn(1.0 - s)?;
            gamma_fn(2.0 - 2.0 * s)? / (g * g)
        }
    };
    Ok(-2.0 * beta * amplitude * ratio)
}

/// Large-ξ profile `B ξ^{-2s} e^{-ξ}`.
pub fn tail_profile(
    xi: f64,
    s: f64,
    beta: f64,
    amplitude: f64,
    prefactor: TailPrefactor,
) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::domain("tail profile", xi, "xi > 0"));
    }
    let b = tail_constant(s, beta, amplitude, prefactor)?;
    Ok(b * (-2.0 * s * xi.ln() - xi).exp())
}

/// Small-ξ profile for `s < 0`: `A ξ^{-(2s+1-1/β)} exp(-G ξ^s/(βs))`.
///
/// Evaluated in log space; returns exactly 0 at `ξ = 0` and wherever the
/// exponential underflows.
pub fn origin_profile_negative(xi: f64, s: f64, beta: f64, g: f64, amplitude: f64) -> Result<f64> {
    if !(s < 0.0) {
        return Err(Error::domain("origin profile", s, "s < 0"));
    }
    if !(beta < 0.0) {
        return Err(Error::domain("origin profile", beta, "beta < 0"));
    }
    if !(g > 0.0) {
        return Err(Error::domain("origin profile", g, "G > 0"));
    }
    if xi < 0.0 {
        return Err(Error::domain("origin profile", xi, "xi >= 0"));
    }
    if xi == 0.0 {
        return Ok(0.0);
    }
    let p = 2.0 * s + 1.0 - 1.0 / beta;
    let log = -p * xi.ln() - g * xi.powf(s) / (beta * s);
    Ok(amplitude * log.exp())
}

/// Small-ε root of the perturbation exponent equation near the origin power law:
/// `α = (√(ε²|β|² + 8ε|β| + 4) + ε|β| - 2) / (2|β|)`.
pub fn perturb_exponent_alpha(eps: f64, beta: f64) -> Result<f64> {
    let b = beta.abs();
    if b == 0.0 {
        return Err(Error::domain("perturbation exponent", beta, "beta != 0"));
    }
    let disc = eps * eps * b * b + 8.0 * eps * b + 4.0;
    if disc < 0.0 {
        return Err(Error::domain("perturbation exponent", eps, "non-negative discriminant"));
    }
    Ok((disc.sqrt() + eps * b - 2.0) / (2.0 * b))
}

/// `(1/|β| + α) - A (1/|β|) Γ(α-ε)Γ(-ε)/Γ(α-2ε)`; zero at roots of the exponent equation.
pub fn eqint_residual(alpha: f64, eps: f64, beta: f64, a: f64) -> Result<f64> {
    let b = beta.abs();
    let lhs = 1.0 / b + alpha;
    if a == 0.0 {
        return Ok(lhs);
    }
    let ratio = gamma_fn(alpha - eps)? * gamma_fn(-eps)? / gamma_fn(alpha - 2.0 * eps)?;
    Ok(lhs - a / b * ratio)
}

/// First-order expansion `q(ε) = order0 + order1·ε + O(ε²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsExpansion {
    pub order0: f64,
    pub order1: f64,
}

impl EpsExpansion {
    pub fn eval(&self, eps: f64) -> f64 {
        self.order0 + self.order1 * eps
    }
}

/// `G(ε) = 2 + (2γ + 4π²/3 - 8)ε`.
pub fn g_expansion() -> EpsExpansion {
    let g = EULER_GAMMA;
    EpsExpansion {
        order0: 2.0,
        order1: 2.0 * g + 4.0 * PI * PI / 3.0 - 8.0,
    }
}

/// `a(ε) = 2 + (4γ² - 16γ + (8/3)γπ² + 2π² - 12)ε`.
pub fn a_expansion() -> EpsExpansion {
    let g = EULER_GAMMA;
    let pi2 = PI * PI;
    EpsExpansion {
        order0: 2.0,
        order1: 4.0 * g * g - 16.0 * g + 8.0 / 3.0 * g * pi2 + 2.0 * pi2 - 12.0,
    }
}

/// First-order `β(ε) = -1 - 2ε`.
pub fn beta_expansion() -> EpsExpansion {
    EpsExpansion {
        order0: -1.0,
        order1: -2.0,
    }
}

pub fn eps_expansion_g(eps: f64) -> f64 {
    g_expansion().eval(eps)
}

pub fn eps_expansion_a(eps: f64) -> f64 {
    a_expansion().eval(eps)
}

/// Coefficient of `log ξ` in the lognormal intermediate region.
fn lognormal_linear_coefficient() -> f64 {
    2.0 * EULER_GAMMA + 4.0 * PI * PI / 3.0 - 4.0
}

/// Lognormal intermediate region `a·exp(ε(log ξ)² + ε(2γ + 4π²/3 - 4) log ξ)`.
pub fn lognormal_mid(xi: f64, eps: f64, a: f64) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::domain("lognormal profile", xi, "xi > 0"));
    }
    let l = xi.ln();
    Ok(a * (eps * l * l + eps * lognormal_linear_coefficient() * l).exp())
}

/// Maximum of [`lognormal_mid`] over ξ: `a·exp(-ε(γ + 2π²/3 - 2)²)`.
pub fn lognormal_peak(eps: f64, a: f64) -> f64 {
    let c = 0.5 * lognormal_linear_coefficient();
    a * (-eps * c * c).exp()
}

/// Which large-n form of the profile for `s = -n` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaussianForm {
    /// `(8/(e√π))·√n·4ⁿ·ξⁿ·exp(-4nξ/e)`.
    #[default]
    Tail,
    /// `(8/(e√π))·√n·exp(-n(ξ - e/4)²/2)`.
    Peak,
}

/// Large-n profiles for integer `s = -n`.
pub fn gaussian_limit_profile(xi: f64, n: u32, form: GaussianForm) -> Result<f64> {
    if n == 0 {
        return Err(Error::Invalid("gaussian limit profile needs n >= 1".into()));
    }
    if !(xi > 0.0) {
        return Err(Error::domain("gaussian limit profile", xi, "xi > 0"));
    }
    let nf = n as f64;
    let pre = 8.0 / (E * PI.sqrt()) * nf.sqrt();
    Ok(match form {
        GaussianForm::Tail => {
            pre * (nf * (4.0f64.ln() + xi.ln()) - 4.0 / E * nf * xi).exp()
        }
        GaussianForm::Peak => {
            let d = xi - E / 4.0;
            pre * (-0.5 * nf * d * d).exp()
        }
    })
}

/// Location of the maximum of the tail form, `ξ = e/4` for every `n`.
pub fn gaussian_limit_peak() -> f64 {
    E / 4.0
}

/// `g₀(λ) = -2λ/(1+λ)`, Laplace transform of `2e^{-ξ}` in the `(e^{-λx} - 1)` convention.
pub fn laplace_g0(lambda: f64) -> f64 {
    -2.0 * lambda / (1.0 + lambda)
}

pub fn laplace_g0_prime(lambda: f64) -> f64 {
    -2.0 / ((1.0 + lambda) * (1.0 + lambda))
}

/// `2∫(e^{-λx} - 1) log x e^{-x} dx = -2(γ + log(1+λ))/(1+λ) + 2γ`.
pub fn laplace_g0log(lambda: f64) -> f64 {
    -2.0 * (EULER_GAMMA + lambda.ln_1p()) / (1.0 + lambda) + 2.0 * EULER_GAMMA
}

/// First-order correction `g₁ = -4(γ+1)λ²/(1+λ)² - 4λ/(1+λ)²·Li₂(-λ)`.
pub fn laplace_g1(lambda: f64) -> Result<f64> {
    let d = (1.0 + lambda) * (1.0 + lambda);
    Ok(-4.0 * (EULER_GAMMA + 1.0) * lambda * lambda / d - 4.0 * lambda / d * dilog(-lambda)?)
}

/// Analytic derivative of [`laplace_g1`], using `d/dλ Li₂(-λ) = -log(1+λ)/λ`.
pub fn laplace_g1_prime(lambda: f64) -> Result<f64> {
    let one = 1.0 + lambda;
    let li = dilog(-lambda)?;
    // d/dλ [λ²/(1+λ)²] = 2λ/(1+λ)³ ; d/dλ [λ/(1+λ)²] = (1-λ)/(1+λ)³
    let dli = if lambda == 0.0 {
        -1.0
    } else {
        -lambda.ln_1p() / lambda
    };
    let term1 = -4.0 * (EULER_GAMMA + 1.0) * 2.0 * lambda / one.powi(3);
    let term2 = -4.0 * ((1.0 - lambda) / one.powi(3) * li + lambda / (one * one) * dli);
    Ok(term1 + term2)
}

/// Compatibility residual of the order-ε Laplace equation,
/// `[g₀ g₀,log + 2g₀ + Bλ g₀'] - [-g₁ + λ g₁' - g₀ g₁]`.
///
/// Vanishes identically for `B = -2`; otherwise behaves as `-(2B+4)λ` near 0.
pub fn residual_lb(lambda: f64, b: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::domain("compatibility residual", lambda, "lambda >= 0"));
    }
    let g0 = laplace_g0(lambda);
    let g1 = laplace_g1(lambda)?;
    let lhs = -g1 + lambda * laplace_g1_prime(lambda)? - g0 * g1;
    let rhs = g0 * laplace_g0log(lambda) + 2.0 * g0 + b * lambda * laplace_g0_prime(lambda);
    Ok(rhs - lhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_validation_and_regime() {
        assert!(KernelSpec::new(0.5).is_err());
        assert!(KernelSpec::new(0.7).is_err());
        assert!(KernelSpec::new(f64::NAN).is_err());
        assert_eq!(KernelSpec::new(-1.0).unwrap().regime(), Regime::Negative);
        assert_eq!(KernelSpec::new(0.0).unwrap().regime(), Regime::Zero);
        assert_eq!(KernelSpec::new(0.3).unwrap().regime(), Regime::Positive);
    }

    #[test]
    fn exponents_examples() {
        let e0 = exponents_for(KernelSpec::new(0.0).unwrap());
        assert_eq!((e0.beta, e0.alpha), (-1.0, -2.0));
        let e = exponents_for(KernelSpec::new(-0.2).unwrap());
        assert!((e.beta + 0.714_285_714_285_714_3).abs() < 1e-15);
        assert!((e.alpha + 1.428_571_428_571_428_6).abs() < 1e-15);
        assert!(!e.approximate);
        let e1 = exponents_for(KernelSpec::new(-1.0).unwrap());
        assert!((e1.beta + 1.0 / 3.0).abs() < 1e-15);
        let ep = exponents_for(KernelSpec::new(0.1).unwrap());
        assert!(ep.approximate);
        assert!((ep.beta + 1.2).abs() < 1e-15);
    }

    #[test]
    fn origin_amplitude_values() {
        assert!((origin_amplitude(0.01).unwrap() - 0.01).abs() < 1e-5);
        // value of -2Γ(-1/2)/Γ²(-1/4) with Γ(-1/2) = -2√π, Γ(-1/4) = Γ(3/4)/(-1/4)
        let g34 = gamma_fn(0.75).unwrap();
        let oracle = -2.0 * (-2.0 * PI.sqrt()) / (g34 / -0.25).powi(2);
        let a = origin_amplitude(0.25).unwrap();
        assert!((a - oracle).abs() < 1e-12);
        assert!((a - 0.295_085).abs() < 1e-5);
        assert!(origin_amplitude(1e-8).unwrap() < 2e-8);
        assert!(origin_amplitude(0.0).is_err());
        assert!(origin_amplitude(0.5).is_err());
        assert!(origin_amplitude(-0.1).is_err());
    }

    #[test]
    fn origin_amplitude_small_s_ratio() {
        // A/s - 1 is second order in s with coefficient π²/6
        for s in [1e-2, 1e-3] {
            let r = origin_amplitude(s).unwrap() / s - 1.0;
            assert!(r.abs() <= 2.0 * s * s, "s={s} r={r}");
            assert!((r / (s * s) - PI * PI / 6.0).abs() < 0.05);
        }
    }

    #[test]
    fn tail_profile_examples() {
        let v = tail_profile(1.0, 0.0, -1.0, 1.0, TailPrefactor::Printed).unwrap();
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-14);
        let w = tail_profile(1.0, 0.0, -1.0, 1.0, TailPrefactor::BetaIntegral).unwrap();
        assert!((w - v).abs() < 1e-14);
        assert!(tail_profile(800.0, -0.2, -0.7, 1.0, TailPrefactor::Printed).unwrap() < 1e-300);
        let beta = -1.0 / 1.4;
        let oracle = -2.0 * beta * gamma_fn(1.6).unwrap() / gamma_fn(0.8).unwrap().powi(2)
            * 2f64.powf(0.4)
            * (-2.0f64).exp();
        let got = tail_profile(2.0, -0.2, beta, 1.0, TailPrefactor::Printed).unwrap();
        assert!((got - oracle).abs() < 1e-14);
        assert!(tail_profile(0.0, 0.0, -1.0, 1.0, TailPrefactor::Printed).is_err());
    }

    #[test]
    fn origin_profile_negative_examples() {
        let v = origin_profile_negative(1.0, -1.0, -1.0 / 3.0, 2.0, 1.0).unwrap();
        assert!((v - (-6.0f64).exp()).abs() < 1e-15);
        assert_eq!(origin_profile_negative(0.0, -1.0, -1.0 / 3.0, 2.0, 1.0).unwrap(), 0.0);
        // faster than any power near 0
        let tiny = origin_profile_negative(1e-6, -0.2, -1.0 / 1.4, 2.0, 1.0).unwrap();
        assert!(tiny < 1e-6f64.powi(8));
        // increasing near 0
        let mut prev = 0.0;
        for k in 1..50 {
            let v = origin_profile_negative(k as f64 * 1e-3, -0.2, -1.0 / 1.4, 2.0, 1.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(origin_profile_negative(1.0, 0.1, -1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn perturbation_exponent() {
        assert_eq!(perturb_exponent_alpha(0.0, -1.0).unwrap(), 0.0);
        // direct evaluation of the closed form
        let v = perturb_exponent_alpha(0.1, -1.2).unwrap();
        assert!((v - 0.145_973_457_296_71).abs() < 1e-12);
        // the closed form behaves as 3ε/2 for small ε
        let small = perturb_exponent_alpha(0.01, -1.02).unwrap();
        assert!((small / 0.01 - 1.5).abs() < 0.01);
        assert!(perturb_exponent_alpha(-1.0, -1.0).is_err());
    }

    #[test]
    fn eqint_residual_behaviour() {
        assert_eq!(eqint_residual(-1.0 / 1.2, 0.1, -1.2, 0.0).unwrap(), 0.0);
        // the closed form tracks the exact root (found by bisection) to O(ε³)
        for eps in [0.01, 0.02, 0.05] {
            let beta = -1.0 - 2.0 * eps;
            let alpha = perturb_exponent_alpha(eps, beta).unwrap();
            let a = origin_amplitude(eps).unwrap();
            let f = |al: f64| eqint_residual(al, eps, beta, a).unwrap();
            // stay clear of the pole of Γ(α-2ε) at α = 2ε
            let (mut lo, mut hi) = (0.8 * alpha, 1.25 * alpha);
            assert!(f(lo).signum() != f(hi).signum());
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if f(mid).signum() == f(lo).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = 0.5 * (lo + hi);
            assert!((alpha - root).abs() <= eps.powi(3), "eps={eps} alpha={alpha} root={root}");
        }
        // a sign change on α ∈ (ε, 1) for ε = 1/4, located by bisection;
        // nodes are offset from the Gamma poles at α = ε and α = 2ε
        let eps = 0.25;
        let beta = -1.5;
        let a = origin_amplitude(eps).unwrap();
        let f = |al: f64| eqint_residual(al, eps, beta, a).unwrap();
        let grid: Vec<f64> = (26..99).map(|k| (k as f64 + 0.5) / 100.0).collect();
        let bracket = grid
            .windows(2)
            .find(|w| f(w[0]).signum() != f(w[1]).signum())
            .expect("sign change in (0, 1)");
        let (mut lo, mut hi) = (bracket[0], bracket[1]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid).signum() == f(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!(f(root).abs() < 1e-8);
        assert!((root - 0.361_568_047_803_325).abs() < 1e-9);
    }

    #[test]
    fn expansion_coefficients() {
        assert_eq!(eps_expansion_g(0.0), 2.0);
        assert_eq!(eps_expansion_a(0.0), 2.0);
        assert!((g_expansion().order1 - 6.3139).abs() < 1e-3);
        assert!((a_expansion().order1 - 15.028).abs() < 1e-2);
        assert!((eps_expansion_a(-0.1) - (2.0 - 1.502_817_723_682_477)).abs() < 1e-12);
        assert_eq!(beta_expansion().eval(0.1), -1.2);
    }

    #[test]
    fn lognormal_region() {
        assert_eq!(lognormal_mid(1.0, -0.1, 0.7).unwrap(), 0.7);
        let eps = -0.1;
        // maximum by dense scan in log ξ
        let mut best = 0.0f64;
        for k in -10000..10000 {
            let xi = (k as f64 * 1e-3).exp();
            best = best.max(lognormal_mid(xi, eps, 1.0).unwrap());
        }
        assert!((best - lognormal_peak(eps, 1.0)).abs() < 1e-6);
        assert!(lognormal_mid(1e-30, eps, 1.0).unwrap() < 1e-10);
        assert!(lognormal_mid(1e30, eps, 1.0).unwrap() < 1e-10);
    }

    #[test]
    fn gaussian_limit() {
        // analytic derivative of n log ξ - 4nξ/e vanishes at e/4
        for n in [1u32, 4, 10] {
            let nf = n as f64;
            let xi0 = gaussian_limit_peak();
            assert!((nf / xi0 - 4.0 * nf / E).abs() < 1e-12);
            let peak = gaussian_limit_profile(xi0, n, GaussianForm::Tail).unwrap();
            let left = gaussian_limit_profile(xi0 - 1e-4, n, GaussianForm::Tail).unwrap();
            let right = gaussian_limit_profile(xi0 + 1e-4, n, GaussianForm::Tail).unwrap();
            assert!(peak > left && peak > right);
        }
        let v1 = gaussian_limit_profile(E / 4.0, 1, GaussianForm::Tail).unwrap();
        let direct = 8.0 / (E * PI.sqrt()) * 4.0 * (E / 4.0) * (-1.0f64).exp();
        assert!((v1 - direct).abs() < 1e-14);
        let h4 = gaussian_limit_profile(E / 4.0, 4, GaussianForm::Peak).unwrap();
        let h16 = gaussian_limit_profile(E / 4.0, 16, GaussianForm::Peak).unwrap();
        assert!((h16 / h4 - 2.0).abs() < 1e-14);
        assert!(gaussian_limit_profile(1.0, 0, GaussianForm::Tail).is_err());
    }

    #[test]
    fn laplace_helpers_at_zero() {
        assert_eq!(laplace_g0(0.0), 0.0);
        assert_eq!(laplace_g0log(0.0), 0.0);
        assert_eq!(laplace_g1(0.0).unwrap(), 0.0);
        assert_eq!(residual_lb(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(residual_lb(0.0, -2.0).unwrap(), 0.0);
    }

    #[test]
    fn laplace_g1_values() {
        let v = laplace_g1(1.0).unwrap();
        let oracle = -(EULER_GAMMA + 1.0) + PI * PI / 12.0;
        assert!((v - oracle).abs() < 1e-14);
        assert!((v + 0.754_749).abs() < 1e-6);
        // g1 = -4γλ² + O(λ³)
        for lambda in [1e-2, 1e-3] {
            let c = laplace_g1(lambda).unwrap() / (lambda * lambda);
            assert!((c + 4.0 * EULER_GAMMA).abs() < 20.0 * lambda);
        }
    }

    #[test]
    fn g1_prime_matches_finite_difference() {
        for lambda in [0.05, 0.5, 1.0, 3.0, 9.0] {
            let h = 1e-5 * (1.0 + lambda);
            let fd = (laplace_g1(lambda + h).unwrap() - laplace_g1(lambda - h).unwrap()) / (2.0 * h);
            assert!((fd - laplace_g1_prime(lambda).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn g0_solves_constant_kernel_equation() {
        for k in 1..200 {
            let lambda = k as f64 * 0.05;
            let g0 = laplace_g0(lambda);
            let r = -g0 + lambda * laplace_g0_prime(lambda) - 0.5 * g0 * g0;
            assert!(r.abs() < 1e-14);
        }
    }

    #[test]
    fn compatibility_residual() {
        for k in 1..=100 {
            let lambda = k as f64 * 0.1;
            assert!(residual_lb(lambda, -2.0).unwrap().abs() < 1e-8);
        }
        for b in [0.0, 1.0, -3.0] {
            let lambda = 1e-5;
            let slope = residual_lb(lambda, b).unwrap() / lambda;
            let expected = -(2.0 * b + 4.0);
            assert!(((slope - expected) / expected).abs() < 0.01, "B={b} slope={slope}");
        }
    }

    proptest::proptest! {
        #[test]
        fn alpha_relation_holds(s in -20.0f64..0.4999) {
            let e = exponents_for(KernelSpec::new(s).unwrap());
            proptest::prop_assert_eq!(e.alpha, (2.0 * s + 1.0) * e.beta - 1.0);
        }
    }
}
