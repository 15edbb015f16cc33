//! Self-similar profiles for `s < 0` by forward marching and two-parameter shooting.
//!
//! Integrating the similarity equation once with the integrating factor
//! `ξ^p e^{E(ξ)}`, `p = 2s + 1 - 1/β`, `E(ξ) = G(ξ^s - 1)/(βs)` gives
//!
//! ```text
//! f(ξ) = ξ^{-p} e^{-E(ξ)} [ a - ∫₀^ξ η^{p-1} e^{E(η)} Q(η) / (2|β|) dη ],
//! Q(ξ) = ∫₀^ξ (ξ-η)^s η^s f(ξ-η) f(η) dη,
//! ```
//!
//! where `G = ∫ η^s f` enters as a parameter. Since `Q(ξ)` only needs `f`
//! on `(0, ξ)`, the profile can be marched node by node. The amplitude `a`
//! is chosen so that the profile stays positive and decays at the end of the
//! domain, and `β` is chosen so that the marched profile reproduces the `G`
//! it was marched with.
//!
//! Forward marching loses the exponentially decaying tail once it falls
//! below the rounding level of `a` times the homogeneous solution. The
//! running integral is therefore accumulated with compensated summation and,
//! optionally, the amplitude is refined below one ulp so that the tail is
//! resolved well past `f ~ 1e-16`.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Pchip;

/// Uniform grid `ξ_i = i·h`, `i = 1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiGrid {
    h: f64,
    n: usize,
}

impl XiGrid {
    pub const MIN_NODES: usize = 16;

    pub fn new(h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::domain("xi grid step", h, "h > 0"));
        }
        if n < Self::MIN_NODES {
            return Err(Error::Invalid(format!("xi grid needs at least {} nodes, got {n}", Self::MIN_NODES)));
        }
        Ok(Self { h, n })
    }

    /// Grid of `n` nodes covering `(0, length]`.
    pub fn with_length(length: f64, n: usize) -> Result<Self> {
        Self::new(length / n as f64, n)
    }

    /// Default grid, long enough that `f(L)/f_max` is far below `1e-6` in the `G = 2` gauge:
    /// `L = 120` (`|s| < 1/2`), `60` (`|s| <= 1`), `16` (`|s| <= 3`), `8` beyond.
    pub fn default_for(s: f64) -> Self {
        let a = s.abs();
        let (length, n) = if a < 0.5 {
            (120.0, 12000)
        } else if a <= 1.0 {
            (60.0, 12000)
        } else if a <= 3.0 {
            (16.0, 8000)
        } else {
            (8.0, 8000)
        };
        Self {
            h: length / n as f64,
            n,
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.h * self.n as f64
    }

    /// `ξ_i` for `i` in `1..=n` (and 0 for `i = 0`).
    pub fn xi(&self, i: usize) -> f64 {
        self.h * i as f64
    }
}

/// Profile values on an [`XiGrid`] with the parameters that produced them.
///
/// `f[i]` holds `f(ξ_i)` for `i = 1..=n`; `f[0]` is the limit at the origin
/// (zero for `s < 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub grid: XiGrid,
    pub f: Vec<f64>,
    pub s: f64,
    pub beta: f64,
    pub g: f64,
    pub a: f64,
}

impl SimilarityProfile {
    /// Samples `func` on the grid; `origin` is the value used at `ξ = 0`.
    pub fn from_fn(
        grid: XiGrid,
        s: f64,
        beta: f64,
        g: f64,
        a: f64,
        origin: f64,
        func: impl Fn(f64) -> f64,
    ) -> Self {
        let mut f = Vec::with_capacity(grid.n() + 1);
        f.push(origin);
        f.extend((1..=grid.n()).map(|i| func(grid.xi(i))));
        Self {
            grid,
            f,
            s,
            beta,
            g,
            a,
        }
    }

    pub fn xi(&self, i: usize) -> f64 {
        self.grid.xi(i)
    }

    /// `lim η→0 η^s f(η)`: the origin value for `s = 0`, zero for `s < 0`.
    fn origin_weight(&self) -> f64 {
        if self.s == 0.0 {
            self.f[0]
        } else {
            0.0
        }
    }

    fn weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.f.len());
        w.push(self.origin_weight());
        w.extend((1..self.f.len()).map(|i| self.xi(i).powf(self.s) * self.f[i]));
        w
    }

    /// Node index and value of the maximum.
    pub fn peak(&self) -> (usize, f64) {
        let mut best = (1, f64::NEG_INFINITY);
        for (i, &v) in self.f.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }

    /// Peak position refined by a parabola through the three nodes around the maximum.
    pub fn peak_location(&self) -> f64 {
        let (i, _) = self.peak();
        if i <= 1 || i >= self.grid.n() {
            return self.xi(i);
        }
        let (fm, f0, fp) = (self.f[i - 1], self.f[i], self.f[i + 1]);
        let denom = fm - 2.0 * f0 + fp;
        let shift = if denom < 0.0 { 0.5 * (fm - fp) / denom } else { 0.0 };
        self.xi(i) + shift * self.grid.h()
    }

    pub fn f_max(&self) -> f64 {
        self.peak().1
    }

    /// Value at arbitrary `ξ` by monotone interpolation; zero beyond the grid.
    pub fn interpolator(&self) -> Result<Pchip> {
        let x: Vec<f64> = (0..self.f.len()).map(|i| self.xi(i)).collect();
        Pchip::new(x, self.f.clone())
    }

    /// Member `ℓ^{1+2s} f(ℓξ)` of the scale family, resampled on the same grid.
    ///
    /// `G` and `a` are transformed consistently: `G → ℓ^s G`,
    /// `a → a ℓ^{1/β} e^{(G - G')/(βs)}`.
    pub fn scaled(&self, ell: f64) -> Result<Self> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::domain("scale factor", ell, "ell > 0"));
        }
        let interp = self.interpolator()?;
        let pre = ell.powf(1.0 + 2.0 * self.s);
        let mut f = Vec::with_capacity(self.f.len());
        f.push(pre * self.f[0]);
        for i in 1..self.f.len() {
            let x = ell * self.xi(i);
            f.push(interp.eval(x).map_or(0.0, |v| pre * v));
        }
        let g_new = ell.powf(self.s) * self.g;
        let a_new = if self.s != 0.0 {
            self.a * ell.powf(1.0 / self.beta) * ((self.g - g_new) / (self.beta * self.s)).exp()
        } else {
            self.a
        };
        Ok(Self {
            grid: self.grid,
            f,
            s: self.s,
            beta: self.beta,
            g: g_new,
            a: a_new,
        })
    }
}

/// `h Σ_{j=1}^{k-1} w_j w_{k-j}`, skipping the leading zeros below `j0`.
fn pair_sum(w: &[f64], k: usize, j0: usize) -> f64 {
    if k < 2 * j0 || k < 2 {
        return 0.0;
    }
    let m = (k - 1) / 2;
    let mut acc = 0.0;
    if m >= j0 {
        acc = w[j0..=m]
            .iter()
            .zip(w[k - m..=k - j0].iter().rev())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        acc *= 2.0;
    }
    if k % 2 == 0 {
        acc += w[k / 2] * w[k / 2];
    }
    acc
}

/// Trapezoidal `Q(ξ_i) = ∫₀^{ξ_i} (ξ_i-η)^s η^s f(ξ_i-η) f(η) dη` on the grid,
/// pairing `f(ξ_{i-j}) f(ξ_j)`. The endpoint terms use the origin limit of
/// `η^s f(η)`, which vanishes for `s < 0`.
pub fn convolution_q(profile: &SimilarityProfile, i: usize) -> Result<f64> {
    if i == 0 || i > profile.grid.n() {
        return Err(Error::Invalid(format!(
            "node index {i} out of range 1..={}",
            profile.grid.n()
        )));
    }
    let w = profile.weights();
    let h = profile.grid.h();
    Ok(h * (pair_sum(&w, i, 1) + w[0] * w[i]))
}

/// Error-free transform `a + b = s + e`.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Amplitude carried as an unevaluated sum `hi + lo`, `|lo| <= ulp(hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Amplitude {
    hi: f64,
    lo: f64,
}

impl Amplitude {
    fn new(a: f64) -> Self {
        Self { hi: a, lo: 0.0 }
    }
}

/// Quantities that depend only on `(s, β, G, grid)`, shared by every march.
struct MarchSetup {
    s: f64,
    beta: f64,
    g: f64,
    grid: XiGrid,
    p: f64,
    /// `ln ξ_k`
    log_xi: Vec<f64>,
    /// `ξ_k^s`
    xi_s: Vec<f64>,
    /// `E(ξ_k)`
    big_e: Vec<f64>,
}

enum Sign {
    /// Non-negative everywhere, with the terminal value.
    NonNegative(f64),
    /// Went negative; carries the most negative value seen (or the first one in sign-only mode).
    Negative(f64),
}

struct March {
    f: Vec<f64>,
    sign: Sign,
    /// `a - J(L)`, the bracket of the last node.
    gap: f64,
    /// Integrand of `J` at the last [`CLOSURE_SPAN`]` + 1` nodes.
    tail_integrand: [f64; 2],
}

/// Node distance used to estimate the decay rate of the `J` integrand at `L`.
const CLOSURE_SPAN: usize = 10;

impl MarchSetup {
    fn new(s: f64, beta: f64, g: f64, grid: XiGrid) -> Result<Self> {
        if !(s < 0.0) {
            return Err(Error::domain("march", s, "s < 0"));
        }
        if !(beta < 0.0) {
            return Err(Error::domain("march", beta, "beta < 0"));
        }
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::domain("march", g, "G > 0"));
        }
        let n = grid.n();
        let mut log_xi = vec![f64::NEG_INFINITY; n + 1];
        let mut xi_s = vec![0.0; n + 1];
        let mut big_e = vec![f64::INFINITY; n + 1];
        for k in 1..=n {
            let xi = grid.xi(k);
            log_xi[k] = xi.ln();
            xi_s[k] = xi.powf(s);
            big_e[k] = g * (xi_s[k] - 1.0) / (beta * s);
        }
        Ok(Self {
            s,
            beta,
            g,
            grid,
            p: 2.0 * s + 1.0 - 1.0 / beta,
            log_xi,
            xi_s,
            big_e,
        })
    }

    fn march(&self, a: Amplitude, sign_only: bool) -> Result<March> {
        let n = self.grid.n();
        let h = self.grid.h();
        let two_abs_beta = 2.0 * self.beta.abs();
        let mut f = vec![0.0; n + 1];
        let mut w = vec![0.0; n + 1];
        let (mut j_hi, mut j_lo) = (0.0f64, 0.0f64);
        let mut integrand_prev = 0.0;
        let mut first_nonzero = usize::MAX;
        let mut most_negative = 0.0f64;
        let mut tail_integrand = [0.0; 2];
        let mut gap = 0.0;
        for k in 1..=n {
            let q = if first_nonzero == usize::MAX {
                0.0
            } else {
                h * pair_sum(&w, k, first_nonzero)
            };
            let integrand = if q > 0.0 {
                let log = (self.p - 1.0) * self.log_xi[k] + self.big_e[k] + q.ln();
                log.exp() / two_abs_beta
            } else {
                0.0
            };
            if k == n - CLOSURE_SPAN {
                tail_integrand[0] = integrand;
            }
            let (s1, e1) = two_sum(j_hi, 0.5 * h * (integrand_prev + integrand));
            j_hi = s1;
            j_lo += e1;
            integrand_prev = integrand;

            let log_pre = -self.p * self.log_xi[k] - self.big_e[k];
            if log_pre > 700.0 {
                return Err(Error::ParameterRange(format!(
                    "prefactor exp({log_pre:.1}) overflows at xi = {} (s = {}, beta = {}, G = {})",
                    self.grid.xi(k),
                    self.s,
                    self.beta,
                    self.g
                )));
            }
            gap = (a.hi - j_hi) + (a.lo - j_lo);
            let value = if log_pre < -745.0 { 0.0 } else { log_pre.exp() * gap };
            if !value.is_finite() {
                return Err(Error::ParameterRange(format!(
                    "non-finite profile value at xi = {} (s = {}, beta = {}, G = {})",
                    self.grid.xi(k),
                    self.s,
                    self.beta,
                    self.g
                )));
            }
            f[k] = value;
            w[k] = self.xi_s[k] * value;
            if value != 0.0 && first_nonzero == usize::MAX {
                first_nonzero = k;
            }
            if value < most_negative {
                most_negative = value;
                if sign_only {
                    return Ok(March {
                        f,
                        sign: Sign::Negative(value),
                        gap: f64::NAN,
                        tail_integrand: [f64::NAN; 2],
                    });
                }
            }
        }
        let sign = if most_negative < 0.0 {
            Sign::Negative(most_negative)
        } else {
            Sign::NonNegative(f[n])
        };
        tail_integrand[1] = integrand_prev;
        Ok(March {
            f,
            sign,
            gap,
            tail_integrand,
        })
    }

    fn profile(&self, f: Vec<f64>, a: f64) -> SimilarityProfile {
        SimilarityProfile {
            grid: self.grid,
            f,
            s: self.s,
            beta: self.beta,
            g: self.g,
            a,
        }
    }

    fn non_negative(&self, a: Amplitude) -> Result<bool> {
        Ok(matches!(self.march(a, true)?.sign, Sign::NonNegative(_)))
    }
}

/// Marches the integral equation for the given parameters.
///
/// Negative values are kept as computed; `s < 0`, `β < 0`, `G > 0` are required.
pub fn march_profile(s: f64, beta: f64, g: f64, a: f64, grid: XiGrid) -> Result<SimilarityProfile> {
    let setup = MarchSetup::new(s, beta, g, grid)?;
    let m = setup.march(Amplitude::new(a), false)?;
    Ok(setup.profile(m.f, a))
}

/// Shooting sentinel: `f(L)` if the marched profile is non-negative, otherwise
/// its most negative value.
pub fn shooting_sentinel(s: f64, beta: f64, g: f64, a: f64, grid: XiGrid) -> Result<f64> {
    let setup = MarchSetup::new(s, beta, g, grid)?;
    Ok(match setup.march(Amplitude::new(a), false)?.sign {
        Sign::NonNegative(v) => v,
        Sign::Negative(v) => v,
    })
}

/// Tolerances and limits of the two shooting loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShooterConfig {
    /// Lower end of the geometric scan for `a`.
    pub a_min: f64,
    /// Upper end of the geometric scan for `a`.
    pub a_max: f64,
    /// Relative bracket width on `a` that must be reached at least.
    pub a_rel_tol: f64,
    /// Target for `|G_out - G|/G`.
    pub g_rel_tol: f64,
    /// Upper bound for outer (β) iterations.
    pub max_outer_iterations: usize,
    /// Maximum allowed `f(L)/f_max` of the returned profile.
    pub terminal_tol: f64,
    /// Relative half-width of the β search window around `-1/(1-2s)`.
    pub beta_window: f64,
    /// Refine the amplitude below one ulp for the final profile.
    pub refine_tail: bool,
}

impl Default for ShooterConfig {
    fn default() -> Self {
        Self {
            a_min: 1e-6,
            a_max: 1e6,
            a_rel_tol: 1e-10,
            g_rel_tol: 1e-6,
            max_outer_iterations: 100,
            terminal_tol: 1e-6,
            beta_window: 0.5,
            refine_tail: true,
        }
    }
}

/// Outcome of [`solve_similarity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShooterReport {
    pub a_star: f64,
    pub beta_star: f64,
    /// The `G` the profile was marched with.
    pub g: f64,
    pub g_out: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// `|G_out - G|/G` at the returned β.
    pub residual: f64,
}

struct Shot {
    a_star: f64,
    profile: SimilarityProfile,
    iterations: usize,
}

fn shoot(setup: &MarchSetup, hint: Option<f64>, cfg: &ShooterConfig, refine: bool) -> Result<Shot> {
    let mut iterations = 0usize;
    let mut eval = |a: f64| -> Result<bool> {
        iterations += 1;
        setup.non_negative(Amplitude::new(a))
    };

    // geometric scan away from the starting point until the sign flips
    let start = hint.unwrap_or(1.0).clamp(cfg.a_min, cfg.a_max);
    let start_pos = eval(start)?;
    let mut ratio: f64 = if hint.is_some() { 1.02 } else { 2.0 };
    let mut prev = start;
    let (pos, neg) = loop {
        // small a keeps the profile positive, large a drives it negative
        let next = if start_pos {
            (prev * ratio).min(cfg.a_max)
        } else {
            (prev / ratio).max(cfg.a_min)
        };
        if next == prev {
            return Err(Error::BracketNotFound {
                lo: cfg.a_min,
                hi: cfg.a_max,
            });
        }
        let next_pos = eval(next)?;
        if next_pos != start_pos {
            break if start_pos { (prev, next) } else { (next, prev) };
        }
        prev = next;
        ratio = (ratio * ratio).min(16.0);
    };

    let (mut pos, mut neg) = (pos, neg);
    loop {
        let mid = 0.5 * (pos + neg);
        if mid == pos || mid == neg {
            break;
        }
        if eval(mid)? {
            pos = mid;
        } else {
            neg = mid;
        }
    }
    if (neg - pos).abs() > cfg.a_rel_tol * pos.abs() {
        return Err(Error::NonConvergence {
            what: "amplitude bisection",
            iterations,
            residual: (neg - pos).abs() / pos.abs(),
        });
    }

    // sub-ulp refinement: bisect the low word between the two neighbours
    let mut amp = Amplitude::new(pos);
    if refine {
        let (mut lo_pos, mut lo_neg) = (0.0f64, neg - pos);
        for _ in 0..64 {
            let mid = 0.5 * (lo_pos + lo_neg);
            if mid == lo_pos || mid == lo_neg {
                break;
            }
            iterations += 1;
            if setup.non_negative(Amplitude { hi: pos, lo: mid })? {
                lo_pos = mid;
            } else {
                lo_neg = mid;
            }
        }
        amp = Amplitude { hi: pos, lo: lo_pos };
        let (closed, evals) = close_tail(setup, amp)?;
        amp = closed;
        iterations += evals;
    }

    let m = setup.march(amp, false)?;
    let profile = setup.profile(m.f, pos);
    let f_max = profile.f_max();
    let terminal = profile.f[profile.grid.n()];
    if !(f_max > 0.0) || terminal > cfg.terminal_tol * f_max {
        return Err(Error::NonConvergence {
            what: "amplitude shooting (terminal value)",
            iterations,
            residual: if f_max > 0.0 { terminal / f_max } else { f64::INFINITY },
        });
    }
    Ok(Shot {
        a_star: pos,
        profile,
        iterations,
    })
}

/// Mismatch between `a - J(L)` and the remainder `∫_L^∞` of the `J` integrand,
/// the latter extrapolated from its local exponential decay at `L`.
///
/// `None` when the tail has underflowed or the profile went negative.
fn closure_defect(setup: &MarchSetup, amp: Amplitude) -> Result<Option<(f64, f64)>> {
    let m = setup.march(amp, false)?;
    if matches!(m.sign, Sign::Negative(_)) {
        return Ok(Some((f64::NEG_INFINITY, f64::NAN)));
    }
    let [far, near] = m.tail_integrand;
    if !(far > 0.0 && near > 0.0 && far > near) {
        return Ok(None);
    }
    let rate = (far / near).ln() / (CLOSURE_SPAN as f64 * setup.grid.h());
    let remainder = near / rate;
    Ok(Some((m.gap - remainder, remainder)))
}

/// Moves the amplitude from "profile vanishes at `L`" to "profile continues
/// into its decaying tail at `L`", removing the boundary layer that the
/// hard terminal condition leaves in the last few decay lengths.
fn close_tail(setup: &MarchSetup, amp: Amplitude) -> Result<(Amplitude, usize)> {
    let mut evals = 1;
    let Some((d0, remainder)) = closure_defect(setup, amp)? else {
        return Ok((amp, evals));
    };
    if !(d0 < 0.0) || !(remainder > 0.0) {
        return Ok((amp, evals));
    }
    let at = |lo: f64| Amplitude { hi: amp.hi, lo: amp.lo + lo };
    // smaller amplitudes lift the end of the profile
    let (mut x_neg, mut d_neg) = (0.0, d0);
    let mut step = -remainder;
    let (mut x_pos, mut d_pos) = loop {
        evals += 1;
        match closure_defect(setup, at(step))? {
            Some((d, _)) if d > 0.0 => break (step, d),
            Some((d, _)) if d.is_finite() => {
                x_neg = step;
                d_neg = d;
            }
            _ => return Ok((amp, evals)),
        }
        step *= 2.0;
        if evals > 60 {
            return Ok((amp, evals));
        }
    };
    // Illinois regula falsi
    let mut side = 0i8;
    for _ in 0..60 {
        let x = x_pos - d_pos * (x_pos - x_neg) / (d_pos - d_neg);
        evals += 1;
        let d = match closure_defect(setup, at(x))? {
            Some((d, _)) if d.is_finite() => d,
            _ => break,
        };
        if d > 0.0 {
            x_pos = x;
            d_pos = d;
            if side == 1 {
                d_neg *= 0.5;
            }
            side = 1;
        } else {
            x_neg = x;
            d_neg = d;
            if side == -1 {
                d_pos *= 0.5;
            }
            side = -1;
        }
        if d.abs() <= 1e-9 * remainder || (x_pos - x_neg).abs() <= 1e-12 * remainder {
            break;
        }
    }
    let x = if d_pos.abs() < d_neg.abs() { x_pos } else { x_neg };
    Ok((at(x), evals))
}

/// Inner shooting loop: the amplitude `a` for which the profile stays
/// non-negative and decays at the end of the grid, with that profile.
pub fn shoot_amplitude(
    s: f64,
    beta: f64,
    g: f64,
    grid: XiGrid,
    cfg: &ShooterConfig,
) -> Result<(f64, SimilarityProfile)> {
    let setup = MarchSetup::new(s, beta, g, grid)?;
    let shot = shoot(&setup, None, cfg, cfg.refine_tail)?;
    Ok((shot.a_star, shot.profile))
}

fn trapezoid(h: f64, values: impl Iterator<Item = f64>, first: f64) -> f64 {
    // ∫ over [0, L] with `first` the value at ξ = 0
    let mut sum = 0.5 * first;
    let mut last = 0.0;
    for v in values {
        sum += v;
        last = v;
    }
    h * (sum - 0.5 * last)
}

/// `G_out = ∫₀^L η^s f(η) dη` by the trapezoidal rule.
///
/// For `s < 0` the integrand vanishes faster than any power at the origin,
/// so nothing below `ξ_1` is added.
pub fn g_out(profile: &SimilarityProfile) -> f64 {
    let w = profile.weights();
    trapezoid(profile.grid.h(), w[1..].iter().copied(), w[0])
}

/// `∫₀^L ξ^n f(ξ) dξ` by the trapezoidal rule.
pub fn moment(profile: &SimilarityProfile, n: f64) -> f64 {
    let first = if n == 0.0 { profile.f[0] } else { 0.0 };
    trapezoid(
        profile.grid.h(),
        (1..profile.f.len()).map(|i| profile.xi(i).powf(n) * profile.f[i]),
        first,
    )
}

/// Rescales within the scale family so that the first moment equals `target`.
pub fn normalize_first_moment(profile: &SimilarityProfile, target: f64) -> Result<SimilarityProfile> {
    if !(target > 0.0) {
        return Err(Error::domain("first-moment target", target, "target > 0"));
    }
    let m1 = moment(profile, 1.0);
    if !(m1 > 0.0) {
        return Err(Error::Invalid("cannot normalize a profile with zero first moment".into()));
    }
    if m1 == target {
        return Ok(profile.clone());
    }
    // first moment of ℓ^{1+2s} f(ℓξ) is ℓ^{2s-1} M₁
    let exponent = 2.0 * profile.s - 1.0;
    let mut ell = (target / m1).powf(1.0 / exponent);
    let mut out = profile.scaled(ell)?;
    for _ in 0..4 {
        let m = moment(&out, 1.0);
        if ((m - target) / target).abs() < 1e-12 {
            break;
        }
        ell *= (target / m).powf(1.0 / exponent);
        out = profile.scaled(ell)?;
    }
    Ok(out)
}

/// Brent's method on a bracketing interval with `f(a)·f(b) < 0`.
fn brent(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    f_tol: f64,
    max_iter: usize,
) -> Result<(f64, f64, usize)> {
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;
    for iter in 0..max_iter {
        if fb.abs() <= f_tol {
            return Ok((b, fb, iter));
        }
        if (b - a).abs() <= 4.0 * f64::EPSILON * b.abs() {
            return Ok((b, fb, iter));
        }
        let mut step = if fa != fc && fb != fc {
            // inverse quadratic interpolation
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let outside = !((step > lo.min(b)) && (step < lo.max(b)));
        let slow = if bisected {
            (step - b).abs() >= 0.5 * (b - c).abs()
        } else {
            (step - b).abs() >= 0.5 * (c - d).abs()
        };
        if outside || slow {
            step = 0.5 * (a + b);
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(step)?;
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = step;
            fb = fs;
        } else {
            a = step;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Err(Error::NonConvergence {
        what: "similarity exponent root-finding",
        iterations: max_iter,
        residual: fb.abs(),
    })
}

/// Outer shooting loop: finds `β` with `G_out(β) = G_target`, the inner loop
/// fixing `a` for every trial `β`.
pub fn solve_similarity(
    s: f64,
    grid: XiGrid,
    g_target: f64,
    cfg: &ShooterConfig,
) -> Result<(ShooterReport, SimilarityProfile)> {
    if !(s < 0.0) {
        return Err(Error::domain("similarity solve", s, "s < 0"));
    }
    if !(g_target > 0.0) {
        return Err(Error::domain("similarity solve", g_target, "G > 0"));
    }
    let beta0 = -1.0 / (1.0 - 2.0 * s);
    let hint = Cell::new(None::<f64>);
    let inner = Cell::new(0usize);
    let outer = Cell::new(0usize);
    let residual = |beta: f64| -> Result<f64> {
        outer.set(outer.get() + 1);
        if outer.get() > cfg.max_outer_iterations {
            return Err(Error::NonConvergence {
                what: "similarity exponent root-finding",
                iterations: cfg.max_outer_iterations,
                residual: f64::NAN,
            });
        }
        let setup = MarchSetup::new(s, beta, g_target, grid)?;
        let shot = shoot(&setup, hint.get(), cfg, cfg.refine_tail)?;
        hint.set(Some(shot.a_star));
        inner.set(inner.get() + shot.iterations);
        Ok((g_out(&shot.profile) - g_target) / g_target)
    };

    // bracket: expand symmetrically from β0 inside the window
    let r0 = residual(beta0)?;
    let (mut lo, mut hi, mut r_lo, mut r_hi) = (beta0, beta0, r0, r0);
    let mut step: f64 = 0.01;
    let bracket = if r0.abs() <= cfg.g_rel_tol {
        None
    } else {
        loop {
            let frac = step.min(cfg.beta_window);
            let b_more = beta0 * (1.0 + frac);
            let r_more = residual(b_more)?;
            if r_more.signum() != r_lo.signum() {
                break Some((b_more, lo, r_more, r_lo));
            }
            let b_less = beta0 * (1.0 - frac);
            let r_less = residual(b_less)?;
            if r_less.signum() != r_hi.signum() {
                break Some((hi, b_less, r_hi, r_less));
            }
            lo = b_more;
            r_lo = r_more;
            hi = b_less;
            r_hi = r_less;
            if frac >= cfg.beta_window {
                return Err(Error::NonConvergence {
                    what: "similarity exponent bracket",
                    iterations: outer.get(),
                    residual: r_lo.abs().min(r_hi.abs()),
                });
            }
            step *= 2.0;
        }
    };

    let (beta_star, r_star) = match bracket {
        None => (beta0, r0),
        Some((a, b, fa, fb)) => {
            let (root, fr, _) = brent(&residual, a, b, fa, fb, cfg.g_rel_tol, cfg.max_outer_iterations)?;
            (root, fr)
        }
    };

    let setup = MarchSetup::new(s, beta_star, g_target, grid)?;
    let shot = shoot(&setup, hint.get(), cfg, cfg.refine_tail)?;
    inner.set(inner.get() + shot.iterations);
    let g_final = g_out(&shot.profile);
    let report = ShooterReport {
        a_star: shot.a_star,
        beta_star,
        g: g_target,
        g_out: g_final,
        inner_iterations: inner.get(),
        outer_iterations: outer.get(),
        residual: ((g_final - g_target) / g_target).abs().max(r_star.abs().min(f64::MAX)),
    };
    Ok((report, shot.profile))
}

/// Maximum mismatch of the similarity equation on interior nodes, divided by `f_max`.
///
/// Left side `((2s+1)β - 1) f + β ξ f'` with a centred difference; right side
/// `½Q(ξ) - ξ^s f(ξ) ∫₀^∞ η^s f`, the integral closed beyond `L` with an
/// exponential tail fitted to the last two nodes. Nodes where `f` underflowed
/// are skipped.
pub fn profile_residual(profile: &SimilarityProfile) -> Result<f64> {
    let n = profile.grid.n();
    let h = profile.grid.h();
    let s = profile.s;
    let beta = profile.beta;
    let w = profile.weights();
    let f = &profile.f;
    let mut g_total = g_out(profile);
    let (fl, fl1) = (f[n], f[n - 1]);
    if fl > 0.0 && fl1 > fl {
        let rate = (fl1 / fl).ln() / h;
        g_total += w[n] / rate;
    }
    let f_max = profile.f_max();
    if !(f_max > 0.0) {
        return Err(Error::Invalid("residual of a profile without positive values".into()));
    }
    let lin = (2.0 * s + 1.0) * beta - 1.0;
    let mut worst = 0.0f64;
    for k in 2..n {
        if f[k - 1] == 0.0 || f[k] == 0.0 || f[k + 1] == 0.0 {
            continue;
        }
        let xi = profile.xi(k);
        let lhs = lin * f[k] + beta * xi * (f[k + 1] - f[k - 1]) / (2.0 * h);
        let q = h * (pair_sum(&w, k, 1) + w[0] * w[k]);
        let rhs = 0.5 * q - w[k] * g_total;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst / f_max)
}

/// Least-squares fit `log f = c + δ log ξ - k ξ + d/ξ` over the nodes in `[xi_lo, xi_hi]`.
///
/// The `d/ξ` term absorbs the leading correction to the Gamma-type tail,
/// which otherwise biases `δ` noticeably when `kξ` is only moderately large.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub constant: f64,
    pub power: f64,
    pub rate: f64,
    pub correction: f64,
    pub points: usize,
}

pub fn fit_tail(profile: &SimilarityProfile, xi_lo: f64, xi_hi: f64) -> Result<TailFit> {
    let mid = 0.5 * (xi_lo + xi_hi);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 1..profile.f.len() {
        let xi = profile.xi(i);
        let v = profile.f[i];
        if xi < xi_lo || xi > xi_hi || !(v > 0.0) {
            continue;
        }
        // columns in units of the window midpoint keep the problem well scaled
        let u = xi / mid;
        rows.push([1.0, u.ln(), -u, 1.0 / u]);
        rhs.push(v.ln());
    }
    if rows.len() < 4 {
        return Err(Error::Invalid(format!(
            "tail fit on [{xi_lo}, {xi_hi}] has only {} positive nodes",
            rows.len()
        )));
    }
    let sol = least_squares(&rows, &rhs)
        .ok_or_else(|| Error::Invalid("rank-deficient tail fit".into()))?;
    // back to ξ: c + δ ln(ξ/m) - k ξ/m + d m/ξ
    Ok(TailFit {
        constant: sol[0] - sol[1] * mid.ln(),
        power: sol[1],
        rate: sol[2] / mid,
        correction: sol[3] * mid,
        points: rows.len(),
    })
}

/// Least squares by Gram–Schmidt QR with reorthogonalisation.
fn least_squares<const N: usize>(rows: &[[f64; N]], rhs: &[f64]) -> Option<[f64; N]> {
    let m = rows.len();
    let mut q: Vec<Vec<f64>> = (0..N).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let mut r = [[0.0f64; N]; N];
    for c in 0..N {
        // two passes: the log/linear/reciprocal columns are close to collinear
        for _ in 0..2 {
            for p in 0..c {
                let dot: f64 = (0..m).map(|i| q[p][i] * q[c][i]).sum();
                r[p][c] += dot;
                for i in 0..m {
                    q[c][i] -= dot * q[p][i];
                }
            }
        }
        let norm = q[c].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-13) {
            return None;
        }
        r[c][c] = norm;
        for v in q[c].iter_mut() {
            *v /= norm;
        }
    }
    let mut y = [0.0f64; N];
    for c in 0..N {
        y[c] = (0..m).map(|i| q[c][i] * rhs[i]).sum();
    }
    let mut x = [0.0f64; N];
    for c in (0..N).rev() {
        let mut acc = y[c];
        for k in c + 1..N {
            acc -= r[c][k] * x[k];
        }
        x[c] = acc / r[c][c];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::origin_profile_negative;

    fn cfg() -> ShooterConfig {
        ShooterConfig::default()
    }

    #[test]
    fn grid_validation() {
        assert!(XiGrid::new(0.0, 100).is_err());
        assert!(XiGrid::new(0.1, 3).is_err());
        let g = XiGrid::with_length(40.0, 8000).unwrap();
        assert!((g.h() - 0.005).abs() < 1e-15);
        assert_eq!(g.xi(8000), 40.0);
        assert_eq!(XiGrid::default_for(-5.0).length(), 8.0);
    }

    #[test]
    fn convolution_of_exponential_is_exact() {
        // s = 0, f = e^{-ξ}: Q(ξ) = ξ e^{-ξ}, integrand constant in η
        let grid = XiGrid::new(0.01, 400).unwrap();
        let p = SimilarityProfile::from_fn(grid, 0.0, -1.0, 1.0, 1.0, 1.0, |x| (-x).exp());
        for i in [1, 2, 7, 100, 400] {
            let xi = grid.xi(i);
            let q = convolution_q(&p, i).unwrap();
            assert!((q - xi * (-xi).exp()).abs() < 1e-14, "i={i}");
        }
        assert!(convolution_q(&p, 0).is_err());
        assert!(convolution_q(&p, 401).is_err());
        let neg = SimilarityProfile::from_fn(grid, -0.5, -0.5, 1.0, 1.0, 0.0, |x| (-x).exp());
        assert_eq!(convolution_q(&neg, 1).unwrap(), 0.0);
    }

    #[test]
    fn pair_sum_matches_naive() {
        let w: Vec<f64> = (0..60).map(|k| if k < 5 { 0.0 } else { (k as f64).sin() + 1.5 }).collect();
        for k in 2..60 {
            let naive: f64 = (1..k).map(|j| w[j] * w[k - j]).sum();
            assert!((pair_sum(&w, k, 5) - naive).abs() < 1e-12 * naive.abs().max(1.0));
            assert!((pair_sum(&w, k, 1) - naive).abs() < 1e-12 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn small_amplitude_follows_homogeneous_solution() {
        // J is quadratic in a, so for tiny a the profile is a ξ^{-p} e^{-E(ξ)}
        let (s, beta, g) = (-0.5, -0.5, 2.0);
        let grid = XiGrid::new(0.01, 500).unwrap();
        let a = 1e-9;
        let p = march_profile(s, beta, g, a, grid).unwrap();
        let amp = a * (g / (beta * s)).exp();
        for i in [50, 100, 300, 500] {
            let oracle = origin_profile_negative(grid.xi(i), s, beta, g, amp).unwrap();
            assert!(((p.f[i] - oracle) / oracle).abs() < 1e-6, "i={i}");
        }
    }

    #[test]
    fn sentinel_signs() {
        let grid = XiGrid::with_length(40.0, 4000).unwrap();
        let beta = -1.0 / 3.0;
        assert!(shooting_sentinel(-1.0, beta, 2.0, 1e-3, grid).unwrap() > 0.0);
        assert!(shooting_sentinel(-1.0, beta, 2.0, 10.0, grid).unwrap() < 0.0);
        assert!(march_profile(0.1, beta, 2.0, 1.0, grid).is_err());
        assert!(march_profile(-1.0, 0.2, 2.0, 1.0, grid).is_err());
    }

    #[test]
    fn shot_profile_solves_the_equation() {
        let grid = XiGrid::with_length(40.0, 8000).unwrap();
        let (a, p) = shoot_amplitude(-1.0, -1.0 / 3.0, 2.0, grid, &cfg()).unwrap();
        assert!(a > 0.0 && a == p.a);
        assert!(p.f.iter().all(|&v| v >= 0.0));
        assert!(p.f[grid.n()] <= 1e-6 * p.f_max());
        let r = profile_residual(&p).unwrap();
        assert!(r < 1e-4, "residual {r}");
        // a perturbed profile is visibly not a solution
        let mut bad = p.clone();
        for v in bad.f.iter_mut() {
            *v *= 1.05;
        }
        assert!(profile_residual(&bad).unwrap() > 10.0 * r);
    }

    #[test]
    fn gauge_family_maps_grids_exactly() {
        // G → ℓ^s G with ℓ = 2 at s = -1 maps the (h, G=2) problem onto (h/2, G=1)
        let s = -1.0;
        let beta = -1.0 / 3.0;
        let wide = XiGrid::with_length(40.0, 4000).unwrap();
        let narrow = XiGrid::with_length(20.0, 4000).unwrap();
        let (a2, p2) = shoot_amplitude(s, beta, 2.0, wide, &cfg()).unwrap();
        let (a1, p1) = shoot_amplitude(s, beta, 1.0, narrow, &cfg()).unwrap();
        let ell: f64 = 2.0;
        let fm = p1.f_max();
        for i in (100..=3000).step_by(100) {
            // p1(ξ_i) = ℓ^{1+2s} p2(ℓ ξ_i), and ℓ ξ_i on the narrow grid is node i of the wide one
            let mapped = ell.powf(1.0 + 2.0 * s) * p2.f[i];
            assert!((p1.f[i] - mapped).abs() < 1e-8 * fm, "i={i}");
        }
        let a_mapped = a2 * ell.powf(1.0 / beta) * ((2.0 - 1.0) / (beta * s)).exp();
        assert!(((a1 - a_mapped) / a1).abs() < 1e-8);
        let scaled = p2.scaled(ell).unwrap();
        assert!((scaled.g - 1.0).abs() < 1e-15);
        assert!(((scaled.a - a_mapped) / a_mapped).abs() < 1e-14);
    }

    #[test]
    fn first_moment_normalization() {
        let grid = XiGrid::with_length(40.0, 4000).unwrap();
        let (_, p) = shoot_amplitude(-1.0, -1.0 / 3.0, 2.0, grid, &cfg()).unwrap();
        let n = normalize_first_moment(&p, 2.0).unwrap();
        assert!((moment(&n, 1.0) - 2.0).abs() < 1e-10);
        let same = p.scaled(1.0).unwrap();
        for (x, y) in same.f.iter().zip(&p.f) {
            assert!((x - y).abs() <= 1e-15 * p.f_max());
        }
        assert!(normalize_first_moment(&p, 0.0).is_err());
    }

    #[test]
    fn tail_fit_recovers_synthetic_parameters() {
        let grid = XiGrid::new(0.01, 10000).unwrap();
        let p = SimilarityProfile::from_fn(grid, -0.2, -0.7, 2.0, 1.0, 0.0, |x| {
            (0.3 + 0.4 * x.ln() - 0.2 * x - 1.1 / x).exp()
        });
        let fit = fit_tail(&p, 50.0, 75.0).unwrap();
        assert!((fit.power - 0.4).abs() < 1e-8);
        assert!((fit.rate - 0.2).abs() < 1e-9);
        assert!((fit.correction + 1.1).abs() < 1e-6);
        assert!((fit.constant - 0.3).abs() < 1e-7);
        assert!(fit_tail(&p, 200.0, 300.0).is_err());
    }

    #[test]
    fn brent_finds_simple_root() {
        let f = |x: f64| -> Result<f64> { Ok(x * x * x - 2.0) };
        let (r, _, _) = brent(f, 0.0, 2.0, -2.0, 6.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn similarity_exponent_at_s_minus_one() {
        let grid = XiGrid::with_length(40.0, 4000).unwrap();
        let (rep, p) = solve_similarity(-1.0, grid, 2.0, &cfg()).unwrap();
        assert!(((rep.beta_star + 1.0 / 3.0) * 3.0).abs() < 0.01);
        assert!(rep.residual <= 1e-6);
        assert!((g_out(&p) - 2.0).abs() <= 2e-6);
        assert!(solve_similarity(0.1, grid, 2.0, &cfg()).is_err());
    }
}
