//! Rescaling of evolution snapshots and collapse diagnostics.
//!
//! Snapshots are mapped to similarity variables `f̂(ξ) = t^{-α} c(t^{-β}ξ, t)`
//! and compared with each other or with shooter profiles by a relative
//! sup-norm on a common window. Before comparing, every curve is moved to
//! first moment 2 with the scale family `ℓ^{1+2s} f(ℓξ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::alpha_from_beta;
use crate::error::{Error, Result};
use crate::evolution::{Snapshot, UniformMassGrid};
use crate::interp::Pchip;
use crate::selfsim::{self, ShooterConfig, SimilarityProfile, XiGrid};

/// First moment that fixes the gauge before any comparison.
pub const REFERENCE_MASS: f64 = 2.0;

/// A snapshot in similarity variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledSnapshot {
    pub t: f64,
    pub xi: Vec<f64>,
    pub fhat: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Gauge factor ℓ applied after rescaling (1 when not normalized).
    pub ell: f64,
}

/// Anything that can be interpolated on part of the ξ-axis.
pub trait Curve {
    fn interpolant(&self) -> Result<Pchip>;
}

impl Curve for RescaledSnapshot {
    fn interpolant(&self) -> Result<Pchip> {
        Pchip::new(self.xi.clone(), self.fhat.clone())
    }
}

impl Curve for SimilarityProfile {
    fn interpolant(&self) -> Result<Pchip> {
        self.interpolator()
    }
}

fn sample(p: &Pchip, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    uniform(lo, hi, n)
        .into_iter()
        .map(|x| p.eval(x).ok_or_else(|| Error::Invalid(format!("ξ = {x} outside the curve domain"))))
        .collect()
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// `f̂(ξ) = t^{-α} c(t^{-β}ξ)` on `n_points` uniform points of `window`.
///
/// `c` is interpolated monotonically between bin centres `x_k = kδx`.
pub fn rescale_snapshot(
    snapshot: &Snapshot,
    grid: &UniformMassGrid,
    alpha: f64,
    beta: f64,
    window: (f64, f64),
    n_points: usize,
) -> Result<RescaledSnapshot> {
    rescale_with_gauge(snapshot, grid, alpha, beta, 1.0, window, n_points)
}

/// As [`rescale_snapshot`], followed by the gauge map to first moment 2.
///
/// The first moment is that of the grid data, `Σ x_k c_k δx`, which the
/// rescaling leaves unchanged when `α = 2β`-compatible exponents are used;
/// otherwise the factor `t^{2β-α}` is included.
pub fn rescale_normalized(
    snapshot: &Snapshot,
    grid: &UniformMassGrid,
    s: f64,
    beta: f64,
    window: (f64, f64),
    n_points: usize,
) -> Result<RescaledSnapshot> {
    let alpha = alpha_from_beta(s, beta);
    let mass = grid.moment(&snapshot.c, 1.0) * snapshot.t.powf(2.0 * beta - alpha);
    if !(mass > 0.0) {
        return Err(Error::Invalid("snapshot has no mass to normalize".into()));
    }
    let ell = (REFERENCE_MASS / mass).powf(1.0 / (2.0 * s - 1.0));
    let mut r = rescale_with_gauge(snapshot, grid, alpha, beta, ell, window, n_points)?;
    let amp = ell.powf(1.0 + 2.0 * s);
    for v in r.fhat.iter_mut() {
        *v *= amp;
    }
    Ok(r)
}

fn rescale_with_gauge(
    snapshot: &Snapshot,
    grid: &UniformMassGrid,
    alpha: f64,
    beta: f64,
    ell: f64,
    window: (f64, f64),
    n_points: usize,
) -> Result<RescaledSnapshot> {
    let t = snapshot.t;
    if !(t > 0.0) {
        return Err(Error::domain("rescale", t, "t > 0"));
    }
    let (lo, hi) = window;
    if !(lo < hi && n_points >= 2) {
        return Err(Error::Invalid(format!("bad window [{lo}, {hi}] with {n_points} points")));
    }
    if snapshot.c.len() != grid.n() {
        return Err(Error::Invalid("snapshot does not match the mass grid".into()));
    }
    let x_of = |xi: f64| t.powf(-beta) * ell * xi;
    let (x_lo, x_hi) = (grid.x(1), grid.x(grid.n()));
    if x_of(lo) < x_lo * (1.0 - 1e-12) || x_of(hi) > x_hi * (1.0 + 1e-12) {
        return Err(Error::Invalid(format!(
            "window [{lo}, {hi}] maps to x in [{}, {}], outside the data range [{x_lo}, {x_hi}]",
            x_of(lo),
            x_of(hi)
        )));
    }
    let xs: Vec<f64> = (1..=grid.n()).map(|k| grid.x(k)).collect();
    let interp = Pchip::new(xs, snapshot.c.clone())?;
    let xi = uniform(lo, hi, n_points);
    let scale = t.powf(-alpha);
    let fhat = xi
        .iter()
        .map(|&v| {
            let x = x_of(v).clamp(x_lo, x_hi);
            scale * interp.eval(x).unwrap_or(0.0).max(0.0)
        })
        .collect();
    Ok(RescaledSnapshot {
        t,
        xi,
        fhat,
        alpha,
        beta,
        ell,
    })
}

/// Profile moved to first moment 2.
pub fn normalized_profile(profile: &SimilarityProfile) -> Result<SimilarityProfile> {
    selfsim::normalize_first_moment(profile, REFERENCE_MASS)
}

/// Default comparison window `[0.1 ξ_p, 8 ξ_p]` around a peak location.
pub fn default_window(xi_peak: f64) -> (f64, f64) {
    (0.1 * xi_peak, 8.0 * xi_peak)
}

/// `sup |f_a - f_b| / sup |f_b|` on `n_points` uniform points of the window.
pub fn collapse_distance<A: Curve + ?Sized, B: Curve + ?Sized>(
    a: &A,
    b: &B,
    window: (f64, f64),
    n_points: usize,
) -> Result<f64> {
    let (pa, pb) = (a.interpolant()?, b.interpolant()?);
    let lo = window.0.max(pa.x_min()).max(pb.x_min());
    let hi = window.1.min(pa.x_max()).min(pb.x_max());
    if !(lo < hi) {
        return Err(Error::Invalid(format!(
            "no overlap between window [{}, {}] and the curve domains",
            window.0, window.1
        )));
    }
    let fa = sample(&pa, lo, hi, n_points.max(2))?;
    let fb = sample(&pb, lo, hi, n_points.max(2))?;
    let num = fa.iter().zip(&fb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = fb.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if den == 0.0 {
        return Err(Error::Invalid("reference curve vanishes on the window".into()));
    }
    Ok(num / den)
}

/// Sampled curve on a uniform grid; the common currency of the collapse checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCurve {
    pub label: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve for SampledCurve {
    fn interpolant(&self) -> Result<Pchip> {
        Pchip::new(self.x.clone(), self.y.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub a: f64,
    pub b: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileDistance {
    pub label: f64,
    pub distance: f64,
}

/// Pairwise and to-reference distances, keyed by time or by `s`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub pairs: Vec<PairDistance>,
    pub to_profile: Vec<ProfileDistance>,
    /// `(label, ξ_peak)` for each curve.
    pub peaks: Vec<(f64, f64)>,
    pub window: (f64, f64),
    /// Curves on the common window.
    pub curves: Vec<SampledCurve>,
    /// Labels left out because the window was not covered by the data.
    pub skipped: Vec<f64>,
}

impl CollapseReport {
    pub fn max_pair_distance(&self) -> f64 {
        self.pairs.iter().fold(0.0f64, |m, p| m.max(p.distance))
    }
}

fn pairwise(curves: &[SampledCurve], window: (f64, f64)) -> Result<Vec<PairDistance>> {
    let mut out = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let n = curves[i].x.len();
            // symmetric: normalize by the larger of the two maxima
            let d1 = collapse_distance(&curves[i], &curves[j], window, n)?;
            let d2 = collapse_distance(&curves[j], &curves[i], window, n)?;
            out.push(PairDistance {
                a: curves[i].label,
                b: curves[j].label,
                distance: d1.min(d2),
            });
        }
    }
    Ok(out)
}

/// Rescales snapshots (exponents from `beta`), normalizes them and measures
/// their distance to `profile` on the default window around the profile peak.
pub fn snapshot_collapse(
    snapshots: &[Snapshot],
    grid: &UniformMassGrid,
    s: f64,
    beta: f64,
    profile: &SimilarityProfile,
    n_points: usize,
) -> Result<CollapseReport> {
    let reference = normalized_profile(profile)?;
    let window = default_window(reference.peak_location());
    let mut curves = Vec::new();
    let mut to_profile = Vec::new();
    let mut peaks = Vec::new();
    let mut skipped = Vec::new();
    for snap in snapshots.iter().filter(|s| s.t > 0.0) {
        // early snapshots do not yet resolve the window on the mass grid
        let r = match rescale_normalized(snap, grid, s, beta, window, n_points) {
            Ok(r) => r,
            Err(Error::Invalid(_)) => {
                skipped.push(snap.t);
                continue;
            }
            Err(e) => return Err(e),
        };
        to_profile.push(ProfileDistance {
            label: snap.t,
            distance: collapse_distance(&r, &reference, window, n_points)?,
        });
        let (k, _) = r
            .fhat
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
        peaks.push((snap.t, r.xi[k]));
        curves.push(SampledCurve {
            label: snap.t,
            x: r.xi,
            y: r.fhat,
        });
    }
    Ok(CollapseReport {
        pairs: pairwise(&curves, window)?,
        to_profile,
        peaks,
        window,
        curves,
        skipped,
    })
}

/// One-line least squares `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Invalid("linear fit needs at least two points".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("linear fit with constant abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Shooter result in the reference gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmaxEntry {
    pub s: f64,
    pub beta_star: f64,
    pub f_max: f64,
    pub xi_peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmaxStudy {
    pub entries: Vec<FmaxEntry>,
    /// `f_max²` against `|s|`.
    pub fit: LinearFit,
}

fn solve_normalized(s: f64, grid: Option<XiGrid>, g: f64, cfg: &ShooterConfig) -> Result<(f64, SimilarityProfile)> {
    let grid = grid.unwrap_or_else(|| XiGrid::default_for(s));
    let (report, profile) = selfsim::solve_similarity(s, grid, g, cfg)?;
    Ok((report.beta_star, normalized_profile(&profile)?))
}

/// Solves for every `s` (in parallel), normalizes to first moment 2 and fits
/// `f_max²` linearly in `|s|`.
pub fn fmax_scaling_study(s_list: &[f64], grid: Option<XiGrid>, g: f64, cfg: &ShooterConfig) -> Result<FmaxStudy> {
    let entries = s_list
        .par_iter()
        .map(|&s| {
            let (beta_star, p) = solve_normalized(s, grid, g, cfg)?;
            Ok(FmaxEntry {
                s,
                beta_star,
                f_max: p.f_max(),
                xi_peak: p.peak_location(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = entries.iter().map(|e| e.s.abs()).collect();
    let y: Vec<f64> = entries.iter().map(|e| e.f_max * e.f_max).collect();
    let fit = linear_fit(&x, &y)?;
    Ok(FmaxStudy { entries, fit })
}

/// Builds `ζ ↦ |s|^{-1/2} f(ξ_p + ζ|s|^{-1/2})` on a common ζ-window for
/// normalized profiles and compares them pairwise.
pub fn gaussian_collapse_from_profiles(
    profiles: &[(f64, SimilarityProfile)],
    zeta_window: (f64, f64),
    n_points: usize,
) -> Result<CollapseReport> {
    let mut curves = Vec::new();
    let mut peaks = Vec::new();
    for (s, p) in profiles {
        let root = s.abs().sqrt();
        let xp = p.peak_location();
        let interp = p.interpolator()?;
        let zeta = uniform(zeta_window.0, zeta_window.1, n_points);
        let y = zeta
            .iter()
            .map(|&z| {
                let xi = xp + z / root;
                interp
                    .eval(xi)
                    .map(|v| v / root)
                    .ok_or_else(|| Error::Invalid(format!("ζ = {z} maps outside the profile (s = {s})")))
            })
            .collect::<Result<Vec<_>>>()?;
        peaks.push((*s, xp));
        curves.push(SampledCurve { label: *s, x: zeta, y });
    }
    Ok(CollapseReport {
        pairs: pairwise(&curves, zeta_window)?,
        to_profile: Vec::new(),
        peaks,
        window: zeta_window,
        curves,
        skipped: Vec::new(),
    })
}

/// Default ζ-window of the Gaussian collapse: one standard width of Φ either side of the peak.
pub const ZETA_WINDOW: (f64, f64) = (-1.0, 1.0);

/// Solves each `s` (in parallel) and runs [`gaussian_collapse_from_profiles`].
pub fn gaussian_collapse_check(
    s_list: &[f64],
    grid: Option<XiGrid>,
    g: f64,
    cfg: &ShooterConfig,
    zeta_window: (f64, f64),
    n_points: usize,
) -> Result<CollapseReport> {
    if let Some(s) = s_list.iter().find(|s| s.abs() < 4.0) {
        return Err(Error::Invalid(format!("gaussian collapse needs |s| >= 4, got s = {s}")));
    }
    let profiles = s_list
        .par_iter()
        .map(|&s| solve_normalized(s, grid, g, cfg).map(|(_, p)| (s, p)))
        .collect::<Result<Vec<_>>>()?;
    gaussian_collapse_from_profiles(&profiles, zeta_window, n_points)
}

/// Exponent estimate from the drift of the rescaled peak: with exponents
/// `β₀` the peak of `c(·, t)` sits at `x_p ∝ t^{-β}`; returns the least
/// squares `β` from `log x_p` against `log t` over the snapshots.
pub fn fit_beta_by_peak(snapshots: &[Snapshot], grid: &UniformMassGrid) -> Result<f64> {
    let mut lx = Vec::new();
    let mut lt = Vec::new();
    for s in snapshots.iter().filter(|s| s.t > 0.0) {
        // mass-weighted peak: x c(x) peaks in the bulk also when c is monotone
        let (k, _) = s
            .c
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (j, &v)| {
                let w = grid.x(j + 1) * v;
                if w > b.1 {
                    (j, w)
                } else {
                    b
                }
            });
        lx.push(grid.x(k + 1).ln());
        lt.push(s.t.ln());
    }
    Ok(-linear_fit(&lt, &lx)?.slope)
}
