//! Discrete Smoluchowski evolution on a uniform mass grid.
//!
//! Bins `x_k = k·δx`, `k = 1..=N`. Every unordered pair of active bins
//! `{i, k}` merges at rate `δx K(x_i, x_k) c_i c_k`; the product lands in bin
//! `i + k` when it exists, and is otherwise frozen: it leaves the grid for
//! good and its contribution to the moments is kept in a [`MomentLedger`].
//!
//! Time stepping is a fourth-order Adams–Bashforth predictor with an
//! Adams–Moulton corrector (PECE), bootstrapped by classical Runge–Kutta
//! steps whenever the step size changes. The ledger is integrated together
//! with the densities, so `m₁ + λ₁` is a linear invariant of the discrete
//! system and is conserved to rounding.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::KernelSpec;
use crate::error::{Error, Result};
use crate::interp::Pchip;
use crate::selfsim::SimilarityProfile;

/// Moment orders carried by the ledger.
pub const LEDGER_ORDERS: [f64; 3] = [0.0, 1.0, 2.0];

/// `x_k = k·δx` for `k = 1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformMassGrid {
    delta_x: f64,
    n: usize,
}

impl UniformMassGrid {
    pub fn new(delta_x: f64, n: usize) -> Result<Self> {
        if !(delta_x > 0.0 && delta_x.is_finite()) {
            return Err(Error::domain("mass grid bin width", delta_x, "delta_x > 0"));
        }
        if n < 2 {
            return Err(Error::Invalid(format!("mass grid needs at least 2 bins, got {n}")));
        }
        Ok(Self { delta_x, n })
    }

    pub fn delta_x(&self) -> f64 {
        self.delta_x
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Mass of bin `k` (1-based).
    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.delta_x
    }

    /// `Σ_k x_k^order c_k δx` over the grid; `c[k-1]` is bin `k`.
    pub fn moment(&self, c: &[f64], order: f64) -> f64 {
        c.iter()
            .enumerate()
            .map(|(j, &v)| self.x(j + 1).powf(order) * v)
            .sum::<f64>()
            * self.delta_x
    }
}

/// Densities at one instant. `c[k-1]` is the density of bin `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    pub t: f64,
    pub c: Vec<f64>,
    pub dt: f64,
    /// 1-based indices of bins with `c_k x_k >= μ`, ascending.
    pub active: Vec<usize>,
}

impl EvolutionState {
    pub fn new(t: f64, c: Vec<f64>, dt: f64, grid: &UniformMassGrid, mu: f64) -> Self {
        let active = active_bins(&c, grid, mu);
        Self { t, c, dt, active }
    }
}

fn active_bins(c: &[f64], grid: &UniformMassGrid, mu: f64) -> Vec<usize> {
    (1..=c.len())
        .filter(|&k| c[k - 1] > 0.0 && c[k - 1] * grid.x(k) >= mu)
        .collect()
}

/// How escaped clusters enter the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerMode {
    /// `λ_α += (x_i + x_k)^α n_{ik}`: the ledger holds the moments of the frozen clusters.
    #[default]
    Corrected,
    /// `λ_α += ((x_i + x_k)^α - x_i^α - x_k^α) n_{ik}`, the increment as usually printed.
    Paper,
}

/// Cumulative moment contributions of clusters that left the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentLedger {
    pub orders: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mode: LedgerMode,
}

impl MomentLedger {
    pub fn new(orders: &[f64], mode: LedgerMode) -> Self {
        Self {
            orders: orders.to_vec(),
            lambda: vec![0.0; orders.len()],
            mode,
        }
    }

    /// `m_α = Σ x^α c δx + λ_α` for each order.
    pub fn moments(&self, c: &[f64], grid: &UniformMassGrid) -> Vec<f64> {
        self.orders
            .iter()
            .zip(&self.lambda)
            .map(|(&a, &l)| grid.moment(c, a) + l)
            .collect()
    }
}

/// Pair `{i, k}` (1-based bins, `i <= k`) whose product lies beyond the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverflowEvent {
    pub i: usize,
    pub k: usize,
    /// `δx K(x_i, x_k) c_i c_k`.
    pub rate: f64,
}

impl OverflowEvent {
    /// Clusters formed per unit time and unit mass: `rate`, halved for a self-pair.
    pub fn formation_rate(&self) -> f64 {
        if self.i == self.k {
            0.5 * self.rate
        } else {
            self.rate
        }
    }

    fn weight(&self, order: f64, grid: &UniformMassGrid, mode: LedgerMode) -> f64 {
        let (xi, xk) = (grid.x(self.i), grid.x(self.k));
        let merged = (xi + xk).powf(order);
        match mode {
            LedgerMode::Corrected => merged,
            LedgerMode::Paper => merged - xi.powf(order) - xk.powf(order),
        }
    }
}

/// Right-hand side by explicit enumeration of active pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRhs {
    pub f: Vec<f64>,
    pub overflow: Vec<OverflowEvent>,
}

/// Pairwise right-hand side of the discrete equation with its overflow events.
///
/// `O(|active|²)`; the integrator uses an equivalent convolution form.
pub fn discrete_rhs(state: &EvolutionState, kernel: KernelSpec, grid: &UniformMassGrid, mu: f64) -> PairRhs {
    let n = grid.n();
    let dx = grid.delta_x();
    let active = active_bins(&state.c, grid, mu);
    let mut f = vec![0.0; n];
    let mut overflow = Vec::new();
    for (a, &i) in active.iter().enumerate() {
        for &k in &active[a..] {
            let rate = dx * kernel.eval(grid.x(i), grid.x(k)) * state.c[i - 1] * state.c[k - 1];
            if i == k {
                f[i - 1] -= rate;
                if 2 * i <= n {
                    f[2 * i - 1] += 0.5 * rate;
                } else {
                    overflow.push(OverflowEvent { i, k, rate });
                }
            } else {
                f[i - 1] -= rate;
                f[k - 1] -= rate;
                if i + k <= n {
                    f[i + k - 1] += rate;
                } else {
                    overflow.push(OverflowEvent { i, k, rate });
                }
            }
        }
    }
    PairRhs { f, overflow }
}

/// Adds the clusters frozen during `dt` to the ledger.
///
/// `n_{ik} = dt·(formation rate)`, with the formation rate of a self-pair
/// being half its event rate; each cluster carries mass density `δx`.
pub fn update_ledger(ledger: &mut MomentLedger, events: &[OverflowEvent], dt: f64, grid: &UniformMassGrid) {
    for ev in events {
        let n_ik = dt * ev.formation_rate() * grid.delta_x();
        for (l, &order) in ledger.lambda.iter_mut().zip(&ledger.orders) {
            *l += ev.weight(order, grid, ledger.mode) * n_ik;
        }
    }
}

/// Step-size control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Largest accepted `max_j |Δc_j|` per step.
    pub tol_step: f64,
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Upper bound on `dt/t`; keeps the explicit predictor inside its stability
    /// region once the densities have decayed. Non-positive disables it.
    pub dt_rel_max: f64,
    pub grow: f64,
    pub shrink: f64,
    pub max_retries: usize,
    /// Negative values down to `-neg_clamp·max c` are set to zero.
    pub neg_clamp: f64,
}

impl Tolerances {
    /// Defaults with `tol_step = 1e-4·max c(0)`.
    pub fn for_initial(c0: &[f64]) -> Self {
        let cmax = c0.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        Self {
            tol_step: 1e-4 * cmax,
            ..Self::default()
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_step: 1e-4,
            dt0: 1e-6,
            dt_min: 1e-14,
            dt_max: f64::INFINITY,
            dt_rel_max: 0.02,
            grow: 1.5,
            shrink: 0.5,
            max_retries: 20,
            neg_clamp: 1e-14,
        }
    }
}

/// Step decision of [`adapt_dt`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtDecision {
    pub accept: bool,
    pub next_dt: f64,
    pub variation: f64,
}

/// Accept iff `max_j |c_j(t+dt) - c_j(t)| <= tol_step`; grow by `grow` when the
/// variation is below a quarter of the tolerance, halve on rejection.
pub fn adapt_dt(previous: &[f64], candidate: &[f64], dt: f64, tol: &Tolerances) -> Result<DtDecision> {
    let variation = previous
        .iter()
        .zip(candidate)
        .fold(0.0f64, |m, (a, b)| {
            let d = (b - a).abs();
            if d.is_nan() {
                f64::INFINITY
            } else {
                m.max(d)
            }
        });
    if variation <= tol.tol_step {
        let next_dt = if variation < 0.25 * tol.tol_step {
            (dt * tol.grow).min(tol.dt_max)
        } else {
            dt
        };
        Ok(DtDecision {
            accept: true,
            next_dt,
            variation,
        })
    } else {
        let next_dt = dt * tol.shrink;
        if next_dt < tol.dt_min {
            return Err(Error::StepUnderflow { t: f64::NAN, dt: next_dt });
        }
        Ok(DtDecision {
            accept: false,
            next_dt,
            variation,
        })
    }
}

/// Convolution form of the right-hand side, with the ledger rates.
///
/// With `u_k = x_k^s c_k` on active bins, `U = Σ u_k` and
/// `w_m = Σ_{i+k=m} u_i u_k` (ordered pairs),
/// `F_j = ½δx w_j - δx u_j U`; pairs with `m > N` feed the ledger at
/// `½δx w_m` clusters per unit time and mass.
#[derive(Debug, Clone)]
pub struct Model {
    grid: UniformMassGrid,
    kernel: KernelSpec,
    mu: f64,
    mode: LedgerMode,
    /// `x_k^s`, index `k` (entry 0 unused)
    x_pow_s: Vec<f64>,
    /// `x_m^α` for `m = 1..=2N` and each ledger order
    x_pow_orders: Vec<Vec<f64>>,
}

/// Augmented right-hand side: `dc/dt` and `dλ/dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub f: Vec<f64>,
    pub lambda: [f64; 3],
}

impl Model {
    pub fn new(kernel: KernelSpec, grid: UniformMassGrid, mu: f64, mode: LedgerMode) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::domain("activity threshold", mu, "mu >= 0"));
        }
        let n = grid.n();
        let s = kernel.s();
        let x_pow_s = (0..=n).map(|k| if k == 0 { 0.0 } else { grid.x(k).powf(s) }).collect();
        let x_pow_orders = LEDGER_ORDERS
            .iter()
            .map(|&a| (0..=2 * n).map(|m| if m == 0 { 0.0 } else { grid.x(m).powf(a) }).collect())
            .collect();
        Ok(Self {
            grid,
            kernel,
            mu,
            mode,
            x_pow_s,
            x_pow_orders,
        })
    }

    pub fn grid(&self) -> &UniformMassGrid {
        &self.grid
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mode(&self) -> LedgerMode {
        self.mode
    }

    pub fn eval(&self, c: &[f64]) -> Derivative {
        let n = self.grid.n();
        let dx = self.grid.delta_x();
        // u[k] for bins k = 1..=n; u[0] = 0
        let mut u = vec![0.0; n + 1];
        let (mut lo, mut hi) = (usize::MAX, 0usize);
        for k in 1..=n {
            let v = c[k - 1];
            if v > 0.0 && v * self.grid.x(k) >= self.mu {
                u[k] = self.x_pow_s[k] * v;
                lo = lo.min(k);
                hi = k;
            }
        }
        let mut f = vec![0.0; n];
        let mut lambda = [0.0; 3];
        if lo == usize::MAX {
            return Derivative { f, lambda };
        }
        let total: f64 = u[lo..=hi].iter().sum();
        let u_ref = &u;
        let pair_sum = |m: usize| -> f64 {
            let i0 = lo.max(m.saturating_sub(hi));
            let i1 = (m - 1) / 2;
            let mut acc = 0.0;
            if i1 >= i0 {
                acc = u_ref[i0..=i1]
                    .iter()
                    .zip(u_ref[m - i1..=m - i0].iter().rev())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    * 2.0;
            }
            if m % 2 == 0 && m / 2 >= lo && m / 2 <= hi {
                acc += u_ref[m / 2] * u_ref[m / 2];
            }
            acc
        };
        let m_lo = 2 * lo;
        let m_hi = 2 * hi;
        let w: Vec<f64> = (m_lo..m_hi + 1).into_par_iter().with_min_len(64).map(pair_sum).collect();
        for j in lo..=n {
            let gain = if j >= m_lo && j <= m_hi { 0.5 * dx * w[j - m_lo] } else { 0.0 };
            f[j - 1] = gain - dx * u[j] * total;
        }
        if m_hi > n {
            let first = (n + 1).max(m_lo);
            for (o, l) in lambda.iter_mut().enumerate() {
                let xp = &self.x_pow_orders[o];
                let mut acc = 0.0;
                for m in first..=m_hi {
                    acc += 0.5 * dx * w[m - m_lo] * xp[m];
                }
                if self.mode == LedgerMode::Paper {
                    // Σ_{i+k=m} u_i u_k x_i^α over ordered pairs, for m > N
                    let cross: f64 = (first..m_hi + 1)
                        .into_par_iter()
                        .with_min_len(64)
                        .map(|m| {
                            let i0 = lo.max(m - hi);
                            let i1 = hi.min(m - lo);
                            (i0..=i1).map(|i| u[i] * xp[i] * u[m - i]).sum::<f64>()
                        })
                        .collect::<Vec<f64>>()
                        .iter()
                        .sum();
                    acc -= dx * cross;
                }
                *l = dx * acc;
            }
        }
        Derivative { f, lambda }
    }
}

/// Initial distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    /// All mass in one bin (1-based).
    Monodisperse { bin: usize, mass: f64 },
    /// Gaussian in `x` around `center` with standard deviation `width`.
    NarrowGaussian { center: f64, width: f64, mass: f64 },
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self::Monodisperse { bin: 1, mass: 1.0 }
    }
}

impl InitialCondition {
    pub fn densities(&self, grid: &UniformMassGrid) -> Result<Vec<f64>> {
        let n = grid.n();
        let dx = grid.delta_x();
        match *self {
            Self::Monodisperse { bin, mass } => {
                if bin == 0 || bin > n {
                    return Err(Error::Invalid(format!("initial bin {bin} outside 1..={n}")));
                }
                if !(mass >= 0.0 && mass.is_finite()) {
                    return Err(Error::domain("initial mass", mass, "mass >= 0"));
                }
                let mut c = vec![0.0; n];
                c[bin - 1] = mass / (grid.x(bin) * dx);
                Ok(c)
            }
            Self::NarrowGaussian { center, width, mass } => {
                if !(width > 0.0) {
                    return Err(Error::domain("initial width", width, "width > 0"));
                }
                if !(mass >= 0.0 && mass.is_finite()) {
                    return Err(Error::domain("initial mass", mass, "mass >= 0"));
                }
                let mut c: Vec<f64> = (1..=n)
                    .map(|k| {
                        let z = (grid.x(k) - center) / width;
                        (-0.5 * z * z).exp()
                    })
                    .collect();
                let m1 = grid.moment(&c, 1.0);
                if !(m1 > 0.0) {
                    return Err(Error::Invalid("initial gaussian has no mass on the grid".into()));
                }
                let scale = mass / m1;
                for v in c.iter_mut() {
                    *v *= scale;
                }
                Ok(c)
            }
        }
    }
}

/// Solver counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub bootstrap_steps: usize,
    pub rhs_evaluations: usize,
    pub clamped_values: usize,
    /// Largest `|Σ x_j F_j δx + dλ₁/dt|` relative to the gross mass flux, over all evaluations.
    pub max_flux_imbalance: f64,
}

/// Fixed-step-size history for the multistep formulas.
struct History {
    dt: f64,
    /// Newest first: `f_n, f_{n-1}, ...`
    f: VecDeque<Derivative>,
}

/// Adaptive fourth-order PECE integrator with an RK4 bootstrap.
pub struct Stepper {
    model: Model,
    tol: Tolerances,
    state: EvolutionState,
    lambda: [f64; 3],
    history: History,
    stats: StepStats,
    m1_scale: f64,
}

fn axpy(y: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    y.iter().zip(d).map(|(y, d)| y + a * d).collect()
}

impl Stepper {
    pub fn new(model: Model, c0: Vec<f64>, tol: Tolerances) -> Result<Self> {
        if c0.len() != model.grid().n() {
            return Err(Error::Invalid(format!(
                "initial data has {} bins, grid has {}",
                c0.len(),
                model.grid().n()
            )));
        }
        if c0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid("initial densities must be finite and non-negative".into()));
        }
        if !(tol.dt0 > 0.0 && tol.dt_min > 0.0 && tol.tol_step > 0.0) {
            return Err(Error::Invalid("dt0, dt_min and tol_step must be positive".into()));
        }
        let m1_scale = model.grid().moment(&c0, 1.0).abs().max(f64::MIN_POSITIVE);
        let state = EvolutionState::new(0.0, c0, tol.dt0, model.grid(), model.mu());
        Ok(Self {
            model,
            tol,
            state,
            lambda: [0.0; 3],
            history: History {
                dt: tol.dt0,
                f: VecDeque::with_capacity(4),
            },
            stats: StepStats::default(),
            m1_scale,
        })
    }

    pub fn state(&self) -> &EvolutionState {
        &self.state
    }

    pub fn lambda(&self) -> [f64; 3] {
        self.lambda
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// `m_α = Σ x^α c δx + λ_α` for α = 0, 1, 2.
    pub fn moments(&self) -> [f64; 3] {
        let g = self.model.grid();
        let mut out = [0.0; 3];
        for (o, &a) in LEDGER_ORDERS.iter().enumerate() {
            out[o] = g.moment(&self.state.c, a) + self.lambda[o];
        }
        out
    }

    fn eval(&mut self, c: &[f64]) -> Derivative {
        self.stats.rhs_evaluations += 1;
        let d = self.model.eval(c);
        // mass balance of this evaluation
        let g = self.model.grid();
        let mut net = d.lambda[1];
        let mut gross = d.lambda[1].abs();
        for (j, &v) in d.f.iter().enumerate() {
            let term = g.x(j + 1) * v * g.delta_x();
            net += term;
            gross += term.abs();
        }
        if gross > 0.0 && self.model.mode() == LedgerMode::Corrected {
            self.stats.max_flux_imbalance = self.stats.max_flux_imbalance.max(net.abs() / gross);
        }
        d
    }

    fn rk4(&mut self, dt: f64, k1: Derivative) -> (Vec<f64>, [f64; 3]) {
        let c = self.state.c.clone();
        let l = self.lambda;
        let k2 = self.eval(&axpy(&c, 0.5 * dt, &k1.f));
        let k3 = self.eval(&axpy(&c, 0.5 * dt, &k2.f));
        let k4 = self.eval(&axpy(&c, dt, &k3.f));
        let mut out = c;
        for j in 0..out.len() {
            out[j] += dt / 6.0 * (k1.f[j] + 2.0 * k2.f[j] + 2.0 * k3.f[j] + k4.f[j]);
        }
        let mut lam = l;
        for o in 0..3 {
            lam[o] += dt / 6.0 * (k1.lambda[o] + 2.0 * k2.lambda[o] + 2.0 * k3.lambda[o] + k4.lambda[o]);
        }
        (out, lam)
    }

    fn abm4(&mut self, dt: f64) -> (Vec<f64>, [f64; 3]) {
        let h = &self.history.f;
        let (f0, f1, f2, f3) = (&h[0], &h[1], &h[2], &h[3]);
        let n = self.state.c.len();
        let mut pred = self.state.c.clone();
        for j in 0..n {
            pred[j] += dt / 24.0 * (55.0 * f0.f[j] - 59.0 * f1.f[j] + 37.0 * f2.f[j] - 9.0 * f3.f[j]);
        }
        let fp = self.eval(&pred);
        let h = &self.history.f;
        let (f0, f1, f2) = (&h[0], &h[1], &h[2]);
        let mut corr = self.state.c.clone();
        for j in 0..n {
            corr[j] += dt / 24.0 * (9.0 * fp.f[j] + 19.0 * f0.f[j] - 5.0 * f1.f[j] + f2.f[j]);
        }
        let mut lam = self.lambda;
        for o in 0..3 {
            lam[o] += dt / 24.0 * (9.0 * fp.lambda[o] + 19.0 * f0.lambda[o] - 5.0 * f1.lambda[o] + f2.lambda[o]);
        }
        (corr, lam)
    }

    fn reset_history(&mut self, dt: f64) {
        if self.history.dt != dt {
            self.history.dt = dt;
            self.history.f.clear();
        }
    }

    /// Advances by one accepted step without passing `t_limit`.
    ///
    /// Returns the step size used.
    pub fn step(&mut self, t_limit: f64) -> Result<f64> {
        let t = self.state.t;
        if !(t_limit > t) {
            return Err(Error::Invalid(format!("step limit {t_limit} is not after t = {t}")));
        }
        let mut retries = 0;
        loop {
            let remaining = t_limit - t;
            let landing = self.state.dt >= remaining;
            let dt = if landing { remaining } else { self.state.dt };
            self.reset_history(dt);
            if self.history.f.is_empty() {
                let d = self.eval(&self.state.c.clone());
                self.history.f.push_front(d);
            }
            let multistep = self.history.f.len() >= 4;
            let (mut c_new, lam_new) = if multistep {
                self.abm4(dt)
            } else {
                let k1 = self.history.f[0].clone();
                self.rk4(dt, k1)
            };

            let cmax = c_new.iter().fold(0.0f64, |m, &v| m.max(v));
            let floor = -self.tol.neg_clamp * cmax;
            let undershoot = c_new.iter().any(|&v| v < floor || !v.is_finite());
            let decision = if undershoot {
                None
            } else {
                Some(adapt_dt(&self.state.c, &c_new, dt, &self.tol))
            };
            let decision = match decision {
                Some(Ok(d)) if d.accept => d,
                other => {
                    // rejected: halve and rebuild the history
                    let variation = match other {
                        Some(Ok(d)) => d.variation,
                        _ => f64::INFINITY,
                    };
                    self.stats.rejected += 1;
                    retries += 1;
                    let next = dt * self.tol.shrink;
                    if next < self.tol.dt_min {
                        return Err(Error::StepUnderflow { t, dt: next });
                    }
                    if retries > self.tol.max_retries {
                        return Err(Error::TooManyRejections {
                            t,
                            retries,
                            variation,
                        });
                    }
                    self.state.dt = next;
                    continue;
                }
            };

            for v in c_new.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                    self.stats.clamped_values += 1;
                }
            }
            let f_new = self.eval(&c_new);
            self.state.t = if landing { t_limit } else { t + dt };
            self.state.c = c_new;
            self.lambda = lam_new;
            self.state.active = active_bins(&self.state.c, self.model.grid(), self.model.mu());
            self.stats.accepted += 1;
            if !multistep {
                self.stats.bootstrap_steps += 1;
            }
            self.history.f.push_front(f_new);
            self.history.f.truncate(4);

            // step-size update; landing steps leave the nominal dt untouched
            if !landing && multistep && decision.next_dt > dt {
                let cap = if self.tol.dt_rel_max > 0.0 {
                    self.tol.dt_rel_max * self.state.t
                } else {
                    f64::INFINITY
                };
                let grown = decision.next_dt.min(cap).min(self.tol.dt_max);
                if grown > dt {
                    self.state.dt = grown;
                }
            }
            let m = self.moments();
            let drifted = self.model.mode() == LedgerMode::Corrected
                && ((m[1] - self.m1_scale) / self.m1_scale).abs() > 1e-3;
            if !m[1].is_finite() || drifted {
                return Err(Error::NonConvergence {
                    what: "mass conservation",
                    iterations: self.stats.accepted,
                    residual: (m[1] - self.m1_scale) / self.m1_scale,
                });
            }
            return Ok(dt);
        }
    }
}

/// Profile used by [`choose_cut_mass`].
#[derive(Debug, Clone, Copy)]
pub enum CutProfile<'a> {
    /// `ψ(ξ) = 2e^{-ξ}`.
    Exponential,
    Profile(&'a SimilarityProfile),
}

/// Smallest cut mass `x_N` beyond the profile maximum with
/// `T^{α̂} ψ(T^{β̂} x_N) <= tol`, `β̂ = -1-2ε`, `α̂ = -2-4ε-4ε²`.
pub fn choose_cut_mass(t_f: f64, tol: f64, profile: CutProfile<'_>, eps: f64) -> Result<f64> {
    if !(t_f > 0.0) {
        return Err(Error::domain("cut mass", t_f, "T_f > 0"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("cut mass", tol, "tol > 0"));
    }
    let beta = -1.0 - 2.0 * eps;
    let alpha = -2.0 - 4.0 * eps - 4.0 * eps * eps;
    // threshold on ψ itself
    let level = tol / t_f.powf(alpha);
    let xi = match profile {
        CutProfile::Exponential => {
            if level >= 2.0 {
                0.0
            } else {
                (2.0 / level).ln()
            }
        }
        CutProfile::Profile(p) => profile_level_crossing(p, level)?,
    };
    Ok(xi / t_f.powf(beta))
}

fn profile_level_crossing(p: &SimilarityProfile, level: f64) -> Result<f64> {
    let (peak, fmax) = p.peak();
    if level >= fmax {
        return Ok(p.xi(peak));
    }
    let n = p.grid.n();
    if let Some(k) = (peak..=n).find(|&k| p.f[k] <= level) {
        // bisection on the monotone interpolant between nodes k-1 and k
        let interp = p.interpolator()?;
        let (mut lo, mut hi) = (p.xi(k - 1), p.xi(k));
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if interp.eval(mid).unwrap_or(0.0) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(hi);
    }
    // beyond the grid: extend with the exponential rate of the last tenth
    let k0 = n - n / 10;
    let (f0, f1) = (p.f[k0], p.f[n]);
    if !(f0 > f1 && f1 > 0.0) {
        return Err(Error::Invalid("profile tail does not decay; cannot place the cut mass".into()));
    }
    let rate = (f0 / f1).ln() / (p.xi(n) - p.xi(k0));
    Ok(p.xi(n) + (f1 / level).ln() / rate)
}

/// Evolution run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub s: f64,
    pub n_bins: usize,
    pub delta_x: f64,
    pub t_final: f64,
    /// Snapshot times in `(0, t_final]`; `t = 0` is always recorded.
    pub snapshot_times: Vec<f64>,
    pub initial: InitialCondition,
    /// Activity threshold; `None` selects `1e-12·m₁(0)/N`.
    pub mu: Option<f64>,
    pub ledger: LedgerMode,
    /// `None` selects `1e-4·max c(0)`.
    pub tol_step: Option<f64>,
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_rel_max: f64,
    pub max_retries: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        let tol = Tolerances::default();
        Self {
            s: -0.2,
            n_bins: 4000,
            delta_x: 1.0,
            t_final: 100.0,
            snapshot_times: Vec::new(),
            initial: InitialCondition::default(),
            mu: None,
            ledger: LedgerMode::Corrected,
            tol_step: None,
            dt0: tol.dt0,
            dt_min: tol.dt_min,
            dt_max: tol.dt_max,
            dt_rel_max: tol.dt_rel_max,
            max_retries: tol.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub c: Vec<f64>,
}

/// Moments and ledger after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRun {
    pub grid: UniformMassGrid,
    pub mu: f64,
    pub tolerances: Tolerances,
    pub snapshots: Vec<Snapshot>,
    pub moments: Vec<MomentRow>,
    pub stats: StepStats,
    /// `max_t |m₁(t)/m₁(0) - 1|` over accepted steps.
    pub max_mass_drift: f64,
}

fn moment_row(stepper: &Stepper, dt: f64) -> MomentRow {
    let m = stepper.moments();
    let l = stepper.lambda();
    MomentRow {
        t: stepper.state().t,
        m0: m[0],
        m1: m[1],
        m2: m[2],
        lambda0: l[0],
        lambda1: l[1],
        lambda2: l[2],
        dt,
    }
}

/// Integrates from the initial condition to `t_final`, landing exactly on each snapshot time.
pub fn run_evolution(config: &EvolutionConfig) -> Result<EvolutionRun> {
    let kernel = KernelSpec::new(config.s)?;
    let grid = UniformMassGrid::new(config.delta_x, config.n_bins)?;
    if !(config.t_final > 0.0 && config.t_final.is_finite()) {
        return Err(Error::domain("final time", config.t_final, "t_final > 0"));
    }
    let mut times: Vec<f64> = config.snapshot_times.clone();
    if times.iter().any(|t| !(*t > 0.0 && *t <= config.t_final)) {
        return Err(Error::Invalid(format!(
            "snapshot times must lie in (0, {}]",
            config.t_final
        )));
    }
    times.push(config.t_final);
    times.sort_by(f64::total_cmp);
    times.dedup();

    let c0 = config.initial.densities(&grid)?;
    let m1_0 = grid.moment(&c0, 1.0);
    let mu = config.mu.unwrap_or(1e-12 * m1_0 / grid.n() as f64);
    let mut tol = Tolerances::for_initial(&c0);
    if let Some(t) = config.tol_step {
        tol.tol_step = t;
    }
    tol.dt0 = config.dt0;
    tol.dt_min = config.dt_min;
    tol.dt_max = config.dt_max;
    tol.dt_rel_max = config.dt_rel_max;
    tol.max_retries = config.max_retries;

    let mut snapshots = vec![Snapshot { t: 0.0, c: c0.clone() }];
    if m1_0 == 0.0 {
        // nothing to evolve
        let moments = std::iter::once(0.0)
            .chain(times.iter().copied())
            .map(|t| MomentRow {
                t,
                m0: 0.0,
                m1: 0.0,
                m2: 0.0,
                lambda0: 0.0,
                lambda1: 0.0,
                lambda2: 0.0,
                dt: 0.0,
            })
            .collect();
        snapshots.extend(times.iter().map(|&t| Snapshot { t, c: c0.clone() }));
        return Ok(EvolutionRun {
            grid,
            mu,
            tolerances: tol,
            snapshots,
            moments,
            stats: StepStats::default(),
            max_mass_drift: 0.0,
        });
    }

    let model = Model::new(kernel, grid, mu, config.ledger)?;
    let mut stepper = Stepper::new(model, c0, tol)?;
    let mut moments = vec![moment_row(&stepper, 0.0)];
    let mut max_drift = 0.0f64;
    for &target in &times {
        while stepper.state().t < target {
            let dt = stepper.step(target)?;
            let row = moment_row(&stepper, dt);
            max_drift = max_drift.max((row.m1 / m1_0 - 1.0).abs());
            moments.push(row);
        }
        snapshots.push(Snapshot {
            t: target,
            c: stepper.state().c.clone(),
        });
    }
    Ok(EvolutionRun {
        grid,
        mu,
        tolerances: tol,
        snapshots,
        moments,
        stats: stepper.stats(),
        max_mass_drift: max_drift,
    })
}

/// Monotone interpolant of a snapshot over bin masses, for resampling.
pub fn snapshot_interpolator(grid: &UniformMassGrid, c: &[f64]) -> Result<Pchip> {
    let x: Vec<f64> = (1..=c.len()).map(|k| grid.x(k)).collect();
    Pchip::new(x, c.to_vec())
}
