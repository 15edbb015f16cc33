//! Run configuration, orchestration and file output.
//!
//! Configuration is flat `key=value` text with `#` comments. Every key has a
//! documented default; defaults that depend on other keys (`auto`) are
//! resolved during parsing, so [`RunConfig::to_config_text`] writes a file
//! that reproduces the run exactly. Floats are written with 17 significant
//! digits everywhere and no output depends on timing or thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::analysis::{self, CollapseReport, FmaxStudy};
use crate::asymptotics::{self as asy, GaussianForm, KernelSpec, TailPrefactor};
use crate::error::{Error, Result};
use crate::evolution::{self, EvolutionConfig, EvolutionRun, InitialCondition, LedgerMode, UniformMassGrid};
use crate::selfsim::{self, ShooterConfig, ShooterReport, SimilarityProfile, XiGrid};
use crate::specfun;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Evolve,
    Profile,
    Asym,
    Rescale,
    Collapse,
    FmaxStudy,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Evolve => "evolve",
            Mode::Profile => "profile",
            Mode::Asym => "asym",
            Mode::Rescale => "rescale",
            Mode::Collapse => "collapse",
            Mode::FmaxStudy => "fmax-study",
        }
    }

    pub fn parse(v: &str) -> Option<Self> {
        Some(match v {
            "evolve" => Mode::Evolve,
            "profile" => Mode::Profile,
            "asym" => Mode::Asym,
            "rescale" => Mode::Rescale,
            "collapse" => Mode::Collapse,
            "fmax-study" => Mode::FmaxStudy,
            _ => return None,
        })
    }
}

/// Exponents used to rescale snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentSource {
    /// β from the shooter (exact `-1` for `s = 0`).
    Shooter,
    /// `β = -1/(1-2s)`.
    Exact,
    /// β fitted from the drift of the snapshot peaks.
    Peak,
}

/// Formulas reachable through `asym <name>`.
pub const ASYM_NAMES: &[&str] = &[
    "exponents",
    "origin-amplitude",
    "tail-constant",
    "tail-profile",
    "origin-profile",
    "perturb-alpha",
    "eqint-residual",
    "eps-g",
    "eps-a",
    "eps-beta",
    "lognormal-mid",
    "lognormal-peak",
    "gaussian-limit",
    "gaussian-peak",
    "laplace-g0",
    "laplace-g0-prime",
    "laplace-g0log",
    "laplace-g1",
    "laplace-g1-prime",
    "residual-lb",
    "gamma",
    "dilog",
];

/// Parameters of a single asymptotic formula evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymParams {
    pub name: String,
    pub xi: f64,
    pub lambda: f64,
    pub b: f64,
    pub eps: f64,
    pub beta: f64,
    pub g: f64,
    pub amplitude: f64,
    pub alpha: f64,
    pub n: u32,
    pub form: GaussianForm,
    pub prefactor: TailPrefactor,
    pub x: f64,
}

/// A fully validated run description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub s: f64,
    pub g: f64,
    pub xi_grid: XiGrid,
    pub shooter: ShooterConfig,
    pub evolution: EvolutionConfig,
    pub exponents: ExponentSource,
    /// Comparison window in ξ; `None` uses `[0.1 ξ_p, 8 ξ_p]` around the reference peak.
    pub window: Option<(f64, f64)>,
    pub rescale_points: usize,
    pub s_list: Vec<f64>,
    pub zeta_window: (f64, f64),
    pub collapse_points: usize,
    pub asym: AsymParams,
}

/// Float with 17 significant digits; round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

/// Key/value entries with the line they came from (0 for overrides).
struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

const KEYS: &[&str] = &[
    "mode",
    "deterministic",
    "s",
    "g",
    "xi_length",
    "xi_points",
    "a_min",
    "a_max",
    "a_rel_tol",
    "g_rel_tol",
    "max_outer_iterations",
    "terminal_tol",
    "beta_window",
    "refine_tail",
    "n_bins",
    "delta_x",
    "t_final",
    "snapshot_times",
    "initial",
    "initial_bin",
    "initial_mass",
    "initial_center",
    "initial_width",
    "mu",
    "ledger",
    "tol_step",
    "dt0",
    "dt_min",
    "dt_max",
    "dt_rel_max",
    "max_retries",
    "exponents",
    "window_min",
    "window_max",
    "rescale_points",
    "s_list",
    "zeta_min",
    "zeta_max",
    "collapse_points",
    "asym",
    "xi",
    "lambda",
    "b",
    "eps",
    "beta",
    "amplitude",
    "alpha",
    "n",
    "form",
    "tail_prefactor",
    "x",
];

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

impl Entries {
    fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = split_pair(content).ok_or_else(|| cfg_err(line, format!("expected key=value, got `{content}`")))?;
            if !KEYS.contains(&k) {
                return Err(cfg_err(line, format!("unknown key `{k}`")));
            }
            if map.insert(k.to_string(), (v.to_string(), line)).is_some() {
                return Err(cfg_err(line, format!("duplicate key `{k}`")));
            }
        }
        for o in overrides {
            let (k, v) = split_pair(o.trim()).ok_or_else(|| cfg_err(0, format!("override `{o}` is not key=value")))?;
            if !KEYS.contains(&k) {
                return Err(cfg_err(0, format!("unknown override key `{k}`")));
            }
            map.insert(k.to_string(), (v.to_string(), 0));
        }
        Ok(Self { map })
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.map.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn is_auto(&self, key: &str) -> bool {
        matches!(self.raw(key), None | Some(("auto", _)))
    }

    fn line(&self, key: &str) -> usize {
        self.raw(key).map(|(_, l)| l).unwrap_or(0)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None | Some(("auto", _)) => Ok(default),
            Some((v, line)) => parse_f64(v).ok_or_else(|| cfg_err(line, format!("`{key}`: `{v}` is not a number"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None | Some(("auto", _)) => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|_| cfg_err(line, format!("`{key}`: `{v}` is not a non-negative integer"))),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(("true", _)) => Ok(true),
            Some(("false", _)) => Ok(false),
            Some((v, line)) => Err(cfg_err(line, format!("`{key}`: expected true or false, got `{v}`"))),
        }
    }

    fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).map(|(v, _)| v).unwrap_or(default)
    }

    fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None | Some(("auto", _)) => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(',')
                .map(|p| p.trim())
                .filter(|p| !p.is_empty())
                .map(|p| parse_f64(p).ok_or_else(|| cfg_err(line, format!("`{key}`: `{p}` is not a number"))))
                .collect(),
        }
    }
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return None;
    }
    Some((k, v))
}

fn parse_f64(v: &str) -> Option<f64> {
    match v {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => v.parse::<f64>().ok().filter(|x| !x.is_nan()),
    }
}

fn check(cond: bool, line: usize, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(cfg_err(line, msg))
    }
}

/// Snapshot times `t_f·2^{-7}, …, t_f/2, t_f`.
pub fn default_snapshot_times(t_final: f64) -> Vec<f64> {
    (0..8).rev().map(|k| t_final / f64::powi(2.0, k)).collect()
}

/// Parses configuration text; `mode` is taken from the text or defaults to `profile`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[], None)
}

/// Parses configuration text plus `key=value` overrides (applied last).
///
/// `mode`, when given, must agree with a `mode` key in the text.
pub fn parse_config_with(text: &str, overrides: &[String], mode: Option<Mode>) -> Result<RunConfig> {
    let e = Entries::parse(text, overrides)?;

    let mode = match (e.raw("mode"), mode) {
        (None, m) => m.unwrap_or(Mode::Profile),
        (Some((v, line)), m) => {
            let parsed = Mode::parse(v).ok_or_else(|| cfg_err(line, format!("unknown mode `{v}`")))?;
            if let Some(m) = m {
                check(
                    m == parsed,
                    line,
                    format!("config mode `{v}` conflicts with subcommand `{}`", m.name()),
                )?;
            }
            parsed
        }
    };
    check(
        e.bool_or("deterministic", true)?,
        e.line("deterministic"),
        "runs are always deterministic; `deterministic=false` is not supported",
    )?;

    let s = e.f64_or("s", -0.2)?;
    check(s.is_finite() && s < 0.5, e.line("s"), format!("`s` must satisfy s < 1/2, got {s}"))?;
    match mode {
        Mode::Profile => check(s < 0.0, e.line("s"), format!("mode profile needs s < 0, got {s}"))?,
        Mode::Rescale | Mode::Collapse => check(
            s <= 0.0,
            e.line("s"),
            format!("mode {} needs s <= 0, got {s}", mode.name()),
        )?,
        _ => {}
    }

    // self-similar profile
    let g = e.f64_or("g", 2.0)?;
    check(g > 0.0 && g.is_finite(), e.line("g"), "`g` must be positive")?;
    let auto_grid = XiGrid::default_for(if s < 0.0 { s } else { -0.2 });
    let xi_length = e.f64_or("xi_length", auto_grid.length())?;
    let xi_points = e.usize_or("xi_points", auto_grid.n())?;
    let xi_grid = XiGrid::with_length(xi_length, xi_points).map_err(|err| cfg_err(e.line("xi_length").max(e.line("xi_points")), err.to_string()))?;
    let d = ShooterConfig::default();
    let shooter = ShooterConfig {
        a_min: e.f64_or("a_min", d.a_min)?,
        a_max: e.f64_or("a_max", d.a_max)?,
        a_rel_tol: e.f64_or("a_rel_tol", d.a_rel_tol)?,
        g_rel_tol: e.f64_or("g_rel_tol", d.g_rel_tol)?,
        max_outer_iterations: e.usize_or("max_outer_iterations", d.max_outer_iterations)?,
        terminal_tol: e.f64_or("terminal_tol", d.terminal_tol)?,
        beta_window: e.f64_or("beta_window", d.beta_window)?,
        refine_tail: e.bool_or("refine_tail", d.refine_tail)?,
    };
    check(
        shooter.a_min > 0.0 && shooter.a_max > shooter.a_min && shooter.a_max.is_finite(),
        e.line("a_min").max(e.line("a_max")),
        "need 0 < a_min < a_max",
    )?;
    for (key, v) in [
        ("a_rel_tol", shooter.a_rel_tol),
        ("g_rel_tol", shooter.g_rel_tol),
        ("terminal_tol", shooter.terminal_tol),
    ] {
        check(v > 0.0 && v < 1.0, e.line(key), format!("`{key}` must lie in (0, 1)"))?;
    }
    check(
        shooter.beta_window > 0.0 && shooter.beta_window < 1.0,
        e.line("beta_window"),
        "`beta_window` must lie in (0, 1)",
    )?;
    check(shooter.max_outer_iterations > 0, e.line("max_outer_iterations"), "`max_outer_iterations` must be positive")?;

    // evolution
    let ed = EvolutionConfig::default();
    let n_bins = e.usize_or("n_bins", ed.n_bins)?;
    let delta_x = e.f64_or("delta_x", ed.delta_x)?;
    let grid = UniformMassGrid::new(delta_x, n_bins).map_err(|err| cfg_err(e.line("n_bins").max(e.line("delta_x")), err.to_string()))?;
    let t_final = e.f64_or("t_final", ed.t_final)?;
    check(t_final > 0.0 && t_final.is_finite(), e.line("t_final"), "`t_final` must be positive")?;
    let snapshot_times = e.list_or("snapshot_times", &default_snapshot_times(t_final))?;
    check(
        snapshot_times.iter().all(|t| *t > 0.0 && *t <= t_final),
        e.line("snapshot_times"),
        format!("snapshot times must lie in (0, {t_final}]"),
    )?;
    check(
        snapshot_times.windows(2).all(|w| w[1] > w[0]),
        e.line("snapshot_times"),
        "snapshot times must be strictly increasing",
    )?;
    let initial_mass = e.f64_or("initial_mass", 1.0)?;
    check(initial_mass > 0.0 && initial_mass.is_finite(), e.line("initial_mass"), "`initial_mass` must be positive")?;
    let initial_bin = e.usize_or("initial_bin", 1)?;
    let initial_center = e.f64_or("initial_center", 10.0)?;
    let initial_width = e.f64_or("initial_width", 1.0)?;
    let initial = match e.str_or("initial", "monodisperse") {
        "monodisperse" => InitialCondition::Monodisperse {
            bin: initial_bin,
            mass: initial_mass,
        },
        "gaussian" => InitialCondition::NarrowGaussian {
            center: initial_center,
            width: initial_width,
            mass: initial_mass,
        },
        other => {
            return Err(cfg_err(
                e.line("initial"),
                format!("`initial` must be monodisperse or gaussian, got `{other}`"),
            ))
        }
    };
    let c0 = initial
        .densities(&grid)
        .map_err(|err| cfg_err(e.line("initial").max(e.line("initial_bin")), err.to_string()))?;
    let mu = e.f64_or("mu", 1e-12 * grid.moment(&c0, 1.0) / n_bins as f64)?;
    check(mu >= 0.0 && mu.is_finite(), e.line("mu"), "`mu` must be non-negative")?;
    let ledger = match e.str_or("ledger", "corrected") {
        "corrected" => LedgerMode::Corrected,
        "paper" => LedgerMode::Paper,
        other => return Err(cfg_err(e.line("ledger"), format!("`ledger` must be corrected or paper, got `{other}`"))),
    };
    let cmax = c0.iter().fold(0.0f64, |m, &v| m.max(v));
    let tol_step = e.f64_or("tol_step", 1e-4 * cmax)?;
    check(tol_step > 0.0 && tol_step.is_finite(), e.line("tol_step"), "`tol_step` must be positive")?;
    let dt0 = e.f64_or("dt0", ed.dt0)?;
    let dt_min = e.f64_or("dt_min", ed.dt_min)?;
    let dt_max = e.f64_or("dt_max", ed.dt_max)?;
    let dt_rel_max = e.f64_or("dt_rel_max", ed.dt_rel_max)?;
    check(
        dt_min > 0.0 && dt0 >= dt_min && dt_max >= dt0,
        e.line("dt0").max(e.line("dt_min")).max(e.line("dt_max")),
        "need 0 < dt_min <= dt0 <= dt_max",
    )?;
    check(dt_rel_max >= 0.0 && dt_rel_max.is_finite(), e.line("dt_rel_max"), "`dt_rel_max` must be non-negative")?;
    let max_retries = e.usize_or("max_retries", ed.max_retries)?;
    let evolution = EvolutionConfig {
        s,
        n_bins,
        delta_x,
        t_final,
        snapshot_times,
        initial,
        mu: Some(mu),
        ledger,
        tol_step: Some(tol_step),
        dt0,
        dt_min,
        dt_max,
        dt_rel_max,
        max_retries,
    };

    // analysis
    let exponents = match e.str_or("exponents", "shooter") {
        "shooter" => ExponentSource::Shooter,
        "exact" => ExponentSource::Exact,
        "peak" => ExponentSource::Peak,
        other => {
            return Err(cfg_err(
                e.line("exponents"),
                format!("`exponents` must be shooter, exact or peak, got `{other}`"),
            ))
        }
    };
    let window = match (e.is_auto("window_min"), e.is_auto("window_max")) {
        (true, true) => None,
        (false, false) => {
            let w = (e.f64_or("window_min", 0.0)?, e.f64_or("window_max", 0.0)?);
            check(w.0 > 0.0 && w.1 > w.0, e.line("window_min"), "need 0 < window_min < window_max")?;
            Some(w)
        }
        _ => {
            return Err(cfg_err(
                e.line("window_min").max(e.line("window_max")),
                "set both window_min and window_max, or neither",
            ))
        }
    };
    let rescale_points = e.usize_or("rescale_points", 400)?;
    check(rescale_points >= 2, e.line("rescale_points"), "`rescale_points` must be at least 2")?;
    let s_list = e.list_or("s_list", &[-4.0, -5.0, -6.0, -7.0, -8.0, -9.0, -10.0])?;
    if mode == Mode::FmaxStudy {
        check(s_list.len() >= 2, e.line("s_list"), "`s_list` needs at least two values")?;
        check(
            s_list.iter().all(|v| *v <= -4.0),
            e.line("s_list"),
            "`s_list` entries must satisfy s <= -4",
        )?;
    }
    let zeta_window = (
        e.f64_or("zeta_min", analysis::ZETA_WINDOW.0)?,
        e.f64_or("zeta_max", analysis::ZETA_WINDOW.1)?,
    );
    check(zeta_window.1 > zeta_window.0, e.line("zeta_max"), "need zeta_min < zeta_max")?;
    let collapse_points = e.usize_or("collapse_points", 401)?;
    check(collapse_points >= 2, e.line("collapse_points"), "`collapse_points` must be at least 2")?;

    // asymptotics
    let name = e.str_or("asym", "exponents").to_string();
    check(
        ASYM_NAMES.contains(&name.as_str()),
        e.line("asym"),
        format!("unknown formula `{name}`; known: {}", ASYM_NAMES.join(", ")),
    )?;
    let exps = asy::exponents_for(KernelSpec::new(s)?);
    let asym = AsymParams {
        name,
        xi: e.f64_or("xi", 1.0)?,
        lambda: e.f64_or("lambda", 1.0)?,
        b: e.f64_or("b", -2.0)?,
        eps: e.f64_or("eps", s)?,
        beta: e.f64_or("beta", exps.beta)?,
        g: e.f64_or("g", 2.0)?,
        amplitude: e.f64_or("amplitude", 1.0)?,
        alpha: e.f64_or("alpha", 0.5)?,
        n: {
            let v = e.usize_or("n", 4)?;
            u32::try_from(v).map_err(|_| cfg_err(e.line("n"), "`n` is too large"))?
        },
        form: match e.str_or("form", "tail") {
            "tail" => GaussianForm::Tail,
            "peak" => GaussianForm::Peak,
            other => return Err(cfg_err(e.line("form"), format!("`form` must be tail or peak, got `{other}`"))),
        },
        prefactor: match e.str_or("tail_prefactor", "printed") {
            "printed" => TailPrefactor::Printed,
            "beta-integral" => TailPrefactor::BetaIntegral,
            other => {
                return Err(cfg_err(
                    e.line("tail_prefactor"),
                    format!("`tail_prefactor` must be printed or beta-integral, got `{other}`"),
                ))
            }
        },
        x: e.f64_or("x", 0.5)?,
    };

    Ok(RunConfig {
        mode,
        s,
        g,
        xi_grid,
        shooter,
        evolution,
        exponents,
        window,
        rescale_points,
        s_list,
        zeta_window,
        collapse_points,
        asym,
    })
}

impl RunConfig {
    /// Configuration text with every key materialized; parsing it gives back `self`.
    pub fn to_config_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k}={v}");
        };
        let ev = &self.evolution;
        kv("mode", self.mode.name().into());
        kv("deterministic", "true".into());
        kv("s", fmt_f64(self.s));
        kv("g", fmt_f64(self.g));
        kv("xi_length", fmt_f64(self.xi_grid.length()));
        kv("xi_points", self.xi_grid.n().to_string());
        kv("a_min", fmt_f64(self.shooter.a_min));
        kv("a_max", fmt_f64(self.shooter.a_max));
        kv("a_rel_tol", fmt_f64(self.shooter.a_rel_tol));
        kv("g_rel_tol", fmt_f64(self.shooter.g_rel_tol));
        kv("max_outer_iterations", self.shooter.max_outer_iterations.to_string());
        kv("terminal_tol", fmt_f64(self.shooter.terminal_tol));
        kv("beta_window", fmt_f64(self.shooter.beta_window));
        kv("refine_tail", self.shooter.refine_tail.to_string());
        kv("n_bins", ev.n_bins.to_string());
        kv("delta_x", fmt_f64(ev.delta_x));
        kv("t_final", fmt_f64(ev.t_final));
        kv("snapshot_times", fmt_list(&ev.snapshot_times));
        match ev.initial {
            InitialCondition::Monodisperse { bin, mass } => {
                kv("initial", "monodisperse".into());
                kv("initial_bin", bin.to_string());
                kv("initial_mass", fmt_f64(mass));
            }
            InitialCondition::NarrowGaussian { center, width, mass } => {
                kv("initial", "gaussian".into());
                kv("initial_center", fmt_f64(center));
                kv("initial_width", fmt_f64(width));
                kv("initial_mass", fmt_f64(mass));
            }
        }
        kv("mu", fmt_f64(ev.mu.unwrap_or(0.0)));
        kv(
            "ledger",
            match ev.ledger {
                LedgerMode::Corrected => "corrected",
                LedgerMode::Paper => "paper",
            }
            .into(),
        );
        kv("tol_step", fmt_f64(ev.tol_step.unwrap_or(0.0)));
        kv("dt0", fmt_f64(ev.dt0));
        kv("dt_min", fmt_f64(ev.dt_min));
        kv("dt_max", fmt_f64(ev.dt_max));
        kv("dt_rel_max", fmt_f64(ev.dt_rel_max));
        kv("max_retries", ev.max_retries.to_string());
        kv(
            "exponents",
            match self.exponents {
                ExponentSource::Shooter => "shooter",
                ExponentSource::Exact => "exact",
                ExponentSource::Peak => "peak",
            }
            .into(),
        );
        match self.window {
            Some((a, b)) => {
                kv("window_min", fmt_f64(a));
                kv("window_max", fmt_f64(b));
            }
            None => {
                kv("window_min", "auto".into());
                kv("window_max", "auto".into());
            }
        }
        kv("rescale_points", self.rescale_points.to_string());
        kv("s_list", fmt_list(&self.s_list));
        kv("zeta_min", fmt_f64(self.zeta_window.0));
        kv("zeta_max", fmt_f64(self.zeta_window.1));
        kv("collapse_points", self.collapse_points.to_string());
        let a = &self.asym;
        kv("asym", a.name.clone());
        kv("xi", fmt_f64(a.xi));
        kv("lambda", fmt_f64(a.lambda));
        kv("b", fmt_f64(a.b));
        kv("eps", fmt_f64(a.eps));
        kv("beta", fmt_f64(a.beta));
        kv("amplitude", fmt_f64(a.amplitude));
        kv("alpha", fmt_f64(a.alpha));
        kv("n", a.n.to_string());
        kv(
            "form",
            match a.form {
                GaussianForm::Tail => "tail",
                GaussianForm::Peak => "peak",
            }
            .into(),
        );
        kv(
            "tail_prefactor",
            match a.prefactor {
                TailPrefactor::Printed => "printed",
                TailPrefactor::BetaIntegral => "beta-integral",
            }
            .into(),
        );
        kv("x", fmt_f64(a.x));
        o
    }
}

/// Shooter result with derived diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileResult {
    pub report: ShooterReport,
    pub profile: SimilarityProfile,
    pub normalized: SimilarityProfile,
    pub tail: Option<selfsim::TailFit>,
    pub equation_residual: f64,
}

/// One formula evaluation: argument names/values and the result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymRow {
    pub name: String,
    pub args: Vec<(String, f64)>,
    pub values: Vec<(String, f64)>,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutput {
    Profile(Box<ProfileResult>),
    Evolve(Box<EvolutionRun>),
    Rescale {
        run: Box<EvolutionRun>,
        beta: f64,
        rescaled: Vec<analysis::RescaledSnapshot>,
        skipped: Vec<f64>,
    },
    Collapse {
        run: Box<EvolutionRun>,
        beta: f64,
        reference: Box<SimilarityProfile>,
        report: CollapseReport,
    },
    FmaxStudy {
        study: FmaxStudy,
        collapse: CollapseReport,
    },
    Asym(AsymRow),
}

pub fn solve_profile(cfg: &RunConfig) -> Result<ProfileResult> {
    let (report, profile) = selfsim::solve_similarity(cfg.s, cfg.xi_grid, cfg.g, &cfg.shooter)?;
    let normalized = analysis::normalized_profile(&profile)?;
    let l = profile.grid.length();
    let tail = selfsim::fit_tail(&profile, 0.5 * l, 0.75 * l).ok();
    let equation_residual = selfsim::profile_residual(&profile)?;
    Ok(ProfileResult {
        report,
        profile,
        normalized,
        tail,
        equation_residual,
    })
}

/// Reference profile for the collapse: shooter for `s < 0`, `2e^{-ξ}` for `s = 0`.
fn reference_profile(cfg: &RunConfig) -> Result<(f64, SimilarityProfile)> {
    if cfg.s == 0.0 {
        let grid = XiGrid::with_length(40.0, 8000)?;
        let p = SimilarityProfile::from_fn(grid, 0.0, -1.0, 2.0, 2.0, 2.0, |x: f64| 2.0 * (-x).exp());
        return Ok((-1.0, p));
    }
    let (report, profile) = selfsim::solve_similarity(cfg.s, cfg.xi_grid, cfg.g, &cfg.shooter)?;
    Ok((report.beta_star, profile))
}

fn rescale_beta(cfg: &RunConfig, run: &EvolutionRun, shooter_beta: Option<f64>) -> Result<f64> {
    let exact = if cfg.s == 0.0 { -1.0 } else { -1.0 / (1.0 - 2.0 * cfg.s) };
    Ok(match cfg.exponents {
        ExponentSource::Exact => exact,
        ExponentSource::Shooter => match shooter_beta {
            Some(b) => b,
            None if cfg.s == 0.0 => -1.0,
            None => selfsim::solve_similarity(cfg.s, cfg.xi_grid, cfg.g, &cfg.shooter)?.0.beta_star,
        },
        ExponentSource::Peak => analysis::fit_beta_by_peak(&run.snapshots, &run.grid)?,
    })
}

/// Executes the configured run.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    match cfg.mode {
        Mode::Profile => Ok(RunOutput::Profile(Box::new(solve_profile(cfg)?))),
        Mode::Evolve => Ok(RunOutput::Evolve(Box::new(evolution::run_evolution(&cfg.evolution)?))),
        Mode::Rescale => {
            let run = evolution::run_evolution(&cfg.evolution)?;
            let beta = rescale_beta(cfg, &run, None)?;
            let window = match cfg.window {
                Some(w) => w,
                None => {
                    let (_, reference) = reference_profile(cfg)?;
                    analysis::default_window(analysis::normalized_profile(&reference)?.peak_location())
                }
            };
            let mut rescaled = Vec::new();
            let mut skipped = Vec::new();
            for snap in run.snapshots.iter().filter(|s| s.t > 0.0) {
                match analysis::rescale_normalized(snap, &run.grid, cfg.s, beta, window, cfg.rescale_points) {
                    Ok(r) => rescaled.push(r),
                    Err(Error::Invalid(_)) => skipped.push(snap.t),
                    Err(e) => return Err(e),
                }
            }
            Ok(RunOutput::Rescale {
                run: Box::new(run),
                beta,
                rescaled,
                skipped,
            })
        }
        Mode::Collapse => {
            let run = evolution::run_evolution(&cfg.evolution)?;
            let (shooter_beta, reference) = reference_profile(cfg)?;
            let beta = rescale_beta(cfg, &run, Some(shooter_beta))?;
            let mut report =
                analysis::snapshot_collapse(&run.snapshots, &run.grid, cfg.s, beta, &reference, cfg.rescale_points)?;
            if let Some(w) = cfg.window {
                // recompute on the requested window
                let norm = analysis::normalized_profile(&reference)?;
                report.window = w;
                for (d, c) in report.to_profile.iter_mut().zip(&report.curves) {
                    d.distance = analysis::collapse_distance(c, &norm, w, cfg.rescale_points)?;
                }
            }
            Ok(RunOutput::Collapse {
                run: Box::new(run),
                beta,
                reference: Box::new(analysis::normalized_profile(&reference)?),
                report,
            })
        }
        Mode::FmaxStudy => {
            // one shooter pass for both diagnostics
            use rayon::prelude::*;
            let solved = cfg
                .s_list
                .par_iter()
                .map(|&s| {
                    let grid = XiGrid::default_for(s);
                    let (rep, p) = selfsim::solve_similarity(s, grid, cfg.g, &cfg.shooter)?;
                    Ok((s, rep.beta_star, analysis::normalized_profile(&p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let entries: Vec<analysis::FmaxEntry> = solved
                .iter()
                .map(|(s, b, p)| analysis::FmaxEntry {
                    s: *s,
                    beta_star: *b,
                    f_max: p.f_max(),
                    xi_peak: p.peak_location(),
                })
                .collect();
            let x: Vec<f64> = entries.iter().map(|e| e.s.abs()).collect();
            let y: Vec<f64> = entries.iter().map(|e| e.f_max * e.f_max).collect();
            let fit = analysis::linear_fit(&x, &y)?;
            let profiles: Vec<(f64, SimilarityProfile)> = solved.into_iter().map(|(s, _, p)| (s, p)).collect();
            let collapse = analysis::gaussian_collapse_from_profiles(&profiles, cfg.zeta_window, cfg.collapse_points)?;
            Ok(RunOutput::FmaxStudy {
                study: FmaxStudy { entries, fit },
                collapse,
            })
        }
        Mode::Asym => Ok(RunOutput::Asym(evaluate_asym(cfg.s, &cfg.asym)?)),
    }
}

/// Evaluates one named asymptotic formula.
pub fn evaluate_asym(s: f64, p: &AsymParams) -> Result<AsymRow> {
    let a = |k: &str, v: f64| (k.to_string(), v);
    let (args, values): (Vec<(String, f64)>, Vec<(String, f64)>) = match p.name.as_str() {
        "exponents" => {
            let e = asy::exponents_for(KernelSpec::new(s)?);
            (
                vec![a("s", s)],
                vec![a("beta", e.beta), a("alpha", e.alpha), a("approximate", f64::from(u8::from(e.approximate)))],
            )
        }
        "origin-amplitude" => (vec![a("s", s)], vec![a("value", asy::origin_amplitude(s)?)]),
        "tail-constant" => (
            vec![a("s", s), a("beta", p.beta), a("amplitude", p.amplitude)],
            vec![a("value", asy::tail_constant(s, p.beta, p.amplitude, p.prefactor)?)],
        ),
        "tail-profile" => (
            vec![a("xi", p.xi), a("s", s), a("beta", p.beta), a("amplitude", p.amplitude)],
            vec![a("value", asy::tail_profile(p.xi, s, p.beta, p.amplitude, p.prefactor)?)],
        ),
        "origin-profile" => (
            vec![a("xi", p.xi), a("s", s), a("beta", p.beta), a("g", p.g), a("amplitude", p.amplitude)],
            vec![a("value", asy::origin_profile_negative(p.xi, s, p.beta, p.g, p.amplitude)?)],
        ),
        "perturb-alpha" => (
            vec![a("eps", p.eps), a("beta", p.beta)],
            vec![a("value", asy::perturb_exponent_alpha(p.eps, p.beta)?)],
        ),
        "eqint-residual" => (
            vec![a("alpha", p.alpha), a("eps", p.eps), a("beta", p.beta), a("amplitude", p.amplitude)],
            vec![a("value", asy::eqint_residual(p.alpha, p.eps, p.beta, p.amplitude)?)],
        ),
        "eps-g" => (vec![a("eps", p.eps)], vec![a("value", asy::eps_expansion_g(p.eps))]),
        "eps-a" => (vec![a("eps", p.eps)], vec![a("value", asy::eps_expansion_a(p.eps))]),
        "eps-beta" => (vec![a("eps", p.eps)], vec![a("value", asy::beta_expansion().eval(p.eps))]),
        "lognormal-mid" => (
            vec![a("xi", p.xi), a("eps", p.eps), a("amplitude", p.amplitude)],
            vec![a("value", asy::lognormal_mid(p.xi, p.eps, p.amplitude)?)],
        ),
        "lognormal-peak" => (
            vec![a("eps", p.eps), a("amplitude", p.amplitude)],
            vec![a("value", asy::lognormal_peak(p.eps, p.amplitude))],
        ),
        "gaussian-limit" => (
            vec![a("xi", p.xi), a("n", f64::from(p.n))],
            vec![a("value", asy::gaussian_limit_profile(p.xi, p.n, p.form)?)],
        ),
        "gaussian-peak" => (vec![], vec![a("value", asy::gaussian_limit_peak())]),
        "laplace-g0" => (vec![a("lambda", p.lambda)], vec![a("value", asy::laplace_g0(p.lambda))]),
        "laplace-g0-prime" => (vec![a("lambda", p.lambda)], vec![a("value", asy::laplace_g0_prime(p.lambda))]),
        "laplace-g0log" => (vec![a("lambda", p.lambda)], vec![a("value", asy::laplace_g0log(p.lambda))]),
        "laplace-g1" => (vec![a("lambda", p.lambda)], vec![a("value", asy::laplace_g1(p.lambda)?)]),
        "laplace-g1-prime" => (vec![a("lambda", p.lambda)], vec![a("value", asy::laplace_g1_prime(p.lambda)?)]),
        "residual-lb" => (
            vec![a("lambda", p.lambda), a("b", p.b)],
            vec![a("value", asy::residual_lb(p.lambda, p.b)?)],
        ),
        "gamma" => (vec![a("x", p.x)], vec![a("value", specfun::gamma_fn(p.x)?)]),
        "dilog" => (vec![a("x", p.x)], vec![a("value", specfun::dilog(p.x)?)]),
        other => return Err(Error::Invalid(format!("unknown formula `{other}`"))),
    };
    Ok(AsymRow {
        name: p.name.clone(),
        args,
        values,
    })
}

impl AsymRow {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["name".to_string()];
        cols.extend(self.args.iter().map(|(k, _)| k.clone()));
        cols.extend(self.values.iter().map(|(k, _)| k.clone()));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.name.clone()];
        cols.extend(self.args.iter().chain(&self.values).map(|(_, v)| fmt_f64(*v)));
        cols.join(",")
    }
}

// JSON with every float at 17 significant digits
struct Json17<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for Json17<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }
    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        w.write_all(fmt_f64(f64::from(v)).as_bytes())
    }
    fn begin_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-significant-digit floats; non-finite floats become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Json17(serde_json::ser::PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Invalid(format!("json serialization: {e}")))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Invalid(e.to_string()))
}

fn write_file(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(())
}

fn csv<I: IntoIterator<Item = Vec<f64>>>(header: &str, rows: I) -> String {
    let mut out = String::with_capacity(1 << 16);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn profile_csv(p: &SimilarityProfile) -> String {
    csv("xi,f", (0..p.f.len()).map(|i| vec![p.xi(i), p.f[i]]))
}

fn base_json(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "version": VERSION,
        "mode": cfg.mode.name(),
        "config": cfg.to_config_text(),
    })
}

fn merge(mut a: serde_json::Value, b: serde_json::Value) -> serde_json::Value {
    if let (Some(am), serde_json::Value::Object(bm)) = (a.as_object_mut(), b) {
        am.extend(bm);
    }
    a
}

fn evolution_files(run: &EvolutionRun, cfg: &RunConfig, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let g = &run.grid;
    let snaps = csv(
        "t,bin,x,c",
        run.snapshots.iter().flat_map(|s| {
            s.c.iter()
                .enumerate()
                .map(move |(j, &c)| vec![s.t, (j + 1) as f64, g.x(j + 1), c])
        }),
    );
    write_file(dir, "snapshots.csv", &snaps, written)?;
    let moments = csv(
        "t,dt,m0,m1,m2,lambda0,lambda1,lambda2",
        run.moments
            .iter()
            .map(|m| vec![m.t, m.dt, m.m0, m.m1, m.m2, m.lambda0, m.lambda1, m.lambda2]),
    );
    write_file(dir, "moments.csv", &moments, written)?;
    let last = run.moments.last().copied();
    let info = merge(
        base_json(cfg),
        json!({
            "grid": g,
            "mu": run.mu,
            "tolerances": run.tolerances,
            "stats": run.stats,
            "max_mass_drift": run.max_mass_drift,
            "final_moments": last,
            "snapshot_times": run.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(),
        }),
    );
    write_file(dir, "run.json", &to_json(&info)?, written)
}

/// Writes the output files of a run into `dir` (created if missing); returns their paths.
pub fn emit_outputs(output: &RunOutput, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    write_file(dir, "config.txt", &cfg.to_config_text(), &mut written)?;
    match output {
        RunOutput::Profile(p) => {
            write_file(dir, "profile.csv", &profile_csv(&p.profile), &mut written)?;
            write_file(dir, "profile_normalized.csv", &profile_csv(&p.normalized), &mut written)?;
            let exact = -1.0 / (1.0 - 2.0 * cfg.s);
            let r = &p.report;
            let report = merge(
                base_json(cfg),
                json!({
                    "beta_star": r.beta_star,
                    "a_star": r.a_star,
                    "g": r.g,
                    "g_out": r.g_out,
                    "residual": r.residual,
                    "inner_iterations": r.inner_iterations,
                    "outer_iterations": r.outer_iterations,
                    "beta_exact": exact,
                    "beta_relative_error": (r.beta_star - exact) / exact,
                    "equation_residual": p.equation_residual,
                    "f_max": p.profile.f_max(),
                    "xi_peak": p.profile.peak_location(),
                    "first_moment": selfsim::moment(&p.profile, 1.0),
                    "tail_fit": p.tail,
                    "normalized": {
                        "first_moment": selfsim::moment(&p.normalized, 1.0),
                        "g": p.normalized.g,
                        "a": p.normalized.a,
                        "f_max": p.normalized.f_max(),
                        "xi_peak": p.normalized.peak_location(),
                    },
                }),
            );
            write_file(dir, "report.json", &to_json(&report)?, &mut written)?;
        }
        RunOutput::Evolve(run) => evolution_files(run, cfg, dir, &mut written)?,
        RunOutput::Rescale {
            run,
            beta,
            rescaled,
            skipped,
        } => {
            evolution_files(run, cfg, dir, &mut written)?;
            let rows = csv(
                "t,xi,fhat",
                rescaled
                    .iter()
                    .flat_map(|r| r.xi.iter().zip(&r.fhat).map(move |(x, f)| vec![r.t, *x, *f])),
            );
            write_file(dir, "rescaled.csv", &rows, &mut written)?;
            let info = merge(
                base_json(cfg),
                json!({
                    "beta": beta,
                    "alpha": asy::alpha_from_beta(cfg.s, *beta),
                    "gauge": rescaled.iter().map(|r| json!({"t": r.t, "ell": r.ell})).collect::<Vec<_>>(),
                    "skipped_times": skipped,
                }),
            );
            write_file(dir, "rescale.json", &to_json(&info)?, &mut written)?;
        }
        RunOutput::Collapse {
            run,
            beta,
            reference,
            report,
        } => {
            evolution_files(run, cfg, dir, &mut written)?;
            write_file(dir, "profile_normalized.csv", &profile_csv(reference), &mut written)?;
            let curves = csv(
                "t,xi,fhat",
                report
                    .curves
                    .iter()
                    .flat_map(|c| c.x.iter().zip(&c.y).map(move |(x, y)| vec![c.label, *x, *y])),
            );
            write_file(dir, "collapse.csv", &curves, &mut written)?;
            let info = merge(
                base_json(cfg),
                json!({
                    "beta": beta,
                    "alpha": asy::alpha_from_beta(cfg.s, *beta),
                    "window": report.window,
                    "distance_to_profile": report.to_profile,
                    "pair_distances": report.pairs,
                    "peaks": report.peaks,
                    "skipped_times": report.skipped,
                }),
            );
            write_file(dir, "collapse.json", &to_json(&info)?, &mut written)?;
        }
        RunOutput::FmaxStudy { study, collapse } => {
            let rows = csv(
                "s,beta_star,f_max,f_max_squared,xi_peak",
                study
                    .entries
                    .iter()
                    .map(|e| vec![e.s, e.beta_star, e.f_max, e.f_max * e.f_max, e.xi_peak]),
            );
            write_file(dir, "fmax.csv", &rows, &mut written)?;
            let curves = csv(
                "s,zeta,value",
                collapse
                    .curves
                    .iter()
                    .flat_map(|c| c.x.iter().zip(&c.y).map(move |(x, y)| vec![c.label, *x, *y])),
            );
            write_file(dir, "gaussian_collapse.csv", &curves, &mut written)?;
            let info = merge(
                base_json(cfg),
                json!({
                    "fit": study.fit,
                    "entries": study.entries,
                    "zeta_window": collapse.window,
                    "pair_distances": collapse.pairs,
                    "max_pair_distance": collapse.max_pair_distance(),
                    "peaks": collapse.peaks,
                }),
            );
            write_file(dir, "fmax.json", &to_json(&info)?, &mut written)?;
        }
        RunOutput::Asym(row) => {
            let text = format!("{}\n{}\n", row.csv_header(), row.csv_row());
            write_file(dir, "asym.csv", &text, &mut written)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_materialize() {
        let c = parse_config("mode=profile\ns=-0.2").unwrap();
        assert_eq!(c.mode, Mode::Profile);
        assert_eq!(c.g, 2.0);
        assert_eq!(c.xi_grid, XiGrid::default_for(-0.2));
        assert_eq!(c.shooter, ShooterConfig::default());
        assert_eq!(c.evolution.ledger, LedgerMode::Corrected);
        assert_eq!(c.evolution.snapshot_times.len(), 8);
        assert_eq!(*c.evolution.snapshot_times.last().unwrap(), c.evolution.t_final);
        assert_eq!(c.evolution.mu, Some(1e-12 / 4000.0));
        assert_eq!(c.evolution.tol_step, Some(1e-4));
    }

    #[test]
    fn validation_errors_carry_lines() {
        match parse_config("# kernel\ns=0.7") {
            Err(Error::Config { line: 2, msg }) => assert!(msg.contains("1/2"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("colour=blue"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(parse_config("s=-0.2\ns=-0.3"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(parse_config("\n\nnot a pair"), Err(Error::Config { line: 3, .. })));
        assert!(matches!(parse_config("t_final=abc"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(
            parse_config("mode=evolve\nt_final=10\nsnapshot_times=20"),
            Err(Error::Config { line: 3, .. })
        ));
        assert!(matches!(parse_config("mode=profile\ns=0.2"), Err(Error::Config { .. })));
        assert!(matches!(parse_config("deterministic=false"), Err(Error::Config { .. })));
    }

    #[test]
    fn ledger_flag() {
        let c = parse_config("ledger=paper").unwrap();
        assert_eq!(c.evolution.ledger, LedgerMode::Paper);
    }

    #[test]
    fn comments_and_overrides() {
        let text = "mode=evolve # run it\n  s = -0.5  \n# n_bins=1\nn_bins=100\n";
        let c = parse_config_with(text, &["n_bins=200".into()], Some(Mode::Evolve)).unwrap();
        assert_eq!(c.s, -0.5);
        assert_eq!(c.evolution.n_bins, 200);
        assert!(parse_config_with(text, &[], Some(Mode::Profile)).is_err());
        assert!(parse_config_with("", &["bogus=1".into()], None).is_err());
    }

    #[test]
    fn echo_round_trips() {
        for text in [
            "",
            "mode=evolve\ns=0\nt_final=37.5\ninitial=gaussian\ninitial_center=5\ninitial_width=0.3",
            "mode=collapse\nwindow_min=0.2\nwindow_max=3\nledger=paper\ns=-0.35",
            "mode=fmax-study\ns_list=-4,-6.5\nzeta_min=-2",
            "mode=asym\nasym=residual-lb\nlambda=0.1\nb=0\ns=0.01",
        ] {
            let a = parse_config(text).unwrap();
            let echo = a.to_config_text();
            let b = parse_config(&echo).unwrap();
            assert_eq!(a, b, "{text}");
            assert_eq!(echo, b.to_config_text());
        }
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(2.0), "2.0000000000000000e0");
        assert_eq!(fmt_f64(-0.1), "-1.0000000000000001e-1");
        for v in [0.1, 1.0 / 3.0, 6.02e23, -1e-300, 5e-324] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }

    #[test]
    fn json_floats_and_nulls() {
        let v = json!({"a": 0.5, "b": [1.0, f64::NAN], "n": 3});
        let s = to_json(&v).unwrap();
        assert!(s.contains("\"a\": 5.0000000000000000e-1"), "{s}");
        assert!(s.contains("null"));
        assert!(s.contains("\"n\": 3"));
        serde_json::from_str::<serde_json::Value>(&s).unwrap();
    }

    #[test]
    fn asym_rows() {
        let c = parse_config("mode=asym\nasym=origin-amplitude\ns=0.01").unwrap();
        let row = evaluate_asym(c.s, &c.asym).unwrap();
        assert_eq!(row.csv_header(), "name,s,value");
        assert!((row.values[0].1 / 0.01 - 1.0).abs() < 1e-3);
        let c = parse_config("mode=asym\nasym=gamma\nx=0.5").unwrap();
        let row = evaluate_asym(c.s, &c.asym).unwrap();
        assert!((row.values[0].1 - std::f64::consts::PI.sqrt()).abs() < 1e-14);
        assert!(parse_config("mode=asym\nasym=nothing").is_err());
    }
}
