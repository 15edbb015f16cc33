//! Real Gamma function, real dilogarithm and the Euler–Mascheroni constant.
//!
//! Only what the asymptotic formulas need: `Γ` on the real line away from
//! the poles and `Li₂` on `(-∞, 1]`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Euler–Mascheroni constant γ.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `Li₂(1) = π²/6`.
pub const ZETA2: f64 = PI * PI / 6.0;

pub fn euler_gamma() -> f64 {
    EULER_GAMMA
}

// Lanczos approximation, g = 7, nine terms.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `sin(πx)` with the argument reduced before multiplying by π, so that it
/// stays accurate far from the origin.
fn sin_pi(x: f64) -> f64 {
    let n = x.round();
    let r = x - n;
    let v = (PI * r).sin();
    if (n as i64) % 2 == 0 {
        v
    } else {
        -v
    }
}

fn gamma_lanczos(x: f64) -> f64 {
    // valid for x >= 0.5
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// Gamma function Γ(x) for real `x` that is not a non-positive integer.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain("gamma", x, "finite argument"));
    }
    if x <= 0.0 && x == x.floor() {
        return Err(Error::domain("gamma", x, "x not in {0, -1, -2, ...}"));
    }
    if x < 0.5 {
        Ok(PI / (sin_pi(x) * gamma_lanczos(1.0 - x)))
    } else {
        Ok(gamma_lanczos(x))
    }
}

fn dilog_series(x: f64) -> f64 {
    // |x| <= 1/2: sum x^k / k^2 until the terms stop contributing
    let mut sum = 0.0;
    let mut power = x;
    for k in 1..200 {
        let term = power / (k * k) as f64;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs().max(1e-300) {
            break;
        }
        power *= x;
    }
    sum
}

/// Real dilogarithm `Li₂(x) = -∫₀ˣ log(1-u)/u du` for `x <= 1`.
pub fn dilog(x: f64) -> Result<f64> {
    if x.is_nan() || x > 1.0 {
        return Err(Error::domain("dilog", x, "x <= 1"));
    }
    if x == 1.0 {
        return Ok(ZETA2);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(dilog_below_one(x))
}

fn dilog_below_one(x: f64) -> f64 {
    if x < -1.0 {
        // inversion: Li2(x) = -π²/6 - ln²(-x)/2 - Li2(1/x)
        let l = (-x).ln();
        -ZETA2 - 0.5 * l * l - dilog_below_one(1.0 / x)
    } else if x < -0.5 {
        // Landen: Li2(x) = -Li2(x/(x-1)) - ln²(1-x)/2, with x/(x-1) in (1/3, 1/2]
        let l = (1.0 - x).ln();
        -dilog_series(x / (x - 1.0)) - 0.5 * l * l
    } else if x <= 0.5 {
        dilog_series(x)
    } else {
        // reflection: Li2(x) = π²/6 - ln(x) ln(1-x) - Li2(1-x)
        ZETA2 - x.ln() * (1.0 - x).ln() - dilog_series(1.0 - x)
    }
}
