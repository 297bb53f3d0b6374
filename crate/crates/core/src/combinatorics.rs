//! Binomial coefficients, exact where possible.

use statrs::function::gamma::ln_gamma;

/// Exact `C(n, k)`, `None` on overflow. `C(n, k) = 0` for `k > n`.
#[must_use]
pub fn binom_exact(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 1..=u128::from(k) {
        acc = acc.checked_mul(u128::from(n - k) + j)? / j;
    }
    Some(acc)
}

#[must_use]
pub fn ln_binom(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `C(n, k)` as a float.
#[must_use]
pub fn binom(n: u64, k: u64) -> f64 {
    match binom_exact(n, k) {
        Some(v) => v as f64,
        None => ln_binom(n, k).exp(),
    }
}

/// `C(n, k) yᵏ (1−y)ⁿ⁻ᵏ · y^shift`, stable for large `n`; `0⁰ = 1`.
#[must_use]
pub fn binom_weight(n: u64, k: u64, y: f64, power_y: i64, power_1my: i64) -> f64 {
    if k > n {
        return 0.0;
    }
    if n <= 60 {
        return binom(n, k) * pow(y, power_y) * pow(1.0 - y, power_1my);
    }
    let ly = if power_y == 0 { 0.0 } else { power_y as f64 * y.ln() };
    let lq = if power_1my == 0 { 0.0 } else { power_1my as f64 * (1.0 - y).ln() };
    (ln_binom(n, k) + ly + lq).exp()
}

fn pow(x: f64, e: i64) -> f64 {
    if e == 0 {
        1.0
    } else {
        x.powi(e as i32)
    }
}
