//! Exact evaluation of the finite-N generator and of the limit generator.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::combinatorics::binom_weight;
use crate::error::{Error, Result};
use crate::model::{FrequencyState, SimParams};
use crate::moran::CountState;

/// Partial derivatives at a point: `∂₁, ∂₂, ∂₃, ∂₁₁`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Derivatives {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d11: f64,
}

type Eval = Arc<dyn Fn(&FrequencyState) -> f64 + Send + Sync>;
type Grad = Arc<dyn Fn(&FrequencyState) -> Derivatives + Send + Sync>;

/// A test function `f(z₁, z₂, z₃, s)`, optionally with analytic derivatives.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    eval: Eval,
    grad: Option<Grad>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("analytic", &self.grad.is_some())
            .finish()
    }
}

/// Step for the finite-difference fallback. Smaller steps lose the second
/// derivative to cancellation.
pub const FD_STEP: f64 = 1e-4;

impl TestFunction {
    /// A function whose derivatives are taken by central differences.
    pub fn new(name: impl Into<String>, f: impl Fn(&FrequencyState) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(f),
            grad: None,
        }
    }

    pub fn with_derivatives(
        name: impl Into<String>,
        f: impl Fn(&FrequencyState) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&FrequencyState) -> Derivatives + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(f),
            grad: Some(Arc::new(grad)),
        }
    }

    #[must_use]
    pub fn eval(&self, z: &FrequencyState) -> f64 {
        (self.eval)(z)
    }

    #[must_use]
    pub fn derivatives(&self, z: &FrequencyState) -> Derivatives {
        if let Some(g) = &self.grad {
            return g(z);
        }
        let h = FD_STEP;
        let f0 = self.eval(z);
        let at = |dz1: f64, dz2: f64, dz3: f64| {
            self.eval(&FrequencyState::new(z.z1 + dz1, z.z2 + dz2, z.z3 + dz3, z.env))
        };
        let (p1, m1) = (at(h, 0.0, 0.0), at(-h, 0.0, 0.0));
        Derivatives {
            d1: (p1 - m1) / (2.0 * h),
            d2: (at(0.0, h, 0.0) - at(0.0, -h, 0.0)) / (2.0 * h),
            d3: (at(0.0, 0.0, h) - at(0.0, 0.0, -h)) / (2.0 * h),
            d11: (p1 - 2.0 * f0 + m1) / (h * h),
        }
    }

    /// Built-in functions by name: `const`, `z1`, `z1^2`, `z1*z2`, `s*z1`, `z1+z2`.
    pub fn builtin(name: &str) -> Result<Self> {
        let d = |d1, d2, d11| Derivatives { d1, d2, d3: 0.0, d11 };
        Ok(match name {
            "const" => Self::with_derivatives(name, |_| 1.0, move |_| d(0.0, 0.0, 0.0)),
            "z1" => Self::with_derivatives(name, |z| z.z1, move |_| d(1.0, 0.0, 0.0)),
            "z1^2" => Self::with_derivatives(name, |z| z.z1 * z.z1, move |z| d(2.0 * z.z1, 0.0, 2.0)),
            "z1*z2" => Self::with_derivatives(name, |z| z.z1 * z.z2, move |z| d(z.z2, z.z1, 0.0)),
            "s*z1" => Self::with_derivatives(name, |z| z.s() * z.z1, move |z| d(z.s(), 0.0, 0.0)),
            "z1+z2" => Self::with_derivatives(name, |z| z.z1 + z.z2, move |_| d(1.0, 1.0, 0.0)),
            other => {
                return Err(Error::UnknownStrategy {
                    kind: "test function",
                    name: other.to_string(),
                    available: BUILTIN_FUNCTIONS.join(", "),
                })
            }
        })
    }
}

pub const BUILTIN_FUNCTIONS: [&str; 6] = ["const", "z1", "z1^2", "z1*z2", "s*z1", "z1+z2"];

/// Every transition of the frequency chain out of `s`, with its rate. No-op events are dropped.
pub fn finite_transitions(s: &CountState, params: &SimParams) -> Result<Vec<(CountState, f64)>> {
    let CountState { n, k1, k2, k3, env } = *s;
    if n == 0 || k1 > k3 || k2 + k3 > n {
        return Err(Error::InvalidState(format!("{s:?} is not in D_N")));
    }
    let u1 = k3 - k1;
    let u2 = n - k3 - k2;
    let mut out = Vec::new();
    let mut push = |k1n: usize, k2n: usize, k3n: usize, envn: bool, rate: f64| {
        if rate > 0.0 {
            out.push((CountState { n, k1: k1n, k2: k2n, k3: k3n, env: envn }, rate));
        }
    };
    // pair reproduction between an active ♥ and an active ♠
    let pair = params.lambda.kingman_mass * (k1 * u1) as f64 / 2.0;
    if pair > 0.0 {
        push(k1 + 1, k2, k3, env, pair);
        push(k1 - 1, k2, k3, env, pair);
    }
    for atom in &params.lambda.atoms {
        let (y, w) = (atom.location, atom.weight);
        let base = w / (y * y);
        for h in 0..=k1 {
            let ph = binom_weight(k1 as u64, h as u64, y, h as i64, (k1 - h) as i64);
            if ph == 0.0 {
                continue;
            }
            for sp in 0..=u1 {
                if h + sp < 2 {
                    continue;
                }
                let ps = binom_weight(u1 as u64, sp as u64, y, sp as i64, (u1 - sp) as i64);
                let r = base * ph * ps;
                let tot = (h + sp) as f64;
                if sp > 0 {
                    push(k1 + sp, k2, k3, env, r * h as f64 / tot);
                }
                if h > 0 {
                    push(k1 - h, k2, k3, env, r * sp as f64 / tot);
                }
            }
        }
    }
    if env {
        push(k1 + 1, k2, k3, env, params.mutation.kingman_mass * u1 as f64);
        for atom in &params.mutation.atoms {
            let (y, w) = (atom.location, atom.weight);
            for sp in 1..=u1 {
                let ps = binom_weight(u1 as u64, sp as u64, y, sp as i64, (u1 - sp) as i64);
                push(k1 + sp, k2, k3, env, w / y * ps);
            }
        }
    }
    let (alpha, sigma) = (params.alpha, params.sigma);
    if k1 > 0 {
        push(k1 - 1, k2 + 1, k3 - 1, env, alpha * k1 as f64);
    }
    if k2 > 0 {
        push(k1 + 1, k2 - 1, k3 + 1, env, sigma * k2 as f64);
    }
    if u1 > 0 {
        push(k1, k2, k3 - 1, env, alpha * u1 as f64);
    }
    if u2 > 0 {
        push(k1, k2, k3 + 1, env, sigma * u2 as f64);
    }
    push(k1, k2, k3, !env, params.env_flip_rate(env));
    Ok(out)
}

/// `𝒢^N f(z)` summed over all transitions of the finite chain.
pub fn apply_generator_n(f: &TestFunction, z: &FrequencyState, n: usize, params: &SimParams) -> Result<f64> {
    let (k1, k2, k3) = z.counts(n)?;
    let s = CountState { n, k1, k2, k3, env: z.env };
    let f0 = f.eval(&s.frequencies());
    let mut acc = 0.0;
    for (target, rate) in finite_transitions(&s, params)? {
        acc += rate * (f.eval(&target.frequencies()) - f0);
    }
    Ok(acc)
}

/// The limit generator `𝒢 f(z)`.
pub fn apply_generator_limit(f: &TestFunction, z: &FrequencyState, params: &SimParams) -> Result<f64> {
    if !z.in_domain() {
        return Err(Error::InvalidState(format!("{z:?} is outside D")));
    }
    let FrequencyState { z1, z2, z3, env } = *z;
    let u1 = z3 - z1;
    let xi = z.s();
    let d = f.derivatives(z);
    let f0 = f.eval(z);
    let shifted = |x: f64| f.eval(&FrequencyState::new(x, z2, z3, env));
    let a = params.lambda.kingman_mass;
    let b = params.mutation.kingman_mass;
    let (alpha, sigma) = (params.alpha, params.sigma);

    let mut g = 0.5 * a * z1 * u1 * d.d11;
    if z3 > 0.0 {
        for atom in &params.lambda.atoms {
            let (y, w) = (atom.location, atom.weight);
            g += w / (y * y)
                * ((z1 / z3) * (shifted(z1 + y * u1) - f0) + (u1 / z3) * (shifted(z1 - y * z1) - f0));
        }
    }
    g += (sigma * z2 - alpha * z1) * d.d1 + (alpha * z1 - sigma * z2) * d.d2;
    g += (sigma * (1.0 - z3) - alpha * z3) * d.d3;
    g += b * xi * u1 * d.d1;
    for atom in &params.mutation.atoms {
        let (y, w) = (atom.location, atom.weight);
        g += xi * w / y * (shifted(z1 + y * u1) - f0);
    }
    g += params.env_flip_rate(env) * (f.eval(&z.with_env(!env)) - f0);
    Ok(g)
}

/// Interior points `z₃ = ½`, `z₁, z₂ ∈ {0.04, …, 0.40}`, both environments.
/// They lie on D_N whenever 50 divides N.
#[must_use]
pub fn interior_grid() -> Vec<FrequencyState> {
    let mut v = Vec::with_capacity(200);
    for env in [false, true] {
        for i in 1..=10 {
            for j in 1..=10 {
                v.push(FrequencyState::new(0.04 * f64::from(i), 0.04 * f64::from(j), 0.5, env));
            }
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub f_name: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub sup_error: f64,
}

pub const CONVERGENCE_CSV_HEADER: &str = "f_name,N,sup_error";

/// `sup_z |𝒢^N f(z) − 𝒢 f(z)|` over `points`, for each function and population size.
pub fn convergence_table(
    functions: &[TestFunction],
    sizes: &[usize],
    params: &SimParams,
    points: &[FrequencyState],
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::new();
    for f in functions {
        for &n in sizes {
            let mut sup = 0.0f64;
            for z in points {
                let e = (apply_generator_n(f, z, n, params)? - apply_generator_limit(f, z, params)?).abs();
                sup = sup.max(e);
            }
            rows.push(ConvergenceRow {
                f_name: f.name.clone(),
                n,
                sup_error: sup,
            });
        }
    }
    Ok(rows)
}

/// Errors below this are treated as exact agreement when judging convergence rates.
pub const EXACT_TOLERANCE: f64 = 1e-10;

/// First-order convergence between `N` and `2N`: the error ratio lies in `[1.5, 2.5]`,
/// or both errors are zero to rounding.
#[must_use]
pub fn first_order(err_n: f64, err_2n: f64) -> bool {
    if err_n <= EXACT_TOLERANCE && err_2n <= EXACT_TOLERANCE {
        return true;
    }
    let r = err_n / err_2n;
    (1.5..=2.5).contains(&r)
}
