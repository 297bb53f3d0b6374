//! Exact first and second moments of `Z₁` without mutation.
//!
//! With `M = 0` the moment equations close at degree two, for the Moran
//! frequency chain as well as for the diffusion: a Λ atom moves `z₁` by a
//! mean-zero amount with second moment `w·z₁(z₃−z₁)` per unit time, whatever N.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffusion::z3_exact;
use crate::error::{Error, Result};
use crate::model::{FrequencyState, SimParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_z1: f64,
    pub var_z1: f64,
    pub mean_hearts: f64,
}

type Mono = [u8; 3];
type Poly = BTreeMap<Mono, f64>;

fn monomials() -> Vec<Mono> {
    let mut v = Vec::new();
    for i in 0..3u8 {
        for j in 0..3u8 {
            for k in 0..3u8 {
                if i + j + k <= 2 {
                    v.push([i, j, k]);
                }
            }
        }
    }
    v
}

fn mul(p: &Poly, q: &Poly) -> Poly {
    let mut r = Poly::new();
    for (a, c) in p {
        for (b, d) in q {
            let e = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            *r.entry(e).or_default() += c * d;
        }
    }
    r
}

/// `(z + δ)^m − z^m` as a polynomial in z.
fn increment(m: Mono, delta: [f64; 3]) -> Poly {
    let mut p = Poly::from([([0, 0, 0], 1.0)]);
    for axis in 0..3 {
        let mut e = [0u8; 3];
        e[axis] = 1;
        let lin = Poly::from([(e, 1.0), ([0, 0, 0], delta[axis])]);
        for _ in 0..m[axis] {
            p = mul(&p, &lin);
        }
    }
    *p.entry(m).or_default() -= 1.0;
    p
}

fn check(params: &SimParams) -> Result<()> {
    params.validate()?;
    if !params.mutation.is_zero() {
        return Err(Error::Unsupported("moment closure needs a zero mutation measure".into()));
    }
    Ok(())
}

fn rk4<F: Fn(f64, &[f64]) -> Vec<f64>>(f: F, y0: Vec<f64>, t: f64, steps: usize) -> Vec<f64> {
    let h = t / steps as f64;
    let mut y = y0;
    let axpy = |y: &[f64], k: &[f64], s: f64| y.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    for i in 0..steps {
        let s = i as f64 * h;
        let k1 = f(s, &y);
        let k2 = f(s + h / 2.0, &axpy(&y, &k1, h / 2.0));
        let k3 = f(s + h / 2.0, &axpy(&y, &k2, h / 2.0));
        let k4 = f(s + h, &axpy(&y, &k3, h));
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

const STEPS: usize = 20_000;

/// Moments of the N-individual Moran model at time `t`.
pub fn moran_moments(params: &SimParams, n: usize, z0: &FrequencyState, t: f64) -> Result<Moments> {
    check(params)?;
    z0.counts(n)?;
    let nf = n as f64;
    let (a0, alpha, sigma) = (params.lambda.kingman_mass, params.alpha, params.sigma);
    let w: f64 = params.lambda.atoms.iter().map(|a| a.weight).sum();
    let pair = a0 * nf * nf / 2.0;
    // (jump, rate polynomial in z)
    let jumps: Vec<([f64; 3], Poly)> = vec![
        ([1.0 / nf, 0.0, 0.0], Poly::from([([1, 0, 1], pair), ([2, 0, 0], -pair)])),
        ([-1.0 / nf, 0.0, 0.0], Poly::from([([1, 0, 1], pair), ([2, 0, 0], -pair)])),
        ([-1.0 / nf, 1.0 / nf, -1.0 / nf], Poly::from([([1, 0, 0], alpha * nf)])),
        ([1.0 / nf, -1.0 / nf, 1.0 / nf], Poly::from([([0, 1, 0], sigma * nf)])),
        ([0.0, 0.0, -1.0 / nf], Poly::from([([0, 0, 1], alpha * nf), ([1, 0, 0], -alpha * nf)])),
        (
            [0.0, 0.0, 1.0 / nf],
            Poly::from([([0, 0, 0], sigma * nf), ([0, 0, 1], -sigma * nf), ([0, 1, 0], -sigma * nf)]),
        ),
    ];
    let mons = monomials();
    let index: BTreeMap<Mono, usize> = mons.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut a = vec![vec![0.0; mons.len()]; mons.len()];
    for (row, &m) in mons.iter().enumerate() {
        let mut g = Poly::new();
        for (delta, rate) in &jumps {
            for (e, c) in mul(rate, &increment(m, *delta)) {
                *g.entry(e).or_default() += c;
            }
        }
        if m == [2, 0, 0] {
            *g.entry([1, 0, 1]).or_default() += w;
            *g.entry([2, 0, 0]).or_default() -= w;
        }
        for (e, c) in g {
            if c != 0.0 {
                let col = *index
                    .get(&e)
                    .ok_or_else(|| Error::InvalidState(format!("moment equations do not close at {e:?}")))?;
                a[row][col] += c;
            }
        }
    }
    let z = [z0.z1, z0.z2, z0.z3];
    let y0: Vec<f64> = mons
        .iter()
        .map(|m| (0..3).map(|i| z[i].powi(i32::from(m[i]))).product())
        .collect();
    let y = rk4(|_, y| a.iter().map(|r| r.iter().zip(y).map(|(p, q)| p * q).sum()).collect(), y0, t, STEPS);
    let (e1, e2, e11) = (y[index[&[1, 0, 0]]], y[index[&[0, 1, 0]]], y[index[&[2, 0, 0]]]);
    Ok(Moments {
        mean_z1: e1,
        var_z1: e11 - e1 * e1,
        mean_hearts: e1 + e2,
    })
}

/// Moments of the limiting diffusion at time `t`.
pub fn sde_moments(params: &SimParams, z0: &FrequencyState, t: f64) -> Result<Moments> {
    check(params)?;
    let (alpha, sigma) = (params.alpha, params.sigma);
    let c = params.lambda.kingman_mass + params.lambda.atoms.iter().map(|a| a.weight).sum::<f64>();
    let z30 = z0.z3;
    let f = |s: f64, y: &[f64]| {
        let (e1, e2, e11, e12, e22) = (y[0], y[1], y[2], y[3], y[4]);
        let z3 = z3_exact(z30, alpha, sigma, s);
        vec![
            sigma * e2 - alpha * e1,
            alpha * e1 - sigma * e2,
            2.0 * (sigma * e12 - alpha * e11) + c * (z3 * e1 - e11),
            sigma * e22 - alpha * e12 + alpha * e11 - sigma * e12,
            2.0 * (alpha * e12 - sigma * e22),
        ]
    };
    let y0 = vec![z0.z1, z0.z2, z0.z1 * z0.z1, z0.z1 * z0.z2, z0.z2 * z0.z2];
    let y = rk4(f, y0, t, STEPS);
    Ok(Moments {
        mean_z1: y[0],
        var_z1: y[2] - y[0] * y[0],
        mean_hearts: y[0] + y[1],
    })
}
