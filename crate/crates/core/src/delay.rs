//! Retarded times: the unique `tau >= 0` with `c tau = |z - gamma(t - tau)|`.
//!
//! For an `s`-Lipschitz path and `s < c`, `g(tau) = c tau - |z - gamma(t - tau)|`
//! is strictly increasing with slope in `[c - s, c + s]`, so the root lies in
//! `[r / (c + s), r / (c - s)]` with `r = |z - gamma(t)|`. The solver runs
//! Newton steps with the slope clamped to that band and falls back to
//! bisection once three Newton steps have left the bracket.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::history::Trajectory;
use crate::linalg::{dist, dot};

/// Residual tolerance `1e-12 * max(1, c)`.
pub fn tolerance(c: f64) -> f64 {
    1e-12 * c.max(1.0)
}

const MAX_ITERS: u32 = 200;
const NEWTON_REJECTIONS: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetardedSample {
    pub tau: f64,
    /// `gamma(t - tau)`.
    pub x_ret: Vec<f64>,
    /// `gamma'(t - tau)`.
    pub v_ret: Vec<f64>,
    /// `|c tau - |z - x_ret||`.
    pub residual: f64,
    pub iterations: u32,
}

/// Scalar outcome of a solve; positions/velocities are left in the caller's buffers.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Solve {
    pub tau: f64,
    pub residual: f64,
    pub iterations: u32,
}

/// Solves for the retarded time, writing `gamma(t - tau)` to `x_ret` and
/// `gamma'(t - tau)` to `v_ret`.
pub(crate) fn solve_into<T: Trajectory + ?Sized>(
    gamma: &T,
    t: f64,
    z: &[f64],
    c: f64,
    x_ret: &mut [f64],
    v_ret: &mut [f64],
) -> Result<Solve> {
    let s = gamma.speed_bound();
    if !(c.is_finite() && c > s) {
        return Err(Error::Parameter(format!(
            "agents must travel slower than c: c = {c} does not exceed the speed bound {s}"
        )));
    }
    let tol = tolerance(c);
    gamma.position_into(t, x_ret)?;
    let r = dist(z, x_ret);
    if r == 0.0 {
        gamma.velocity_into(t, v_ret)?;
        return Ok(Solve {
            tau: 0.0,
            residual: 0.0,
            iterations: 0,
        });
    }

    let g = |tau: f64, x_ret: &mut [f64]| -> Result<f64> {
        gamma.position_into(t - tau, x_ret)?;
        Ok(c * tau - dist(z, x_ret))
    };

    let mut lo = r / (c + s);
    let mut hi = r / (c - s);
    if g(lo, x_ret)? > 0.0 {
        // interpolation error may push the lower bound past the root
        lo = 0.0;
    }
    let mut g_hi = g(hi, x_ret)?;
    let mut grow = 0;
    while g_hi < 0.0 {
        grow += 1;
        if grow > 60 {
            return Err(Error::Internal("retarded-time bracket could not be established".into()));
        }
        lo = hi;
        hi *= 2.0;
        g_hi = g(hi, x_ret)?;
    }

    let mut tau = (r / c).clamp(lo, hi);
    let mut rejected = 0u32;
    let mut iterations = 0u32;
    loop {
        iterations += 1;
        let gv = g(tau, x_ret)?;
        if gv.abs() <= tol {
            break;
        }
        if gv < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.max(f64::MIN_POSITIVE) || iterations >= MAX_ITERS {
            break;
        }
        let next = if rejected < NEWTON_REJECTIONS {
            gamma.velocity_into(t - tau, v_ret)?;
            let w_norm = c * tau - gv;
            let mut slope = c;
            if w_norm > 0.0 {
                let mut proj = 0.0;
                for a in 0..z.len() {
                    proj += (z[a] - x_ret[a]) * v_ret[a];
                }
                slope = c - proj / w_norm;
            }
            let slope = slope.clamp(c - s, c + s);
            let cand = tau - gv / slope;
            if cand >= lo && cand <= hi {
                cand
            } else {
                rejected += 1;
                0.5 * (lo + hi)
            }
        } else {
            0.5 * (lo + hi)
        };
        tau = next;
    }
    gamma.position_into(t - tau, x_ret)?;
    gamma.velocity_into(t - tau, v_ret)?;
    let residual = (c * tau - dist(z, x_ret)).abs();
    Ok(Solve {
        tau,
        residual,
        iterations,
    })
}

/// Retarded time of the signal from path `gamma` observed at `z` at time `t`.
pub fn retarded_time<T: Trajectory + ?Sized>(gamma: &T, t: f64, z: &[f64], c: f64) -> Result<RetardedSample> {
    let d = gamma.dim();
    if z.len() != d {
        return Err(Error::Usage("observer position has wrong dimension".into()));
    }
    let mut x_ret = vec![0.0; d];
    let mut v_ret = vec![0.0; d];
    let sol = solve_into(gamma, t, z, c, &mut x_ret, &mut v_ret)?;
    Ok(RetardedSample {
        tau: sol.tau,
        x_ret,
        v_ret,
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

/// `d tau / dt` along an observer moving with velocity `v_obs`, for a sample
/// with `tau > 0`. Differentiating `c tau = |x_obs(t) - gamma(t - tau)|` gives
/// `tau' = u.(v_obs - v_ret) / (c - u.v_ret)` with `u` the unit vector from
/// `x_ret` to the observer.
pub fn tau_rate(x_obs: &[f64], v_obs: &[f64], x_ret: &[f64], v_ret: &[f64], c: f64) -> f64 {
    let r = dist(x_obs, x_ret);
    if r == 0.0 {
        return 0.0;
    }
    let u: Vec<f64> = x_obs.iter().zip(x_ret).map(|(a, b)| (a - b) / r).collect();
    let num = dot(&u, v_obs) - dot(&u, v_ret);
    num / (c - dot(&u, v_ret))
}

/// All pairwise retarded samples at time `t`, row `i` observing column `j`.
#[derive(Clone, Debug, Serialize)]
pub struct DelayMatrix {
    pub n: usize,
    pub samples: Vec<RetardedSample>,
}

impl DelayMatrix {
    pub fn get(&self, i: usize, j: usize) -> &RetardedSample {
        &self.samples[i * self.n + j]
    }

    pub fn max_tau(&self) -> f64 {
        self.samples.iter().map(|s| s.tau).fold(0.0, f64::max)
    }
}

/// Pairwise retarded samples; `x`, `v` hold the current states (`n * d`
/// flat). Diagonal entries are `tau = 0` with the agent's own state.
pub fn pair_delays<T: Trajectory + Sync>(x: &[f64], v: &[f64], histories: &[T], t: f64, c: f64) -> Result<DelayMatrix> {
    let n = histories.len();
    if n == 0 {
        return Ok(DelayMatrix { n, samples: Vec::new() });
    }
    let d = histories[0].dim();
    if x.len() != n * d || v.len() != n * d {
        return Err(Error::Usage("state and history counts disagree".into()));
    }
    let rows: Vec<Result<Vec<RetardedSample>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let z = &x[i * d..(i + 1) * d];
            (0..n)
                .map(|j| {
                    if i == j {
                        Ok(RetardedSample {
                            tau: 0.0,
                            x_ret: z.to_vec(),
                            v_ret: v[i * d..(i + 1) * d].to_vec(),
                            residual: 0.0,
                            iterations: 0,
                        })
                    } else {
                        retarded_time(&histories[j], t, z, c)
                    }
                })
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(n * n);
    for row in rows {
        samples.extend(row?);
    }
    Ok(DelayMatrix { n, samples })
}
