//! Picard iteration `omega -> Upsilon[omega]` on piecewise-linear velocity
//! candidates.
//!
//! For a velocity candidate `omega` on `[t0, t0 + T]` (continued by the stored
//! past for `t <= t0`), positions are `xi_i(t) = x_i(t0) + int omega_i`, and
//! `Upsilon[omega]_i(t) = v_i(t0) + int_{t0}^t F_i` with `F_i` the interaction
//! term evaluated along `(xi, omega)` with delays solved against `xi`.

use serde::{Deserialize, Serialize};

use super::{accelerations, SimConfig};
use crate::error::{Error, Result};
use crate::history::{InitialPath, Trajectory, TrajectoryHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    /// Speed band, `s < m < c`.
    pub m: f64,
    pub t_step: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_grid_points() -> usize {
    64
}
fn default_max_iters() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-12
}

impl PicardConfig {
    pub fn new(m: f64, t_step: f64) -> Self {
        Self {
            m,
            t_step,
            grid_points: default_grid_points(),
            max_iters: default_max_iters(),
            tol: default_tol(),
        }
    }

    /// Largest `t_step` for which iterates stay in the speed band `m`.
    pub fn self_map_limit(&self, s: f64) -> f64 {
        (self.m - s) / (2.0 * self.m)
    }

    pub fn violations(&self, s: f64, c: f64, lipschitz: f64) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.m > s && self.m < c) {
            out.push(format!(
                "picard band m = {} must satisfy s < m < c (s = {s}, c = {c})",
                self.m
            ));
            return out;
        }
        if !(self.t_step.is_finite() && self.t_step > 0.0) {
            out.push(format!("picard t_step must be > 0 (got {})", self.t_step));
            return out;
        }
        if self.grid_points < 2 {
            out.push("picard grid_points must be >= 2".into());
        }
        if !(self.tol > 0.0) {
            out.push("picard tol must be > 0".into());
        }
        if self.max_iters == 0 {
            out.push("picard max_iters must be >= 1".into());
        }
        let lim = self.self_map_limit(s);
        if self.t_step > lim {
            out.push(format!(
                "picard t_step {} exceeds (m - s) / (2m) = {lim}; use a smaller t_step",
                self.t_step
            ));
        }
        let q = picard_contraction_factor(self.m, c, lipschitz, self.t_step);
        if q >= 1.0 {
            out.push(format!("picard contraction factor {q} >= 1; use a smaller t_step"));
        }
        out
    }
}

/// `2T (1 + 2m (L + 1/c) (1 - m/c)^{-1} T)`.
pub fn picard_contraction_factor(m: f64, c: f64, lipschitz: f64, t_step: f64) -> f64 {
    2.0 * t_step * (1.0 + 2.0 * m * (lipschitz + 1.0 / c) / (1.0 - m / c) * t_step)
}

#[derive(Clone, Debug, Serialize)]
pub struct PicardSolution {
    /// Uniform grid on `[t0, t0 + T]`.
    pub times: Vec<f64>,
    /// Per grid node, flat `n * d`.
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub accelerations: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Ratios of successive sup-norm increments.
    pub factors: Vec<f64>,
    pub max_empirical_factor: f64,
    pub analytic_factor: f64,
    /// Last sup-norm increment.
    pub residual: f64,
}

/// One agent's candidate path: stored past up to `t0`, then the
/// piecewise-linear velocity `omega` and its exact integral `xi`.
struct PicardPath<'a> {
    past: &'a TrajectoryHistory,
    t0: f64,
    h: f64,
    nodes: usize,
    stride: usize,
    offset: usize,
    d: usize,
    m: f64,
    omega: &'a [f64],
    xi: &'a [f64],
}

impl PicardPath<'_> {
    fn locate(&self, t: f64) -> (usize, f64) {
        let k = (((t - self.t0) / self.h).floor() as usize).min(self.nodes - 2);
        (k, t - (self.t0 + k as f64 * self.h))
    }

    fn at(&self, buf: &[f64], k: usize, a: usize) -> f64 {
        buf[k * self.stride + self.offset + a]
    }
}

impl Trajectory for PicardPath<'_> {
    fn dim(&self) -> usize {
        self.d
    }

    fn speed_bound(&self) -> f64 {
        self.m
    }

    fn latest_time(&self) -> f64 {
        self.t0 + self.h * (self.nodes - 1) as f64
    }

    fn position_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if t <= self.t0 {
            return self.past.position_into(t, out);
        }
        let (k, th) = self.locate(t);
        for (a, o) in out.iter_mut().enumerate() {
            let w0 = self.at(self.omega, k, a);
            let w1 = self.at(self.omega, k + 1, a);
            *o = self.at(self.xi, k, a) + th * w0 + th * th / (2.0 * self.h) * (w1 - w0);
        }
        Ok(())
    }

    fn velocity_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if t <= self.t0 {
            return self.past.velocity_into(t, out);
        }
        let (k, th) = self.locate(t);
        for (a, o) in out.iter_mut().enumerate() {
            let w0 = self.at(self.omega, k, a);
            let w1 = self.at(self.omega, k + 1, a);
            *o = w0 + th / self.h * (w1 - w0);
        }
        Ok(())
    }
}

/// Picard window starting at the common latest knot of `past`.
pub(crate) fn picard_window(cfg: &SimConfig, p: &PicardConfig, past: &[TrajectoryHistory]) -> Result<PicardSolution> {
    let n = past.len();
    let d = past[0].dim();
    let nd = n * d;
    let g = p.grid_points;
    let t0 = past[0].t_now();
    let h = p.t_step / (g - 1) as f64;
    let times: Vec<f64> = (0..g).map(|k| t0 + k as f64 * h).collect();

    let mut x0 = Vec::with_capacity(nd);
    let mut v0 = Vec::with_capacity(nd);
    for hist in past {
        x0.extend_from_slice(hist.last_position());
        v0.extend_from_slice(hist.last_velocity());
    }

    let integrate = |omega: &[f64], xi: &mut [f64]| {
        xi[..nd].copy_from_slice(&x0);
        for k in 1..g {
            for q in 0..nd {
                xi[k * nd + q] = xi[(k - 1) * nd + q] + 0.5 * h * (omega[(k - 1) * nd + q] + omega[k * nd + q]);
            }
        }
    };

    let mut omega: Vec<f64> = (0..g).flat_map(|_| v0.iter().copied()).collect();
    let mut xi = vec![0.0; g * nd];
    integrate(&omega, &mut xi);
    let mut force = vec![0.0; g * nd];
    let mut next = vec![0.0; g * nd];

    let analytic = picard_contraction_factor(p.m, cfg.c, cfg.kernel.lipschitz_bound(), p.t_step);
    let mut factors = Vec::new();
    let mut prev_diff: Option<f64> = None;
    let mut streak = 0;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for it in 1..=p.max_iters {
        {
            let paths: Vec<PicardPath> = past
                .iter()
                .enumerate()
                .map(|(j, hist)| PicardPath {
                    past: hist,
                    t0,
                    h,
                    nodes: g,
                    stride: nd,
                    offset: j * d,
                    d,
                    m: p.m,
                    omega: &omega,
                    xi: &xi,
                })
                .collect();
            for k in 0..g {
                let r = k * nd..(k + 1) * nd;
                accelerations(
                    cfg,
                    times[k],
                    f64::INFINITY,
                    &xi[r.clone()],
                    &omega[r.clone()],
                    &paths,
                    &mut force[r],
                    None,
                    None,
                )?;
            }
        }
        next[..nd].copy_from_slice(&v0);
        for k in 1..g {
            for q in 0..nd {
                next[k * nd + q] = next[(k - 1) * nd + q] + 0.5 * h * (force[(k - 1) * nd + q] + force[k * nd + q]);
            }
        }
        let diff = next.iter().zip(&omega).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut omega, &mut next);
        integrate(&omega, &mut xi);
        iterations = it;
        residual = diff;
        if let Some(pd) = prev_diff {
            if pd > 1e-11 {
                let q = diff / pd;
                factors.push(q);
                streak = if q >= 1.0 { streak + 1 } else { 0 };
                if streak >= 3 {
                    return Err(Error::NonContraction(format!(
                        "Picard increments grew for 3 successive iterates (last factor {q}); use a smaller t_step"
                    )));
                }
            }
        }
        if diff <= p.tol {
            break;
        }
        prev_diff = Some(diff);
    }
    if residual > p.tol {
        return Err(Error::NonContraction(format!(
            "Picard iteration did not reach tol {} in {} iterations (last increment {residual})",
            p.tol, p.max_iters
        )));
    }
    let max_empirical_factor = factors.iter().copied().fold(0.0, f64::max);
    let split = |buf: &[f64]| buf.chunks(nd).map(|c| c.to_vec()).collect::<Vec<_>>();
    Ok(PicardSolution {
        times,
        positions: split(&xi),
        velocities: split(&omega),
        accelerations: split(&force),
        iterations,
        factors,
        max_empirical_factor,
        analytic_factor: analytic,
        residual,
    })
}

/// Picard fixed point on `[0, t_step]` for the given initial data.
pub fn solve_picard(cfg: &SimConfig, p: &PicardConfig, paths: &[InitialPath]) -> Result<PicardSolution> {
    let errs = p.violations(cfg.s, cfg.c, cfg.kernel.lipschitz_bound());
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if paths.is_empty() {
        return Err(Error::Usage("at least one agent is required".into()));
    }
    let past = paths
        .iter()
        .map(|ip| TrajectoryHistory::new(ip.clone(), cfg.s))
        .collect::<Result<Vec<_>>>()?;
    picard_window(cfg, p, &past)
}
