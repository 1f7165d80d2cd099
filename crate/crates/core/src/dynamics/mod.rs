//! Right-hand side of the delayed Cucker–Smale system and its time
//! integrators.
//!
//! `x_i' = v_i`, `v_i' = 1/(N-1) sum_{j != i} psi(|x~_j - x_i|) (v~_j - v_i)`
//! where `(x~_j, v~_j)` is agent `j`'s state at the retarded time `t - tau_ij`.

mod consistency;
mod integrator;
mod picard;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay::solve_into;
use crate::error::{Error, Result};
use crate::history::{Segment, Trajectory, TrajectoryHistory};
use crate::influence::InfluenceFunction;
use crate::linalg::{dist, norm};

pub use consistency::{consistency_sweep, ConsistencyRow, ConsistencySweep};
pub use integrator::{simulate, InvariantReport, SimOutput, Simulation};
pub use picard::{picard_contraction_factor, solve_picard, PicardConfig, PicardSolution};

/// Slack on the speed bound `|v_i| <= s` before a step is rejected.
pub const SPEED_SLACK: f64 = 1e-7;
/// Slack on the delay bound `tau_ij <= d_X / (c - s)`.
pub const DELAY_BOUND_SLACK: f64 = 1e-10;

/// Agents are parallelized inside one right-hand side evaluation from this size on.
const PARALLEL_AGENTS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Classical RK4 with predictor/corrector handling of in-step delays.
    #[default]
    #[serde(alias = "rk4")]
    Rk4Predicted,
    /// Successive Picard windows (slow, used for verification).
    #[serde(alias = "picard")]
    PicardSteps,
}

/// Prefactor of the interaction sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `1 / (N - 1)`, the particle system.
    #[default]
    PairCount,
    /// `1 / N`, the mean-field operator evaluated on the empirical measure.
    MeanField,
}

/// How agents observe each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// Information travels at speed `c`.
    #[default]
    Finite,
    /// Classical undelayed Cucker–Smale (`c = infinity`).
    Instantaneous,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub c: f64,
    pub s: f64,
    pub kernel: InfluenceFunction,
    pub dt: f64,
    pub horizon: f64,
    pub sample_every: usize,
    pub scheme: Scheme,
    pub normalization: Normalization,
    pub propagation: Propagation,
    /// Shorten steps so that knots land where a lookup time `t - tau_ij`
    /// crosses a kink of the initial velocity (including `t = 0`).
    pub align_breaks: bool,
    /// Drop knots that no future lookup can reach.
    pub prune: bool,
    /// Picard settings, used by [`Scheme::PicardSteps`].
    pub picard: Option<PicardConfig>,
}

impl SimConfig {
    pub fn new(c: f64, s: f64, kernel: InfluenceFunction, dt: f64, horizon: f64) -> Self {
        Self {
            c,
            s,
            kernel,
            dt,
            horizon,
            sample_every: 1,
            scheme: Scheme::Rk4Predicted,
            normalization: Normalization::PairCount,
            propagation: Propagation::Finite,
            align_breaks: true,
            prune: false,
            picard: None,
        }
    }

    /// Collects every violated precondition.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.s.is_finite() && self.s > 0.0) {
            out.push(format!("speed bound s must be finite and > 0 (got {})", self.s));
        }
        if !(self.c.is_finite() && self.c > self.s) {
            out.push(format!(
                "agents must travel slower than c: need c > s (got c = {}, s = {})",
                self.c, self.s
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            out.push(format!("dt must be > 0 (got {})", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            out.push(format!("horizon must be >= 0 (got {})", self.horizon));
        } else if self.horizon > 0.0 && self.horizon < self.dt {
            out.push(format!("horizon {} is shorter than dt {}", self.horizon, self.dt));
        }
        if self.sample_every == 0 {
            out.push("sample_every must be >= 1".into());
        }
        if self.scheme == Scheme::PicardSteps {
            match &self.picard {
                None => out.push("scheme picard_steps needs a [picard] section".into()),
                Some(p) => out.extend(p.violations(self.s, self.c, self.kernel.lipschitz_bound())),
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Prescribed past of all agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub paths: Vec<crate::history::InitialPath>,
    /// Length of the window `[-S, 0]` on which the initial data is
    /// prescribed; `None` means all of `(-inf, 0]`.
    #[serde(default)]
    pub init_window: Option<f64>,
}

impl InitialData {
    pub fn new(paths: Vec<crate::history::InitialPath>) -> Self {
        Self {
            paths,
            init_window: None,
        }
    }

    pub fn n(&self) -> usize {
        self.paths.len()
    }

    pub fn dim(&self) -> usize {
        self.paths.first().map(|p| p.dim()).unwrap_or(0)
    }

    /// Positions and velocities at `t = 0`, flat.
    pub fn state_at_zero(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = Vec::new();
        let mut v = Vec::new();
        for p in &self.paths {
            let h = TrajectoryHistory::new(p.clone(), f64::MAX)?;
            x.extend_from_slice(h.last_position());
            v.extend_from_slice(h.last_velocity());
        }
        Ok((x, v))
    }

    pub fn violations(&self, s: f64) -> Vec<String> {
        let mut out = Vec::new();
        if self.paths.is_empty() {
            out.push("at least one agent is required".into());
            return out;
        }
        let d = self.dim();
        if d == 0 {
            out.push("spatial dimension must be >= 1".into());
        }
        for (i, p) in self.paths.iter().enumerate() {
            if p.dim() != d {
                out.push(format!("agent {i}: dimension {} differs from {d}", p.dim()));
                continue;
            }
            match TrajectoryHistory::new(p.clone(), f64::MAX) {
                Err(e) => out.push(format!("agent {i}: {e}")),
                Ok(h) => {
                    let vmax = match p {
                        crate::history::InitialPath::ConstantVelocity { v0, .. } => norm(v0),
                        crate::history::InitialPath::PiecewiseLinearVelocity { knots, .. } => {
                            knots.iter().map(|(_, v)| norm(v)).fold(0.0, f64::max)
                        }
                    };
                    let _ = h;
                    if vmax > s {
                        out.push(format!("agent {i}: initial speed {vmax} exceeds s = {s}"));
                    }
                }
            }
        }
        out
    }
}

/// Current phase coordinates, flat `n * d` arrays.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimState {
    pub t: f64,
    pub dim: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl SimState {
    pub fn n(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.v[i * self.dim..(i + 1) * self.dim]
    }

    /// `R_v = max_i |v_i|`.
    pub fn velocity_radius(&self) -> f64 {
        self.v.chunks(self.dim).map(norm).fold(0.0, f64::max)
    }
}

/// A history optionally extended past its last knot by a one-step segment.
pub(crate) struct StageView<'a> {
    pub hist: &'a TrajectoryHistory,
    pub seg: Option<&'a Segment>,
}

impl Trajectory for StageView<'_> {
    fn dim(&self) -> usize {
        self.hist.dim()
    }

    fn speed_bound(&self) -> f64 {
        self.hist.s_bound()
    }

    fn latest_time(&self) -> f64 {
        self.seg.map(|s| s.t1).unwrap_or_else(|| self.hist.t_now())
    }

    fn position_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self.seg {
            Some(seg) if t > seg.t0 => {
                seg.position_into(t.min(seg.t1), out);
                Ok(())
            }
            _ => self.hist.position_into(t, out),
        }
    }

    fn velocity_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self.seg {
            Some(seg) if t > seg.t0 => {
                seg.velocity_into(t.min(seg.t1), out);
                Ok(())
            }
            _ => self.hist.velocity_into(t, out),
        }
    }
}

/// Per-evaluation byproducts of the right-hand side.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct RhsStats {
    pub max_tau: f64,
    /// Some lookup landed strictly after `step_start`.
    pub in_step: bool,
    pub max_residual: f64,
}

/// Evaluates accelerations at time `t` for stage states `(x, v)`.
///
/// `pair_tau`, when given, receives `tau_ij` (row-major, zero diagonal) and
/// `pair_lookup_rate` the rate `1 - tau_ij'` of the lookup time.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accelerations<T: Trajectory + Sync>(
    cfg: &SimConfig,
    t: f64,
    step_start: f64,
    x: &[f64],
    v: &[f64],
    views: &[T],
    out: &mut [f64],
    mut pair_tau: Option<&mut [f64]>,
    mut pair_lookup_rate: Option<&mut [f64]>,
) -> Result<RhsStats> {
    let n = views.len();
    let d = x.len() / n.max(1);
    out.iter_mut().for_each(|a| *a = 0.0);
    if n <= 1 {
        return Ok(RhsStats::default());
    }
    let weight = match cfg.normalization {
        Normalization::PairCount => 1.0 / (n as f64 - 1.0),
        Normalization::MeanField => 1.0 / n as f64,
    };
    let want_pairs = pair_tau.is_some() || pair_lookup_rate.is_some();

    let agent = |i: usize, acc: &mut [f64], taus: Option<&mut [f64]>, rates: Option<&mut [f64]>| -> Result<RhsStats> {
        let mut stats = RhsStats::default();
        let z = &x[i * d..(i + 1) * d];
        let vi = &v[i * d..(i + 1) * d];
        let mut xr = vec![0.0; d];
        let mut vr = vec![0.0; d];
        let mut taus = taus;
        let mut rates = rates;
        for j in 0..n {
            if j == i {
                continue;
            }
            let tau = match cfg.propagation {
                Propagation::Instantaneous => {
                    xr.copy_from_slice(&x[j * d..(j + 1) * d]);
                    vr.copy_from_slice(&v[j * d..(j + 1) * d]);
                    0.0
                }
                Propagation::Finite => {
                    let sol = solve_into(&views[j], t, z, cfg.c, &mut xr, &mut vr)?;
                    stats.max_residual = stats.max_residual.max(sol.residual);
                    if t - sol.tau > step_start {
                        stats.in_step = true;
                    }
                    sol.tau
                }
            };
            stats.max_tau = stats.max_tau.max(tau);
            if let Some(ts) = taus.as_deref_mut() {
                ts[j] = tau;
            }
            if let Some(rs) = rates.as_deref_mut() {
                rs[j] = 1.0 - crate::delay::tau_rate(z, vi, &xr, &vr, cfg.c);
            }
            let w = weight * cfg.kernel.value(dist(&xr, z));
            for a in 0..d {
                acc[a] += w * (vr[a] - vi[a]);
            }
        }
        Ok(stats)
    };

    let merge = |a: RhsStats, b: RhsStats| RhsStats {
        max_tau: a.max_tau.max(b.max_tau),
        in_step: a.in_step || b.in_step,
        max_residual: a.max_residual.max(b.max_residual),
    };

    if n >= PARALLEL_AGENTS {
        let mut taus_local = vec![0.0; if want_pairs { n * n } else { 0 }];
        let mut rates_local = vec![0.0; if want_pairs { n * n } else { 0 }];
        let results: Vec<Result<RhsStats>> = if want_pairs {
            out.par_chunks_mut(d)
                .zip(taus_local.par_chunks_mut(n))
                .zip(rates_local.par_chunks_mut(n))
                .enumerate()
                .map(|(i, ((acc, ts), rs))| agent(i, acc, Some(ts), Some(rs)))
                .collect()
        } else {
            out.par_chunks_mut(d)
                .enumerate()
                .map(|(i, acc)| agent(i, acc, None, None))
                .collect()
        };
        let mut stats = RhsStats::default();
        for r in results {
            stats = merge(stats, r?);
        }
        if let Some(ts) = pair_tau.as_deref_mut() {
            ts.copy_from_slice(&taus_local);
        }
        if let Some(rs) = pair_lookup_rate.as_deref_mut() {
            rs.copy_from_slice(&rates_local);
        }
        Ok(stats)
    } else {
        let mut stats = RhsStats::default();
        for i in 0..n {
            let ts = pair_tau.as_deref_mut().map(|p| &mut p[i * n..(i + 1) * n]);
            let rs = pair_lookup_rate.as_deref_mut().map(|p| &mut p[i * n..(i + 1) * n]);
            let s = agent(i, &mut out[i * d..(i + 1) * d], ts, rs)?;
            stats = merge(stats, s);
        }
        Ok(stats)
    }
}

/// Accelerations `a_i` for the current state against stored histories.
pub fn rhs(state: &SimState, histories: &[TrajectoryHistory], cfg: &SimConfig) -> Result<Vec<f64>> {
    if histories.len() != state.n() {
        return Err(Error::Usage("state and history counts disagree".into()));
    }
    let views: Vec<StageView> = histories.iter().map(|h| StageView { hist: h, seg: None }).collect();
    let mut out = vec![0.0; state.x.len()];
    accelerations(cfg, state.t, state.t, &state.x, &state.v, &views, &mut out, None, None)?;
    Ok(out)
}
