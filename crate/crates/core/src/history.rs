//! Per-agent trajectory storage with dense output.
//!
//! A [`TrajectoryHistory`] holds a closed-form initial path on `t <= 0` and
//! knots `(t, x, v, a)` for `t` in `[0, t_now]`. Positions between knots are
//! cubic Hermite interpolants using the stored velocities as derivatives.
//! Velocities are cubic Hermite interpolants of `(v, a)` when both bracketing
//! knots carry an acceleration, and linear otherwise.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, is_finite, norm};

/// Slack used by the Lipschitz checks on appended knots.
pub const KNOT_SLACK: f64 = 1e-9;

/// Anything that can be evaluated at past times like an agent path.
///
/// The retarded-time solver only needs this interface, so it works on stored
/// histories, on histories extended by an in-step predictor, and on Picard
/// iterates alike.
pub trait Trajectory {
    fn dim(&self) -> usize;
    /// Lipschitz constant of the position path.
    fn speed_bound(&self) -> f64;
    /// Latest time at which the path can be evaluated.
    fn latest_time(&self) -> f64;
    fn position_into(&self, t: f64, out: &mut [f64]) -> Result<()>;
    fn velocity_into(&self, t: f64, out: &mut [f64]) -> Result<()>;
}

/// Prescribed past of one agent, `t <= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialPath {
    /// `x(t) = x0 + v0 t`.
    ConstantVelocity { x0: Vec<f64>, v0: Vec<f64> },
    /// Velocity linear between `(t, v)` knots (all `t <= 0`), constant before
    /// the first knot and after the last one; the position is its integral
    /// anchored at `x(0) = x0_at_zero`.
    PiecewiseLinearVelocity {
        knots: Vec<(f64, Vec<f64>)>,
        x0_at_zero: Vec<f64>,
    },
}

impl InitialPath {
    pub fn dim(&self) -> usize {
        match self {
            InitialPath::ConstantVelocity { x0, .. } => x0.len(),
            InitialPath::PiecewiseLinearVelocity { x0_at_zero, .. } => x0_at_zero.len(),
        }
    }

    pub fn position_at_zero(&self) -> &[f64] {
        match self {
            InitialPath::ConstantVelocity { x0, .. } => x0,
            InitialPath::PiecewiseLinearVelocity { x0_at_zero, .. } => x0_at_zero,
        }
    }

    pub fn translated(&self, offset: &[f64]) -> InitialPath {
        let shift = |p: &[f64]| p.iter().zip(offset).map(|(a, b)| a + b).collect::<Vec<_>>();
        match self {
            InitialPath::ConstantVelocity { x0, v0 } => InitialPath::ConstantVelocity {
                x0: shift(x0),
                v0: v0.clone(),
            },
            InitialPath::PiecewiseLinearVelocity { knots, x0_at_zero } => InitialPath::PiecewiseLinearVelocity {
                knots: knots.clone(),
                x0_at_zero: shift(x0_at_zero),
            },
        }
    }
}

/// Compiled form of an [`InitialPath`]: knot times, velocities and the
/// positions obtained by integrating the velocity backwards from `t = 0`.
#[derive(Clone, Debug)]
struct InitialSegment {
    dim: usize,
    times: Vec<f64>,
    vels: Vec<f64>,
    pos: Vec<f64>,
    x0: Vec<f64>,
}

impl InitialSegment {
    fn compile(path: &InitialPath) -> Result<Self> {
        let dim = path.dim();
        if dim == 0 {
            return Err(Error::Domain("spatial dimension must be >= 1".into()));
        }
        let (times, vels, x0) = match path {
            InitialPath::ConstantVelocity { x0, v0 } => {
                if v0.len() != dim {
                    return Err(Error::Domain("initial position and velocity dimensions differ".into()));
                }
                (vec![0.0], v0.clone(), x0.clone())
            }
            InitialPath::PiecewiseLinearVelocity { knots, x0_at_zero } => {
                if knots.is_empty() {
                    return Err(Error::Domain(
                        "piecewise-linear initial velocity needs at least one knot".into(),
                    ));
                }
                let mut times = Vec::with_capacity(knots.len());
                let mut vels = Vec::with_capacity(knots.len() * dim);
                for (t, v) in knots {
                    if v.len() != dim {
                        return Err(Error::Domain("initial velocity knot has wrong dimension".into()));
                    }
                    if !(t.is_finite() && *t <= 0.0) {
                        return Err(Error::Domain(format!(
                            "initial velocity knot at t = {t} must be finite and <= 0"
                        )));
                    }
                    if let Some(&prev) = times.last() {
                        if *t <= prev {
                            return Err(Error::Domain(
                                "initial velocity knot times must increase strictly".into(),
                            ));
                        }
                    }
                    times.push(*t);
                    vels.extend_from_slice(v);
                }
                (times, vels, x0_at_zero.clone())
            }
        };
        if !is_finite(&x0) || !is_finite(&vels) {
            return Err(Error::Domain("initial path contains non-finite values".into()));
        }
        let n = times.len();
        let mut pos = vec![0.0; n * dim];
        // last knot: integrate the constant tail velocity back from 0
        let tl = times[n - 1];
        for a in 0..dim {
            pos[(n - 1) * dim + a] = x0[a] + tl * vels[(n - 1) * dim + a];
        }
        for k in (0..n - 1).rev() {
            let dt = times[k + 1] - times[k];
            for a in 0..dim {
                let avg = 0.5 * (vels[k * dim + a] + vels[(k + 1) * dim + a]);
                pos[k * dim + a] = pos[(k + 1) * dim + a] - dt * avg;
            }
        }
        Ok(Self {
            dim,
            times,
            vels,
            pos,
            x0,
        })
    }

    fn velocity_into(&self, t: f64, out: &mut [f64]) {
        let d = self.dim;
        let n = self.times.len();
        if t <= self.times[0] {
            out.copy_from_slice(&self.vels[..d]);
        } else if t >= self.times[n - 1] {
            out.copy_from_slice(&self.vels[(n - 1) * d..n * d]);
        } else {
            let k = self.times.partition_point(|&s| s <= t) - 1;
            let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
            for a in 0..d {
                let v0 = self.vels[k * d + a];
                out[a] = v0 + w * (self.vels[(k + 1) * d + a] - v0);
            }
        }
    }

    fn position_into(&self, t: f64, out: &mut [f64]) {
        let d = self.dim;
        let n = self.times.len();
        if t <= self.times[0] {
            let dt = t - self.times[0];
            for a in 0..d {
                out[a] = self.pos[a] + dt * self.vels[a];
            }
        } else if t >= self.times[n - 1] {
            let dt = t - self.times[n - 1];
            for a in 0..d {
                out[a] = self.pos[(n - 1) * d + a] + dt * self.vels[(n - 1) * d + a];
            }
        } else {
            let k = self.times.partition_point(|&s| s <= t) - 1;
            let span = self.times[k + 1] - self.times[k];
            let dt = t - self.times[k];
            for a in 0..d {
                let v0 = self.vels[k * d + a];
                let slope = (self.vels[(k + 1) * d + a] - v0) / span;
                out[a] = self.pos[k * d + a] + dt * v0 + 0.5 * dt * dt * slope;
            }
        }
    }

    fn max_speed(&self) -> f64 {
        self.vels.chunks(self.dim).map(norm).fold(0.0, f64::max)
    }

    fn velocity_lipschitz(&self) -> f64 {
        let d = self.dim;
        (1..self.times.len())
            .map(|k| {
                let dv = dist(&self.vels[(k - 1) * d..k * d], &self.vels[k * d..(k + 1) * d]);
                dv / (self.times[k] - self.times[k - 1])
            })
            .fold(0.0, f64::max)
    }
}

/// Hermite basis on `theta` in `[0, 1]`.
#[inline]
pub(crate) fn hermite(theta: f64) -> [f64; 4] {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    [
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + theta,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    ]
}

/// Position, velocity and acceleration at the two ends of one time interval.
#[derive(Clone, Debug)]
pub(crate) struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub a0: Vec<f64>,
    pub x1: Vec<f64>,
    pub v1: Vec<f64>,
    pub a1: Vec<f64>,
}

impl Segment {
    pub fn position_into(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let b = hermite((t - self.t0) / h);
        for a in 0..out.len() {
            out[a] = b[0] * self.x0[a] + b[1] * h * self.v0[a] + b[2] * self.x1[a] + b[3] * h * self.v1[a];
        }
    }

    pub fn velocity_into(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let b = hermite((t - self.t0) / h);
        for a in 0..out.len() {
            out[a] = b[0] * self.v0[a] + b[1] * h * self.a0[a] + b[2] * self.v1[a] + b[3] * h * self.a1[a];
        }
    }
}

/// Result of [`sup_norm_diff`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupNormDiff {
    pub pos_sup: f64,
    pub vel_sup: f64,
    /// Certified bound on how much the sampled position supremum may miss.
    pub pos_err: f64,
    pub vel_err: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryHistory {
    dim: usize,
    init_path: InitialPath,
    init: InitialSegment,
    init_window: Option<f64>,
    times: Vec<f64>,
    xs: Vec<f64>,
    vs: Vec<f64>,
    accs: Vec<f64>,
    acc_known: Vec<bool>,
    s_bound: f64,
    accel_bound: f64,
    speed_slack: f64,
    pruned: bool,
}

impl TrajectoryHistory {
    /// History with the initial path prescribed on all of `(-inf, 0]`.
    pub fn new(init: InitialPath, s_bound: f64) -> Result<Self> {
        Self::with_window(init, s_bound, None)
    }

    /// History whose initial path is only available on `[-window, 0]`.
    pub fn with_window(init: InitialPath, s_bound: f64, window: Option<f64>) -> Result<Self> {
        if !(s_bound.is_finite() && s_bound >= 0.0) {
            return Err(Error::Parameter(format!(
                "speed bound must be finite and >= 0, got {s_bound}"
            )));
        }
        if let Some(w) = window {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Parameter(format!(
                    "initial window must be finite and >= 0, got {w}"
                )));
            }
        }
        let seg = InitialSegment::compile(&init)?;
        if seg.max_speed() > s_bound + KNOT_SLACK {
            return Err(Error::InvariantViolation(format!(
                "initial speed {} exceeds the speed bound {s_bound}",
                seg.max_speed()
            )));
        }
        let dim = seg.dim;
        let mut v_zero = vec![0.0; dim];
        seg.velocity_into(0.0, &mut v_zero);
        Ok(Self {
            dim,
            times: vec![0.0],
            xs: seg.x0.clone(),
            vs: v_zero,
            accs: vec![0.0; dim],
            acc_known: vec![false],
            init: seg,
            init_path: init,
            init_window: window,
            s_bound,
            accel_bound: 2.0 * s_bound,
            speed_slack: KNOT_SLACK,
            pruned: false,
        })
    }

    /// Loosens the slack of the `|v| <= s` check performed by [`append`](Self::append).
    pub fn set_speed_slack(&mut self, slack: f64) {
        self.speed_slack = slack;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn s_bound(&self) -> f64 {
        self.s_bound
    }

    pub fn accel_bound(&self) -> f64 {
        self.accel_bound
    }

    pub fn initial_path(&self) -> &InitialPath {
        &self.init_path
    }

    pub fn init_window(&self) -> Option<f64> {
        self.init_window
    }

    pub fn t_now(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn knot_count(&self) -> usize {
        self.times.len()
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.times
    }

    pub fn knot_position(&self, k: usize) -> &[f64] {
        &self.xs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn knot_velocity(&self, k: usize) -> &[f64] {
        &self.vs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last_position(&self) -> &[f64] {
        self.knot_position(self.times.len() - 1)
    }

    pub fn last_velocity(&self) -> &[f64] {
        self.knot_velocity(self.times.len() - 1)
    }

    /// Lipschitz constant of the initial velocity on `(-inf, 0]`.
    pub fn initial_velocity_lipschitz(&self) -> f64 {
        self.init.velocity_lipschitz()
    }

    /// Times `<= 0` where the initial velocity is not smooth, plus `t = 0`
    /// where the dynamics take over.
    pub fn break_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = if self.init.times.len() > 1 {
            self.init.times.clone()
        } else {
            Vec::new()
        };
        if out.last().copied() != Some(0.0) {
            out.push(0.0);
        }
        out
    }

    /// Velocity of the constant tail of the initial path, `t -> -inf`.
    pub fn tail_velocity(&self) -> &[f64] {
        &self.init.vels[..self.dim]
    }

    /// Time from which on (backwards) the initial path has constant velocity.
    pub fn tail_start(&self) -> f64 {
        self.init.times[0].min(0.0)
    }

    /// Appends a knot without acceleration data; velocity is interpolated
    /// linearly on the new interval.
    pub fn append(&mut self, t: f64, x: &[f64], v: &[f64]) -> Result<()> {
        self.push_knot(t, x, v, None)
    }

    /// Appends a knot carrying the acceleration at `t`.
    pub fn append_with_acceleration(&mut self, t: f64, x: &[f64], v: &[f64], a: &[f64]) -> Result<()> {
        self.push_knot(t, x, v, Some(a))
    }

    /// Sets the acceleration of the most recent knot.
    pub fn set_last_acceleration(&mut self, a: &[f64]) {
        let k = self.times.len() - 1;
        self.accs[k * self.dim..(k + 1) * self.dim].copy_from_slice(a);
        self.acc_known[k] = true;
    }

    fn push_knot(&mut self, t: f64, x: &[f64], v: &[f64], a: Option<&[f64]>) -> Result<()> {
        let d = self.dim;
        if x.len() != d || v.len() != d || a.is_some_and(|a| a.len() != d) {
            return Err(Error::Usage("knot has wrong dimension".into()));
        }
        if !t.is_finite() || !is_finite(x) || !is_finite(v) {
            return Err(Error::Usage(format!("non-finite knot at t = {t}")));
        }
        let t_now = self.t_now();
        if t <= t_now {
            return Err(Error::Usage(format!(
                "knot time {t} does not exceed the latest time {t_now}"
            )));
        }
        let speed = norm(v);
        if speed > self.s_bound + self.speed_slack {
            return Err(Error::InvariantViolation(format!(
                "speed {speed} at t = {t} exceeds the bound s = {} (slack {})",
                self.s_bound, self.speed_slack
            )));
        }
        let dt = t - t_now;
        let dx = dist(x, self.last_position());
        if dx > (self.s_bound + self.speed_slack) * dt + KNOT_SLACK {
            return Err(Error::InvariantViolation(format!(
                "position increment {dx} over dt = {dt} breaks the {}-Lipschitz bound",
                self.s_bound
            )));
        }
        let dv = dist(v, self.last_velocity());
        if dv > self.accel_bound * dt + KNOT_SLACK {
            return Err(Error::InvariantViolation(format!(
                "velocity increment {dv} over dt = {dt} breaks the {}-Lipschitz bound",
                self.accel_bound
            )));
        }
        self.times.push(t);
        self.xs.extend_from_slice(x);
        self.vs.extend_from_slice(v);
        match a {
            Some(a) => {
                self.accs.extend_from_slice(a);
                self.acc_known.push(true);
            }
            None => {
                self.accs.extend(std::iter::repeat_n(0.0, d));
                self.acc_known.push(false);
            }
        }
        Ok(())
    }

    /// Drops knots older than `t_now - margin`, keeping the knot that
    /// brackets `t_now - margin` from below.
    pub fn prune(&mut self, margin: f64) {
        let cutoff = self.t_now() - margin;
        let k = self.times.partition_point(|&s| s < cutoff);
        if k <= 1 {
            return;
        }
        let drop = k - 1;
        let d = self.dim;
        self.times.drain(..drop);
        self.xs.drain(..drop * d);
        self.vs.drain(..drop * d);
        self.accs.drain(..drop * d);
        self.acc_known.drain(..drop);
        self.pruned = true;
    }

    /// Earliest time at which the history can be evaluated.
    pub fn earliest_time(&self) -> f64 {
        if self.pruned {
            self.times[0]
        } else {
            match self.init_window {
                Some(w) => -w,
                None => f64::NEG_INFINITY,
            }
        }
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let t_now = self.t_now();
        let tol = 1e-12 * t_now.abs().max(1.0);
        if !t.is_finite() {
            return Err(Error::Domain(format!("history evaluated at t = {t}")));
        }
        if t > t_now {
            if t <= t_now + tol {
                return Ok(t_now);
            }
            return Err(Error::Usage(format!(
                "history evaluated at t = {t} beyond its latest knot {t_now}"
            )));
        }
        let earliest = self.earliest_time();
        if t < earliest - 1e-12 * earliest.abs().max(1.0) {
            return Err(Error::HistoryUnderflow {
                t,
                earliest,
                latest: t_now,
                required_window: -t,
            });
        }
        Ok(t.max(earliest))
    }

    fn bracket(&self, t: f64) -> usize {
        // k with times[k] <= t < times[k+1]; t within [times[0], t_now)
        let k = self.times.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    pub fn eval_position(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.position_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_velocity(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.velocity_into(t, &mut out)?;
        Ok(out)
    }

    /// Position without range checks, extending the initial path below any
    /// prescribed window. Knot data must cover `t` if `t >= 0`.
    pub(crate) fn position_unchecked(&self, t: f64, out: &mut [f64]) {
        if t <= 0.0 && !self.pruned {
            self.init.position_into(t, out);
            return;
        }
        let n = self.times.len();
        if n == 1 || t >= self.times[n - 1] {
            out.copy_from_slice(self.last_position());
            return;
        }
        let k = self.bracket(t);
        let d = self.dim;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let b = hermite((t - t0) / h);
        for a in 0..d {
            out[a] = b[0] * self.xs[k * d + a]
                + b[1] * h * self.vs[k * d + a]
                + b[2] * self.xs[(k + 1) * d + a]
                + b[3] * h * self.vs[(k + 1) * d + a];
        }
    }

    pub(crate) fn velocity_unchecked(&self, t: f64, out: &mut [f64]) {
        if t < 0.0 && !self.pruned {
            self.init.velocity_into(t, out);
            return;
        }
        let n = self.times.len();
        if n == 1 || t >= self.times[n - 1] {
            out.copy_from_slice(self.last_velocity());
            return;
        }
        let k = self.bracket(t);
        let d = self.dim;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let theta = (t - t0) / h;
        if self.acc_known[k] && self.acc_known[k + 1] {
            let b = hermite(theta);
            for a in 0..d {
                out[a] = b[0] * self.vs[k * d + a]
                    + b[1] * h * self.accs[k * d + a]
                    + b[2] * self.vs[(k + 1) * d + a]
                    + b[3] * h * self.accs[(k + 1) * d + a];
            }
        } else {
            for a in 0..d {
                let v0 = self.vs[k * d + a];
                out[a] = v0 + theta * (self.vs[(k + 1) * d + a] - v0);
            }
        }
    }

    /// Copy of the history with every position shifted by `offset`.
    pub fn translated(&self, offset: &[f64]) -> Result<TrajectoryHistory> {
        if offset.len() != self.dim {
            return Err(Error::Usage("translation offset has wrong dimension".into()));
        }
        let mut out = self.clone();
        out.init_path = self.init_path.translated(offset);
        out.init = InitialSegment::compile(&out.init_path)?;
        for chunk in out.xs.chunks_mut(self.dim) {
            for (x, o) in chunk.iter_mut().zip(offset) {
                *x += o;
            }
        }
        Ok(out)
    }

    /// Checks the knot-level Lipschitz invariants; returns the largest
    /// excess over `s` (positions) and `2s` (velocities), both `<= 0` when
    /// the history is a valid member of the trajectory space.
    pub fn lipschitz_excess(&self) -> (f64, f64) {
        let d = self.dim;
        let mut pos = f64::NEG_INFINITY;
        let mut vel = f64::NEG_INFINITY;
        for k in 1..self.times.len() {
            let dt = self.times[k] - self.times[k - 1];
            let dx = dist(&self.xs[(k - 1) * d..k * d], &self.xs[k * d..(k + 1) * d]);
            let dv = dist(&self.vs[(k - 1) * d..k * d], &self.vs[k * d..(k + 1) * d]);
            pos = pos.max(dx - self.s_bound * dt);
            vel = vel.max(dv - self.accel_bound * dt);
        }
        (pos, vel)
    }

    /// Largest spacing between consecutive knots.
    pub fn max_knot_spacing(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

impl Trajectory for TrajectoryHistory {
    fn dim(&self) -> usize {
        self.dim
    }

    fn speed_bound(&self) -> f64 {
        self.s_bound
    }

    fn latest_time(&self) -> f64 {
        self.t_now()
    }

    fn position_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let t = self.check_time(t)?;
        self.position_unchecked(t, out);
        Ok(())
    }

    fn velocity_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let t = self.check_time(t)?;
        self.velocity_unchecked(t, out);
        Ok(())
    }
}

/// `S(T) = (d_X(0) + [c - 3s]^- T) / (c - s)`: how far back the initial
/// data is consulted by a run to horizon `T`.
pub fn required_window(dx0: f64, c: f64, s: f64, horizon: f64) -> Result<f64> {
    if !(c.is_finite() && s.is_finite() && s >= 0.0 && c > s) {
        return Err(Error::Parameter(format!(
            "agents must travel slower than c: need c > s >= 0, got c = {c}, s = {s}"
        )));
    }
    if !(horizon >= 0.0 && dx0 >= 0.0) {
        return Err(Error::Parameter("horizon and initial diameter must be >= 0".into()));
    }
    let neg = (-(c - 3.0 * s)).max(0.0);
    Ok((dx0 + neg * horizon) / (c - s))
}

/// Suprema of `|x1 - x2|` over `[t_lo, t_hi]` and of `|v1 - v2|` over
/// `[max(0, t_lo), t_hi]`, sampled on the union of both knot grids plus
/// midpoints. Initial segments are sampled at their velocity knots and on a
/// grid no coarser than the run-time knot spacing.
pub fn sup_norm_diff(h1: &TrajectoryHistory, h2: &TrajectoryHistory, t_lo: f64, t_hi: f64) -> Result<SupNormDiff> {
    if h1.dim != h2.dim {
        return Err(Error::Usage("histories have different dimensions".into()));
    }
    if !(t_lo <= t_hi) {
        return Err(Error::Usage(format!("empty window [{t_lo}, {t_hi}]")));
    }
    for h in [h1, h2] {
        h.check_time(t_lo)?;
        h.check_time(t_hi)?;
    }
    let mut nodes: Vec<f64> = Vec::new();
    nodes.push(t_lo);
    nodes.push(t_hi);
    let h_knot = h1.max_knot_spacing().max(h2.max_knot_spacing());
    for h in [h1, h2] {
        nodes.extend(h.times.iter().copied().filter(|&t| t >= t_lo && t <= t_hi));
        if t_lo < 0.0 {
            nodes.extend(
                h.init
                    .times
                    .iter()
                    .copied()
                    .filter(|&t| t >= t_lo && t <= t_hi.min(0.0)),
            );
        }
    }
    if t_lo < 0.0 {
        nodes.push(t_hi.min(0.0));
        let span = t_hi.min(0.0) - t_lo;
        let step = if h_knot > 0.0 { h_knot } else { span.max(1e-300) / 64.0 };
        let cells = (span / step).ceil().min(1e6) as usize;
        for k in 1..cells {
            nodes.push(t_lo + span * k as f64 / cells as f64);
        }
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup();
    let mut all = Vec::with_capacity(nodes.len() * 2);
    for w in nodes.windows(2) {
        all.push(w[0]);
        all.push(0.5 * (w[0] + w[1]));
    }
    all.push(*nodes.last().unwrap());

    let d = h1.dim;
    let (mut p1, mut p2, mut v1, mut v2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut pos_sup = 0.0f64;
    let mut vel_sup = 0.0f64;
    for &t in &all {
        h1.position_unchecked(t, &mut p1);
        h2.position_unchecked(t, &mut p2);
        pos_sup = pos_sup.max(dist(&p1, &p2));
        if t >= 0.0 {
            h1.velocity_unchecked(t, &mut v1);
            h2.velocity_unchecked(t, &mut v2);
            vel_sup = vel_sup.max(dist(&v1, &v2));
        }
    }
    let s_bound = h1.s_bound.max(h2.s_bound);
    let a_bound = h1.accel_bound.max(h2.accel_bound);
    Ok(SupNormDiff {
        pos_sup,
        vel_sup,
        pos_err: 2.0 * s_bound * h_knot,
        vel_err: 2.0 * a_bound * h_knot,
    })
}

/// Writes knots verbatim as `agent_id,t,x_1..x_d,v_1..v_d`.
pub fn write_trajectory_csv<W: Write>(mut out: W, histories: &[TrajectoryHistory]) -> Result<()> {
    let d = histories.first().map(|h| h.dim).unwrap_or(1);
    let mut header = String::from("agent_id,t");
    for a in 1..=d {
        header.push_str(&format!(",x_{a}"));
    }
    for a in 1..=d {
        header.push_str(&format!(",v_{a}"));
    }
    writeln!(out, "{header}")?;
    for (id, h) in histories.iter().enumerate() {
        for k in 0..h.times.len() {
            let mut line = format!("{id},{}", fmt17(h.times[k]));
            for x in h.knot_position(k) {
                line.push(',');
                line.push_str(&fmt17(*x));
            }
            for v in h.knot_velocity(k) {
                line.push(',');
                line.push_str(&fmt17(*v));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
