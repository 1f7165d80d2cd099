use std::time::Instant;

use serde::Serialize;

use super::picard::picard_window;
use super::{
    accelerations, InitialData, Propagation, Scheme, SimConfig, SimState, StageView, DELAY_BOUND_SLACK, SPEED_SLACK,
};
use crate::delay::{pair_delays, DelayMatrix};
use crate::diagnostics::{observe, DiagnosticsSeries};
use crate::error::{Error, Result};
use crate::history::{Segment, TrajectoryHistory};
use crate::linalg::{diameter, norm};

/// Counts of the runtime checks performed along a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct InvariantReport {
    pub steps: usize,
    /// Pairs checked against `tau_ij <= d_X / (c - s)`.
    pub delay_checks: usize,
    pub delay_violations: usize,
    pub max_delay_excess: f64,
    pub speed_checks: usize,
    pub speed_violations: usize,
    /// `max_i |v_i| - s` over accepted steps.
    pub max_speed_excess: f64,
    /// Steps where some stage looked up a time inside the step itself.
    pub corrected_steps: usize,
    /// Steps shortened to land on a breaking point.
    pub aligned_steps: usize,
    pub max_residual: f64,
}

impl InvariantReport {
    pub fn failures(&self) -> usize {
        self.delay_violations + self.speed_violations
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub series: DiagnosticsSeries,
    pub histories: Vec<TrajectoryHistory>,
    pub final_state: SimState,
    pub invariants: InvariantReport,
    pub wall_seconds: f64,
}

/// Running simulation. Positions are stored relative to agent 0's initial
/// position; every public accessor returns absolute coordinates.
pub struct Simulation {
    cfg: SimConfig,
    n: usize,
    d: usize,
    origin: Vec<f64>,
    histories: Vec<TrajectoryHistory>,
    t: f64,
    x: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
    pair_tau: Vec<f64>,
    pair_rate: Vec<f64>,
    /// Times where each agent's velocity has a kink in some derivative up
    /// to the second: its initial kinks, `t = 0`, and the times where one of
    /// its lookups crossed such a point of another agent's initial data.
    breaks: Vec<Vec<f64>>,
    initial_breaks: Vec<Vec<f64>>,
    report: InvariantReport,
}

impl Simulation {
    pub fn new(cfg: &SimConfig, init: &InitialData) -> Result<Self> {
        let mut errs = cfg.violations();
        errs.extend(init.violations(cfg.s));
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let n = init.n();
        let d = init.dim();
        let origin = init.paths[0].position_at_zero().to_vec();
        let neg: Vec<f64> = origin.iter().map(|o| -o).collect();
        let mut histories = Vec::with_capacity(n);
        for p in &init.paths {
            let mut h = TrajectoryHistory::with_window(p.clone(), cfg.s, init.init_window)?.translated(&neg)?;
            h.set_speed_slack(SPEED_SLACK);
            histories.push(h);
        }
        let mut x = Vec::with_capacity(n * d);
        let mut v = Vec::with_capacity(n * d);
        for h in &histories {
            x.extend_from_slice(h.last_position());
            v.extend_from_slice(h.last_velocity());
        }
        let breaks: Vec<Vec<f64>> = histories.iter().map(|h| h.break_times()).collect();
        let mut sim = Self {
            cfg: cfg.clone(),
            n,
            d,
            origin,
            histories,
            t: 0.0,
            x,
            v,
            a: vec![0.0; n * d],
            pair_tau: vec![0.0; n * n],
            pair_rate: vec![0.0; n * n],
            initial_breaks: breaks.clone(),
            breaks,
            report: InvariantReport::default(),
        };
        sim.refresh_knot()?;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn report(&self) -> &InvariantReport {
        &self.report
    }

    pub fn state(&self) -> SimState {
        let mut x = self.x.clone();
        for chunk in x.chunks_mut(self.d) {
            for (xa, o) in chunk.iter_mut().zip(&self.origin) {
                *xa += o;
            }
        }
        SimState {
            t: self.t,
            dim: self.d,
            x,
            v: self.v.clone(),
        }
    }

    /// Accelerations at the current knot.
    pub fn accelerations(&self) -> &[f64] {
        &self.a
    }

    /// Histories in absolute coordinates.
    pub fn histories(&self) -> Result<Vec<TrajectoryHistory>> {
        self.histories.iter().map(|h| h.translated(&self.origin)).collect()
    }

    /// Pairwise retarded samples at the current time (absolute coordinates).
    pub fn delays(&self) -> Result<DelayMatrix> {
        let mut m = match self.cfg.propagation {
            Propagation::Finite => pair_delays(&self.x, &self.v, &self.histories, self.t, self.cfg.c)?,
            Propagation::Instantaneous => {
                let samples = (0..self.n * self.n)
                    .map(|k| {
                        let j = k % self.n;
                        crate::delay::RetardedSample {
                            tau: 0.0,
                            x_ret: self.x[j * self.d..(j + 1) * self.d].to_vec(),
                            v_ret: self.v[j * self.d..(j + 1) * self.d].to_vec(),
                            residual: 0.0,
                            iterations: 0,
                        }
                    })
                    .collect();
                DelayMatrix { n: self.n, samples }
            }
        };
        for s in &mut m.samples {
            for (xa, o) in s.x_ret.iter_mut().zip(&self.origin) {
                *xa += o;
            }
        }
        Ok(m)
    }

    fn views(&self) -> Vec<StageView<'_>> {
        self.histories
            .iter()
            .map(|h| StageView { hist: h, seg: None })
            .collect()
    }

    /// Recomputes the acceleration and pair data at the latest knot and runs
    /// the per-step invariant checks.
    fn refresh_knot(&mut self) -> Result<()> {
        let mut a = vec![0.0; self.n * self.d];
        let mut taus = vec![0.0; self.n * self.n];
        let mut rates = vec![0.0; self.n * self.n];
        let stats = {
            let views = self.views();
            accelerations(
                &self.cfg,
                self.t,
                self.t,
                &self.x,
                &self.v,
                &views,
                &mut a,
                Some(&mut taus),
                Some(&mut rates),
            )?
        };
        for (h, ai) in self.histories.iter_mut().zip(a.chunks(self.d)) {
            h.set_last_acceleration(ai);
        }
        self.a = a;
        self.pair_tau = taus;
        self.pair_rate = rates;
        self.report.max_residual = self.report.max_residual.max(stats.max_residual);

        if self.cfg.propagation == Propagation::Finite && self.n > 1 {
            let bound = diameter(&self.x, self.d) / (self.cfg.c - self.cfg.s);
            for (k, tau) in self.pair_tau.iter().enumerate() {
                if k / self.n == k % self.n {
                    continue;
                }
                self.report.delay_checks += 1;
                let excess = tau - bound;
                self.report.max_delay_excess = self.report.max_delay_excess.max(excess);
                if excess > DELAY_BOUND_SLACK {
                    self.report.delay_violations += 1;
                }
            }
        }
        let rv = self.v.chunks(self.d).map(norm).fold(0.0, f64::max);
        self.report.speed_checks += 1;
        self.report.max_speed_excess = self.report.max_speed_excess.max(rv - self.cfg.s);
        Ok(())
    }

    /// Earliest predicted time in `(t, target)` at which some lookup time
    /// `t - tau_ij` crosses a breaking point of agent `j`.
    fn next_break(&self, target: f64) -> Option<f64> {
        if !self.cfg.align_breaks || self.cfg.propagation == Propagation::Instantaneous {
            return None;
        }
        let h_min = 1e-6 * self.cfg.dt;
        let mut best: Option<f64> = None;
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                let k = i * self.n + j;
                let rate = self.pair_rate[k];
                if rate <= 0.0 {
                    continue;
                }
                let b = self.t - self.pair_tau[k];
                let Some(&bp) = self.breaks[j].iter().find(|&&bp| bp > b) else {
                    continue;
                };
                let ts = self.t + (bp - b) / rate;
                if ts > self.t + h_min && ts < target - h_min && best.is_none_or(|x| ts < x) {
                    best = Some(ts);
                }
            }
        }
        best
    }

    /// Adds the crossing time of every lookup that passed an initial kink of
    /// agent `j` during the last step to the breaks of the observer `i`.
    fn record_crossings(&mut self, b_prev: &[f64]) {
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                let k = i * self.n + j;
                let b_new = self.t - self.pair_tau[k];
                for &bp in &self.initial_breaks[j] {
                    if b_prev[k] < bp && bp <= b_new {
                        let rate = self.pair_rate[k].max(f64::MIN_POSITIVE);
                        let tc = (self.t - (b_new - bp) / rate).max(0.0);
                        let list = &mut self.breaks[i];
                        let pos = list.partition_point(|&x| x < tc);
                        list.insert(pos, tc);
                    }
                }
            }
        }
    }

    /// Advances to `target`, splitting at breaking points when enabled.
    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        if target <= self.t {
            return Err(Error::Usage(format!("cannot advance from t = {} to {target}", self.t)));
        }
        while self.t < target {
            match self.next_break(target) {
                Some(ts) => {
                    self.report.aligned_steps += 1;
                    self.step(ts)?;
                }
                None => self.step(target)?,
            }
        }
        Ok(())
    }

    fn step(&mut self, t_new: f64) -> Result<()> {
        let (n, d) = (self.n, self.d);
        let t0 = self.t;
        let h = t_new - t0;
        let taylor: Vec<Segment> = (0..n)
            .map(|i| {
                let r = i * d..(i + 1) * d;
                let (x0, v0, a0) = (&self.x[r.clone()], &self.v[r.clone()], &self.a[r]);
                Segment {
                    t0,
                    t1: t_new,
                    x0: x0.to_vec(),
                    v0: v0.to_vec(),
                    a0: a0.to_vec(),
                    x1: (0..d).map(|k| x0[k] + h * v0[k] + 0.5 * h * h * a0[k]).collect(),
                    v1: (0..d).map(|k| v0[k] + h * a0[k]).collect(),
                    a1: a0.to_vec(),
                }
            })
            .collect();
        let (mut x1, mut v1, mut a1, in_step) = self.stages(t0, h, &taylor)?;
        if in_step && self.cfg.propagation == Propagation::Finite {
            self.report.corrected_steps += 1;
            let corrected: Vec<Segment> = taylor
                .into_iter()
                .enumerate()
                .map(|(i, mut seg)| {
                    let r = i * d..(i + 1) * d;
                    seg.x1 = x1[r.clone()].to_vec();
                    seg.v1 = v1[r.clone()].to_vec();
                    seg.a1 = a1[r].to_vec();
                    seg
                })
                .collect();
            (x1, v1, a1, _) = self.stages(t0, h, &corrected)?;
        }
        for (i, vi) in v1.chunks(d).enumerate() {
            let sp = norm(vi);
            if sp > self.cfg.s + SPEED_SLACK {
                self.report.speed_violations += 1;
                return Err(Error::InvariantViolation(format!(
                    "agent {i} reached speed {sp} > s + {SPEED_SLACK} (s = {}) at t = {t_new}",
                    self.cfg.s
                )));
            }
        }
        for (i, hist) in self.histories.iter_mut().enumerate() {
            let r = i * d..(i + 1) * d;
            hist.append_with_acceleration(t_new, &x1[r.clone()], &v1[r.clone()], &a1[r])?;
        }
        let b_prev: Vec<f64> = self.pair_tau.iter().map(|tau| t0 - tau).collect();
        self.t = t_new;
        self.x = x1;
        self.v = v1;
        self.report.steps += 1;
        self.refresh_knot()?;
        if self.cfg.propagation == Propagation::Finite {
            self.record_crossings(&b_prev);
        }
        if self.cfg.prune && self.cfg.propagation == Propagation::Finite {
            let margin =
                (diameter(&self.x, d) + 2.0 * self.cfg.s * self.cfg.dt) / (self.cfg.c - self.cfg.s) + 2.0 * self.cfg.dt;
            for hist in &mut self.histories {
                hist.prune(margin);
            }
        }
        Ok(())
    }

    /// Classical RK4 stages against histories extended by `segs`.
    /// Returns `(x1, v1, k4 velocity slope, any in-step lookup)`.
    #[allow(clippy::type_complexity)]
    fn stages(&self, t0: f64, h: f64, segs: &[Segment]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, bool)> {
        let len = self.x.len();
        let views: Vec<StageView> = self
            .histories
            .iter()
            .zip(segs)
            .map(|(hist, seg)| StageView { hist, seg: Some(seg) })
            .collect();
        let (x0, v0) = (&self.x, &self.v);
        let mut in_step = false;
        let mut eval = |t: f64, xs: &[f64], vs: &[f64], out: &mut [f64]| -> Result<()> {
            let st = accelerations(&self.cfg, t, t0, xs, vs, &views, out, None, None)?;
            in_step |= st.in_step;
            Ok(())
        };
        let k1v = &self.a;
        let mut xs = vec![0.0; len];
        let mut vs = vec![0.0; len];

        for k in 0..len {
            xs[k] = x0[k] + 0.5 * h * v0[k];
            vs[k] = v0[k] + 0.5 * h * k1v[k];
        }
        let k2x = vs.clone();
        let mut k2v = vec![0.0; len];
        eval(t0 + 0.5 * h, &xs, &vs, &mut k2v)?;

        for k in 0..len {
            xs[k] = x0[k] + 0.5 * h * k2x[k];
            vs[k] = v0[k] + 0.5 * h * k2v[k];
        }
        let k3x = vs.clone();
        let mut k3v = vec![0.0; len];
        eval(t0 + 0.5 * h, &xs, &vs, &mut k3v)?;

        for k in 0..len {
            xs[k] = x0[k] + h * k3x[k];
            vs[k] = v0[k] + h * k3v[k];
        }
        let k4x = vs.clone();
        let mut k4v = vec![0.0; len];
        eval(t0 + h, &xs, &vs, &mut k4v)?;

        let mut x1 = vec![0.0; len];
        let mut v1 = vec![0.0; len];
        for k in 0..len {
            x1[k] = x0[k] + h / 6.0 * (v0[k] + 2.0 * k2x[k] + 2.0 * k3x[k] + k4x[k]);
            v1[k] = v0[k] + h / 6.0 * (k1v[k] + 2.0 * k2v[k] + 2.0 * k3v[k] + k4v[k]);
        }
        Ok((x1, v1, k4v, in_step))
    }

    /// Advances one Picard window of length at most `t_step`, appending the
    /// grid nodes as knots.
    fn picard_advance(&mut self, target: f64) -> Result<()> {
        let mut p = self
            .cfg
            .picard
            .clone()
            .ok_or_else(|| Error::Usage("picard_steps scheme needs a PicardConfig".into()))?;
        p.t_step = p.t_step.min(target - self.t);
        let sol = picard_window(&self.cfg, &p, &self.histories)?;
        self.report.max_residual = self.report.max_residual.max(sol.residual);
        let d = self.d;
        let t_start = self.t;
        for (i, hist) in self.histories.iter_mut().enumerate() {
            hist.set_last_acceleration(&sol.accelerations[0][i * d..(i + 1) * d]);
        }
        for k in 1..sol.times.len() {
            let t = if k + 1 == sol.times.len() {
                t_start + p.t_step
            } else {
                sol.times[k]
            };
            for (i, hist) in self.histories.iter_mut().enumerate() {
                let r = i * d..(i + 1) * d;
                hist.append_with_acceleration(
                    t,
                    &sol.positions[k][r.clone()],
                    &sol.velocities[k][r.clone()],
                    &sol.accelerations[k][r],
                )?;
            }
            self.t = t;
            self.x = sol.positions[k].clone();
            self.v = sol.velocities[k].clone();
            self.report.steps += 1;
            self.refresh_knot()?;
        }
        Ok(())
    }
}

/// Runs `cfg.horizon` worth of dynamics, sampling diagnostics on the base grid.
pub fn simulate(cfg: &SimConfig, init: &InitialData) -> Result<SimOutput> {
    let start = Instant::now();
    let mut sim = Simulation::new(cfg, init)?;
    let mut series = DiagnosticsSeries::default();
    series.push(observe(&sim.state(), &sim.delays()?, &cfg.kernel)?);

    match cfg.scheme {
        Scheme::Rk4Predicted => {
            let n_steps = if cfg.horizon == 0.0 {
                0
            } else {
                (cfg.horizon / cfg.dt - 1e-9).ceil() as usize
            };
            for k in 1..=n_steps {
                let target = if k == n_steps { cfg.horizon } else { k as f64 * cfg.dt };
                sim.advance_to(target)?;
                if k % cfg.sample_every == 0 || k == n_steps {
                    series.push(observe(&sim.state(), &sim.delays()?, &cfg.kernel)?);
                }
            }
        }
        Scheme::PicardSteps => {
            let mut windows = 0;
            while sim.time() < cfg.horizon * (1.0 - 1e-12) {
                sim.picard_advance(cfg.horizon)?;
                windows += 1;
                if windows % cfg.sample_every == 0 || sim.time() >= cfg.horizon * (1.0 - 1e-12) {
                    series.push(observe(&sim.state(), &sim.delays()?, &cfg.kernel)?);
                }
            }
        }
    }

    Ok(SimOutput {
        series,
        histories: sim.histories()?,
        final_state: sim.state(),
        invariants: sim.report().clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{solve_picard, Normalization, PicardConfig};
    use crate::history::InitialPath;
    use crate::influence::InfluenceFunction;

    fn cv(x0: &[f64], v0: &[f64]) -> InitialPath {
        InitialPath::ConstantVelocity {
            x0: x0.to_vec(),
            v0: v0.to_vec(),
        }
    }

    fn symmetric_pair() -> InitialData {
        InitialData::new(vec![cv(&[-1.0], &[0.1]), cv(&[1.0], &[-0.1])])
    }

    #[test]
    fn equilibrium_run_is_linear() {
        let v = [0.25, -0.5];
        let init = InitialData::new(vec![cv(&[0.0, 0.0], &v), cv(&[1.0, 2.0], &v), cv(&[-3.0, 0.5], &v)]);
        let cfg = SimConfig::new(4.0, 0.75, InfluenceFunction::power_law(0.3).unwrap(), 0.125, 2.0);
        let out = simulate(&cfg, &init).unwrap();
        assert_eq!(out.series.len(), 17);
        assert!(out.series.samples.iter().all(|s| s.dv == 0.0 && s.d == 0.0));
        for (i, p) in init.paths.iter().enumerate() {
            for a in 0..2 {
                assert!((out.final_state.velocity(i)[a] - v[a]).abs() < 1e-14);
                let expect = p.position_at_zero()[a] + 2.0 * v[a];
                assert!((out.final_state.position(i)[a] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn single_agent_free_flight() {
        let init = InitialData::new(vec![cv(&[1.0, 2.0, 3.0], &[0.5, 0.0, -0.25])]);
        let cfg = SimConfig::new(2.0, 1.0, InfluenceFunction::constant(1.0).unwrap(), 0.1, 0.1);
        let out = simulate(&cfg, &init).unwrap();
        assert_eq!(out.final_state.x, vec![1.05, 2.0, 2.975]);
        assert_eq!(out.final_state.v, vec![0.5, 0.0, -0.25]);
    }

    #[test]
    fn horizon_zero_returns_initial_diagnostics() {
        let cfg = SimConfig::new(10.0, 0.1, InfluenceFunction::constant(1.0).unwrap(), 0.01, 0.0);
        let out = simulate(&cfg, &symmetric_pair()).unwrap();
        assert_eq!(out.series.len(), 1);
        let s = out.series.samples[0];
        assert_eq!((s.t, s.dx, s.dv, s.d), (0.0, 2.0, 0.2, 0.0));
        assert_eq!(out.invariants.steps, 0);
    }

    fn one_step_v1(h: f64, steps: usize) -> f64 {
        let cfg = SimConfig::new(
            10.0,
            0.1,
            InfluenceFunction::constant(1.0).unwrap(),
            h,
            h * steps as f64,
        );
        simulate(&cfg, &symmetric_pair()).unwrap().final_state.v[0]
    }

    #[test]
    fn two_agent_step_matches_richardson() {
        let dt = 1e-3;
        let coarse = one_step_v1(dt, 1);
        let half = one_step_v1(dt / 2.0, 2);
        let quarter = one_step_v1(dt / 4.0, 4);
        let reference = (16.0 * quarter - half) / 15.0;
        assert!((coarse - reference).abs() < 1e-15, "{}", coarse - reference);
        // a_1(0) = -0.2; a_1 drifts by O(dt) over the step
        assert!((coarse - (0.1 - 0.2 * dt)).abs() < dt * dt);
    }

    #[test]
    fn velocity_bound_abort_is_reported() {
        // RK4 on w' = -2w with h = 2 amplifies w by 5
        let init = InitialData::new(vec![cv(&[0.0], &[1.0]), cv(&[0.1], &[-1.0])]);
        let mut cfg = SimConfig::new(100.0, 1.0, InfluenceFunction::constant(1.0).unwrap(), 2.0, 4.0);
        cfg.propagation = Propagation::Instantaneous;
        let r = simulate(&cfg, &init);
        assert!(matches!(r, Err(Error::InvariantViolation(_))), "{r:?}");
    }

    #[test]
    fn large_c_approaches_classical_decay() {
        // N = 2, psi = 1, undelayed: dV(t) = dV(0) e^{-2t}
        let mut cfg = SimConfig::new(1e4, 0.1, InfluenceFunction::constant(1.0).unwrap(), 0.01, 2.0);
        cfg.sample_every = 10;
        let out = simulate(&cfg, &symmetric_pair()).unwrap();
        let mut prev = f64::INFINITY;
        for s in &out.series.samples {
            assert!(s.dv < prev);
            prev = s.dv;
            assert!((s.dv - 0.2 * (-2.0 * s.t).exp()).abs() < 1e-3);
        }
    }

    #[test]
    fn instantaneous_mode_matches_closed_form() {
        let mut cfg = SimConfig::new(1.0, 0.1, InfluenceFunction::constant(1.0).unwrap(), 0.01, 1.0);
        cfg.propagation = Propagation::Instantaneous;
        let out = simulate(&cfg, &symmetric_pair()).unwrap();
        assert!((out.final_state.v[0] - 0.1 * (-2.0f64).exp()).abs() < 1e-10);
        cfg.normalization = Normalization::MeanField;
        let out = simulate(&cfg, &symmetric_pair()).unwrap();
        assert!((out.final_state.v[0] - 0.1 * (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn translation_by_dyadic_offset_is_bit_exact() {
        let base = [
            cv(&[0.5, -1.25], &[0.25, 0.125]),
            cv(&[2.0, 0.75], &[-0.5, 0.25]),
            cv(&[-1.5, 1.0], &[0.0, -0.375]),
        ];
        let shift = [1024.0, -0.5];
        let moved: Vec<_> = base
            .iter()
            .map(|p| {
                cv(
                    &[p.position_at_zero()[0] + shift[0], p.position_at_zero()[1] + shift[1]],
                    match p {
                        InitialPath::ConstantVelocity { v0, .. } => v0,
                        _ => unreachable!(),
                    },
                )
            })
            .collect();
        let cfg = SimConfig::new(3.0, 0.75, InfluenceFunction::power_law(0.25).unwrap(), 0.05, 3.0);
        let a = simulate(&cfg, &InitialData::new(base.to_vec())).unwrap();
        let b = simulate(&cfg, &InitialData::new(moved)).unwrap();
        assert_eq!(a.final_state.v, b.final_state.v);
        for (ha, hb) in a.histories.iter().zip(&b.histories) {
            for k in 0..ha.knot_count() {
                assert_eq!(ha.knot_velocity(k), hb.knot_velocity(k));
                for q in 0..2 {
                    assert!((ha.knot_position(k)[q] + shift[q] - hb.knot_position(k)[q]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn picard_trivial_cases() {
        let v = [0.2];
        let init = vec![cv(&[0.0], &v), cv(&[1.0], &v)];
        let cfg = SimConfig::new(2.0, 0.5, InfluenceFunction::constant(1.0).unwrap(), 0.01, 1.0);
        let p = PicardConfig::new(1.0, 0.05);
        let sol = solve_picard(&cfg, &p, &init).unwrap();
        assert_eq!(sol.iterations, 1);
        let one = solve_picard(&cfg, &p, &init[..1]).unwrap();
        assert_eq!(one.iterations, 1);
        assert!(one.velocities.iter().all(|w| w == &vec![0.2]));
    }

    #[test]
    fn picard_rejects_large_window() {
        let cfg = SimConfig::new(2.0, 0.5, InfluenceFunction::constant(1.0).unwrap(), 0.01, 1.0);
        let p = PicardConfig::new(1.0, 0.5);
        let init = vec![cv(&[0.0], &[0.1])];
        assert!(matches!(solve_picard(&cfg, &p, &init), Err(Error::Config(_))));
    }

    #[test]
    fn picard_matches_rk4_on_symmetric_pair() {
        let cfg = SimConfig::new(10.0, 0.1, InfluenceFunction::constant(1.0).unwrap(), 0.05 / 63.0, 0.05);
        let p = PicardConfig::new(0.5, 0.05);
        let sol = solve_picard(&cfg, &p, &symmetric_pair().paths).unwrap();
        assert!(sol.max_empirical_factor <= sol.analytic_factor);
        let out = simulate(&cfg, &symmetric_pair()).unwrap();
        let h: f64 = 0.05 / 63.0;
        for (k, &t) in sol.times.iter().enumerate() {
            for i in 0..2 {
                let v = out.histories[i].eval_velocity(t).unwrap()[0];
                assert!((v - sol.velocities[k][i]).abs() <= 10.0 * (h * h + h.powi(4)));
            }
        }
    }

    #[test]
    fn picard_scheme_runs_windows() {
        let mut cfg = SimConfig::new(10.0, 0.1, InfluenceFunction::constant(1.0).unwrap(), 0.01, 0.2);
        cfg.scheme = Scheme::PicardSteps;
        cfg.picard = Some(PicardConfig::new(0.5, 0.05));
        let pic = simulate(&cfg, &symmetric_pair()).unwrap();
        cfg.scheme = Scheme::Rk4Predicted;
        let rk = simulate(&cfg, &symmetric_pair()).unwrap();
        assert_eq!(pic.series.len(), 5);
        assert!((pic.final_state.t - 0.2).abs() < 1e-12);
        assert!((pic.final_state.v[0] - rk.final_state.v[0]).abs() < 1e-6);
    }
}
