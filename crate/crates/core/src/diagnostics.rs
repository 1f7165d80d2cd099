//! Flocking observables along a run and checks of the decay estimates.

use std::io::Write;

use serde::Serialize;

use crate::delay::DelayMatrix;
use crate::dynamics::SimState;
use crate::error::{Error, Result};
use crate::history::fmt17;
use crate::influence::InfluenceFunction;
use crate::linalg::{diameter, dist, norm};

/// One row of the diagnostics series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    /// Spatial diameter `max |x_i - x_j|`.
    pub dx: f64,
    /// Velocity diameter `max |v_i - v_j|`.
    pub dv: f64,
    /// Velocity radius `max |v_i|`.
    pub rv: f64,
    /// `max_i 1/(N-1) sum_{j != i} psi~_ij |v~_j^i - v_j(t)|`.
    pub d: f64,
    /// Largest delay.
    pub taubar: f64,
    /// Smallest communication rate `psi~_ij` (diagonal included).
    pub psibar: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DiagnosticsSeries {
    pub samples: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Dx,
    Dv,
    Rv,
    D,
    Taubar,
    Psibar,
}

impl Sample {
    pub fn get(&self, f: Field) -> f64 {
        match f {
            Field::Dx => self.dx,
            Field::Dv => self.dv,
            Field::Rv => self.rv,
            Field::D => self.d,
            Field::Taubar => self.taubar,
            Field::Psibar => self.psibar,
        }
    }
}

impl DiagnosticsSeries {
    pub fn push(&mut self, s: Sample) {
        self.samples.push(s);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn column(&self, f: Field) -> Vec<f64> {
        self.samples.iter().map(|s| s.get(f)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,dX,dV,Rv,D,taubar,psibar")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt17(s.t),
                fmt17(s.dx),
                fmt17(s.dv),
                fmt17(s.rv),
                fmt17(s.d),
                fmt17(s.taubar),
                fmt17(s.psibar)
            )?;
        }
        Ok(())
    }
}

/// Diagnostics row for `state` given the pairwise delays at `state.t`.
pub fn observe(state: &SimState, delays: &DelayMatrix, kernel: &InfluenceFunction) -> Result<Sample> {
    let n = state.n();
    if delays.n != n {
        return Err(Error::Usage(format!(
            "delay matrix is {}x{} for {n} agents",
            delays.n, delays.n
        )));
    }
    let mut d_max: f64 = 0.0;
    let mut psibar: f64 = 1.0;
    let mut taubar: f64 = 0.0;
    for i in 0..n {
        let xi = state.position(i);
        let mut acc = 0.0;
        for j in 0..n {
            let smp = delays.get(i, j);
            let w = kernel.eval(dist(&smp.x_ret, xi))?;
            psibar = psibar.min(w);
            taubar = taubar.max(smp.tau);
            if j != i {
                acc += w * dist(&smp.v_ret, state.velocity(j));
            }
        }
        if n > 1 {
            d_max = d_max.max(acc / (n as f64 - 1.0));
        }
    }
    Ok(Sample {
        t: state.t,
        dx: diameter(&state.x, state.dim),
        dv: diameter(&state.v, state.dim),
        rv: state.v.chunks(state.dim).map(norm).fold(0.0, f64::max),
        d: d_max,
        taubar,
        psibar,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub holds: bool,
    pub first_violation: Option<f64>,
    /// Which bound failed first: `"dV"`, `"D"` or `"dX"`.
    pub violated: Option<&'static str>,
    /// Largest `dV / (sigma e^{-eta t})` over the series.
    pub max_dv_ratio: f64,
    pub max_d_ratio: f64,
    /// Largest `dX - (dX(0) + sigma / eta)`.
    pub max_dx_excess: f64,
}

/// Checks `dV(t) < sigma e^{-eta t}`, `D(t) < kappa e^{-eta t}` and
/// `dX(t) < dX(0) + sigma / eta` at every sample, each relaxed by `slack`.
pub fn check_decay(series: &DiagnosticsSeries, eta: f64, sigma: f64, kappa: f64, slack: f64) -> Result<DecayReport> {
    let first = series
        .first()
        .ok_or_else(|| Error::Usage("empty diagnostics series".into()))?;
    if !(eta > 0.0) {
        return Err(Error::Usage(format!("eta must be > 0 (got {eta})")));
    }
    if !(sigma > first.dv) {
        return Err(Error::Usage(format!(
            "sigma = {sigma} must exceed dV(0) = {}",
            first.dv
        )));
    }
    if !(kappa > first.d) {
        return Err(Error::Usage(format!("kappa = {kappa} must exceed D(0) = {}", first.d)));
    }
    let dx_bound = first.dx + sigma / eta;
    let mut rep = DecayReport {
        holds: true,
        first_violation: None,
        violated: None,
        max_dv_ratio: 0.0,
        max_d_ratio: 0.0,
        max_dx_excess: f64::NEG_INFINITY,
    };
    for s in &series.samples {
        let decay = (-eta * (s.t - first.t)).exp();
        rep.max_dv_ratio = rep.max_dv_ratio.max(s.dv / (sigma * decay));
        rep.max_d_ratio = rep.max_d_ratio.max(s.d / (kappa * decay));
        rep.max_dx_excess = rep.max_dx_excess.max(s.dx - dx_bound);
        let failed = if !(s.dv < sigma * decay + slack) {
            Some("dV")
        } else if !(s.d < kappa * decay + slack) {
            Some("D")
        } else if !(s.dx < dx_bound + slack) {
            Some("dX")
        } else {
            None
        };
        if failed.is_some() && rep.holds {
            rep.holds = false;
            rep.first_violation = Some(s.t);
            rep.violated = failed;
        }
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// Slope of `log(field)` against `t`.
    pub rate: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Least-squares fit of `log(field)` on samples where the field exceeds
/// `1e-12`; `None` with fewer than 10 such samples.
pub fn fit_decay_rate(series: &DiagnosticsSeries, field: Field) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = series
        .samples
        .iter()
        .filter(|s| s.get(field) > 1e-12)
        .map(|s| (s.t, s.get(field).ln()))
        .collect();
    if pts.len() < 10 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    let rate = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { (sty * sty) / (stt * syy) };
    Some(DecayFit {
        rate,
        r_squared,
        samples: pts.len(),
    })
}

/// Worst excess of a sampled inequality and where it occurs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub max_excess: f64,
    pub at: f64,
    pub checked: usize,
}

impl InequalityCheck {
    fn new() -> Self {
        Self {
            max_excess: f64::NEG_INFINITY,
            at: f64::NAN,
            checked: 0,
        }
    }

    fn record(&mut self, t: f64, excess: f64) {
        self.checked += 1;
        if excess > self.max_excess {
            self.max_excess = excess;
            self.at = t;
        }
    }
}

/// Forward-difference form of the shrinkage inequality
/// `dV' <= -(N/(N-1)) psibar dV + 2 D`; excess is LHS minus RHS.
pub fn shrinkage_check(series: &DiagnosticsSeries, n_agents: usize) -> InequalityCheck {
    let mut out = InequalityCheck::new();
    if n_agents < 2 {
        return out;
    }
    let f = n_agents as f64 / (n_agents as f64 - 1.0);
    for w in series.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let slope = (b.dv - a.dv) / (b.t - a.t);
        out.record(a.t, slope - (-f * a.psibar * a.dv + 2.0 * a.d));
    }
    out
}

/// Trapezoid integral of piecewise-linear sample data over `[lo, hi]`.
fn integrate(ts: &[f64], ys: &[f64], lo: f64, hi: f64) -> f64 {
    let lerp = |t: f64| -> f64 {
        let k = ts.partition_point(|&s| s <= t).clamp(1, ts.len() - 1);
        let (t0, t1) = (ts[k - 1], ts[k]);
        ys[k - 1] + (t - t0) / (t1 - t0) * (ys[k] - ys[k - 1])
    };
    if hi <= lo || ts.len() < 2 {
        return 0.0;
    }
    let mut pts = vec![(lo, lerp(lo))];
    for (k, &t) in ts.iter().enumerate() {
        if t > lo && t < hi {
            pts.push((t, ys[k]));
        }
    }
    pts.push((hi, lerp(hi)));
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// `D(t) <= L_v0 [t - taubar]^- + int_{[t - taubar]^+}^t (D + dV)`; excess is
/// LHS minus RHS, with the integral taken by trapezoid on the sample grid.
pub fn d_integral_check(series: &DiagnosticsSeries, l_v0: f64) -> InequalityCheck {
    let ts = series.column(Field::Dv).len();
    let mut out = InequalityCheck::new();
    if ts == 0 {
        return out;
    }
    let t0 = series.samples[0].t;
    let times: Vec<f64> = series.samples.iter().map(|s| s.t - t0).collect();
    let sum: Vec<f64> = series.samples.iter().map(|s| s.d + s.dv).collect();
    for (k, s) in series.samples.iter().enumerate() {
        let t = times[k];
        let lo = t - s.taubar;
        let rhs = l_v0 * (-lo).max(0.0) + integrate(&times, &sum, lo.max(0.0), t);
        out.record(s.t, s.d - rhs);
    }
    out
}

/// `dX(t) <= dX(0) + int_0^t dV`; excess is LHS minus RHS.
pub fn diameter_check(series: &DiagnosticsSeries) -> InequalityCheck {
    let mut out = InequalityCheck::new();
    let Some(first) = series.first() else {
        return out;
    };
    let mut integral = 0.0;
    out.record(first.t, 0.0);
    for w in series.samples.windows(2) {
        integral += 0.5 * (w[1].t - w[0].t) * (w[0].dv + w[1].dv);
        out.record(w[1].t, w[1].dx - (first.dx + integral));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::RetardedSample;

    fn sample(t: f64, dv: f64, d: f64) -> Sample {
        Sample {
            t,
            dx: 1.0,
            dv,
            rv: dv,
            d,
            taubar: 0.0,
            psibar: 1.0,
        }
    }

    fn instantaneous(state: &SimState) -> DelayMatrix {
        let n = state.n();
        let samples = (0..n * n)
            .map(|k| RetardedSample {
                tau: 0.0,
                x_ret: state.position(k % n).to_vec(),
                v_ret: state.velocity(k % n).to_vec(),
                residual: 0.0,
                iterations: 0,
            })
            .collect();
        DelayMatrix { n, samples }
    }

    #[test]
    fn observe_direct_maxima() {
        let st = SimState {
            t: 0.0,
            dim: 2,
            x: vec![0.0, 0.0, 3.0, 4.0],
            v: vec![1.0, 0.0, -1.0, 0.0],
        };
        let k = InfluenceFunction::constant(1.0).unwrap();
        let s = observe(&st, &instantaneous(&st), &k).unwrap();
        assert_eq!((s.dx, s.dv, s.rv, s.d), (5.0, 2.0, 1.0, 0.0));
        assert_eq!(s.psibar, 1.0);
    }

    #[test]
    fn observe_equilibrium_and_delayed_velocity_gap() {
        let st = SimState {
            t: 1.0,
            dim: 1,
            x: vec![0.0, 2.0],
            v: vec![0.5, 0.5],
        };
        let k = InfluenceFunction::power_law(0.5).unwrap();
        let mut m = instantaneous(&st);
        let s = observe(&st, &m, &k).unwrap();
        assert_eq!((s.dv, s.d), (0.0, 0.0));
        m.samples[1].v_ret = vec![0.25];
        m.samples[1].x_ret = vec![1.0];
        m.samples[1].tau = 1.0 / 3.0;
        let s = observe(&st, &m, &k).unwrap();
        let w = 0.5f64.sqrt();
        assert!((s.d - w * 0.25).abs() < 1e-15);
        assert!((s.psibar - 0.2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.taubar, 1.0 / 3.0);
    }

    #[test]
    fn decay_boundary_is_a_violation() {
        let eta: f64 = 0.5;
        let sigma = 2.0;
        let t0 = 1.5;
        let mut ser = DiagnosticsSeries::default();
        ser.push(sample(0.0, 1.0, 0.0));
        ser.push(sample(t0, sigma * (-eta * t0).exp(), 0.0));
        ser.push(sample(3.0, 0.0, 0.0));
        let r = check_decay(&ser, eta, sigma, 0.1, 0.0).unwrap();
        assert!(!r.holds);
        assert_eq!(r.first_violation, Some(t0));
        assert_eq!(r.violated, Some("dV"));
    }

    #[test]
    fn decay_equilibrium_holds_and_preconditions() {
        let mut ser = DiagnosticsSeries::default();
        for k in 0..5 {
            ser.push(sample(k as f64, 0.0, 0.0));
        }
        assert!(check_decay(&ser, 1.0, 0.1, 0.1, 0.0).unwrap().holds);
        assert!(matches!(check_decay(&ser, 1.0, 0.0, 0.1, 0.0), Err(Error::Usage(_))));
        assert!(matches!(check_decay(&ser, 1.0, 0.1, 0.0, 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn decay_fit_exact_and_constant() {
        let mut ser = DiagnosticsSeries::default();
        for k in 0..20 {
            let t = 0.5 * k as f64;
            ser.push(sample(t, 2.0 * (-0.5 * t).exp(), 0.3));
        }
        let f = fit_decay_rate(&ser, Field::Dv).unwrap();
        assert!((f.rate + 0.5).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        let g = fit_decay_rate(&ser, Field::D).unwrap();
        assert!(g.rate.abs() < 1e-15);
        ser.samples.truncate(9);
        assert!(fit_decay_rate(&ser, Field::Dv).is_none());
    }

    #[test]
    fn integral_checks_on_synthetic_series() {
        let mut ser = DiagnosticsSeries::default();
        for k in 0..=100 {
            let t = 0.01 * k as f64;
            ser.push(Sample {
                t,
                dx: 1.0 + t,
                dv: 1.0,
                rv: 0.5,
                d: 0.0,
                taubar: 0.0,
                psibar: 1.0,
            });
        }
        assert!(diameter_check(&ser).max_excess.abs() < 1e-12);
        assert!(d_integral_check(&ser, 0.0).max_excess <= 0.0);
        // dV' = 0 <= -2 * 1 * 1 + 0 fails by 2
        assert!((shrinkage_check(&ser, 2).max_excess - 2.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_partial_interval() {
        let ts = [0.0, 1.0, 2.0];
        let ys = [0.0, 1.0, 2.0];
        assert!((integrate(&ts, &ys, 0.5, 1.5) - 1.0).abs() < 1e-15);
        assert!((integrate(&ts, &ys, 0.0, 2.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn csv_header() {
        let mut ser = DiagnosticsSeries::default();
        ser.push(sample(0.0, 1.0, 0.0));
        let mut buf = Vec::new();
        ser.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,dX,dV,Rv,D,taubar,psibar\n0.0000000000000000e0,"));
    }
}
