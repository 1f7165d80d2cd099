//! Atomic trajectory ensembles and the transport distance between them.
//!
//! An ensemble of `N` trajectories stands for the measure putting mass `1/N`
//! on each. Two trajectories are compared in the norm
//! `sup_{t <= T} |x - y| + sup_{0 <= t <= T} |x' - y'|`, and two ensembles by
//! the optimal transport cost for that ground cost, solved exactly as an
//! assignment problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, InitialData, InvariantReport, Normalization, SimConfig};
use crate::error::{Error, Result};
use crate::history::{sup_norm_diff, InitialPath, TrajectoryHistory};
use crate::linalg::{dist, norm};

/// Tolerance of the Lipschitz membership checks on simulated atoms.
pub const MEMBERSHIP_SLACK: f64 = 1e-6;

/// Largest replicated assignment size accepted by [`mkr_distance`].
pub const MAX_ASSIGNMENT: usize = 2048;

#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    atoms: Vec<TrajectoryHistory>,
    horizon: f64,
    init_window: f64,
}

impl TrajectoryEnsemble {
    /// Wraps histories that cover `[-init_window, horizon]`.
    pub fn new(atoms: Vec<TrajectoryHistory>, horizon: f64, init_window: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Usage("an ensemble needs at least one atom".into()));
        }
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(Error::Parameter(format!(
                "ensemble horizon must be finite and >= 0, got {horizon}"
            )));
        }
        if !(init_window.is_finite() && init_window >= 0.0) {
            return Err(Error::Parameter(format!(
                "initial window must be finite and >= 0, got {init_window}"
            )));
        }
        let d = atoms[0].dim();
        for (k, h) in atoms.iter().enumerate() {
            if h.dim() != d {
                return Err(Error::Usage(format!(
                    "atom {k} has dimension {} instead of {d}",
                    h.dim()
                )));
            }
            if h.t_now() < horizon * (1.0 - 1e-12) {
                return Err(Error::Usage(format!(
                    "atom {k} ends at {} before the horizon {horizon}",
                    h.t_now()
                )));
            }
            if let Some(w) = h.init_window() {
                if w < init_window {
                    return Err(Error::Usage(format!("atom {k} is only known on [-{w}, 0]")));
                }
            }
            let (pos, vel) = h.lipschitz_excess();
            if pos > MEMBERSHIP_SLACK || vel > MEMBERSHIP_SLACK {
                return Err(Error::InvariantViolation(format!(
                    "atom {k} leaves the trajectory space: Lipschitz excess {pos:.3e} (position), {vel:.3e} (velocity)"
                )));
            }
        }
        Ok(Self {
            atoms,
            horizon,
            init_window,
        })
    }

    /// Ensemble of initial segments only (`horizon = 0`).
    pub fn initial(paths: &[InitialPath], s: f64, init_window: f64) -> Result<Self> {
        let atoms = paths
            .iter()
            .map(|p| TrajectoryHistory::new(p.clone(), s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms, 0.0, init_window)
    }

    pub fn atoms(&self) -> &[TrajectoryHistory] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn init_window(&self) -> f64 {
        self.init_window
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn initial_paths(&self) -> Vec<InitialPath> {
        self.atoms.iter().map(|h| h.initial_path().clone()).collect()
    }

    /// Every atom repeated `k` times; the same measure.
    pub fn replicated(&self, k: usize) -> Self {
        let mut atoms = Vec::with_capacity(self.atoms.len() * k);
        for h in &self.atoms {
            for _ in 0..k {
                atoms.push(h.clone());
            }
        }
        Self { atoms, ..self.clone() }
    }

    /// Runs the particle system whose agents are the atoms up to `cfg.horizon`.
    pub fn evolve(&self, cfg: &SimConfig) -> Result<(TrajectoryEnsemble, InvariantReport)> {
        let mut cfg = cfg.clone();
        cfg.prune = false;
        let out = simulate(&cfg, &InitialData::new(self.initial_paths()))?;
        let ens = Self::new(out.histories, cfg.horizon, self.init_window)?;
        Ok((ens, out.invariants))
    }
}

/// Distance between atom `i` of `e1` and atom `j` of `e2`; `f64::INFINITY`
/// when their constant-velocity tails move apart.
pub fn ensemble_norm_distance(e1: &TrajectoryEnsemble, e2: &TrajectoryEnsemble, i: usize, j: usize) -> Result<f64> {
    Ok(ensemble_norm_with_error(e1, e2, i, j)?.0)
}

/// As [`ensemble_norm_distance`], paired with the sampling error bound: the
/// exact value lies in `[value, value + err]`.
pub fn ensemble_norm_with_error(
    e1: &TrajectoryEnsemble,
    e2: &TrajectoryEnsemble,
    i: usize,
    j: usize,
) -> Result<(f64, f64)> {
    let t = e1.horizon;
    if (e1.horizon - e2.horizon).abs() > 1e-12 * t.max(1.0) {
        return Err(Error::Usage(format!(
            "ensembles have different horizons {} and {}",
            e1.horizon, e2.horizon
        )));
    }
    let (h1, h2) = match (e1.atoms.get(i), e2.atoms.get(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Usage(format!(
                "atom pair ({i}, {j}) out of range for ensembles of sizes {} and {}",
                e1.len(),
                e2.len()
            )))
        }
    };
    if h1.dim() != h2.dim() {
        return Err(Error::Usage("ensembles have different dimensions".into()));
    }
    if dist(h1.tail_velocity(), h2.tail_velocity()) > 0.0 {
        return Ok((f64::INFINITY, 0.0));
    }
    let s = e1.init_window.max(e2.init_window);
    let t_lo = (-s).min(h1.tail_start()).min(h2.tail_start());
    let d = sup_norm_diff(h1, h2, t_lo, t)?;
    Ok((d.pos_sup + d.vel_sup, d.pos_err + d.vel_err))
}

/// Row-major `e1.len() x e2.len()` matrix of [`ensemble_norm_distance`].
pub fn cost_matrix(e1: &TrajectoryEnsemble, e2: &TrajectoryEnsemble) -> Result<Vec<f64>> {
    let m = e2.len();
    (0..e1.len() * m)
        .into_par_iter()
        .map(|k| ensemble_norm_distance(e1, e2, k / m, k % m))
        .collect()
}

/// Transport distance between the equal-weight measures of two ensembles.
pub fn mkr_distance(e1: &TrajectoryEnsemble, e2: &TrajectoryEnsemble) -> Result<f64> {
    let costs = cost_matrix(e1, e2)?;
    mkr_from_costs(&costs, e1.len(), e2.len())
}

/// Optimal transport cost between uniform measures on `n` and `m` points
/// with ground costs `costs` (row-major `n x m`).
pub fn mkr_from_costs(costs: &[f64], n: usize, m: usize) -> Result<f64> {
    if n == 0 || m == 0 || costs.len() != n * m {
        return Err(Error::Usage(format!(
            "cost matrix of length {} is not {n} x {m}",
            costs.len()
        )));
    }
    for (k, c) in costs.iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::Domain(format!(
                "atoms {} and {} are at infinite distance (initial velocity tails differ)",
                k / m,
                k % m
            )));
        }
    }
    let l = lcm(n, m);
    if l > MAX_ASSIGNMENT {
        return Err(Error::Usage(format!(
            "replicated assignment size lcm({n}, {m}) = {l} exceeds {MAX_ASSIGNMENT}"
        )));
    }
    let (rn, rm) = (l / n, l / m);
    let mut big = vec![0.0; l * l];
    for a in 0..l {
        for b in 0..l {
            big[a * l + b] = costs[(a / rn) * m + b / rm];
        }
    }
    let (_, total) = hungarian(&big, l);
    Ok(total / l as f64)
}

/// Minimum-cost perfect matching on a square `n x n` cost matrix in
/// `O(n^3)`. Returns the column of each row and the total cost.
pub fn hungarian(costs: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(costs.len(), n * n, "cost matrix must be square");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[col] = row matched to col (1-based, 0 = free); way = predecessor column.
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = costs[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| costs[i * n + j]).sum();
    (assign, total)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositionLaw {
    Point { x: Vec<f64> },
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
}

/// Draws are projected radially onto `|v| <= s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityLaw {
    Point {
        v: Vec<f64>,
    },
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    UniformBall {
        center: Vec<f64>,
        radius: f64,
    },
    /// `v = offset + gain * x`, a law carried by a curve in phase space.
    Affine {
        offset: Vec<f64>,
        gain: f64,
    },
}

/// What each atom does before `t = 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailMode {
    /// Constant velocity `v_i` on all of `(-inf, 0]`.
    #[default]
    Constant,
    /// Velocity `velocity` up to `-S`, then linear to `v_i` at `t = 0`; all
    /// atoms are then at finite distance from each other.
    Shared { velocity: Vec<f64> },
}

/// How draws are generated from the seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent draws from a ChaCha8 stream.
    #[default]
    Iid,
    /// Halton sequence with a seeded random shift modulo 1; positions use
    /// the first primes, velocities the next ones.
    Halton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialLaw {
    pub position: PositionLaw,
    pub velocity: VelocityLaw,
    #[serde(default)]
    pub tail: TailMode,
    #[serde(default)]
    pub sampling: Sampling,
    pub s: f64,
    /// `S`: length of the initial window `[-S, 0]`.
    pub window: f64,
    pub seed: u64,
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match &self.position {
            PositionLaw::Point { x } => x.len(),
            PositionLaw::UniformBox { lo, .. } => lo.len(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.dim();
        if d == 0 {
            out.push("position law has dimension 0".into());
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            out.push(format!("speed bound s must be finite and > 0 (got {})", self.s));
        }
        if !(self.window.is_finite() && self.window > 0.0) {
            out.push(format!("initial window must be finite and > 0 (got {})", self.window));
        }
        match &self.position {
            PositionLaw::Point { x } => {
                if !x.iter().all(|a| a.is_finite()) {
                    out.push("position point must be finite".into());
                }
            }
            PositionLaw::UniformBox { lo, hi } => check_box(&mut out, "position", lo, hi, d),
        }
        match &self.velocity {
            VelocityLaw::Point { v } => {
                if v.len() != d {
                    out.push(format!("velocity point has dimension {} instead of {d}", v.len()));
                } else if !(norm(v) <= self.s) {
                    out.push(format!("velocity point has speed {} > s = {}", norm(v), self.s));
                }
            }
            VelocityLaw::UniformBox { lo, hi } => check_box(&mut out, "velocity", lo, hi, d),
            VelocityLaw::UniformBall { center, radius } => {
                if center.len() != d {
                    out.push(format!(
                        "velocity ball center has dimension {} instead of {d}",
                        center.len()
                    ));
                }
                if !(radius.is_finite() && *radius >= 0.0) || !center.iter().all(|a| a.is_finite()) {
                    out.push("velocity ball needs a finite center and radius >= 0".into());
                }
            }
            VelocityLaw::Affine { offset, gain } => {
                if offset.len() != d {
                    out.push(format!("velocity offset has dimension {} instead of {d}", offset.len()));
                }
                if !gain.is_finite() || !offset.iter().all(|a| a.is_finite()) {
                    out.push("affine velocity law needs finite offset and gain".into());
                }
            }
        }
        if let TailMode::Shared { velocity } = &self.tail {
            if velocity.len() != d {
                out.push(format!("tail velocity has dimension {} instead of {d}", velocity.len()));
            } else if !(norm(velocity) <= self.s) {
                out.push(format!("tail velocity has speed {} > s = {}", norm(velocity), self.s));
            }
        }
        out
    }

    /// `n` initial paths. Draws are sequential from one seeded stream, so the
    /// first `n` paths of a larger sample are this sample.
    pub fn sample_paths(&self, n: usize) -> Result<Vec<InitialPath>> {
        let errs = self.violations();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let d = self.dim();
        let mut source = Source::new(self.sampling, self.seed, 2 * d)?;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let u = source.next_point();
            let (ux, uv) = u.split_at(d);
            let x = match &self.position {
                PositionLaw::Point { x } => x.clone(),
                PositionLaw::UniformBox { lo, hi } => scale_box(ux, lo, hi),
            };
            let raw = match &self.velocity {
                VelocityLaw::Point { v } => v.clone(),
                VelocityLaw::UniformBox { lo, hi } => scale_box(uv, lo, hi),
                VelocityLaw::UniformBall { center, radius } => {
                    let e: Vec<f64> = uv.iter().map(|a| 2.0 * a - 1.0).collect();
                    if norm(&e) > 1.0 {
                        continue;
                    }
                    center.iter().zip(&e).map(|(c, e)| c + radius * e).collect()
                }
                VelocityLaw::Affine { offset, gain } => offset.iter().zip(&x).map(|(o, x)| o + gain * x).collect(),
            };
            let v = project_speed(raw, self.s);
            out.push(match &self.tail {
                TailMode::Constant => InitialPath::ConstantVelocity { x0: x, v0: v },
                TailMode::Shared { velocity } => InitialPath::PiecewiseLinearVelocity {
                    knots: vec![(-self.window, velocity.clone()), (0.0, v)],
                    x0_at_zero: x,
                },
            });
        }
        Ok(out)
    }
}

fn check_box(out: &mut Vec<String>, what: &str, lo: &[f64], hi: &[f64], d: usize) {
    if lo.len() != d || hi.len() != d {
        out.push(format!(
            "{what} box has dimension {}/{} instead of {d}",
            lo.len(),
            hi.len()
        ));
    } else if lo
        .iter()
        .zip(hi)
        .any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b))
    {
        out.push(format!("{what} box needs finite lo <= hi"));
    }
}

const HALTON_PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Points of the unit cube, one per atom candidate.
enum Source {
    Iid { rng: Box<ChaCha8Rng>, dim: usize },
    Halton { index: u64, shift: Vec<f64> },
}

impl Source {
    fn new(sampling: Sampling, seed: u64, dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match sampling {
            Sampling::Iid => Source::Iid {
                rng: Box::new(rng),
                dim,
            },
            Sampling::Halton => {
                if dim > HALTON_PRIMES.len() {
                    return Err(Error::Usage(format!(
                        "Halton sampling supports up to {} spatial dimensions",
                        HALTON_PRIMES.len() / 2
                    )));
                }
                Source::Halton {
                    index: 0,
                    shift: (0..dim).map(|_| rng.gen::<f64>()).collect(),
                }
            }
        })
    }

    fn next_point(&mut self) -> Vec<f64> {
        match self {
            Source::Iid { rng, dim } => (0..*dim).map(|_| rng.gen::<f64>()).collect(),
            Source::Halton { index, shift } => {
                *index += 1;
                shift
                    .iter()
                    .zip(HALTON_PRIMES)
                    .map(|(s, p)| (radical_inverse(*index, p) + s).fract())
                    .collect()
            }
        }
    }
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while k > 0 {
        out += f * (k % base) as f64;
        k /= base;
        f *= inv;
    }
    out
}

fn scale_box(u: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(lo.iter().zip(hi))
        .map(|(t, (a, b))| a + t * (b - a))
        .collect()
}

fn unit_ball(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if norm(&p) <= 1.0 {
            return p;
        }
    }
}

fn project_speed(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    let r = norm(&v);
    if r > s {
        let f = s / r;
        v.iter_mut().for_each(|a| *a *= f);
        while norm(&v) > s {
            v.iter_mut().for_each(|a| *a *= 1.0 - f64::EPSILON);
        }
    }
    v
}

/// Initial ensemble of `n` atoms drawn from `law`.
pub fn sample_initial_ensemble(law: &InitialLaw, n: usize) -> Result<TrajectoryEnsemble> {
    if n == 0 {
        return Err(Error::Usage("ensemble size must be >= 1".into()));
    }
    TrajectoryEnsemble::initial(&law.sample_paths(n)?, law.s, law.window)
}

/// `cfg` with the `1/N` prefactor when `meanfield_rescale` is set, the
/// particle prefactor `1/(N-1)` otherwise.
pub fn study_config(cfg: &SimConfig, meanfield_rescale: bool) -> SimConfig {
    let mut c = cfg.clone();
    c.normalization = if meanfield_rescale {
        Normalization::MeanField
    } else {
        Normalization::PairCount
    };
    c
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub n_next: usize,
    pub w0: f64,
    pub wt: f64,
    /// `wt / w0`, absent when `w0 = 0`.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationRow {
    pub delta: f64,
    pub w0: f64,
    pub wt: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Study<R> {
    pub rows: Vec<R>,
    pub reports: Vec<InvariantReport>,
}

fn ratio(wt: f64, w0: f64) -> Option<f64> {
    (w0 > 0.0).then(|| wt / w0)
}

/// Distances between consecutive nested ensembles, at `t = 0` and at
/// `cfg.horizon`.
pub fn particle_convergence_study(
    law: &InitialLaw,
    n_list: &[usize],
    cfg: &SimConfig,
    meanfield_rescale: bool,
) -> Result<Study<ConvergenceRow>> {
    if n_list.len() < 2 || n_list[0] == 0 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage(format!(
            "N list must hold at least two strictly increasing sizes >= 1, got {n_list:?}"
        )));
    }
    let cfg = study_config(cfg, meanfield_rescale);
    let all = law.sample_paths(*n_list.last().unwrap())?;
    let initial = n_list
        .iter()
        .map(|&n| TrajectoryEnsemble::initial(&all[..n], law.s, law.window))
        .collect::<Result<Vec<_>>>()?;
    let evolved = initial.par_iter().map(|e| e.evolve(&cfg)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(n_list.len() - 1);
    for k in 0..n_list.len() - 1 {
        let w0 = mkr_distance(&initial[k], &initial[k + 1])?;
        let wt = mkr_distance(&evolved[k].0, &evolved[k + 1].0)?;
        rows.push(ConvergenceRow {
            n: n_list[k],
            n_next: n_list[k + 1],
            w0,
            wt,
            ratio: ratio(wt, w0),
        });
    }
    Ok(Study {
        rows,
        reports: evolved.into_iter().map(|(_, r)| r).collect(),
    })
}

/// Compares an `n`-atom ensemble with copies whose positions are moved by
/// `delta` along seeded random unit directions, one per atom.
pub fn perturbation_study(
    law: &InitialLaw,
    n: usize,
    deltas: &[f64],
    cfg: &SimConfig,
    meanfield_rescale: bool,
) -> Result<Study<PerturbationRow>> {
    if n == 0 {
        return Err(Error::Usage("ensemble size must be >= 1".into()));
    }
    if let Some(d) = deltas.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::Usage(format!(
            "perturbation size must be finite and >= 0, got {d}"
        )));
    }
    let cfg = study_config(cfg, meanfield_rescale);
    let base_paths = law.sample_paths(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(law.seed ^ 0x5eed_5eed_5eed_5eed);
    let dirs: Vec<Vec<f64>> = (0..n)
        .map(|_| loop {
            let u = unit_ball(&mut rng, law.dim());
            let r = norm(&u);
            if r > 1e-3 {
                break u.iter().map(|a| a / r).collect();
            }
        })
        .collect();
    let base0 = TrajectoryEnsemble::initial(&base_paths, law.s, law.window)?;
    let perturbed0 = deltas
        .iter()
        .map(|&delta| {
            let paths: Vec<InitialPath> = base_paths
                .iter()
                .zip(&dirs)
                .map(|(p, u)| p.translated(&u.iter().map(|a| delta * a).collect::<Vec<_>>()))
                .collect();
            TrajectoryEnsemble::initial(&paths, law.s, law.window)
        })
        .collect::<Result<Vec<_>>>()?;
    let (base_t, base_report) = base0.evolve(&cfg)?;
    let evolved = perturbed0
        .par_iter()
        .map(|e| e.evolve(&cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(deltas.len());
    let mut reports = vec![base_report];
    for ((delta, p0), (pt, report)) in deltas.iter().zip(&perturbed0).zip(evolved) {
        let w0 = mkr_distance(&base0, p0)?;
        let wt = mkr_distance(&base_t, &pt)?;
        rows.push(PerturbationRow {
            delta: *delta,
            w0,
            wt,
            ratio: ratio(wt, w0),
        });
        reports.push(report);
    }
    Ok(Study { rows, reports })
}
