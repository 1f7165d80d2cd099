//! Critical propagation speeds that guarantee exponential flocking.
//!
//! For decay rate `eta`, velocity envelope `sigma` and delay-error envelope
//! `kappa`, flocking `d_V < sigma e^{-eta t}`, `D < kappa e^{-eta t}` follows
//! at propagation speed `c` when, with `tau* = (d_X(0) + sigma/eta) / (c - s)`
//! and `psi* = Psi(c tau*)`,
//!
//! * (C1) `L_v0 tau* + (kappa + sigma) (e^{eta tau*} - 1) / eta <= kappa`,
//! * (C2) `2 kappa / (psi* - eta) <= sigma - d_V(0)` with `psi* > eta`.
//!
//! `Psi` is the nonincreasing rearrangement of the kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::InfluenceFunction;

/// Admissible range for `eta`.
pub const ETA_MIN: f64 = 1e-6;
pub const ETA_MAX: f64 = 1.0 - 1e-6;
/// Relative slack used when re-checking (C1)-(C2).
pub const REVALIDATION_SLACK: f64 = 1e-12;

const ETA_GRID: usize = 400;
const C_LOWER_FACTOR: f64 = 1.0 + 1e-6;
const C_SPAN: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EtaSearch {
    /// Maximizer of the margin, `None` when the margin is never positive.
    pub eta: Option<f64>,
    pub margin: f64,
    /// Maximizing grid point before refinement.
    pub grid_eta: f64,
}

/// `Psi(d_X(0) + d_V(0)/eta) - eta`.
pub fn eta_margin(kernel: &InfluenceFunction, dx0: f64, dv0: f64, eta: f64) -> f64 {
    kernel.running_min(dx0 + dv0 / eta) - eta
}

/// Largest-margin `eta` in `(1e-6, 1 - 1e-6)`: a log grid scan followed by
/// golden-section refinement around the best grid point.
pub fn find_eta(kernel: &InfluenceFunction, dx0: f64, dv0: f64) -> Result<EtaSearch> {
    if !(dx0 >= 0.0 && dv0 >= 0.0 && dx0.is_finite() && dv0.is_finite()) {
        return Err(Error::Parameter(format!(
            "diameters must be finite and >= 0 (dX0 = {dx0}, dV0 = {dv0})"
        )));
    }
    let grid = log_grid(ETA_MIN, ETA_MAX, ETA_GRID);
    let margins: Vec<f64> = grid.iter().map(|&e| eta_margin(kernel, dx0, dv0, e)).collect();
    let (kbest, _) = margins.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (k, &m)| if m > acc.1 { (k, m) } else { acc },
    );
    let lo = grid[kbest.saturating_sub(1)];
    let hi = grid[(kbest + 1).min(grid.len() - 1)];
    let refined = golden_max(|e| eta_margin(kernel, dx0, dv0, e), lo, hi, 1e-12);
    let (eta, margin) = if eta_margin(kernel, dx0, dv0, refined) >= margins[kbest] {
        (refined, eta_margin(kernel, dx0, dv0, refined))
    } else {
        (grid[kbest], margins[kbest])
    };
    Ok(EtaSearch {
        eta: (margin > 0.0).then_some(eta),
        margin,
        grid_eta: grid[kbest],
    })
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol * (a.abs() + b.abs()).max(1e-300) {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

/// How the constant-data recipe picks `(epsilon, sigma)` among feasible menu entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Smallest `c*`, ties broken by larger `kappa`.
    #[default]
    MinCStar,
    /// Largest `kappa`.
    MaxKappa,
}

/// Finite `(epsilon, sigma)` menu scanned by the constant-data recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Menu {
    pub epsilons: Vec<f64>,
    /// Multiples of `d_V(0)` (of `1e-3 max(s, 1)` when `d_V(0) = 0`).
    pub sigma_factors: Vec<f64>,
    /// Absolute `sigma` values replacing `sigma_factors`.
    #[serde(default)]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default)]
    pub selection: Selection,
}

impl Default for Menu {
    fn default() -> Self {
        Self {
            epsilons: (0..7).map(|k| 0.5f64.powi(k)).collect(),
            sigma_factors: vec![1.1, 1.25, 1.5, 2.0],
            sigmas: None,
            selection: Selection::MinCStar,
        }
    }
}

impl Menu {
    /// A single forced `(epsilon, sigma)` pair.
    pub fn forced(epsilon: f64, sigma: f64) -> Self {
        Self {
            epsilons: vec![epsilon],
            sigma_factors: Vec::new(),
            sigmas: Some(vec![sigma]),
            selection: Selection::MinCStar,
        }
    }

    fn sigma_values(&self, dv0: f64, s: f64) -> Vec<f64> {
        match &self.sigmas {
            Some(v) => v.clone(),
            None => {
                let base = if dv0 > 0.0 { dv0 } else { 1e-3 * s.max(1.0) };
                self.sigma_factors.iter().map(|f| f * base).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateInputs {
    pub dx0: f64,
    pub dv0: f64,
    pub s: f64,
    pub l_v0: f64,
    pub d0: f64,
    pub kernel: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanEntry {
    pub epsilon: f64,
    pub sigma: f64,
    /// `Psi((1 + epsilon)(d_X(0) + sigma/eta))`.
    pub psi_eps: f64,
    pub feasible: bool,
    pub kappa: f64,
    pub c1: f64,
    pub c_star: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlockingCertificate {
    pub eta: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub tau_star: f64,
    pub psi_star: f64,
    pub c1: f64,
    pub c_star: f64,
    pub inputs: CertificateInputs,
    /// `"constant_data"` or `"nonconstant_search"`.
    pub method: String,
    pub scan: Vec<ScanEntry>,
}

/// (C1)-(C2) evaluated at one propagation speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub c: f64,
    pub tau_star: f64,
    pub psi_star: f64,
    /// Left side of (C1), to be `<= kappa`.
    pub c1_lhs: f64,
    /// Left side of (C2), to be `<= sigma - d_V(0)`.
    pub c2_lhs: f64,
    pub holds: bool,
}

/// Evaluates (C1)-(C2) for the given envelope at speed `c`.
pub fn check_conditions(
    kernel: &InfluenceFunction,
    inputs: &CertificateInputs,
    eta: f64,
    sigma: f64,
    kappa: f64,
    c: f64,
) -> ConditionCheck {
    let s = inputs.s;
    let x = inputs.dx0 + sigma / eta;
    let tau = x / (c - s);
    let psi = kernel.running_min(c * tau);
    let c1_lhs = inputs.l_v0 * tau + (kappa + sigma) * (eta * tau).exp_m1() / eta;
    let c2_lhs = if psi > eta {
        2.0 * kappa / (psi - eta)
    } else {
        f64::INFINITY
    };
    let ok1 = c1_lhs <= kappa * (1.0 + REVALIDATION_SLACK);
    let ok2 = c2_lhs <= (sigma - inputs.dv0) * (1.0 + REVALIDATION_SLACK);
    ConditionCheck {
        c,
        tau_star: tau,
        psi_star: psi,
        c1_lhs,
        c2_lhs,
        holds: c > s && psi > eta && kappa > inputs.d0 && sigma > inputs.dv0 && eta < 1.0 && ok1 && ok2,
    }
}

impl FlockingCertificate {
    pub fn conditions_at(&self, kernel: &InfluenceFunction, c: f64) -> ConditionCheck {
        check_conditions(kernel, &self.inputs, self.eta, self.sigma, self.kappa, c)
    }

    /// Re-checks the stored values at `c*`.
    pub fn validate(&self, kernel: &InfluenceFunction) -> Result<()> {
        let chk = self.conditions_at(kernel, self.c_star);
        if !chk.holds {
            return Err(Error::InvariantViolation(format!(
                "certificate fails its own conditions: {chk:?}"
            )));
        }
        let tau = (self.inputs.dx0 + self.sigma / self.eta) / (self.c_star - self.inputs.s);
        if (tau - self.tau_star).abs() > 1e-12 * tau {
            return Err(Error::InvariantViolation(format!(
                "stored tau* {} differs from {tau}",
                self.tau_star
            )));
        }
        Ok(())
    }

    /// Horizon `20 / eta` used by end-to-end checks.
    pub fn suggested_horizon(&self) -> f64 {
        20.0 / self.eta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Certification {
    Certified(FlockingCertificate),
    Infeasible {
        reason: String,
        /// Best value of the feasibility margin found (negative).
        best_margin: f64,
        scan: Vec<ScanEntry>,
    },
}

impl Certification {
    pub fn certificate(&self) -> Option<&FlockingCertificate> {
        match self {
            Certification::Certified(c) => Some(c),
            Certification::Infeasible { .. } => None,
        }
    }
}

fn check_inputs(dx0: f64, dv0: f64, s: f64) -> Result<()> {
    if !(dx0.is_finite() && dx0 >= 0.0 && dv0.is_finite() && dv0 >= 0.0) {
        return Err(Error::Parameter(format!(
            "diameters must be finite and >= 0 (dX0 = {dx0}, dV0 = {dv0})"
        )));
    }
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Parameter(format!("speed bound s must be > 0 (got {s})")));
    }
    Ok(())
}

/// Root of `(1/eta) ln(eta kappa / (kappa + sigma) + 1) = X / (c - s)` by
/// bisection; returns the upper end of the final bracket.
pub fn solve_c1(eta: f64, kappa: f64, sigma: f64, x: f64, s: f64) -> Result<f64> {
    let lhs = (eta * kappa / (kappa + sigma)).ln_1p() / eta;
    if !(lhs > 0.0 && lhs.is_finite()) {
        return Err(Error::Internal(format!(
            "degenerate left side {lhs} in the critical-speed equation"
        )));
    }
    let f = |c: f64| x / (c - s) - lhs;
    let mut lo = s * C_LOWER_FACTOR;
    if f(lo) <= 0.0 {
        return Ok(lo);
    }
    let mut hi = 2.0 * lo;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > s + C_SPAN {
            return Err(Error::Internal("critical-speed bracket exceeds s + 1e12".into()));
        }
    }
    while hi - lo > 2.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Constant-data recipe: scans the `(epsilon, sigma)` menu, sets `kappa`
/// from `Psi_eps`, solves for `c1` and returns `c* = max(c1, (1+eps) s / eps)`.
pub fn critical_speed_constant_data(
    kernel: &InfluenceFunction,
    dx0: f64,
    dv0: f64,
    s: f64,
    eta: f64,
    menu: &Menu,
) -> Result<Certification> {
    check_inputs(dx0, dv0, s)?;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Parameter(format!("eta must lie in (0, 1) (got {eta})")));
    }
    if menu.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Parameter("menu epsilons must be finite and > 0".into()));
    }
    let inputs = CertificateInputs {
        dx0,
        dv0,
        s,
        l_v0: 0.0,
        d0: 0.0,
        kernel: kernel.label(),
    };
    let mut scan = Vec::new();
    for &eps in &menu.epsilons {
        for sigma in menu.sigma_values(dv0, s) {
            let x = dx0 + sigma / eta;
            let psi_eps = kernel.running_min((1.0 + eps) * x);
            let mut entry = ScanEntry {
                epsilon: eps,
                sigma,
                psi_eps,
                feasible: false,
                kappa: f64::NAN,
                c1: f64::NAN,
                c_star: f64::NAN,
            };
            if sigma > dv0 && psi_eps > eta {
                let kappa = 0.5 * (sigma - dv0) * (psi_eps - eta);
                let c1 = solve_c1(eta, kappa, sigma, x, s)?;
                entry.feasible = true;
                entry.kappa = kappa;
                entry.c1 = c1;
                entry.c_star = c1.max((1.0 + eps) / eps * s);
            }
            scan.push(entry);
        }
    }
    let better = |a: &ScanEntry, b: &ScanEntry| -> bool {
        match menu.selection {
            Selection::MinCStar => a.c_star < b.c_star || (a.c_star == b.c_star && a.kappa > b.kappa),
            Selection::MaxKappa => a.kappa > b.kappa || (a.kappa == b.kappa && a.c_star < b.c_star),
        }
    };
    let mut best: Option<&ScanEntry> = None;
    for e in scan.iter().filter(|e| e.feasible) {
        if best.is_none_or(|b| better(e, b)) {
            best = Some(e);
        }
    }
    let Some(b) = best.cloned() else {
        let best_margin = scan.iter().map(|e| e.psi_eps - eta).fold(f64::NEG_INFINITY, f64::max);
        return Ok(Certification::Infeasible {
            reason: format!("Psi((1+eps)(dX0 + sigma/eta)) > eta fails for every menu entry at eta = {eta}"),
            best_margin,
            scan,
        });
    };
    let x = dx0 + b.sigma / eta;
    let tau_star = x / (b.c_star - s);
    let cert = FlockingCertificate {
        eta,
        epsilon: b.epsilon,
        sigma: b.sigma,
        kappa: b.kappa,
        tau_star,
        psi_star: kernel.running_min(b.c_star * tau_star),
        c1: b.c1,
        c_star: b.c_star,
        inputs,
        method: "constant_data".into(),
        scan,
    };
    cert.validate(kernel)
        .map_err(|e| Error::Internal(format!("constant-data recipe produced an invalid certificate: {e}")))?;
    Ok(Certification::Certified(cert))
}

/// Re-checks (C1)-(C2) at a speed `c >= c*`.
pub fn monotone_speed_extension(cert: &FlockingCertificate, kernel: &InfluenceFunction, c: f64) -> Result<bool> {
    if !(c >= cert.c_star) {
        return Err(Error::Usage(format!("speed {c} is below c* = {}", cert.c_star)));
    }
    Ok(cert.conditions_at(kernel, c).holds)
}

/// Grid for the nonconstant-data search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchGrid {
    /// Extra `eta` values; the `find_eta` maximizer is always included.
    pub etas: Vec<f64>,
    pub sigma_factors: Vec<f64>,
    /// Largest speed considered, as a multiple of `s`.
    pub c_max_factor: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            etas: log_grid(1e-3, 0.999, 24),
            sigma_factors: vec![1.1, 1.25, 1.5, 2.0, 3.0, 5.0],
            c_max_factor: 1e6,
        }
    }
}

/// Largest `kappa` allowed by (C2) minus the smallest allowed by (C1) and
/// `kappa > D0`, relative to `kappa_max`; `>= 0` means feasible at `c`.
fn nonconstant_margin(
    kernel: &InfluenceFunction,
    inputs: &CertificateInputs,
    eta: f64,
    sigma: f64,
    c: f64,
) -> (f64, f64) {
    let x = inputs.dx0 + sigma / eta;
    let tau = x / (c - inputs.s);
    let psi = kernel.running_min(c * tau);
    if psi <= eta {
        return (psi - eta - 1.0, 0.0);
    }
    let kappa_max = 0.5 * (sigma - inputs.dv0) * (psi - eta);
    let e = (eta * tau).exp_m1() / eta;
    if e >= 1.0 {
        return (-e, kappa_max);
    }
    let kappa_min = (inputs.l_v0 * tau + sigma * e) / (1.0 - e);
    if kappa_max <= inputs.d0 {
        return ((kappa_max - inputs.d0) / kappa_max.max(f64::MIN_POSITIVE), kappa_max);
    }
    ((kappa_max - kappa_min) / kappa_max, kappa_max)
}

/// Numerical search for `(eta, sigma, kappa, c)` satisfying (C1)-(C2) for
/// general initial data; reports the smallest certified `c` on the grid.
#[allow(clippy::too_many_arguments)]
pub fn feasibility_nonconstant(
    kernel: &InfluenceFunction,
    dx0: f64,
    dv0: f64,
    s: f64,
    l_v0: f64,
    d0: f64,
    grid: &SearchGrid,
) -> Result<Certification> {
    check_inputs(dx0, dv0, s)?;
    if !(l_v0 >= 0.0 && d0 >= 0.0 && l_v0.is_finite() && d0.is_finite()) {
        return Err(Error::Parameter(format!(
            "L_v0 and D0 must be finite and >= 0 (got {l_v0}, {d0})"
        )));
    }
    let inputs = CertificateInputs {
        dx0,
        dv0,
        s,
        l_v0,
        d0,
        kernel: kernel.label(),
    };
    let mut etas: Vec<f64> = grid.etas.iter().copied().filter(|e| *e > 0.0 && *e < 1.0).collect();
    if let Some(e) = find_eta(kernel, dx0, dv0)?.eta {
        etas.push(e);
    }
    let mut sigmas = Menu::default().sigma_values(dv0, s);
    let base = if dv0 > 0.0 { dv0 } else { 1e-3 * s.max(1.0) };
    sigmas.extend(grid.sigma_factors.iter().map(|f| f * base));
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    let c_max = s * grid.c_max_factor;
    let c_lo = s * C_LOWER_FACTOR;

    let points: Vec<(f64, f64)> = etas
        .iter()
        .flat_map(|&e| sigmas.iter().map(move |&sg| (e, sg)))
        .collect();
    type GridPoint = (f64, f64, Option<(f64, f64)>, f64);
    let results: Vec<GridPoint> = points
        .par_iter()
        .map(|&(eta, sigma)| {
            if sigma <= dv0 {
                return (eta, sigma, None, f64::NEG_INFINITY);
            }
            let (m_hi, _) = nonconstant_margin(kernel, &inputs, eta, sigma, c_max);
            if m_hi < 0.0 {
                return (eta, sigma, None, m_hi);
            }
            let (mut lo, mut hi) = (c_lo, c_max);
            if nonconstant_margin(kernel, &inputs, eta, sigma, lo).0 >= 0.0 {
                hi = lo;
            } else {
                while hi - lo > 1e-13 * hi {
                    let mid = 0.5 * (lo + hi);
                    if nonconstant_margin(kernel, &inputs, eta, sigma, mid).0 >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
            }
            let (_, kappa) = nonconstant_margin(kernel, &inputs, eta, sigma, hi);
            (eta, sigma, Some((hi, kappa)), m_hi)
        })
        .collect();

    let best = results
        .iter()
        .filter_map(|(e, sg, r, _)| r.map(|(c, k)| (*e, *sg, c, k)))
        .filter(|&(e, sg, c, k)| check_conditions(kernel, &inputs, e, sg, k, c).holds)
        .min_by(|a, b| a.2.total_cmp(&b.2));
    let Some((eta, sigma, c, kappa)) = best else {
        let best_margin = results.iter().map(|r| r.3).fold(f64::NEG_INFINITY, f64::max);
        return Ok(Certification::Infeasible {
            reason: format!("no grid point satisfies both conditions with c <= {c_max}"),
            best_margin,
            scan: Vec::new(),
        });
    };
    let chk = check_conditions(kernel, &inputs, eta, sigma, kappa, c);
    Ok(Certification::Certified(FlockingCertificate {
        eta,
        epsilon: s / (c - s),
        sigma,
        kappa,
        tau_star: chk.tau_star,
        psi_star: chk.psi_star,
        c1: c,
        c_star: c,
        inputs,
        method: "nonconstant_search".into(),
        scan: Vec::new(),
    }))
}

/// One row of a kernel-exponent sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub feasible: bool,
    pub eta: Option<f64>,
    pub c_star: Option<f64>,
}

/// Constant-data certificates for power-law kernels `(1 + r^2)^{-beta}`.
pub fn beta_sweep(betas: &[f64], dx0: f64, dv0: f64, s: f64, menu: &Menu) -> Result<Vec<SweepRow>> {
    betas
        .par_iter()
        .map(|&beta| {
            let k = InfluenceFunction::power_law(beta)?;
            let eta = find_eta(&k, dx0, dv0)?.eta;
            let cert = match eta {
                Some(e) => critical_speed_constant_data(&k, dx0, dv0, s, e, menu)?,
                None => {
                    return Ok(SweepRow {
                        beta,
                        feasible: false,
                        eta: None,
                        c_star: None,
                    })
                }
            };
            let c_star = cert.certificate().map(|c| c.c_star);
            Ok(SweepRow {
                beta,
                feasible: c_star.is_some(),
                eta,
                c_star,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_check() -> FlockingCertificate {
        let k = InfluenceFunction::constant(1.0).unwrap();
        critical_speed_constant_data(&k, 1.0, 1.0, 1.0, 0.5, &Menu::forced(1.0, 2.0))
            .unwrap()
            .certificate()
            .unwrap()
            .clone()
    }

    #[test]
    fn hand_checked_value() {
        let c = hand_check();
        assert_eq!(c.kappa, 0.25);
        let closed = 1.0 + 5.0 / (2.0 * (19.0f64 / 18.0).ln());
        assert!((c.c1 - closed).abs() <= 1e-10 * closed);
        assert!((c.c1 - 47.24).abs() < 5e-3);
        assert_eq!(c.c_star, c.c1);
    }

    #[test]
    fn c1_bisection_matches_closed_form() {
        for &(eta, kappa, sigma, x, s) in &[
            (0.5f64, 0.25, 2.0, 5.0, 1.0),
            (0.1, 0.01, 0.3, 4.0, 0.5),
            (0.9, 1.0, 1.0, 0.1, 2.0),
        ] {
            let closed = s + x * eta / (eta * kappa / (kappa + sigma)).ln_1p();
            let c = solve_c1(eta, kappa, sigma, x, s).unwrap();
            assert!((c - closed).abs() <= 1e-12 * closed, "{c} vs {closed}");
        }
    }

    #[test]
    fn recipe_identity_holds() {
        let c = hand_check();
        let lhs = (c.eta * c.kappa / (c.kappa + c.sigma)).ln_1p() / c.eta;
        assert!(lhs <= c.tau_star * (1.0 + 1e-12));
        assert!((c.kappa + c.sigma) * (c.eta * c.tau_star).exp_m1() / c.eta <= c.kappa * (1.0 + 1e-12));
    }

    #[test]
    fn constant_kernel_eta_is_smallest_grid_point() {
        let k = InfluenceFunction::constant(1.0).unwrap();
        let r = find_eta(&k, 3.0, 2.0).unwrap();
        assert!((r.eta.unwrap() - ETA_MIN).abs() < 1e-9);
        assert_eq!(r.grid_eta, ETA_MIN);
    }

    #[test]
    fn power_law_feasibility() {
        let k = InfluenceFunction::power_law(0.25).unwrap();
        let r = find_eta(&k, 1.0, 1.0).unwrap();
        assert!(r.eta.is_some() && r.margin > 0.0);
        // dense scan oracle: no grid point beats the refined maximizer
        let dense = log_grid(ETA_MIN, ETA_MAX, 20000);
        let best = dense
            .iter()
            .map(|&e| eta_margin(&k, 1.0, 1.0, e))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(r.margin >= best - 1e-12);

        let fast = InfluenceFunction::power_law(2.0).unwrap();
        let r = find_eta(&fast, 10.0, 10.0).unwrap();
        let best = dense
            .iter()
            .map(|&e| eta_margin(&fast, 10.0, 10.0, e))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best <= 0.0);
        assert!(r.eta.is_none());
    }

    #[test]
    fn extension_to_larger_speeds() {
        let c = hand_check();
        let k = InfluenceFunction::constant(1.0).unwrap();
        assert!(monotone_speed_extension(&c, &k, c.c_star).unwrap());
        assert!(monotone_speed_extension(&c, &k, 2.0 * c.c_star).unwrap());
        assert!(monotone_speed_extension(&c, &k, 0.5 * c.c_star).is_err());

        let p = InfluenceFunction::power_law(0.25).unwrap();
        let eta = find_eta(&p, 1.0, 0.5).unwrap().eta.unwrap();
        let cert = critical_speed_constant_data(&p, 1.0, 0.5, 1.0, eta, &Menu::default()).unwrap();
        let cert = cert.certificate().unwrap();
        assert!(monotone_speed_extension(cert, &p, 10.0 * cert.c_star).unwrap());
    }

    #[test]
    fn selection_rules_differ() {
        let p = InfluenceFunction::power_law(0.25).unwrap();
        let eta = find_eta(&p, 1.0, 0.5).unwrap().eta.unwrap();
        let min_c = critical_speed_constant_data(&p, 1.0, 0.5, 1.0, eta, &Menu::default()).unwrap();
        let menu = Menu {
            selection: Selection::MaxKappa,
            ..Menu::default()
        };
        let max_k = critical_speed_constant_data(&p, 1.0, 0.5, 1.0, eta, &menu).unwrap();
        let (a, b) = (min_c.certificate().unwrap(), max_k.certificate().unwrap());
        assert!(a.c_star <= b.c_star);
        assert!(a.kappa <= b.kappa);
        for e in a.scan.iter().filter(|e| e.feasible) {
            assert!(a.c_star <= e.c_star);
        }
    }

    #[test]
    fn infeasible_menu_reports_scan() {
        let p = InfluenceFunction::power_law(2.0).unwrap();
        let r = critical_speed_constant_data(&p, 10.0, 10.0, 1.0, 0.5, &Menu::default()).unwrap();
        match r {
            Certification::Infeasible { scan, best_margin, .. } => {
                assert_eq!(scan.len(), 28);
                assert!(best_margin <= 0.0);
            }
            _ => panic!("expected infeasible"),
        }
    }

    #[test]
    fn nonconstant_search_contains_recipe_point() {
        let p = InfluenceFunction::power_law(0.25).unwrap();
        let eta = find_eta(&p, 1.0, 0.5).unwrap().eta.unwrap();
        let recipe = critical_speed_constant_data(&p, 1.0, 0.5, 1.0, eta, &Menu::default()).unwrap();
        let nc = feasibility_nonconstant(&p, 1.0, 0.5, 1.0, 0.0, 0.0, &SearchGrid::default()).unwrap();
        let c = nc.certificate().unwrap();
        assert!(c.c_star <= recipe.certificate().unwrap().c_star * (1.0 + 1e-9));
        c.validate(&p).unwrap();
    }

    #[test]
    fn nonconstant_search_infeasible_cases() {
        let p = InfluenceFunction::power_law(0.25).unwrap();
        let r = feasibility_nonconstant(&p, 1.0, 1.0, 1.0, 1e6, 0.0, &SearchGrid::default()).unwrap();
        assert!(r.certificate().is_none());
        let r = feasibility_nonconstant(&p, 1.0, 1.0, 1.0, 0.0, 100.0, &SearchGrid::default()).unwrap();
        assert!(r.certificate().is_none());
    }

    #[test]
    fn sweep_rows() {
        let rows = beta_sweep(&[0.1, 0.25, 3.0], 1.0, 0.5, 1.0, &Menu::default()).unwrap();
        assert!(rows[0].feasible && rows[1].feasible);
        assert!(rows[0].c_star.unwrap() < rows[1].c_star.unwrap());
        assert!(!rows[2].feasible);
    }
}
