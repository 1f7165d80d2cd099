//! Influence functions (communication kernels) normalized to `0 <= psi <= 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grid spacing used when a non-monotone kernel has to be replaced by
/// its nonincreasing rearrangement.
pub const DEFAULT_REARRANGEMENT_STEP: f64 = 1e-3;

/// Serializable description of a kernel, as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    #[serde(rename = "powerlaw")]
    PowerLaw {
        beta: f64,
    },
    Constant {
        level: f64,
    },
    Tabulated {
        knots: Vec<[f64; 2]>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelKind {
    /// `psi(r) = (1 + r^2)^(-beta)`.
    PowerLaw {
        beta: f64,
    },
    Constant {
        level: f64,
    },
    /// Piecewise linear through `(s, psi(s))` knots, flat outside the knot range.
    Tabulated {
        s: Vec<f64>,
        psi: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceFunction {
    kind: KernelKind,
    lipschitz_bound: f64,
}

impl InfluenceFunction {
    pub fn power_law(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::Domain(format!(
                "power-law exponent must be finite and >= 0, got {beta}"
            )));
        }
        Ok(Self::from_kind(KernelKind::PowerLaw { beta }))
    }

    pub fn constant(level: f64) -> Result<Self> {
        if !(level.is_finite() && level > 0.0 && level <= 1.0) {
            return Err(Error::Domain(format!(
                "constant kernel level must lie in (0, 1], got {level}"
            )));
        }
        Ok(Self::from_kind(KernelKind::Constant { level }))
    }

    pub fn tabulated(knots: &[(f64, f64)]) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Domain("tabulated kernel needs at least one knot".into()));
        }
        let mut s = Vec::with_capacity(knots.len());
        let mut psi = Vec::with_capacity(knots.len());
        for (k, &(si, pi)) in knots.iter().enumerate() {
            if !(si.is_finite() && si >= 0.0) {
                return Err(Error::Domain(format!(
                    "knot {k}: abscissa must be finite and >= 0, got {si}"
                )));
            }
            if !(pi.is_finite() && (0.0..=1.0).contains(&pi)) {
                return Err(Error::Domain(format!("knot {k}: value must lie in [0, 1], got {pi}")));
            }
            if let Some(&prev) = s.last() {
                if si <= prev {
                    return Err(Error::Domain(format!(
                        "knot {k}: abscissae must be strictly increasing ({si} after {prev})"
                    )));
                }
            }
            s.push(si);
            psi.push(pi);
        }
        Ok(Self::from_kind(KernelKind::Tabulated { s, psi }))
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::PowerLaw { beta } => Self::power_law(*beta),
            KernelSpec::Constant { level } => Self::constant(*level),
            KernelSpec::Tabulated { knots } => {
                let pairs: Vec<(f64, f64)> = knots.iter().map(|k| (k[0], k[1])).collect();
                Self::tabulated(&pairs)
            }
        }
    }

    pub fn to_spec(&self) -> KernelSpec {
        match &self.kind {
            KernelKind::PowerLaw { beta } => KernelSpec::PowerLaw { beta: *beta },
            KernelKind::Constant { level } => KernelSpec::Constant { level: *level },
            KernelKind::Tabulated { s, psi } => KernelSpec::Tabulated {
                knots: s.iter().zip(psi).map(|(a, b)| [*a, *b]).collect(),
            },
        }
    }

    fn from_kind(kind: KernelKind) -> Self {
        let lipschitz_bound = lipschitz_of(&kind);
        Self { kind, lipschitz_bound }
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    /// Short identifier used in certificate echoes and CSV headers.
    pub fn label(&self) -> String {
        match &self.kind {
            KernelKind::PowerLaw { beta } => format!("powerlaw(beta={beta})"),
            KernelKind::Constant { level } => format!("constant(level={level})"),
            KernelKind::Tabulated { s, .. } => format!("tabulated({} knots)", s.len()),
        }
    }

    /// `psi(r)`, validating `r`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::Domain(format!("influence function evaluated at r = {r}")));
        }
        Ok(self.value(r))
    }

    /// `psi(r)` without argument checks. Negative `r` is treated as `0`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match &self.kind {
            KernelKind::PowerLaw { beta } => {
                if *beta == 0.0 {
                    1.0
                } else {
                    (1.0 + r * r).powf(-beta)
                }
            }
            KernelKind::Constant { level } => *level,
            KernelKind::Tabulated { s, psi } => interp_flat(s, psi, r),
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        match &self.kind {
            KernelKind::PowerLaw { .. } | KernelKind::Constant { .. } => true,
            KernelKind::Tabulated { psi, .. } => psi.windows(2).all(|w| w[1] <= w[0]),
        }
    }

    /// Nonincreasing rearrangement `u -> min_{[0,u]} psi`, tabulated on
    /// `0, h_grid, 2 h_grid, ..., s_max`.
    ///
    /// Accuracy is limited by the grid: between grid points the result may
    /// exceed the true running minimum by at most `h_grid * L_psi`.
    pub fn rearrangement(&self, s_max: f64, h_grid: f64) -> Result<InfluenceFunction> {
        if !(s_max.is_finite() && s_max >= 0.0 && h_grid.is_finite() && h_grid > 0.0) {
            return Err(Error::Domain(format!(
                "rearrangement grid is empty (s_max = {s_max}, h_grid = {h_grid})"
            )));
        }
        let cells = (s_max / h_grid).ceil() as usize;
        let mut knots = Vec::with_capacity(cells + 1);
        let mut running = f64::INFINITY;
        for k in 0..=cells {
            let u = (k as f64 * h_grid).min(s_max);
            if let Some(&(prev, _)) = knots.last() {
                if u <= prev {
                    break;
                }
            }
            running = running.min(self.value(u));
            knots.push((u, running));
        }
        InfluenceFunction::tabulated(&knots)
    }

    /// Exact running minimum `min_{[0, r]} psi`, the nonincreasing
    /// rearrangement evaluated at `r`.
    pub fn running_min(&self, r: f64) -> f64 {
        match &self.kind {
            KernelKind::Tabulated { s, psi } if !self.is_nonincreasing() => {
                let r = r.max(0.0);
                let upto = s.partition_point(|&x| x <= r);
                psi[..upto.max(1)].iter().copied().fold(self.value(r), f64::min)
            }
            _ => self.value(r),
        }
    }

    /// The kernel itself when nonincreasing, otherwise its rearrangement on a
    /// grid reaching `s_max`.
    pub fn monotone_envelope(&self, s_max: f64) -> Result<InfluenceFunction> {
        if self.is_nonincreasing() {
            return Ok(self.clone());
        }
        let reach = match &self.kind {
            KernelKind::Tabulated { s, .. } => s_max.max(*s.last().unwrap()),
            _ => s_max,
        };
        self.rearrangement(reach, DEFAULT_REARRANGEMENT_STEP)
    }
}

/// A valid Lipschitz constant for `f`.
pub fn lipschitz_estimate(f: &InfluenceFunction) -> f64 {
    f.lipschitz_bound
}

fn lipschitz_of(kind: &KernelKind) -> f64 {
    match kind {
        KernelKind::Constant { .. } => 0.0,
        KernelKind::PowerLaw { beta } => {
            if *beta == 0.0 {
                return 0.0;
            }
            // |psi'(r)| = 2 beta r (1 + r^2)^(-beta-1) peaks at r^2 = 1 / (2 beta + 1).
            let r2 = 1.0 / (2.0 * beta + 1.0);
            2.0 * beta * r2.sqrt() * (1.0 + r2).powf(-beta - 1.0)
        }
        KernelKind::Tabulated { s, psi } => s
            .windows(2)
            .zip(psi.windows(2))
            .map(|(sw, pw)| ((pw[1] - pw[0]) / (sw[1] - sw[0])).abs())
            .fold(0.0, f64::max),
    }
}

fn interp_flat(s: &[f64], psi: &[f64], r: f64) -> f64 {
    let n = s.len();
    if r <= s[0] {
        return psi[0];
    }
    if r >= s[n - 1] {
        return psi[n - 1];
    }
    // first index with s[k] > r; k >= 1
    let k = s.partition_point(|&x| x <= r);
    let (s0, s1) = (s[k - 1], s[k]);
    let w = (r - s0) / (s1 - s0);
    psi[k - 1] + w * (psi[k] - psi[k - 1])
}
