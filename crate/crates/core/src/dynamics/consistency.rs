//! Distance between delayed runs and the undelayed classical solution.

use rayon::prelude::*;
use serde::Serialize;

use super::{simulate, InitialData, InvariantReport, Propagation, SimConfig};
use crate::error::{Error, Result};
use crate::history::{sup_norm_diff, TrajectoryHistory};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub c: f64,
    /// `max_i sup_{[0,T]} |x_i - x_i^inf|`.
    pub pos_sup: f64,
    /// `max_i sup_{[0,T]} |v_i - v_i^inf|`.
    pub vel_sup: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencySweep {
    pub rows: Vec<ConsistencyRow>,
    /// Reference run first, then one report per speed.
    pub reports: Vec<InvariantReport>,
}

impl ConsistencySweep {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].distance < w[0].distance)
    }
}

/// Runs `cfg` at every speed in `speeds` and compares each run with the
/// same integrator at infinite propagation speed.
pub fn consistency_sweep(cfg: &SimConfig, init: &InitialData, speeds: &[f64]) -> Result<ConsistencySweep> {
    if speeds.is_empty() {
        return Err(Error::Usage("speed list is empty".into()));
    }
    let mut reference = cfg.clone();
    reference.propagation = Propagation::Instantaneous;
    reference.c = speeds.iter().copied().fold(cfg.c, f64::max);
    let runs = std::iter::once(reference)
        .chain(speeds.iter().map(|&c| SimConfig {
            c,
            propagation: Propagation::Finite,
            ..cfg.clone()
        }))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|c| simulate(c, init))
        .collect::<Result<Vec<_>>>()?;
    let base = &runs[0];
    let mut rows = Vec::with_capacity(speeds.len());
    for (c, run) in speeds.iter().zip(&runs[1..]) {
        let (pos_sup, vel_sup) = distance(&run.histories, &base.histories, cfg.horizon)?;
        rows.push(ConsistencyRow {
            c: *c,
            pos_sup,
            vel_sup,
            distance: pos_sup + vel_sup,
        });
    }
    Ok(ConsistencySweep {
        rows,
        reports: runs.into_iter().map(|r| r.invariants).collect(),
    })
}

fn distance(a: &[TrajectoryHistory], b: &[TrajectoryHistory], horizon: f64) -> Result<(f64, f64)> {
    let mut pos = 0.0f64;
    let mut vel = 0.0f64;
    for (ha, hb) in a.iter().zip(b) {
        let d = sup_norm_diff(ha, hb, 0.0, horizon)?;
        pos = pos.max(d.pos_sup);
        vel = vel.max(d.vel_sup);
    }
    Ok((pos, vel))
}
