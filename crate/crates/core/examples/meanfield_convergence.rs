//! Transport distances between nested particle ensembles and a
//! perturbation study.

use flockdelay::dynamics::SimConfig;
use flockdelay::meanfield::{
    particle_convergence_study, perturbation_study, InitialLaw, PositionLaw, Sampling, TailMode, VelocityLaw,
};
use flockdelay::InfluenceFunction;

fn main() -> flockdelay::Result<()> {
    let law = InitialLaw {
        position: PositionLaw::UniformBox {
            lo: vec![-1.0],
            hi: vec![1.0],
        },
        velocity: VelocityLaw::Affine {
            offset: vec![0.0],
            gain: -0.5,
        },
        tail: TailMode::Shared { velocity: vec![0.0] },
        sampling: Sampling::Halton,
        s: 1.0,
        window: 5.0,
        seed: 0,
    };
    let mut cfg = SimConfig::new(5.0, 1.0, InfluenceFunction::power_law(0.5)?, 0.05, 5.0);
    cfg.align_breaks = false;

    let study = particle_convergence_study(&law, &[4, 8, 16, 32], &cfg, false)?;
    println!("{:>4} {:>4} {:>12} {:>12}", "N", "2N", "W0", "WT");
    for r in &study.rows {
        println!("{:>4} {:>4} {:>12.6} {:>12.6}", r.n, r.n_next, r.w0, r.wt);
    }

    let pert = perturbation_study(&law, 8, &[0.1, 0.01, 0.001], &cfg, false)?;
    println!("{:>8} {:>12} {:>12} {:>8}", "delta", "W0", "WT", "WT/W0");
    for r in &pert.rows {
        println!(
            "{:>8} {:>12.4e} {:>12.4e} {:>8.4}",
            r.delta,
            r.w0,
            r.wt,
            r.ratio.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
