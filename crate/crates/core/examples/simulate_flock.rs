//! Three agents with a power-law kernel; prints a few diagnostics rows.

use flockdelay::diagnostics::{fit_decay_rate, Field};
use flockdelay::dynamics::{simulate, InitialData, SimConfig};
use flockdelay::{InfluenceFunction, InitialPath};

fn cv(x0: [f64; 2], v0: [f64; 2]) -> InitialPath {
    InitialPath::ConstantVelocity {
        x0: x0.to_vec(),
        v0: v0.to_vec(),
    }
}

fn main() -> flockdelay::Result<()> {
    let kernel = InfluenceFunction::power_law(0.5)?;
    let mut cfg = SimConfig::new(5.0, 1.0, kernel, 0.01, 10.0);
    cfg.sample_every = 100;
    let init = InitialData::new(vec![
        cv([-1.0, 0.0], [0.3, 0.1]),
        cv([1.0, 0.5], [-0.2, 0.0]),
        cv([0.0, -1.0], [0.0, 0.4]),
    ]);
    let out = simulate(&cfg, &init)?;
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "t", "dX", "dV", "D", "taubar");
    for s in &out.series.samples {
        println!(
            "{:>5.1} {:>10.6} {:>10.3e} {:>10.3e} {:>10.6}",
            s.t, s.dx, s.dv, s.d, s.taubar
        );
    }
    if let Some(fit) = fit_decay_rate(&out.series, Field::Dv) {
        println!("log dV has slope {:.4}, r^2 = {:.4}", fit.rate, fit.r_squared);
    }
    let inv = &out.invariants;
    println!(
        "{} steps, {} delay checks, {} speed checks, {} failures",
        inv.steps,
        inv.delay_checks,
        inv.speed_checks,
        inv.failures()
    );
    Ok(())
}
