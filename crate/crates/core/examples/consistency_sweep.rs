//! Distance to the undelayed solution as the propagation speed grows.

use flockdelay::dynamics::{consistency_sweep, InitialData, SimConfig};
use flockdelay::{InfluenceFunction, InitialPath};

fn main() -> flockdelay::Result<()> {
    let init = InitialData::new(vec![
        InitialPath::ConstantVelocity {
            x0: vec![-1.0],
            v0: vec![0.1],
        },
        InitialPath::ConstantVelocity {
            x0: vec![1.0],
            v0: vec![-0.1],
        },
    ]);
    let cfg = SimConfig::new(10.0, 1.0, InfluenceFunction::power_law(0.5)?, 0.01, 5.0);
    let sweep = consistency_sweep(&cfg, &init, &[10.0, 20.0, 40.0, 80.0])?;
    for r in &sweep.rows {
        println!(
            "c = {:>4}: distance {:.6e} (positions {:.3e}, velocities {:.3e})",
            r.c, r.distance, r.pos_sup, r.vel_sup
        );
    }
    println!("strictly decreasing: {}", sweep.strictly_decreasing());
    Ok(())
}
