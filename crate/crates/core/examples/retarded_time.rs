//! Retarded times of a moving source seen by a fixed observer.

use flockdelay::delay::retarded_time;
use flockdelay::{InitialPath, TrajectoryHistory};

fn main() -> flockdelay::Result<()> {
    let c = 2.0;
    let source = TrajectoryHistory::new(
        InitialPath::ConstantVelocity {
            x0: vec![0.0, 0.0],
            v0: vec![0.5, 0.0],
        },
        1.0,
    )?;
    let observer = [3.0, 1.0];
    println!("{:>6} {:>12} {:>12} {:>10}", "t", "tau", "residual", "iters");
    for k in 0..=4 {
        let t = -(k as f64);
        let r = retarded_time(&source, t, &observer, c)?;
        println!("{t:>6.1} {:>12.9} {:>12.2e} {:>10}", r.tau, r.residual, r.iterations);
    }
    Ok(())
}
