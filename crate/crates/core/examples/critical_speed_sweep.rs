//! Certified speeds across power-law exponents; feasibility is lost for
//! large data once beta passes 1/2.

use flockdelay::certificate::{beta_sweep, Menu};

fn main() -> flockdelay::Result<()> {
    let betas = [0.1, 0.2, 0.3, 0.4, 0.45, 0.5, 0.6, 1.0, 2.0];
    for (dx0, dv0) in [(1.0, 0.2), (10.0, 2.0)] {
        println!("dX0 = {dx0}, dV0 = {dv0}");
        for row in beta_sweep(&betas, dx0, dv0, 1.0, &Menu::default())? {
            match row.c_star {
                Some(c) => println!("  beta {:>5}: eta {:.4e}, c* {:.4e}", row.beta, row.eta.unwrap(), c),
                None => println!("  beta {:>5}: infeasible", row.beta),
            }
        }
    }
    Ok(())
}
