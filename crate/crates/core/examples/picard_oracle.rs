//! Picard iteration on one window compared with the RK4 integrator.

use flockdelay::dynamics::{picard_contraction_factor, simulate, solve_picard, InitialData, PicardConfig, SimConfig};
use flockdelay::{InfluenceFunction, InitialPath, Trajectory};

fn main() -> flockdelay::Result<()> {
    let (c, s) = (4.0, 0.5);
    let kernel = InfluenceFunction::power_law(0.5)?;
    let paths = vec![
        InitialPath::ConstantVelocity {
            x0: vec![0.0, 0.0],
            v0: vec![0.3, 0.0],
        },
        InitialPath::ConstantVelocity {
            x0: vec![1.0, 0.5],
            v0: vec![-0.2, 0.25],
        },
        InitialPath::ConstantVelocity {
            x0: vec![-0.5, 1.0],
            v0: vec![0.0, -0.4],
        },
    ];
    let picard = PicardConfig::new(0.75, 0.1);
    let cfg = SimConfig::new(c, s, kernel.clone(), 0.1 / 64.0, 0.1);
    let sol = solve_picard(&cfg, &picard, &paths)?;
    println!(
        "{} iterations, empirical factor {:.3e}, analytic factor {:.3e} (= {:.3e})",
        sol.iterations,
        sol.max_empirical_factor,
        sol.analytic_factor,
        picard_contraction_factor(picard.m, c, kernel.lipschitz_bound(), picard.t_step)
    );

    let rk = simulate(&cfg, &InitialData::new(paths))?;
    let d = sol.times.len();
    let mut worst = 0.0f64;
    let mut v = [0.0; 2];
    for (i, h) in rk.histories.iter().enumerate() {
        for (k, &t) in sol.times.iter().enumerate() {
            h.velocity_into(t, &mut v)?;
            let p = &sol.velocities[k][2 * i..2 * i + 2];
            worst = worst.max(((v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2)).sqrt());
        }
    }
    println!("{d} Picard nodes, max |v_rk4 - v_picard| = {worst:.3e}");
    Ok(())
}
