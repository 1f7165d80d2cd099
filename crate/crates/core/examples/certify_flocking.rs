//! Critical speed for constant initial velocities, then a run at that speed
//! checked against the certified decay bounds.

use flockdelay::certificate::{critical_speed_constant_data, find_eta, Certification, Menu};
use flockdelay::diagnostics::check_decay;
use flockdelay::dynamics::{simulate, InitialData, SimConfig};
use flockdelay::{InfluenceFunction, InitialPath};

fn main() -> flockdelay::Result<()> {
    let kernel = InfluenceFunction::power_law(0.25)?;
    let (s, dx0, dv0) = (1.0, 1.0, 0.2);
    let eta = find_eta(&kernel, dx0, dv0)?
        .eta
        .expect("power law with beta < 1/2 admits a rate");
    let cert = match critical_speed_constant_data(&kernel, dx0, dv0, s, eta, &Menu::default())? {
        Certification::Certified(c) => c,
        Certification::Infeasible { reason, .. } => {
            println!("infeasible: {reason}");
            return Ok(());
        }
    };
    println!(
        "eta = {:.5}, eps = {}, sigma = {:.4}, kappa = {:.4e}, c* = {:.3}",
        cert.eta, cert.epsilon, cert.sigma, cert.kappa, cert.c_star
    );

    let init = InitialData::new(vec![
        InitialPath::ConstantVelocity {
            x0: vec![-0.5],
            v0: vec![0.1],
        },
        InitialPath::ConstantVelocity {
            x0: vec![0.5],
            v0: vec![-0.1],
        },
    ]);
    let mut cfg = SimConfig::new(cert.c_star, s, kernel, 0.02, cert.suggested_horizon());
    cfg.sample_every = 10;
    let out = simulate(&cfg, &init)?;
    let report = check_decay(&out.series, cert.eta, cert.sigma, cert.kappa, 1e-9)?;
    println!(
        "horizon {:.1}: bounds hold = {}, max dV ratio {:.3}, max D ratio {:.3}",
        cfg.horizon, report.holds, report.max_dv_ratio, report.max_d_ratio
    );
    Ok(())
}
